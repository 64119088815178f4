//! QP inverse-dynamics control of a planar floating-base biped, with a
//! task-space feedforward learned over repetitions, encoded as periodic RBFs
//! and generalized across task amplitudes by Gaussian process regression.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod model;
pub mod qp;
pub mod simulator;
pub mod controller;
pub mod encoding;
pub mod gpr;
pub mod ilc;
pub mod harness;

pub use controller::{control_step, ControlError, ControlGains, ControlInput, TaskReference};
pub use encoding::{EncodingError, FeedforwardSignal};
pub use gpr::{FeedforwardDatabase, GprError, GprModel, Hyperparameters};
pub use harness::{ExperimentConfig, GainProfile, HarnessError, Metrics, SquatTask, TrialLog};
pub use ilc::{IlcError, RecordedFeedback};
pub use model::{LinkId, ModelError, RobotModel};
pub use qp::{QpError, QpProblem, QpSettings, QpSolution, QpStatus};
pub use simulator::{MismatchSpec, PlantModel, PlantState, SimError};
