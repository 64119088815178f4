//! Fixtures shared by the benchmarks.

use nalgebra::DVector;
use taskff::harness::trial::TrialSetup;
use taskff::harness::ExperimentConfig;
use taskff::simulator::PlantState;

/// The default squat setup and its standing state with both feet anchored.
pub fn standing() -> (ExperimentConfig, TrialSetup, PlantState) {
    let config = ExperimentConfig::squat(0.06, 0.25);
    let setup = TrialSetup::new(&config).expect("bundled setup");
    let n = setup.q0.len();
    let state = PlantState::new(setup.plant.model(), setup.q0.clone(), DVector::zeros(n), &[0, 1]).expect("standing state");
    (config, setup, state)
}
