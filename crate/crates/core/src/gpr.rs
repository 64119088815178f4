//! Database of learned feedforward signals indexed by a task parameter and
//! Gaussian-process regression of their weights.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{EncodingError, FeedforwardSignal};

pub const DATABASE_FORMAT_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.toml";

#[derive(Debug, Error)]
pub enum GprError {
    #[error("incompatible signal: {0}")]
    Incompatible(String),
    #[error("need at least {needed} database entries, have {found}")]
    TooFewEntries { needed: usize, found: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyperparameters(String),
    #[error("kernel matrix is not positive definite (smallest eigenvalue {0:.3e}); raise the noise variance")]
    NotPositiveDefinite(f64),
    #[error("task parameter has {found} components, database uses {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseEntry {
    pub kappa: Vec<f64>,
    pub signal: FeedforwardSignal,
}

/// Signals sharing one encoding, keyed by distinct task parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedforwardDatabase {
    entries: Vec<DatabaseEntry>,
}

impl FeedforwardDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[DatabaseEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces the entry for `kappa`. Entries stay sorted.
    pub fn add_entry(&mut self, kappa: &[f64], signal: FeedforwardSignal) -> Result<(), GprError> {
        if kappa.is_empty() || kappa.iter().any(|k| !k.is_finite()) {
            return Err(GprError::Incompatible("task parameter must be finite and non-empty".into()));
        }
        if let Some(first) = self.entries.first() {
            if first.kappa.len() != kappa.len() {
                return Err(GprError::Dimension {
                    expected: first.kappa.len(),
                    found: kappa.len(),
                });
            }
            let a = &first.signal;
            if a.basis_count() != signal.basis_count() {
                return Err(GprError::Incompatible(format!(
                    "database uses L = {}, signal has L = {}",
                    a.basis_count(),
                    signal.basis_count()
                )));
            }
            if !a.same_encoding(&signal) {
                return Err(GprError::Incompatible(
                    "centers, widths, gain, frequency or dimension differ from the database".into(),
                ));
            }
        }
        match self.entries.iter_mut().find(|e| e.kappa == kappa) {
            Some(e) => {
                log::warn!("replacing database entry for kappa = {kappa:?}");
                e.signal = signal;
            }
            None => {
                self.entries.push(DatabaseEntry {
                    kappa: kappa.to_vec(),
                    signal,
                });
                self.entries
                    .sort_by(|a, b| a.kappa.partial_cmp(&b.kappa).expect("finite task parameters"));
            }
        }
        Ok(())
    }

    /// Writes `index.toml` plus one signal file per entry into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), GprError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let mut index = IndexFile {
            format_version: DATABASE_FORMAT_VERSION,
            entries: Vec::new(),
        };
        for (i, e) in self.entries.iter().enumerate() {
            let file = format!("signal_{i:03}.toml");
            let path = dir.join(&file);
            fs::write(&path, e.signal.to_toml_string()).map_err(|err| io_error(&path, err))?;
            index.entries.push(IndexEntry {
                kappa: e.kappa.clone(),
                file,
            });
        }
        let path = dir.join(INDEX_FILE);
        let text = toml::to_string(&index).expect("index serializes");
        fs::write(&path, text).map_err(|e| io_error(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, GprError> {
        let path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let index: IndexFile = toml::from_str(&text).map_err(|e| GprError::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if index.format_version != DATABASE_FORMAT_VERSION {
            return Err(GprError::Format {
                path: path.display().to_string(),
                reason: format!("unsupported format version {}", index.format_version),
            });
        }
        let mut db = Self::new();
        for e in index.entries {
            let sp = dir.join(&e.file);
            let text = fs::read_to_string(&sp).map_err(|err| io_error(&sp, err))?;
            let signal = FeedforwardSignal::from_toml_str(&text).map_err(|err| GprError::Format {
                path: sp.display().to_string(),
                reason: err.to_string(),
            })?;
            db.add_entry(&e.kappa, signal)?;
        }
        Ok(db)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> GprError {
    GprError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexFile {
    format_version: u32,
    #[serde(default)]
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    kappa: Vec<f64>,
    file: String,
}

/// Squared-exponential kernel parameters. Without `signal_variance`, each
/// weight coordinate uses the empirical variance of its training values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub length_scale: f64,
    pub signal_variance: Option<f64>,
    pub noise_variance: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            length_scale: 0.02,
            signal_variance: None,
            noise_variance: 1e-8,
        }
    }
}

/// Independent GPs, one per weight coordinate, sharing the unit-variance
/// kernel matrix `R` with `K = s^2 R`. Each coordinate's prior mean is the
/// mean of its training values.
#[derive(Debug, Clone)]
pub struct GprModel {
    hyper: Hyperparameters,
    inputs: Vec<Vec<f64>>,
    /// Eigen-decomposition of `R`.
    eigenvectors: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    /// Per coordinate (column-major flattening of `L x dim`).
    means: DVector<f64>,
    variances: DVector<f64>,
    /// `(s^2 R + sn^2 I)^-1 (y - mean)` for every coordinate, `N x C`.
    alpha: DMatrix<f64>,
    template: FeedforwardSignal,
}

fn unit_kernel(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * length_scale * length_scale)).exp()
}

/// Prediction for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `L x dim`
    pub mean: DMatrix<f64>,
    /// Predictive variance of the latent function, `L x dim`.
    pub variance: DMatrix<f64>,
}

pub fn train(db: &FeedforwardDatabase, hyper: &Hyperparameters) -> Result<GprModel, GprError> {
    if db.len() < 2 {
        return Err(GprError::TooFewEntries {
            needed: 2,
            found: db.len(),
        });
    }
    if !(hyper.length_scale > 0.0 && hyper.length_scale.is_finite()) {
        return Err(GprError::Hyperparameters(format!("length scale {} must be > 0", hyper.length_scale)));
    }
    if !(hyper.noise_variance >= 0.0 && hyper.noise_variance.is_finite()) {
        return Err(GprError::Hyperparameters("noise variance must be >= 0".into()));
    }
    if let Some(s) = hyper.signal_variance {
        if !(s > 0.0 && s.is_finite()) {
            return Err(GprError::Hyperparameters("signal variance must be > 0".into()));
        }
    }
    let n = db.len();
    let inputs: Vec<Vec<f64>> = db.entries.iter().map(|e| e.kappa.clone()).collect();
    let r = DMatrix::from_fn(n, n, |i, j| unit_kernel(&inputs[i], &inputs[j], hyper.length_scale));
    let eig = r.symmetric_eigen();
    let template = db.entries[0].signal.clone();
    let c = template.weights().len();
    let targets = DMatrix::from_fn(n, c, |i, k| db.entries[i].signal.weights().as_slice()[k]);
    let means = DVector::from_fn(c, |k, _| targets.column(k).mean());
    let variances = DVector::from_fn(c, |k, _| {
        hyper.signal_variance.unwrap_or_else(|| {
            let v = targets.column(k).variance();
            // Constant coordinates: any positive scale predicts the mean.
            if v > 0.0 {
                v
            } else {
                1.0
            }
        })
    });
    let mut alpha = DMatrix::zeros(n, c);
    for k in 0..c {
        let shifted = eig.eigenvalues.map(|l| variances[k] * l + hyper.noise_variance);
        let smallest = shifted.min();
        if smallest <= 1e-14 * shifted.max() {
            return Err(GprError::NotPositiveDefinite(smallest));
        }
        let y = targets.column(k).add_scalar(-means[k]);
        let proj = eig.eigenvectors.tr_mul(&y).component_div(&shifted);
        alpha.set_column(k, &(&eig.eigenvectors * proj));
    }
    Ok(GprModel {
        hyper: *hyper,
        inputs,
        eigenvectors: eig.eigenvectors,
        eigenvalues: eig.eigenvalues,
        means,
        variances,
        alpha,
        template,
    })
}

impl GprModel {
    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn predict(&self, kappa: &[f64]) -> Result<Prediction, GprError> {
        let dim = self.inputs[0].len();
        if kappa.len() != dim {
            return Err(GprError::Dimension {
                expected: dim,
                found: kappa.len(),
            });
        }
        let kstar = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|x| unit_kernel(x, kappa, self.hyper.length_scale)),
        );
        let u_k = self.eigenvectors.tr_mul(&kstar);
        let (l, d) = self.template.weights().shape();
        let mut mean = DMatrix::zeros(l, d);
        let mut variance = DMatrix::zeros(l, d);
        for k in 0..self.means.len() {
            let s2 = self.variances[k];
            mean.as_mut_slice()[k] = self.means[k] + s2 * kstar.dot(&self.alpha.column(k));
            let quad: f64 = u_k
                .iter()
                .zip(self.eigenvalues.iter())
                .map(|(u, lam)| u * u / (s2 * lam + self.hyper.noise_variance))
                .sum();
            variance.as_mut_slice()[k] = (s2 - s2 * s2 * quad).max(0.0);
        }
        Ok(Prediction { mean, variance })
    }

    /// Predicted weights wrapped in the database's encoding.
    pub fn predict_signal(&self, kappa: &[f64]) -> Result<FeedforwardSignal, GprError> {
        Ok(self.template.with_weights(self.predict(kappa)?.mean)?)
    }
}

/// Leave-one-out error of each length scale; returns the best one.
pub fn select_length_scale(
    db: &FeedforwardDatabase,
    base: &Hyperparameters,
    grid: &[f64],
) -> Result<(f64, Vec<f64>), GprError> {
    if db.len() < 3 {
        return Err(GprError::TooFewEntries {
            needed: 3,
            found: db.len(),
        });
    }
    let mut errors = Vec::with_capacity(grid.len());
    for &ell in grid {
        let mut sq = 0.0;
        for held in 0..db.len() {
            let mut rest = FeedforwardDatabase::new();
            for (i, e) in db.entries.iter().enumerate() {
                if i != held {
                    rest.add_entry(&e.kappa, e.signal.clone())?;
                }
            }
            let model = train(
                &rest,
                &Hyperparameters {
                    length_scale: ell,
                    ..*base
                },
            )?;
            let e = &db.entries[held];
            sq += (model.predict(&e.kappa)?.mean - e.signal.weights()).norm_squared();
        }
        errors.push((sq / db.len() as f64).sqrt());
    }
    let best = errors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| grid[i])
        .ok_or_else(|| GprError::Hyperparameters("empty length-scale grid".into()))?;
    Ok((best, errors))
}
