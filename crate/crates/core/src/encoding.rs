//! Periodic radial-basis encoding of feedforward signals over the phase of
//! a constant-frequency oscillator.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SIGNAL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BASIS_COUNT: usize = 25;
pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("need at least {basis} samples to fit {basis} basis functions, got {samples}")]
    TooFewSamples { samples: usize, basis: usize },
    #[error("{0} phases but {1} sample rows")]
    Mismatch(usize, usize),
    #[error("invalid signal: {0}")]
    Invalid(String),
    #[error("signal parse failure: {0}")]
    Parse(String),
}

/// `(phi + omega dt) mod 2 pi`.
pub fn phase_advance(phi: f64, omega: f64, dt: f64) -> f64 {
    wrap(phi + omega * dt)
}

pub fn wrap(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    // rem_euclid may round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// `c_j = 2 pi (j - 1) / L`.
pub fn uniform_centers(count: usize) -> Vec<f64> {
    (0..count).map(|j| TAU * j as f64 / count as f64).collect()
}

/// `h = 1 / (1 - cos(2 pi / L))`: neighbouring bases cross at about e^-1.
/// A single basis function gets `h = 1`.
pub fn default_width(count: usize) -> f64 {
    if count < 2 {
        1.0
    } else {
        1.0 / (1.0 - (TAU / count as f64).cos())
    }
}

/// `Gamma_j(phi) = exp(h_j (cos(phi - c_j) - 1))`.
pub fn basis_values(phi: f64, centers: &[f64], widths: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        centers.len(),
        centers
            .iter()
            .zip(widths)
            .map(|(c, h)| (h * ((phi - c).cos() - 1.0)).exp()),
    )
}

/// `Gamma_j / sum_k Gamma_k`.
fn normalized_basis(phi: f64, centers: &[f64], widths: &[f64]) -> DVector<f64> {
    let g = basis_values(phi, centers, widths);
    let s = g.sum();
    g / s
}

/// Periodic signal `f(phi) = r * sum_j w_j Gamma_j(phi) / sum_j Gamma_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardSignal {
    /// `L x dim`
    weights: DMatrix<f64>,
    centers: Vec<f64>,
    widths: Vec<f64>,
    gain: f64,
    omega: f64,
}

impl FeedforwardSignal {
    pub fn new(
        weights: DMatrix<f64>,
        centers: Vec<f64>,
        widths: Vec<f64>,
        gain: f64,
        omega: f64,
    ) -> Result<Self, EncodingError> {
        let l = centers.len();
        if l == 0 {
            return Err(EncodingError::Invalid("at least one basis function is required".into()));
        }
        if widths.len() != l || weights.nrows() != l {
            return Err(EncodingError::Invalid(format!(
                "{l} centers, {} widths, {} weight rows",
                widths.len(),
                weights.nrows()
            )));
        }
        if weights.ncols() == 0 {
            return Err(EncodingError::Invalid("signal has no dimensions".into()));
        }
        if let Some(h) = widths.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
            return Err(EncodingError::Invalid(format!("width {h} is not positive")));
        }
        if let Some(c) = centers.iter().find(|c| !(**c >= 0.0 && **c < TAU)) {
            return Err(EncodingError::Invalid(format!("center {c} outside [0, 2 pi)")));
        }
        if !(gain.is_finite() && omega.is_finite()) || weights.iter().any(|w| !w.is_finite()) {
            return Err(EncodingError::Invalid("non-finite parameter".into()));
        }
        Ok(Self {
            weights,
            centers,
            widths,
            gain,
            omega,
        })
    }

    /// Uniform centers and widths for `weights.nrows()` basis functions.
    pub fn uniform(weights: DMatrix<f64>, gain: f64, omega: f64) -> Result<Self, EncodingError> {
        let l = weights.nrows();
        Self::new(weights, uniform_centers(l), vec![default_width(l); l], gain, omega)
    }

    /// Identically zero signal of the given shape.
    pub fn zero(basis_count: usize, dim: usize, omega: f64) -> Self {
        Self::uniform(DMatrix::zeros(basis_count, dim), 1.0, omega).expect("valid zero signal")
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn basis_count(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_weights(&self, weights: DMatrix<f64>) -> Result<Self, EncodingError> {
        Self::new(weights, self.centers.clone(), self.widths.clone(), self.gain, self.omega)
    }

    /// True when both signals share basis and oscillator parameters.
    pub fn same_encoding(&self, other: &Self) -> bool {
        self.centers == other.centers
            && self.widths == other.widths
            && self.gain == other.gain
            && self.omega == other.omega
            && self.weights.shape() == other.weights.shape()
    }

    pub fn evaluate(&self, phi: f64) -> DVector<f64> {
        let b = normalized_basis(wrap(phi), &self.centers, &self.widths);
        self.weights.tr_mul(&b) * self.gain
    }

    /// `self + scale * other` as one signal with unit gain. Both must share
    /// centers and widths.
    pub fn add_scaled(&self, other: &Self, scale: f64) -> Result<Self, EncodingError> {
        if self.centers != other.centers || self.widths != other.widths || self.dim() != other.dim() {
            return Err(EncodingError::Invalid("signals use different bases".into()));
        }
        let weights = &self.weights * self.gain + &other.weights * (other.gain * scale);
        Self::new(weights, self.centers.clone(), self.widths.clone(), 1.0, self.omega)
    }

    pub fn to_toml_string(&self) -> String {
        let file = SignalFile {
            format_version: SIGNAL_FORMAT_VERSION,
            basis_count: self.basis_count(),
            dim: self.dim(),
            omega_radps: self.omega,
            gain: self.gain,
            centers_rad: self.centers.clone(),
            widths: self.widths.clone(),
            weights: self
                .weights
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        };
        toml::to_string(&file).expect("signal serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EncodingError> {
        let file: SignalFile = toml::from_str(text).map_err(|e| EncodingError::Parse(e.to_string()))?;
        if file.format_version != SIGNAL_FORMAT_VERSION {
            return Err(EncodingError::Parse(format!(
                "unsupported signal format version {}",
                file.format_version
            )));
        }
        if file.centers_rad.len() != file.basis_count || file.weights.len() != file.basis_count {
            return Err(EncodingError::Parse("basis_count disagrees with the arrays".into()));
        }
        if file.weights.iter().any(|r| r.len() != file.dim) {
            return Err(EncodingError::Parse("weight row length differs from dim".into()));
        }
        let weights = DMatrix::from_fn(file.basis_count, file.dim, |i, j| file.weights[i][j]);
        Self::new(weights, file.centers_rad, file.widths, file.gain, file.omega_radps)
    }
}

/// On-disk layout of a signal (TOML). `weights` has one row per basis
/// function and one column per task dimension.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignalFile {
    format_version: u32,
    basis_count: usize,
    dim: usize,
    omega_radps: f64,
    gain: f64,
    centers_rad: Vec<f64>,
    widths: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    /// Unit gain, `omega = 0` until set by the caller.
    pub signal: FeedforwardSignal,
    /// Reconstruction RMS per dimension.
    pub rms: DVector<f64>,
    /// Fraction of the period covered by the sample phases.
    pub coverage: f64,
}

/// Fraction of the circle not inside the largest gap between phases.
pub fn phase_coverage(phases: &[f64]) -> f64 {
    if phases.is_empty() {
        return 0.0;
    }
    let mut p: Vec<f64> = phases.iter().map(|&x| wrap(x)).collect();
    p.sort_by(f64::total_cmp);
    let mut gap = p[0] + TAU - p[p.len() - 1];
    for w in p.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    1.0 - gap / TAU
}

/// Ridge least squares over the normalized uniform basis:
/// `min sum_k |f(phi_k) - y_k|^2 + ridge |w|^2`.
pub fn fit(
    phases: &[f64],
    samples: &DMatrix<f64>,
    basis_count: usize,
    ridge: f64,
) -> Result<Fit, EncodingError> {
    if phases.len() != samples.nrows() {
        return Err(EncodingError::Mismatch(phases.len(), samples.nrows()));
    }
    if basis_count == 0 {
        return Err(EncodingError::Invalid("at least one basis function is required".into()));
    }
    if phases.len() < basis_count {
        return Err(EncodingError::TooFewSamples {
            samples: phases.len(),
            basis: basis_count,
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(EncodingError::Invalid(format!("ridge {ridge} must be >= 0")));
    }
    let coverage = phase_coverage(phases);
    if coverage < 0.9 {
        log::warn!("fit phases cover only {:.0}% of the period", 100.0 * coverage);
    }
    let centers = uniform_centers(basis_count);
    let widths = vec![default_width(basis_count); basis_count];
    let k = phases.len();
    let mut design = DMatrix::zeros(k + basis_count, basis_count);
    for (i, &phi) in phases.iter().enumerate() {
        design
            .row_mut(i)
            .copy_from(&normalized_basis(wrap(phi), &centers, &widths).transpose());
    }
    let mut rhs = DMatrix::zeros(k + basis_count, samples.ncols());
    rhs.rows_mut(0, k).copy_from(samples);
    for j in 0..basis_count {
        design[(k + j, j)] = ridge.sqrt();
    }
    let weights = solve_least_squares(design.clone(), &rhs)?;
    let residual = design.rows(0, k) * &weights - samples;
    let rms = DVector::from_iterator(
        samples.ncols(),
        residual.column_iter().map(|c| (c.norm_squared() / k as f64).sqrt()),
    );
    let signal = FeedforwardSignal::new(weights, centers, widths, 1.0, 0.0)?;
    Ok(Fit {
        signal,
        rms,
        coverage,
    })
}

fn solve_least_squares(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, EncodingError> {
    let qr = a.qr();
    let qtb = qr.q().tr_mul(b);
    qr.r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| EncodingError::Invalid("rank-deficient fit; use a positive ridge".into()))
}
