//! Discrete-time backstepping: error coordinates, virtual controls, the
//! composed control law and the gain condition that makes the error
//! dynamics ultimately bounded.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::plant::{DiscreteDesignModel, PlantModel};

#[derive(Debug, Error, PartialEq)]
pub enum GainError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("step h must be > 0, got {0}")]
    NonPositiveStep(f64),
    #[error("M_min must be > 0, got {0}")]
    NonPositiveMmin(f64),
    #[error("condition unsatisfiable at this h: 2·M_min − 4h² = {0} ≤ 0")]
    Unsatisfiable(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSet {
    pub c1: f64,
    pub c2: f64,
    pub h: f64,
    /// Lower bound on ‖(M⁻)ᵀM⁻‖.
    pub m_min: f64,
}

/// Errors and virtual controls at one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingErrors {
    pub e1: DVector<f64>,
    pub e2: DVector<f64>,
    pub alpha: DVector<f64>,
    pub alpha_next: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Waveform {
    Sine,
    Constant,
}

/// Per-joint `offset + amplitude·sin(frequency·k·h + phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub waveform: Waveform,
    pub amplitude: Vec<f64>,
    pub frequency: Vec<f64>,
    pub phase: Vec<f64>,
    pub offset: Vec<f64>,
    pub h: f64,
}

impl ReferenceTrajectory {
    pub fn sine(amplitude: Vec<f64>, frequency: Vec<f64>, h: f64) -> Self {
        let n = amplitude.len();
        Self {
            waveform: Waveform::Sine,
            amplitude,
            frequency,
            phase: vec![0.0; n],
            offset: vec![0.0; n],
            h,
        }
    }

    pub fn dof(&self) -> usize {
        self.amplitude.len()
    }

    pub fn at(&self, k: usize) -> DVector<f64> {
        let t = k as f64 * self.h;
        DVector::from_fn(self.dof(), |i, _| match self.waveform {
            Waveform::Sine => {
                self.offset[i] + self.amplitude[i] * (self.frequency[i] * t + self.phase[i]).sin()
            }
            Waveform::Constant => self.offset[i] + self.amplitude[i],
        })
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.dof())
            .map(|i| self.offset[i].abs() + self.amplitude[i].abs())
            .fold(0.0, f64::max)
    }
}

fn same_len(a: &DVector<f64>, b: &DVector<f64>) -> Result<(), GainError> {
    if a.len() != b.len() {
        return Err(GainError::Dimension(a.len(), b.len()));
    }
    Ok(())
}

/// e1 = x1 − x1d.
pub fn tracking_error(x1: &DVector<f64>, x1d: &DVector<f64>) -> Result<DVector<f64>, GainError> {
    same_len(x1, x1d)?;
    Ok(x1 - x1d)
}

/// α(k) = (c1·e1 − x1 + x1d(k+1)) / h.
pub fn virtual_control(
    e1: &DVector<f64>,
    x1: &DVector<f64>,
    x1d_next: &DVector<f64>,
    gains: &GainSet,
) -> DVector<f64> {
    (e1 * gains.c1 - x1 + x1d_next) / gains.h
}

/// α(k+1) expressed through quantities available at sample k.
pub fn virtual_control_next(
    e1: &DVector<f64>,
    e2: &DVector<f64>,
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    x1d_kplus2: &DVector<f64>,
    gains: &GainSet,
) -> DVector<f64> {
    let h = gains.h;
    ((e1 * gains.c1 + e2 * h) * gains.c1 - x2 * h - x1 + x1d_kplus2) / h
}

/// u = f̂ + c2·e2.
pub fn compose_control(f_hat: &DVector<f64>, e2: &DVector<f64>, gains: &GainSet) -> DVector<f64> {
    f_hat + e2 * gains.c2
}

/// f(k) = g(k) + M⁺(k)·α(k+1), the lumped dynamics the feed-forward term
/// has to cancel. Only computable when the model is known.
pub fn exact_feedforward(design: &DiscreteDesignModel, alpha_next: &DVector<f64>) -> DVector<f64> {
    &design.g + &design.m_plus * alpha_next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainVerdict {
    pub c1_bound: f64,
    pub c1_margin: f64,
    pub c1_ok: bool,
    pub c2_bound: f64,
    pub c2_margin: f64,
    pub c2_ok: bool,
}

impl GainVerdict {
    pub fn passed(&self) -> bool {
        self.c1_ok && self.c2_ok
    }
}

/// ‖c1‖ < √2/2 and ‖c2‖ < ½·√(2·M_min − 4h²).
pub fn check_gain_conditions(gains: &GainSet) -> Result<GainVerdict, GainError> {
    if !(gains.h > 0.0) {
        return Err(GainError::NonPositiveStep(gains.h));
    }
    if !(gains.m_min > 0.0) {
        return Err(GainError::NonPositiveMmin(gains.m_min));
    }
    let radicand = 2.0 * gains.m_min - 4.0 * gains.h * gains.h;
    if radicand <= 0.0 {
        return Err(GainError::Unsatisfiable(radicand));
    }
    let c1_bound = std::f64::consts::FRAC_1_SQRT_2;
    let c2_bound = 0.5 * radicand.sqrt();
    let c1_margin = c1_bound - gains.c1.abs();
    let c2_margin = c2_bound - gains.c2.abs();
    Ok(GainVerdict {
        c1_bound,
        c1_margin,
        c1_ok: c1_margin > 0.0,
        c2_bound,
        c2_margin,
        c2_ok: c2_margin > 0.0,
    })
}

fn spectral_norm_sq(m: &DMatrix<f64>) -> f64 {
    (m.transpose() * m).symmetric_eigenvalues().max()
}

/// M_min estimate from the designer's inertia guess: ½·‖(M̂⁺)ᵀM̂⁺‖.
pub fn estimate_m_min(m_hat_plus: &DMatrix<f64>) -> f64 {
    0.5 * spectral_norm_sq(m_hat_plus)
}

/// Exact inf over q of ‖(M(q)/h)ᵀ(M(q)/h)‖ for a known plant. For the
/// two-link arm M depends on cos(q2) only, so a dense sweep over one period
/// is used.
pub fn m_min_for_model(model: &PlantModel, h: f64) -> f64 {
    match model {
        PlantModel::SingleLink { inertia, .. } => (inertia.nominal() / h).powi(2),
        PlantModel::TwoLink(_) => (0..=3600)
            .map(|i| {
                let q2 = i as f64 * std::f64::consts::TAU / 3600.0;
                let m = model
                    .inertia_matrix(&DVector::from_column_slice(&[0.0, q2]))
                    .expect("two-link dimension")
                    / h;
                spectral_norm_sq(&m)
            })
            .fold(f64::INFINITY, f64::min),
    }
}
