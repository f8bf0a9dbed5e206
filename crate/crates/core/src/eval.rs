//! Tracking metrics, success criteria, the nine single-link benchmark
//! scenarios and ensemble statistics.

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::plant::{DisturbanceSpec, InertiaSpec, PlantModel, PlantState};
use crate::trainer::{self, ControllerMode, EpisodeRecord, Outcome, TrainError, TrialConfig};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty or out-of-range window [{0}, {1}) for series of length {2}")]
    Window(usize, usize, usize),
    #[error("VsBaseline criterion needs the paired baseline MSE")]
    MissingBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuccessCriterion {
    /// Second-half MSE below first-half MSE.
    HalfVsHalf,
    /// Second-half MSE below the paired stabilizing-only second-half MSE.
    VsBaseline,
}

/// Per-sample mean of ‖e1(k)‖² over `[n_minus, n_plus)`.
pub fn mse(e1: &[DVector<f64>], n_minus: usize, n_plus: usize) -> Result<f64, EvalError> {
    if n_minus >= n_plus || n_plus > e1.len() {
        return Err(EvalError::Window(n_minus, n_plus, e1.len()));
    }
    let sum: f64 = e1[n_minus..n_plus].iter().map(|e| e.norm_squared()).sum();
    Ok(sum / (n_plus - n_minus) as f64)
}

/// Per-joint MSE over `[n_minus, n_plus)`.
pub fn mse_per_joint(e1: &[DVector<f64>], n_minus: usize, n_plus: usize) -> Result<Vec<f64>, EvalError> {
    if n_minus >= n_plus || n_plus > e1.len() {
        return Err(EvalError::Window(n_minus, n_plus, e1.len()));
    }
    let n = e1[0].len();
    let count = (n_plus - n_minus) as f64;
    Ok((0..n)
        .map(|j| e1[n_minus..n_plus].iter().map(|e| e[j] * e[j]).sum::<f64>() / count)
        .collect())
}

pub fn judge(
    mse_minus: f64,
    mse_plus: f64,
    criterion: SuccessCriterion,
    baseline_mse_plus: Option<f64>,
) -> Result<Outcome, EvalError> {
    let success = match criterion {
        SuccessCriterion::HalfVsHalf => mse_plus < mse_minus,
        SuccessCriterion::VsBaseline => mse_plus < baseline_mse_plus.ok_or(EvalError::MissingBaseline)?,
    };
    Ok(if success { Outcome::Success } else { Outcome::Failure })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    StabilizingOnly,
    DhdpOnly,
}

/// The same experiment with the controller swapped for a baseline.
pub fn baseline_controller(cfg: &TrialConfig, kind: BaselineKind) -> TrialConfig {
    let mode = match kind {
        BaselineKind::StabilizingOnly => ControllerMode::StabilizingOnly,
        BaselineKind::DhdpOnly => ControllerMode::DhdpOnly,
    };
    TrialConfig { mode, ..cfg.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioDisturbance {
    None,
    Pulse,
    Gaussian,
}

/// One row of the single-link benchmark grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub id: usize,
    pub initial: (f64, f64),
    pub varying_inertia: bool,
    pub mass: f64,
    pub half_length: f64,
    pub disturbance: ScenarioDisturbance,
    /// Reference success rate (fraction) and reset count over 50 episodes.
    pub reference_success: f64,
    pub reference_resets: usize,
}

pub const PULSE_MAGNITUDE: f64 = 2.0;
pub const PULSE_TIME: f64 = 40.0;
pub const NOISE_STD: f64 = 8.25;
pub const INERTIA_NOMINAL: f64 = 5.0;
pub const INERTIA_STD: f64 = 0.5;

pub fn scenarios() -> [ScenarioSpec; 9] {
    use ScenarioDisturbance as D;
    let row = |id, initial, varying_inertia, (mass, half_length), disturbance, rate, resets| ScenarioSpec {
        id,
        initial,
        varying_inertia,
        mass,
        half_length,
        disturbance,
        reference_success: rate,
        reference_resets: resets,
    };
    [
        row(1, (-0.1, 0.1), false, (1.0, 1.0), D::None, 0.96, 2),
        row(2, (0.1, -0.1), false, (1.0, 1.0), D::None, 0.82, 16),
        row(3, (0.2, -0.2), false, (1.0, 1.0), D::None, 0.80, 24),
        row(4, (-0.2, 0.2), false, (1.0, 1.0), D::None, 0.94, 5),
        row(5, (-0.1, 0.1), false, (1.0, 1.0), D::Pulse, 0.76, 28),
        row(6, (-0.1, 0.1), false, (1.0, 1.0), D::Gaussian, 0.84, 12),
        row(7, (-0.1, 0.1), false, (1.0, 2.0), D::None, 0.60, 26),
        row(8, (-0.1, 0.1), false, (2.0, 2.0), D::None, 0.50, 35),
        row(9, (-0.1, 0.1), true, (1.0, 1.0), D::None, 0.90, 8),
    ]
}

impl ScenarioSpec {
    /// Applies this row to a single-link base configuration.
    pub fn apply(&self, base: &TrialConfig) -> TrialConfig {
        let inertia = if self.varying_inertia {
            InertiaSpec::Perturbed {
                mean: INERTIA_NOMINAL,
                std: INERTIA_STD,
            }
        } else {
            InertiaSpec::Constant(INERTIA_NOMINAL)
        };
        let disturbance = match self.disturbance {
            ScenarioDisturbance::None => DisturbanceSpec::None,
            ScenarioDisturbance::Pulse => DisturbanceSpec::Pulse {
                magnitude: PULSE_MAGNITUDE,
                at_time: PULSE_TIME,
            },
            ScenarioDisturbance::Gaussian => DisturbanceSpec::Gaussian {
                mean: 0.0,
                std: NOISE_STD,
            },
        };
        TrialConfig {
            model: PlantModel::SingleLink {
                inertia,
                mass: self.mass,
                half_length: self.half_length,
            },
            disturbance,
            initial: PlantState::new(&[self.initial.0], &[self.initial.1]).expect("scalar state"),
            criterion: SuccessCriterion::VsBaseline,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub id: usize,
    pub episodes: usize,
    /// Fraction of episodes whose first trial succeeded.
    pub success_rate: f64,
    pub resets: usize,
    pub exhausted: usize,
    pub diverged_trials: usize,
    /// Mean second-half MSE of the last trial of each episode.
    pub mean_mse_plus: f64,
    pub mean_baseline_mse_plus: f64,
    pub reference_success: f64,
    pub reference_resets: usize,
}

/// Aggregates episode records into one report row. The result does not
/// depend on the order of `episodes`.
pub fn summarize(spec: &ScenarioSpec, episodes: &[EpisodeRecord]) -> ScenarioReport {
    let count = episodes.len();
    let first_ok = episodes
        .iter()
        .filter(|e| e.trials[0].outcome == Outcome::Success)
        .count();
    let mean = |vals: Vec<f64>| {
        let finite: Vec<f64> = vals.into_iter().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            f64::NAN
        } else {
            // sort for an order-independent sum
            let mut s = finite.clone();
            s.sort_by(f64::total_cmp);
            s.iter().sum::<f64>() / s.len() as f64
        }
    };
    ScenarioReport {
        id: spec.id,
        episodes: count,
        success_rate: first_ok as f64 / count.max(1) as f64,
        resets: episodes.iter().map(|e| e.resets).sum(),
        exhausted: episodes.iter().filter(|e| e.exhausted()).count(),
        diverged_trials: episodes
            .iter()
            .flat_map(|e| e.trials.iter())
            .filter(|t| t.outcome == Outcome::Diverged)
            .count(),
        mean_mse_plus: mean(episodes.iter().map(|e| e.last.mse_plus).collect()),
        mean_baseline_mse_plus: mean(episodes.iter().filter_map(|e| e.baseline_mse_plus).collect()),
        reference_success: spec.reference_success,
        reference_resets: spec.reference_resets,
    }
}

/// Runs every scenario as `n_trials` paired episodes with seeds
/// `base_seed .. base_seed + n_trials`.
pub fn run_scenario_suite(
    base: &TrialConfig,
    n_trials: usize,
    base_seed: u64,
) -> Result<Vec<ScenarioReport>, TrainError> {
    if n_trials == 0 {
        return Err(TrainError::Invalid("n_trials must be >= 1".into()));
    }
    scenarios()
        .iter()
        .map(|spec| {
            let cfg = spec.apply(base);
            let episodes = (0..n_trials as u64)
                .into_par_iter()
                .map(|i| trainer::run_episode(&cfg, base_seed + i))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(summarize(spec, &episodes))
        })
        .collect()
}

/// Aligned-text rendering of suite rows.
pub fn format_table(rows: &[ScenarioReport]) -> String {
    let mut out = String::from(
        "case  success  (ref)   resets  (ref)  exhausted  mean_mse_plus  baseline_mse_plus\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{:>4}  {:>6.1}%  {:>4.0}%  {:>6}  {:>5}  {:>9}  {:>13.4e}  {:>17.4e}\n",
            r.id,
            100.0 * r.success_rate,
            100.0 * r.reference_success,
            r.resets,
            r.reference_resets,
            r.exhausted,
            r.mean_mse_plus,
            r.mean_baseline_mse_plus,
        ));
    }
    out
}

pub fn table_csv(rows: &[ScenarioReport]) -> String {
    let mut out = String::from(
        "case,episodes,success_rate,reference_success,resets,reference_resets,exhausted,diverged_trials,mean_mse_plus,mean_baseline_mse_plus\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.id,
            r.episodes,
            r.success_rate,
            r.reference_success,
            r.resets,
            r.reference_resets,
            r.exhausted,
            r.diverged_trials,
            r.mean_mse_plus,
            r.mean_baseline_mse_plus
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn series(vals: &[f64]) -> Vec<DVector<f64>> {
        vals.iter().map(|&v| DVector::from_element(1, v)).collect()
    }

    #[test]
    fn mse_cases() {
        assert_abs_diff_eq!(mse(&series(&[0.1; 10]), 2, 7).unwrap(), 0.01, epsilon = 1e-15);
        assert_eq!(mse(&series(&[0.0; 4]), 0, 4).unwrap(), 0.0);
        assert_abs_diff_eq!(mse(&series(&[0.1, 0.3]), 0, 2).unwrap(), 0.05, epsilon = 1e-15);
        assert_eq!(mse(&series(&[0.1]), 1, 1), Err(EvalError::Window(1, 1, 1)));
        assert!(mse(&series(&[0.1]), 0, 2).is_err());
    }

    #[test]
    fn mse_scales_quadratically() {
        let e: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let scaled: Vec<f64> = e.iter().map(|x| 3.0 * x).collect();
        let a = mse(&series(&e), 5, 40).unwrap();
        let b = mse(&series(&scaled), 5, 40).unwrap();
        assert_abs_diff_eq!(b, 9.0 * a, epsilon = 1e-12);
    }

    #[test]
    fn per_joint_mse() {
        let e = vec![DVector::from_column_slice(&[0.1, 0.2]), DVector::from_column_slice(&[0.3, 0.0])];
        let j = mse_per_joint(&e, 0, 2).unwrap();
        assert_abs_diff_eq!(j[0], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(j[1], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(j.iter().sum::<f64>(), mse(&e, 0, 2).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn judge_cases() {
        use SuccessCriterion::*;
        assert_eq!(judge(0.1, 0.01, HalfVsHalf, None), Ok(Outcome::Success));
        assert_eq!(judge(0.1, 0.1, HalfVsHalf, None), Ok(Outcome::Failure));
        assert_eq!(judge(0.1, 0.01, VsBaseline, Some(0.02)), Ok(Outcome::Success));
        assert_eq!(judge(0.1, 0.02, VsBaseline, Some(0.02)), Ok(Outcome::Failure));
        assert_eq!(judge(0.1, 0.01, VsBaseline, None), Err(EvalError::MissingBaseline));
    }

    #[test]
    fn table_rows_match_reference_grid() {
        let rows = scenarios();
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[0].reference_success, 0.96);
        assert_eq!(rows[7].mass, 2.0);
        assert_eq!(rows[7].half_length, 2.0);
        assert_eq!(rows[1].initial, (0.1, -0.1));
        assert!(rows[8].varying_inertia);
        assert_eq!(rows.iter().map(|r| r.reference_resets).sum::<usize>(), 156);
    }
}
