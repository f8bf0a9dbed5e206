//! Closed-loop trial execution: backstepping feedback plus the online dHDP
//! feed-forward learner, and the reset-on-failure episode protocol.
//!
//! Per sample `k` a trial runs, in order: actor forward on `x_a(k)`, control
//! composition, one plant step, the next-sample errors and stage cost, the
//! critic pass and update, then the actor error and update. The stage cost
//! paired with `Ĵ(k)` in the TD error is `r = e1(k+1)ᵀQe1(k+1) + u(k)ᵀRu(k)`,
//! i.e. the cost observed after applying `u(k)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::actor_critic::{
    actor_error, actor_forward, actor_input, actor_update, check_learning_rates, critic_forward,
    critic_input, critic_update, f_tilde_estimate, td_error, ActorErrorMode, LearningConfig, Mlp,
    NetError, RateMonitor,
};
use crate::backstepping::{
    check_gain_conditions, compose_control, tracking_error, virtual_control, GainError, GainSet,
    GainVerdict, ReferenceTrajectory,
};
use crate::eval::{self, SuccessCriterion};
use crate::plant::{DisturbanceSpec, Environment, PlantError, PlantModel, PlantState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gain conditions not satisfied (c1 margin {c1:.6}, c2 margin {c2:.6}); set skip_gain_check to override")]
    GainCheckFailed { c1: f64, c2: f64 },
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("invalid trial configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    /// u = f̂ + c2·e2 with online learning.
    Combined,
    /// u = c2·e2, no networks.
    StabilizingOnly,
    /// u = f̂, learning without the backstepping feedback.
    DhdpOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl StageCostSpec {
    pub fn identity(n: usize, r_scale: f64) -> Self {
        Self {
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(n, n) * r_scale,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, m) in [("Q", &self.q), ("R", &self.r)] {
            if !m.is_square() || (m - m.transpose()).amax() > 1e-12 {
                return Err(TrainError::Invalid(format!("{name} must be symmetric")));
            }
            if m.clone().symmetric_eigenvalues().min() < -1e-12 {
                return Err(TrainError::Invalid(format!("{name} must be positive semi-definite")));
            }
        }
        Ok(())
    }
}

/// r = e1ᵀQe1 + uᵀRu.
pub fn stage_cost(e1: &DVector<f64>, u: &DVector<f64>, spec: &StageCostSpec) -> f64 {
    (e1.transpose() * &spec.q * e1)[0] + (u.transpose() * &spec.r * u)[0]
}

/// Σ_{j≥1} γʲ r(k+j) over the sequence following `k`; `r[0]` is r(k+1).
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| gamma * (r + acc))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoop {
    pub critic_iterations: usize,
    pub actor_iterations: usize,
    pub tolerance: f64,
}

impl Default for InnerLoop {
    fn default() -> Self {
        Self {
            critic_iterations: 1,
            actor_iterations: 1,
            tolerance: 1e-4,
        }
    }
}

/// Learning-rate schedule driven by block MSE of the tracking error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSchedule {
    pub enabled: bool,
    pub window: usize,
    pub improvement: f64,
    pub floor: f64,
}

impl Default for RateSchedule {
    fn default() -> Self {
        Self {
            enabled: false,
            window: 500,
            improvement: 0.01,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub model: PlantModel,
    pub disturbance: DisturbanceSpec,
    pub initial: PlantState,
    pub gains: GainSet,
    pub trajectory: ReferenceTrajectory,
    pub mode: ControllerMode,
    pub critic_hidden: usize,
    pub actor_hidden: usize,
    pub init_range: f64,
    pub learning: LearningConfig,
    pub cost: StageCostSpec,
    pub actor_error_mode: ActorErrorMode,
    pub inner: InnerLoop,
    pub schedule: RateSchedule,
    pub steps: usize,
    pub blowup: f64,
    pub criterion: SuccessCriterion,
    pub max_trials: usize,
    pub snapshot_stride: usize,
    pub skip_gain_check: bool,
}

impl TrialConfig {
    pub fn dof(&self) -> usize {
        self.model.dof()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let n = self.dof();
        self.model.validate()?;
        self.learning.validate()?;
        self.cost.validate()?;
        let bad = |s: String| Err(TrainError::Invalid(s));
        if self.initial.dof() != n || self.trajectory.dof() != n {
            return bad(format!("initial state and trajectory must have {n} joints"));
        }
        if self.cost.q.nrows() != n || self.cost.r.nrows() != n || self.learning.m_hat_plus.nrows() != n {
            return bad(format!("Q, R and m_hat_plus must be {n}x{n}"));
        }
        if (self.trajectory.h - self.gains.h).abs() > 0.0 {
            return bad("trajectory step must equal the control step".into());
        }
        if self.steps < 2 {
            return bad("a trial needs at least two samples".into());
        }
        if self.critic_hidden == 0 || self.actor_hidden == 0 {
            return bad("hidden widths must be >= 1".into());
        }
        if self.max_trials == 0 {
            return bad("max_trials must be >= 1".into());
        }
        Ok(())
    }

    pub fn gain_verdict(&self) -> Result<GainVerdict, TrainError> {
        Ok(check_gain_conditions(&self.gains)?)
    }

    /// The same plant and references under pure `u = c2·e2` feedback.
    pub fn baseline(&self) -> TrialConfig {
        TrialConfig {
            mode: ControllerMode::StabilizingOnly,
            criterion: SuccessCriterion::HalfVsHalf,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub state: PlantState,
    pub e1: DVector<f64>,
    pub e2: DVector<f64>,
    pub alpha: DVector<f64>,
    pub u: DVector<f64>,
    pub f_hat: DVector<f64>,
    /// Stage cost observed after applying `u(k)`.
    pub r: f64,
    pub j_hat: f64,
    pub e_c: f64,
    pub e_a: f64,
    pub l_a: f64,
    pub l_c: f64,
    pub l_c_bound: Option<f64>,
    pub l_a_bound: Option<f64>,
    pub rates_ok: bool,
    /// Frobenius norm of the combined critic and actor weight step.
    pub dw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot {
    pub k: usize,
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
}

/// Seeds for one trial. The plant stream is shared by every trial of an
/// episode and by the paired baseline; the weight stream changes per reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSeed {
    pub seed: u64,
    pub attempt: u64,
}

impl TrialSeed {
    pub fn new(seed: u64) -> Self {
        Self { seed, attempt: 0 }
    }

    pub fn plant_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0);
        rng
    }

    pub fn weight_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 + self.attempt);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: TrialSeed,
    pub gamma: f64,
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<WeightSnapshot>,
    pub gain_verdict: GainVerdict,
    pub rate_monitor: RateMonitor,
    pub outcome: Outcome,
    pub mse_minus: f64,
    pub mse_plus: f64,
    pub baseline_mse_plus: Option<f64>,
    pub final_actor: Option<Mlp>,
    pub final_critic: Option<Mlp>,
}

impl TrialRecord {
    pub fn e1_series(&self) -> Vec<DVector<f64>> {
        self.steps.iter().map(|s| s.e1.clone()).collect()
    }

    pub fn diverged(&self) -> bool {
        self.outcome == Outcome::Diverged
    }

    /// Recomputes every TD error from the stored Ĵ and r columns.
    pub fn replay_td_errors(&self) -> Vec<f64> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let prev = if i == 0 { s.j_hat } else { self.steps[i - 1].j_hat };
                td_error(s.j_hat, prev, s.r, self.gamma)
            })
            .collect()
    }
}

struct Networks {
    actor: Mlp,
    critic: Mlp,
}

enum StepFailure {
    Diverged,
    Fatal(TrainError),
}

impl From<PlantError> for StepFailure {
    fn from(e: PlantError) -> Self {
        match e {
            PlantError::NonFinite(_) | PlantError::SingularInertia(_) => StepFailure::Diverged,
            other => StepFailure::Fatal(other.into()),
        }
    }
}

impl From<NetError> for StepFailure {
    fn from(e: NetError) -> Self {
        match e {
            NetError::NonFinite => StepFailure::Diverged,
            other => StepFailure::Fatal(other.into()),
        }
    }
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Runs one trial. Under [`SuccessCriterion::VsBaseline`] the paired
/// stabilizing-only run is executed first with the same plant seed.
pub fn run_trial(cfg: &TrialConfig, seed: u64) -> Result<TrialRecord, TrainError> {
    let baseline = baseline_for(cfg, seed)?;
    run_trial_with(cfg, TrialSeed::new(seed), baseline)
}

/// MSE over the second half for the paired baseline, when the criterion needs it.
pub fn baseline_for(cfg: &TrialConfig, seed: u64) -> Result<Option<f64>, TrainError> {
    match cfg.criterion {
        SuccessCriterion::HalfVsHalf => Ok(None),
        SuccessCriterion::VsBaseline => {
            let base = run_trial_with(&cfg.baseline(), TrialSeed::new(seed), None)?;
            Ok(Some(base.mse_plus))
        }
    }
}

pub fn run_trial_with(
    cfg: &TrialConfig,
    seed: TrialSeed,
    baseline_mse_plus: Option<f64>,
) -> Result<TrialRecord, TrainError> {
    cfg.validate()?;
    let gain_verdict = cfg.gain_verdict()?;
    if !gain_verdict.passed() && !cfg.skip_gain_check {
        return Err(TrainError::GainCheckFailed {
            c1: gain_verdict.c1_margin,
            c2: gain_verdict.c2_margin,
        });
    }

    let n = cfg.dof();
    let gains = cfg.gains;
    let traj = &cfg.trajectory;
    let learn = &cfg.learning;
    let learning_on = cfg.mode != ControllerMode::StabilizingOnly;

    let mut weight_rng = seed.weight_rng();
    let mut nets = learning_on.then(|| {
        let actor = Mlp::random(5 * n, cfg.actor_hidden, n, cfg.init_range, &mut weight_rng);
        let critic = Mlp::random(6 * n, cfg.critic_hidden, 1, cfg.init_range, &mut weight_rng);
        Networks { actor, critic }
    });
    let mut env = Environment::new(cfg.model, cfg.disturbance, gains.h, seed.plant_rng());

    let mut state = cfg.initial.clone();
    let mut e1 = tracking_error(&state.q, &traj.at(0))?;
    let mut alpha = virtual_control(&e1, &state.q, &traj.at(1), &gains);
    let mut e2 = &state.qdot - &alpha;

    let (mut l_a, mut l_c) = (learn.l_a, learn.l_c);
    let mut j_prev: Option<f64> = None;
    let mut monitor = RateMonitor::default();
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut snapshots = Vec::new();
    let mut prev_block_mse: Option<f64> = None;
    let mut block_sum = 0.0;
    let mut diverged = false;

    for k in 0..cfg.steps {
        if cfg.snapshot_stride > 0 && k % cfg.snapshot_stride == 0 {
            if let Some(nets) = &nets {
                snapshots.push(WeightSnapshot {
                    k,
                    actor: nets.actor.flat_weights(),
                    critic: nets.critic.flat_weights(),
                });
            }
        }
        block_sum += e1.norm_squared();

        let step = (|| -> Result<(StepRecord, PlantState, DVector<f64>, DVector<f64>, DVector<f64>), StepFailure> {
            let x1d_next2 = traj.at(k + 2);
            let x_a = actor_input(&state.q, &state.qdot, &e1, &e2, &x1d_next2);
            let f_hat = match &mut nets {
                Some(nets) => actor_forward(&mut nets.actor, &x_a)?,
                None => DVector::zeros(n),
            };
            let compose = |f: &DVector<f64>| match cfg.mode {
                ControllerMode::DhdpOnly => f.clone(),
                _ => compose_control(f, &e2, &gains),
            };
            let u = compose(&f_hat);
            if !finite(&u) {
                return Err(StepFailure::Diverged);
            }

            let next = env.step(&state, &u)?;
            let e1_next = tracking_error(&next.q, &traj.at(k + 1)).map_err(|e| StepFailure::Fatal(e.into()))?;
            let alpha_next = virtual_control(&e1_next, &next.q, &x1d_next2, &gains);
            let e2_next = &next.qdot - &alpha_next;
            let r = stage_cost(&e1_next, &u, &cfg.cost);

            let mut rec = StepRecord {
                k,
                state: state.clone(),
                e1: e1.clone(),
                e2: e2.clone(),
                alpha: alpha.clone(),
                u: u.clone(),
                f_hat: f_hat.clone(),
                r,
                j_hat: 0.0,
                e_c: 0.0,
                e_a: 0.0,
                l_a,
                l_c,
                l_c_bound: None,
                l_a_bound: None,
                rates_ok: true,
                dw: 0.0,
            };

            if let Some(nets) = &mut nets {
                // critic
                let x_c = critic_input(&x_a, &u);
                let j_hat = critic_forward(&mut nets.critic, &x_c)?;
                let prev = j_prev.unwrap_or(j_hat);
                let e_c = td_error(j_hat, prev, r, learn.gamma);
                rec.j_hat = j_hat;
                rec.e_c = e_c;
                let mut dw_c = 0.0;
                let mut e = e_c;
                for i in 0..cfg.inner.critic_iterations {
                    if i > 0 {
                        e = td_error(critic_forward(&mut nets.critic, &x_c)?, prev, r, learn.gamma);
                    }
                    if e.abs() < cfg.inner.tolerance {
                        break;
                    }
                    dw_c += critic_update(&mut nets.critic, e, learn.gamma, l_c)?;
                }

                // actor
                let f_term = match cfg.actor_error_mode {
                    ActorErrorMode::FTilde => f_tilde_estimate(&learn.m_hat_plus, &e2_next, &e2, gains.c2),
                    ActorErrorMode::FHat => f_hat.clone(),
                };
                let mut dw_a = 0.0;
                for i in 0..cfg.inner.actor_iterations {
                    let u_now = if i == 0 {
                        u.clone()
                    } else {
                        compose(&actor_forward(&mut nets.actor, &x_a)?)
                    };
                    let j_now = critic_forward(&mut nets.critic, &critic_input(&x_a, &u_now))?;
                    let e_a = actor_error(j_now, &f_term, learn.u_c);
                    if i == 0 {
                        rec.e_a = e_a;
                        let bounds = check_learning_rates(learn, &nets.critic, &nets.actor)?;
                        rec.l_c_bound = bounds.l_c;
                        rec.l_a_bound = bounds.l_a;
                        rec.rates_ok = monitor.observe(bounds, l_c, l_a);
                    }
                    if e_a.abs() < cfg.inner.tolerance {
                        break;
                    }
                    dw_a += actor_update(&mut nets.actor, &nets.critic, e_a, l_a)?;
                }
                rec.dw = (dw_c * dw_c + dw_a * dw_a).sqrt();
                if !(rec.j_hat.is_finite() && rec.e_c.is_finite() && rec.e_a.is_finite()) {
                    return Err(StepFailure::Diverged);
                }
            }
            Ok((rec, next, e1_next, alpha_next, e2_next))
        })();

        match step {
            Ok((rec, next, e1n, alphan, e2n)) => {
                j_prev = Some(rec.j_hat);
                steps.push(rec);
                state = next;
                e1 = e1n;
                alpha = alphan;
                e2 = e2n;
            }
            Err(StepFailure::Diverged) => {
                diverged = true;
                break;
            }
            Err(StepFailure::Fatal(e)) => return Err(e),
        }
        if !finite(&e1) || !finite(&e2) || e1.norm() > cfg.blowup {
            diverged = true;
            break;
        }

        if cfg.schedule.enabled && learning_on && (k + 1) % cfg.schedule.window == 0 {
            let block = block_sum / cfg.schedule.window as f64;
            if let Some(prev) = prev_block_mse {
                if block >= (1.0 - cfg.schedule.improvement) * prev {
                    l_a = (l_a * 0.5).max(cfg.schedule.floor.min(learn.l_a));
                    l_c = (l_c * 0.5).max(cfg.schedule.floor.min(learn.l_c));
                }
            }
            prev_block_mse = Some(block);
            block_sum = 0.0;
        }
    }

    let e1s: Vec<DVector<f64>> = steps.iter().map(|s| s.e1.clone()).collect();
    let half = cfg.steps / 2;
    let (mse_minus, mse_plus) = if diverged {
        (f64::NAN, f64::NAN)
    } else {
        (
            eval::mse(&e1s, 0, half).unwrap_or(f64::NAN),
            eval::mse(&e1s, half, cfg.steps).unwrap_or(f64::NAN),
        )
    };
    let outcome = if diverged {
        Outcome::Diverged
    } else {
        eval::judge(mse_minus, mse_plus, cfg.criterion, baseline_mse_plus)
            .map_err(|e| TrainError::Invalid(e.to_string()))?
    };

    let (final_actor, final_critic) = match nets {
        Some(n) => (Some(n.actor), Some(n.critic)),
        None => (None, None),
    };
    Ok(TrialRecord {
        seed,
        gamma: learn.gamma,
        steps,
        snapshots,
        gain_verdict,
        rate_monitor: monitor,
        outcome,
        mse_minus,
        mse_plus,
        baseline_mse_plus,
        final_actor,
        final_critic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSummary {
    pub attempt: u64,
    pub outcome: Outcome,
    pub mse_minus: f64,
    pub mse_plus: f64,
    pub steps: usize,
}

impl From<&TrialRecord> for TrialSummary {
    fn from(r: &TrialRecord) -> Self {
        Self {
            attempt: r.seed.attempt,
            outcome: r.outcome,
            mse_minus: r.mse_minus,
            mse_plus: r.mse_plus,
            steps: r.steps.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub trials: Vec<TrialSummary>,
    pub resets: usize,
    /// Index of the successful trial, `None` when the cap was exhausted.
    pub success_index: Option<usize>,
    pub baseline_mse_plus: Option<f64>,
    pub last: TrialRecord,
}

impl EpisodeRecord {
    pub fn exhausted(&self) -> bool {
        self.success_index.is_none()
    }
}

/// Repeats trials from the same initial state, re-drawing only the network
/// weights after each failure, until one succeeds or `max_trials` is hit.
pub fn run_episode(cfg: &TrialConfig, seed: u64) -> Result<EpisodeRecord, TrainError> {
    let baseline = baseline_for(cfg, seed)?;
    let mut trials = Vec::new();
    let mut attempt = 0u64;
    loop {
        let record = run_trial_with(cfg, TrialSeed { seed, attempt }, baseline)?;
        trials.push(TrialSummary::from(&record));
        let success = record.outcome == Outcome::Success;
        if success || trials.len() >= cfg.max_trials {
            let success_index = success.then(|| trials.len() - 1);
            return Ok(EpisodeRecord {
                seed,
                resets: trials.len() - 1,
                trials,
                success_index,
                baseline_mse_plus: baseline,
                last: record,
            });
        }
        attempt += 1;
    }
}
