//! Experiment configuration files (TOML).
//!
//! Every field has a default. Defaults that depend on other fields (initial
//! state, trajectory vectors, inertia estimate, `m_min`, Q and R) are
//! optional in the file and filled in by [`ExperimentConfig::resolve`], so a
//! resolved configuration dumped with [`ExperimentConfig::to_toml`] lists
//! every value the run used and reloads to the same configuration.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::actor_critic::{ActorErrorMode, LearningConfig};
use crate::backstepping::{estimate_m_min, GainSet, ReferenceTrajectory, Waveform};
use crate::eval::SuccessCriterion;
use crate::plant::{DisturbanceSpec, InertiaSpec, PlantModel, PlantState, TwoLinkParams};
use crate::trainer::{ControllerMode, InnerLoop, RateSchedule, StageCostSpec, TrialConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("constraint violated: {0}")]
    Constraint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SingleLink,
    TwoLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    None,
    Pulse,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceBlock {
    pub kind: DisturbanceKind,
    pub magnitude: f64,
    pub at_time: f64,
    pub mean: f64,
    pub std: f64,
}

impl Default for DisturbanceBlock {
    fn default() -> Self {
        Self {
            kind: DisturbanceKind::None,
            magnitude: 2.0,
            at_time: 40.0,
            mean: 0.0,
            std: 8.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantBlock {
    pub model: ModelKind,
    /// Single link: nominal inertia (kg·m²).
    pub inertia: f64,
    /// Single link: std of the per-step inertia redraw; 0 keeps it constant.
    pub inertia_std: f64,
    pub mass: f64,
    pub half_length: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub fd: [f64; 2],
    pub fs: [f64; 2],
    /// Lower-right centripetal-coriolis entry of the two-link arm.
    pub vm22: f64,
    pub initial_q: Option<Vec<f64>>,
    pub initial_qdot: Option<Vec<f64>>,
    pub disturbance: DisturbanceBlock,
}

impl Default for PlantBlock {
    fn default() -> Self {
        let two = TwoLinkParams::default();
        Self {
            model: ModelKind::SingleLink,
            inertia: 5.0,
            inertia_std: 0.0,
            mass: 1.0,
            half_length: 1.0,
            p1: two.p1,
            p2: two.p2,
            p3: two.p3,
            fd: two.fd,
            fs: two.fs,
            vm22: two.vm22,
            initial_q: None,
            initial_qdot: None,
            disturbance: DisturbanceBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Combined,
    StabilizingOnly,
    DhdpOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerBlock {
    pub mode: ModeKind,
    pub c1: f64,
    pub c2: f64,
    pub h: f64,
    /// Lower bound on ‖(M⁻)ᵀM⁻‖; defaults to ½‖(M̂⁺)ᵀM̂⁺‖.
    pub m_min: Option<f64>,
    /// Row-major inertia estimate M̂⁺; defaults to the nominal M(q0)/h.
    pub m_hat_plus: Option<Vec<Vec<f64>>>,
}

impl Default for ControllerBlock {
    fn default() -> Self {
        Self {
            mode: ModeKind::Combined,
            c1: 0.7,
            c2: -5.0,
            h: 0.02,
            m_min: None,
            m_hat_plus: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorErrorKind {
    FTilde,
    FHat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningBlock {
    pub critic_hidden: usize,
    pub actor_hidden: usize,
    pub l_a: f64,
    pub l_c: f64,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub u_c: f64,
    pub init_range: f64,
    pub critic_iterations: usize,
    pub actor_iterations: usize,
    pub tolerance: f64,
    pub schedule: bool,
    pub schedule_window: usize,
    pub schedule_improvement: f64,
    pub rate_floor: f64,
    pub actor_error: ActorErrorKind,
}

impl Default for LearningBlock {
    fn default() -> Self {
        Self {
            critic_hidden: 6,
            actor_hidden: 6,
            l_a: 0.01,
            l_c: 0.01,
            gamma: 0.95,
            beta1: 10.0,
            beta2: 100.0,
            beta3: 1000.0,
            u_c: 0.0,
            init_range: 0.5,
            critic_iterations: 1,
            actor_iterations: 1,
            tolerance: 1e-4,
            schedule: false,
            schedule_window: 500,
            schedule_improvement: 0.01,
            rate_floor: 1e-4,
            actor_error: ActorErrorKind::FTilde,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostBlock {
    /// Row-major Q; defaults to identity.
    pub q: Option<Vec<Vec<f64>>>,
    /// Row-major R; defaults to 0.01·I.
    pub r: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformKind {
    Sine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryBlock {
    pub waveform: WaveformKind,
    pub amplitude: Option<Vec<f64>>,
    pub frequency: Option<Vec<f64>>,
    pub phase: Option<Vec<f64>>,
    pub offset: Option<Vec<f64>>,
}

impl Default for TrajectoryBlock {
    fn default() -> Self {
        Self {
            waveform: WaveformKind::Sine,
            amplitude: None,
            frequency: None,
            phase: None,
            offset: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    HalfVsHalf,
    VsBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub criterion: CriterionKind,
    pub max_trials: usize,
    pub blowup: f64,
    /// Worker threads for ensembles; 0 uses every core.
    pub workers: usize,
    pub skip_gain_check: bool,
    /// `run` executes a reset episode instead of a single trial.
    pub episode: bool,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            steps: 6000,
            trials: 50,
            seed: 0,
            criterion: CriterionKind::HalfVsHalf,
            max_trials: 50,
            blowup: 50.0,
            workers: 0,
            skip_gain_check: false,
            episode: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: String,
    /// Steps between weight snapshots; 0 disables them.
    pub snapshot_stride: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            snapshot_stride: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantBlock,
    pub controller: ControllerBlock,
    pub learning: LearningBlock,
    pub cost: CostBlock,
    pub trajectory: TrajectoryBlock,
    pub run: RunBlock,
    pub output: OutputBlock,
}

fn matrix(rows: &[Vec<f64>], n: usize, name: &str) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(ConfigError::Constraint(format!("{name} must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn check_len(v: &[f64], n: usize, name: &str) -> Result<(), ConfigError> {
    if v.len() != n {
        return Err(ConfigError::Constraint(format!("{name} must have {n} entries, got {}", v.len())));
    }
    Ok(())
}

/// Reads, parses and resolves a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ExperimentConfig::from_toml(&text)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: ExperimentConfig = toml::from_str(text)?;
        raw.resolve()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// First 16 hex digits of the SHA-256 of the resolved dump.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn dof(&self) -> usize {
        match self.plant.model {
            ModelKind::SingleLink => 1,
            ModelKind::TwoLink => 2,
        }
    }

    pub fn plant_model(&self) -> PlantModel {
        let p = &self.plant;
        match p.model {
            ModelKind::SingleLink => PlantModel::SingleLink {
                inertia: if p.inertia_std > 0.0 {
                    InertiaSpec::Perturbed {
                        mean: p.inertia,
                        std: p.inertia_std,
                    }
                } else {
                    InertiaSpec::Constant(p.inertia)
                },
                mass: p.mass,
                half_length: p.half_length,
            },
            ModelKind::TwoLink => PlantModel::TwoLink(TwoLinkParams {
                p1: p.p1,
                p2: p.p2,
                p3: p.p3,
                fd: p.fd,
                fs: p.fs,
                vm22: p.vm22,
            }),
        }
    }

    /// Fills every dependent default and checks all constraints.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let n = self.dof();
        let c = |s: &str| ConfigError::Constraint(s.to_string());
        if !(self.controller.h > 0.0) {
            return Err(c("controller.h must be > 0"));
        }
        let h = self.controller.h;

        let (q0, qd0) = match self.plant.model {
            ModelKind::SingleLink => (vec![-0.1], vec![0.1]),
            ModelKind::TwoLink => (vec![1.8, 1.5], vec![0.0, 0.0]),
        };
        let q0 = self.plant.initial_q.get_or_insert(q0).clone();
        check_len(&q0, n, "plant.initial_q")?;
        check_len(self.plant.initial_qdot.get_or_insert(qd0), n, "plant.initial_qdot")?;

        let model = self.plant_model();
        model.validate().map_err(|e| c(&format!("plant: {e}")))?;

        let m_hat = match &self.controller.m_hat_plus {
            Some(r) => matrix(r, n, "controller.m_hat_plus")?,
            None => match self.plant.model {
                ModelKind::SingleLink => DMatrix::from_element(1, 1, self.plant.inertia / h),
                ModelKind::TwoLink => {
                    let p = &self.plant;
                    DMatrix::from_row_slice(2, 2, &[p.p1, p.p2, p.p2, p.p2]) / h
                }
            },
        };
        self.controller.m_hat_plus = Some(rows(&m_hat));
        let m_min = *self.controller.m_min.get_or_insert_with(|| estimate_m_min(&m_hat));
        if !(m_min > 0.0) {
            return Err(c("controller.m_min must be > 0"));
        }

        let l = &self.learning;
        if !(l.gamma > 0.0 && l.gamma < 1.0) {
            return Err(c("learning.gamma must satisfy 0 < gamma < 1"));
        }
        if !(l.beta2 > l.gamma) {
            return Err(c("learning.beta2 must exceed learning.gamma"));
        }
        if !(l.beta1 > 8.0 / (l.gamma * l.gamma)) {
            return Err(c("learning.beta1 must exceed 8/gamma^2"));
        }
        if !(l.beta3 > l.beta1) {
            return Err(c("learning.beta3 must exceed learning.beta1"));
        }
        if !(l.l_a >= 0.0 && l.l_c >= 0.0) {
            return Err(c("learning rates must be >= 0"));
        }
        if l.critic_hidden == 0 || l.actor_hidden == 0 {
            return Err(c("hidden widths must be >= 1"));
        }
        if l.critic_iterations == 0 || l.actor_iterations == 0 {
            return Err(c("inner-loop iteration caps must be >= 1"));
        }
        if l.critic_iterations > 50 || l.actor_iterations > 50 {
            return Err(c("inner-loop iteration caps must be <= 50"));
        }
        if l.schedule && l.schedule_window == 0 {
            return Err(c("learning.schedule_window must be >= 1"));
        }
        if !(l.init_range >= 0.0) {
            return Err(c("learning.init_range must be >= 0"));
        }

        let q = match &self.cost.q {
            Some(r) => matrix(r, n, "cost.q")?,
            None => DMatrix::identity(n, n),
        };
        let r = match &self.cost.r {
            Some(r) => matrix(r, n, "cost.r")?,
            None => DMatrix::identity(n, n) * 0.01,
        };
        StageCostSpec { q: q.clone(), r: r.clone() }
            .validate()
            .map_err(|e| c(&format!("cost: {e}")))?;
        self.cost.q = Some(rows(&q));
        self.cost.r = Some(rows(&r));

        let t = &mut self.trajectory;
        for (field, name, default) in [
            (&mut t.amplitude, "trajectory.amplitude", 0.5),
            (&mut t.frequency, "trajectory.frequency", 1.0),
            (&mut t.phase, "trajectory.phase", 0.0),
            (&mut t.offset, "trajectory.offset", 0.0),
        ] {
            check_len(field.get_or_insert_with(|| vec![default; n]), n, name)?;
        }

        if self.run.steps < 2 {
            return Err(c("run.steps must be >= 2"));
        }
        if self.run.trials == 0 || self.run.max_trials == 0 {
            return Err(c("run.trials and run.max_trials must be >= 1"));
        }
        if !(self.run.blowup > 0.0) {
            return Err(c("run.blowup must be > 0"));
        }
        if self.plant.disturbance.kind == DisturbanceKind::Gaussian && !(self.plant.disturbance.std >= 0.0) {
            return Err(c("plant.disturbance.std must be >= 0"));
        }
        Ok(self)
    }

    /// Runtime trial configuration. Call on a resolved config.
    pub fn trial_config(&self) -> Result<TrialConfig, ConfigError> {
        let n = self.dof();
        let missing = || ConfigError::Constraint("configuration is not resolved".into());
        let h = self.controller.h;
        let p = &self.plant;
        let initial = PlantState::new(
            p.initial_q.as_ref().ok_or_else(missing)?,
            p.initial_qdot.as_ref().ok_or_else(missing)?,
        )
        .map_err(|e| ConfigError::Constraint(e.to_string()))?;
        let d = &p.disturbance;
        let disturbance = match d.kind {
            DisturbanceKind::None => DisturbanceSpec::None,
            DisturbanceKind::Pulse => DisturbanceSpec::Pulse {
                magnitude: d.magnitude,
                at_time: d.at_time,
            },
            DisturbanceKind::Gaussian => DisturbanceSpec::Gaussian {
                mean: d.mean,
                std: d.std,
            },
        };
        let t = &self.trajectory;
        let trajectory = ReferenceTrajectory {
            waveform: match t.waveform {
                WaveformKind::Sine => Waveform::Sine,
                WaveformKind::Constant => Waveform::Constant,
            },
            amplitude: t.amplitude.clone().ok_or_else(missing)?,
            frequency: t.frequency.clone().ok_or_else(missing)?,
            phase: t.phase.clone().ok_or_else(missing)?,
            offset: t.offset.clone().ok_or_else(missing)?,
            h,
        };
        let l = &self.learning;
        let m_hat_plus = matrix(self.controller.m_hat_plus.as_ref().ok_or_else(missing)?, n, "m_hat_plus")?;
        let cfg = TrialConfig {
            model: self.plant_model(),
            disturbance,
            initial,
            gains: GainSet {
                c1: self.controller.c1,
                c2: self.controller.c2,
                h,
                m_min: self.controller.m_min.ok_or_else(missing)?,
            },
            trajectory,
            mode: match self.controller.mode {
                ModeKind::Combined => ControllerMode::Combined,
                ModeKind::StabilizingOnly => ControllerMode::StabilizingOnly,
                ModeKind::DhdpOnly => ControllerMode::DhdpOnly,
            },
            critic_hidden: l.critic_hidden,
            actor_hidden: l.actor_hidden,
            init_range: l.init_range,
            learning: LearningConfig {
                l_a: l.l_a,
                l_c: l.l_c,
                gamma: l.gamma,
                beta1: l.beta1,
                beta2: l.beta2,
                beta3: l.beta3,
                u_c: l.u_c,
                m_hat_plus,
            },
            cost: StageCostSpec {
                q: matrix(self.cost.q.as_ref().ok_or_else(missing)?, n, "cost.q")?,
                r: matrix(self.cost.r.as_ref().ok_or_else(missing)?, n, "cost.r")?,
            },
            actor_error_mode: match l.actor_error {
                ActorErrorKind::FTilde => ActorErrorMode::FTilde,
                ActorErrorKind::FHat => ActorErrorMode::FHat,
            },
            inner: InnerLoop {
                critic_iterations: l.critic_iterations,
                actor_iterations: l.actor_iterations,
                tolerance: l.tolerance,
            },
            schedule: RateSchedule {
                enabled: l.schedule,
                window: l.schedule_window,
                improvement: l.schedule_improvement,
                floor: l.rate_floor,
            },
            steps: self.run.steps,
            blowup: self.run.blowup,
            criterion: match self.run.criterion {
                CriterionKind::HalfVsHalf => SuccessCriterion::HalfVsHalf,
                CriterionKind::VsBaseline => SuccessCriterion::VsBaseline,
            },
            max_trials: self.run.max_trials,
            snapshot_stride: self.output.snapshot_stride,
            skip_gain_check: self.run.skip_gain_check,
        };
        cfg.validate().map_err(|e| ConfigError::Constraint(e.to_string()))?;
        Ok(cfg)
    }
}
