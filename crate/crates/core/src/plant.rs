//! Rigid-link plants used as the simulated environment.
//!
//! Two manipulators are provided: a single pendulum-like link with gravity
//! and a planar two-link arm with friction. The controller never reads these
//! models; they only generate data. [`rk4_step`] is the ground-truth
//! integrator and [`euler_step`] advances the Euler-discretized design model
//! that the controller algebra is derived from.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub const GRAVITY: f64 = 9.8;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("inertia matrix is singular at q = {0:?}")]
    SingularInertia(Vec<f64>),
    #[error("non-finite state after integration at t = {0}")]
    NonFinite(f64),
    #[error("invalid plant parameter: {0}")]
    InvalidParameter(String),
}

/// Joint positions, velocities and the simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub t: f64,
}

impl PlantState {
    pub fn new(q: &[f64], qdot: &[f64]) -> Result<Self, PlantError> {
        if q.len() != qdot.len() || q.is_empty() {
            return Err(PlantError::Dimension {
                expected: q.len().max(1),
                got: qdot.len(),
            });
        }
        Ok(Self {
            q: DVector::from_column_slice(q),
            qdot: DVector::from_column_slice(qdot),
            t: 0.0,
        })
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.qdot.iter().all(|v| v.is_finite())
    }
}

/// Inertia of the single-link plant. `Perturbed` is redrawn once per control
/// step and held for that step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InertiaSpec {
    Constant(f64),
    Perturbed { mean: f64, std: f64 },
}

impl InertiaSpec {
    pub fn nominal(&self) -> f64 {
        match *self {
            InertiaSpec::Constant(m) => m,
            InertiaSpec::Perturbed { mean, .. } => mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLinkParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    /// Velocity-proportional friction, one coefficient per joint (N·m·s).
    pub fd: [f64; 2],
    /// Static friction magnitudes applied through `tanh(qdot)` (N·m).
    pub fs: [f64; 2],
    /// Lower-right entry of the centripetal-coriolis matrix.
    pub vm22: f64,
}

impl Default for TwoLinkParams {
    fn default() -> Self {
        Self {
            p1: 3.473,
            p2: 0.196,
            p3: 0.242,
            fd: [5.3, 6.1],
            fs: [8.45, 2.35],
            vm22: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlantModel {
    SingleLink {
        inertia: InertiaSpec,
        mass: f64,
        half_length: f64,
    },
    TwoLink(TwoLinkParams),
}

impl PlantModel {
    pub fn single_link(inertia: f64, mass: f64, half_length: f64) -> Self {
        PlantModel::SingleLink {
            inertia: InertiaSpec::Constant(inertia),
            mass,
            half_length,
        }
    }

    pub fn two_link() -> Self {
        PlantModel::TwoLink(TwoLinkParams::default())
    }

    pub fn dof(&self) -> usize {
        match self {
            PlantModel::SingleLink { .. } => 1,
            PlantModel::TwoLink(_) => 2,
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        match *self {
            PlantModel::SingleLink {
                inertia,
                mass,
                half_length,
            } => {
                if !(inertia.nominal() > 0.0) {
                    return Err(PlantError::InvalidParameter("inertia must be > 0".into()));
                }
                if let InertiaSpec::Perturbed { std, .. } = inertia {
                    if !(std >= 0.0) {
                        return Err(PlantError::InvalidParameter(
                            "inertia std must be >= 0".into(),
                        ));
                    }
                }
                if !(mass > 0.0) || !(half_length > 0.0) {
                    return Err(PlantError::InvalidParameter(
                        "mass and half length must be > 0".into(),
                    ));
                }
            }
            PlantModel::TwoLink(p) => {
                // M(q) is positive definite for every q2 iff it is at cos(q2) = ±1.
                for s1 in [-1.0, 1.0] {
                    let a = p.p1 + 2.0 * p.p3 * s1;
                    let b = p.p2 + p.p3 * s1;
                    if !(a > 0.0) || !(a * p.p2 - b * b > 0.0) {
                        return Err(PlantError::InvalidParameter(
                            "two-link inertia is not positive definite".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Draws the per-step inertia for the perturbed single-link variant. Every
    /// other model is returned unchanged and consumes no randomness.
    pub fn realize(&self, rng: &mut ChaCha8Rng) -> PlantModel {
        match *self {
            PlantModel::SingleLink {
                inertia: InertiaSpec::Perturbed { mean, std },
                mass,
                half_length,
            } => {
                let draw = if std > 0.0 {
                    Normal::new(mean, std)
                        .expect("validated std")
                        .sample(rng)
                } else {
                    mean
                };
                PlantModel::SingleLink {
                    inertia: InertiaSpec::Constant(draw),
                    mass,
                    half_length,
                }
            }
            other => other,
        }
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<(), PlantError> {
        if v.len() != self.dof() {
            return Err(PlantError::Dimension {
                expected: self.dof(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// M(q). For the perturbed single link this is the nominal inertia.
    pub fn inertia_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, PlantError> {
        self.check_dim(q)?;
        Ok(match *self {
            PlantModel::SingleLink { inertia, .. } => DMatrix::from_element(1, 1, inertia.nominal()),
            PlantModel::TwoLink(p) => {
                let s1 = q[1].cos();
                let off = p.p2 + p.p3 * s1;
                DMatrix::from_row_slice(2, 2, &[p.p1 + 2.0 * p.p3 * s1, off, off, p.p2])
            }
        })
    }

    /// Centripetal-coriolis matrix Vm(q, qdot).
    pub fn coriolis_matrix(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
    ) -> Result<DMatrix<f64>, PlantError> {
        self.check_dim(q)?;
        self.check_dim(qdot)?;
        Ok(match *self {
            PlantModel::SingleLink { .. } => DMatrix::zeros(1, 1),
            PlantModel::TwoLink(p) => {
                let s2 = q[1].sin();
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        -p.p3 * s2 * qdot[1],
                        -p.p3 * s2 * (qdot[0] + qdot[1]),
                        p.p2 * s2 * qdot[0],
                        p.vm22,
                    ],
                )
            }
        })
    }

    pub fn gravity(&self, q: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        self.check_dim(q)?;
        Ok(match *self {
            PlantModel::SingleLink {
                mass, half_length, ..
            } => DVector::from_element(1, 0.5 * GRAVITY * mass * half_length * q[0].sin()),
            PlantModel::TwoLink(_) => DVector::zeros(2),
        })
    }

    pub fn friction(&self, qdot: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        self.check_dim(qdot)?;
        Ok(match *self {
            PlantModel::SingleLink { .. } => DVector::zeros(1),
            PlantModel::TwoLink(p) => DVector::from_fn(2, |i, _| {
                p.fd[i] * qdot[i] + p.fs[i] * qdot[i].tanh()
            }),
        })
    }

    /// Vm(q, qdot)·qdot + G(q) + F(qdot).
    pub fn bias_forces(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
    ) -> Result<DVector<f64>, PlantError> {
        Ok(self.coriolis_matrix(q, qdot)? * qdot + self.gravity(q)? + self.friction(qdot)?)
    }

    fn accel(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        torque: &DVector<f64>,
        disturbance: &DVector<f64>,
    ) -> Result<DVector<f64>, PlantError> {
        self.check_dim(torque)?;
        self.check_dim(disturbance)?;
        let mass = self.inertia_matrix(q)?;
        let rhs = torque - self.bias_forces(q, qdot)? - disturbance;
        mass.lu()
            .solve(&rhs)
            .ok_or_else(|| PlantError::SingularInertia(q.iter().copied().collect()))
    }

    /// q̈ = M(q)⁻¹ (τ − Vm q̇ − G − F − τd).
    pub fn dynamics_accel(
        &self,
        state: &PlantState,
        torque: &DVector<f64>,
        disturbance: &DVector<f64>,
    ) -> Result<DVector<f64>, PlantError> {
        self.accel(&state.q, &state.qdot, torque, disturbance)
    }
}

/// Classical RK4 advance by `h` with torque and disturbance held over the step.
pub fn rk4_step(
    model: &PlantModel,
    state: &PlantState,
    torque: &DVector<f64>,
    disturbance: &DVector<f64>,
    h: f64,
) -> Result<PlantState, PlantError> {
    if !(h > 0.0) {
        return Err(PlantError::InvalidParameter("step must be > 0".into()));
    }
    let f = |q: &DVector<f64>, v: &DVector<f64>| model.accel(q, v, torque, disturbance);
    let (q0, v0) = (&state.q, &state.qdot);

    let k1q = v0.clone();
    let k1v = f(q0, v0)?;
    let q1 = q0 + &k1q * (0.5 * h);
    let v1 = v0 + &k1v * (0.5 * h);
    let k2q = v1.clone();
    let k2v = f(&q1, &v1)?;
    let q2 = q0 + &k2q * (0.5 * h);
    let v2 = v0 + &k2v * (0.5 * h);
    let k3q = v2.clone();
    let k3v = f(&q2, &v2)?;
    let q3 = q0 + &k3q * h;
    let v3 = v0 + &k3v * h;
    let k4v = f(&q3, &v3)?;
    let k4q = v3;

    let q = q0 + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
    let qdot = v0 + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    let next = PlantState {
        q,
        qdot,
        t: state.t + h,
    };
    if !next.is_finite() {
        return Err(PlantError::NonFinite(next.t));
    }
    Ok(next)
}

/// Euler-discretized quantities M⁺(k), M⁻(k) and g(k) between two samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDesignModel {
    pub m_plus: DMatrix<f64>,
    pub m_minus: DMatrix<f64>,
    pub g: DVector<f64>,
    pub h: f64,
}

pub fn design_model_at(
    model: &PlantModel,
    state_k: &PlantState,
    state_k1: &PlantState,
    h: f64,
) -> Result<DiscreteDesignModel, PlantError> {
    if !(h > 0.0) {
        return Err(PlantError::InvalidParameter("step must be > 0".into()));
    }
    let m_plus = model.inertia_matrix(&state_k1.q)? / h;
    let m_minus = model.inertia_matrix(&state_k.q)? / h;
    let g = model.bias_forces(&state_k.q, &state_k.qdot)? - &m_minus * &state_k.qdot;
    Ok(DiscreteDesignModel {
        m_plus,
        m_minus,
        g,
        h,
    })
}

/// One step of the Euler design model:
/// `x1(k+1) = x1 + h·x2`, `M⁺ x2(k+1) = u − g − τd`.
pub fn euler_step(
    model: &PlantModel,
    state: &PlantState,
    torque: &DVector<f64>,
    disturbance: &DVector<f64>,
    h: f64,
) -> Result<PlantState, PlantError> {
    let q = &state.q + &state.qdot * h;
    let provisional = PlantState {
        q,
        qdot: state.qdot.clone(),
        t: state.t + h,
    };
    let design = design_model_at(model, state, &provisional, h)?;
    let rhs = torque - &design.g - disturbance;
    let qdot = design
        .m_plus
        .lu()
        .solve(&rhs)
        .ok_or_else(|| PlantError::SingularInertia(provisional.q.iter().copied().collect()))?;
    let next = PlantState { qdot, ..provisional };
    if !next.is_finite() {
        return Err(PlantError::NonFinite(next.t));
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceSpec {
    None,
    Pulse { magnitude: f64, at_time: f64 },
    Gaussian { mean: f64, std: f64 },
}

/// Disturbance torque for the sample at time `t`. A pulse fires on the one
/// sample inside `[at_time − h/2, at_time + h/2)`.
pub fn disturbance_at(
    spec: &DisturbanceSpec,
    t: f64,
    h: f64,
    dof: usize,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    match *spec {
        DisturbanceSpec::None => DVector::zeros(dof),
        DisturbanceSpec::Pulse { magnitude, at_time } => {
            let hit = t >= at_time - 0.5 * h && t < at_time + 0.5 * h;
            DVector::from_element(dof, if hit { magnitude } else { 0.0 })
        }
        DisturbanceSpec::Gaussian { mean, std } => {
            if std > 0.0 {
                let normal = Normal::new(mean, std).expect("std must be finite");
                DVector::from_fn(dof, |_, _| normal.sample(rng))
            } else {
                // keep the stream position independent of std
                DVector::from_fn(dof, |_, _| {
                    let _: f64 = rng.random();
                    mean
                })
            }
        }
    }
}

/// Stateful simulation environment for one trial: owns the plant randomness
/// (inertia redraws and disturbance samples) so that two controllers fed the
/// same seed see the same realizations.
#[derive(Debug, Clone)]
pub struct Environment {
    pub model: PlantModel,
    pub disturbance: DisturbanceSpec,
    pub h: f64,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(model: PlantModel, disturbance: DisturbanceSpec, h: f64, rng: ChaCha8Rng) -> Self {
        Self {
            model,
            disturbance,
            h,
            rng,
        }
    }

    /// Advance one control step. Draw order per step: inertia, then disturbance.
    pub fn step(&mut self, state: &PlantState, torque: &DVector<f64>) -> Result<PlantState, PlantError> {
        let realized = self.model.realize(&mut self.rng);
        let d = disturbance_at(&self.disturbance, state.t, self.h, self.model.dof(), &mut self.rng);
        rk4_step(&realized, state, torque, &d, self.h)
    }
}
