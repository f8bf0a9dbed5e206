//! Critic and actor networks of the dHDP block.
//!
//! Both networks are single-hidden-layer perceptrons without biases using
//! the bipolar sigmoid `φ(v) = (1 − e^{−v}) / (1 + e^{−v})`. Weight updates
//! are the explicit gradient-descent rules of the dHDP scheme; no automatic
//! differentiation is involved.
//!
//! The critic sees `x_c = [x_a, u]` and predicts the discounted cost-to-go.
//! The actor sees `x_a = [x1, x2, e1, e2, x1d(k+2)]` and produces the
//! feed-forward estimate `f̂`. The actor is trained through the critic: the
//! chain runs from `Ĵ` back through the `u` columns of the critic's first
//! layer (`w_cu`) into the actor weights.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("input length {got} does not match network input width {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("forward pass required before update")]
    NoForwardPass,
    #[error("non-finite weights after update")]
    NonFinite,
    #[error("invalid learning configuration: {0}")]
    InvalidConfig(String),
}

/// Bipolar sigmoid, evaluated on the side where `e^{−|v|}` cannot overflow.
pub fn activation_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        let e = (-v).exp();
        (1.0 - e) / (1.0 + e)
    } else {
        let e = v.exp();
        -(1.0 - e) / (1.0 + e)
    }
}

pub fn activation(v: &DVector<f64>) -> DVector<f64> {
    v.map(activation_scalar)
}

/// ½(1 − φ²), the derivative of φ expressed through its output.
pub fn activation_slope(phi: &DVector<f64>) -> DVector<f64> {
    phi.map(|p| 0.5 * (1.0 - p * p))
}

#[derive(Debug, Clone, PartialEq)]
struct ForwardCache {
    input: DVector<f64>,
    phi: DVector<f64>,
    output: DVector<f64>,
}

/// One-hidden-layer network: `y = w2 · φ(w1 · x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// hidden × input
    pub w1: DMatrix<f64>,
    /// output × hidden
    pub w2: DMatrix<f64>,
    cache: Option<ForwardCache>,
}

impl Mlp {
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self::from_weights(DMatrix::zeros(hidden, inputs), DMatrix::zeros(outputs, hidden))
    }

    pub fn from_weights(w1: DMatrix<f64>, w2: DMatrix<f64>) -> Self {
        assert_eq!(w1.nrows(), w2.ncols(), "hidden widths must agree");
        Self { w1, w2, cache: None }
    }

    /// Weights drawn uniformly from `[−range, range]`, `w1` first in
    /// column-major order, then `w2`.
    pub fn random(inputs: usize, hidden: usize, outputs: usize, range: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |r: usize, c: usize| {
            DMatrix::from_fn(r, c, |_, _| {
                if range > 0.0 {
                    rng.random_range(-range..=range)
                } else {
                    0.0
                }
            })
        };
        let w1 = draw(hidden, inputs);
        let w2 = draw(outputs, hidden);
        Self::from_weights(w1, w2)
    }

    pub fn inputs(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w2.nrows()
    }

    pub fn forward(&mut self, x: &DVector<f64>) -> Result<DVector<f64>, NetError> {
        if x.len() != self.inputs() {
            return Err(NetError::Dimension {
                expected: self.inputs(),
                got: x.len(),
            });
        }
        let phi = activation(&(&self.w1 * x));
        let output = &self.w2 * &phi;
        self.cache = Some(ForwardCache {
            input: x.clone(),
            phi,
            output: output.clone(),
        });
        Ok(output)
    }

    fn cache(&self) -> Result<&ForwardCache, NetError> {
        self.cache.as_ref().ok_or(NetError::NoForwardPass)
    }

    /// Hidden activations of the last forward pass.
    pub fn phi(&self) -> Option<&DVector<f64>> {
        self.cache.as_ref().map(|c| &c.phi)
    }

    pub fn last_input(&self) -> Option<&DVector<f64>> {
        self.cache.as_ref().map(|c| &c.input)
    }

    pub fn last_output(&self) -> Option<&DVector<f64>> {
        self.cache.as_ref().map(|c| &c.output)
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter()).all(|w| w.is_finite())
    }

    /// Frobenius norms of (w1, w2).
    pub fn weight_norms(&self) -> (f64, f64) {
        (self.w1.norm(), self.w2.norm())
    }

    /// Weights flattened as w1 (column-major) followed by w2.
    pub fn flat_weights(&self) -> Vec<f64> {
        self.w1.iter().chain(self.w2.iter()).copied().collect()
    }

    fn apply(&mut self, d1: DMatrix<f64>, d2: DMatrix<f64>) -> Result<f64, NetError> {
        let norm = (d1.norm_squared() + d2.norm_squared()).sqrt();
        let w1 = &self.w1 + d1;
        let w2 = &self.w2 + d2;
        if !w1.iter().chain(w2.iter()).all(|w| w.is_finite()) {
            return Err(NetError::NonFinite);
        }
        self.w1 = w1;
        self.w2 = w2;
        Ok(norm)
    }
}

/// x_a = [x1, x2, e1, e2, x1d(k+2)].
pub fn actor_input(
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    e1: &DVector<f64>,
    e2: &DVector<f64>,
    x1d_kplus2: &DVector<f64>,
) -> DVector<f64> {
    let parts = [x1, x2, e1, e2, x1d_kplus2];
    DVector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}

/// x_c = [x_a, u]; `u` occupies the trailing slots.
pub fn critic_input(x_a: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x_a.len() + u.len(), x_a.iter().chain(u.iter()).copied())
}

/// Ĵ = w_c2 · φ(w_c1 · x_c).
pub fn critic_forward(net: &mut Mlp, x_c: &DVector<f64>) -> Result<f64, NetError> {
    Ok(net.forward(x_c)?[0])
}

/// f̂ = w_a2 · φ(w_a1 · x_a).
pub fn actor_forward(net: &mut Mlp, x_a: &DVector<f64>) -> Result<DVector<f64>, NetError> {
    net.forward(x_a)
}

/// e_c(k) = γ·Ĵ(k) − (Ĵ(k−1) − r(k)).
pub fn td_error(j_hat: f64, j_hat_prev: f64, r: f64, gamma: f64) -> f64 {
    gamma * j_hat - (j_hat_prev - r)
}

/// Gradient of E_c = ½e_c² with respect to (w_c1, w_c2) at the cached pass.
pub fn critic_gradient(net: &Mlp, e_c: f64, gamma: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), NetError> {
    let cache = net.cache()?;
    let delta = net.w2.row(0).transpose().component_mul(&activation_slope(&cache.phi));
    let g1 = &delta * cache.input.transpose() * (gamma * e_c);
    let g2 = DMatrix::from_row_slice(1, cache.phi.len(), cache.phi.as_slice()) * (gamma * e_c);
    Ok((g1, g2))
}

/// Applies Δw = −l_c·∂E_c/∂w to both critic layers, each computed from the
/// pre-update weights. Returns the Frobenius norm of the step.
pub fn critic_update(net: &mut Mlp, e_c: f64, gamma: f64, l_c: f64) -> Result<f64, NetError> {
    let (g1, g2) = critic_gradient(net, e_c, gamma)?;
    net.apply(g1 * -l_c, g2 * -l_c)
}

/// The `u` columns of the critic's first layer (hidden × n).
pub fn critic_u_weights(critic: &Mlp, n: usize) -> DMatrix<f64> {
    let start = critic.inputs() - n;
    critic.w1.columns(start, n).into_owned()
}

/// ∂Ĵ/∂u = [w_c2 ∘ ½(1 − φ_c²)] · w_cu as a length-n vector.
pub fn critic_u_sensitivity(critic: &Mlp, n: usize) -> Result<DVector<f64>, NetError> {
    let cache = critic.cache()?;
    let row = critic.w2.row(0).transpose().component_mul(&activation_slope(&cache.phi));
    Ok(critic_u_weights(critic, n).transpose() * row)
}

/// Gradient of E_a = ½e_a² with respect to (w_a1, w_a2) along the chain
/// Ĵ → u → f̂ → actor weights.
pub fn actor_gradient(actor: &Mlp, critic: &Mlp, e_a: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), NetError> {
    let a = actor.cache()?;
    let dj_du = critic_u_sensitivity(critic, actor.outputs())?;
    let g2 = &dj_du * a.phi.transpose() * e_a;
    let hidden = (actor.w2.transpose() * &dj_du).component_mul(&activation_slope(&a.phi));
    let g1 = hidden * a.input.transpose() * e_a;
    Ok((g1, g2))
}

pub fn actor_update(actor: &mut Mlp, critic: &Mlp, e_a: f64, l_a: f64) -> Result<f64, NetError> {
    let (g1, g2) = actor_gradient(actor, critic, e_a)?;
    actor.apply(g1 * -l_a, g2 * -l_a)
}

/// f̃ estimate from a designer inertia guess: M̂⁺·e2(k+1) − c2·e2(k),
/// with the disturbance taken as zero.
pub fn f_tilde_estimate(
    m_hat_plus: &DMatrix<f64>,
    e2_next: &DVector<f64>,
    e2: &DVector<f64>,
    c2: f64,
) -> DVector<f64> {
    m_hat_plus * e2_next - e2 * c2
}

/// e_a = Ĵ + ‖f‖ − U_c, where `f` is the feed-forward term selected by
/// [`ActorErrorMode`].
pub fn actor_error(j_hat: f64, f_term: &DVector<f64>, u_c: f64) -> f64 {
    j_hat + f_term.norm() - u_c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorErrorMode {
    /// Uses the estimated approximation error f̃.
    FTilde,
    /// Uses the actor output f̂ itself.
    FHat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningConfig {
    pub l_a: f64,
    pub l_c: f64,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub u_c: f64,
    pub m_hat_plus: DMatrix<f64>,
}

impl LearningConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |s: &str| Err(NetError::InvalidConfig(s.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.l_a >= 0.0 && self.l_c >= 0.0) {
            return bad("learning rates must be >= 0");
        }
        if !(self.beta2 > self.gamma) {
            return bad("beta2 must exceed gamma");
        }
        let floor = 8.0 / (self.gamma * self.gamma);
        if !(self.beta1 > floor) {
            return bad("beta1 must exceed 8/gamma^2");
        }
        if !(self.beta3 > self.beta1) {
            return bad("beta3 must exceed beta1");
        }
        if !self.m_hat_plus.is_square() {
            return bad("m_hat_plus must be square");
        }
        Ok(())
    }
}

/// Per-step upper bounds on the learning rates. `None` means the
/// denominator vanished and any rate satisfies the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBounds {
    pub l_c: Option<f64>,
    pub l_a: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// (β2 − γ) / (γ²β2 (‖φ_c‖² + ‖A‖²‖x_c‖²/β2)).
pub fn critic_rate_bound(gamma: f64, beta2: f64, phi_sq: f64, a_sq_xc_sq: f64) -> Option<f64> {
    ratio(beta2 - gamma, gamma * gamma * beta2 * (phi_sq + a_sq_xc_sq / beta2))
}

/// (β3 − β1) / (β3‖w_c2 C‖²‖φ_a‖² + β1‖w_c2 C Dᵀ‖²‖x_a‖²).
pub fn actor_rate_bound(beta1: f64, beta3: f64, wc_sq_phi_sq: f64, wcd_sq_xa_sq: f64) -> Option<f64> {
    ratio(beta3 - beta1, beta3 * wc_sq_phi_sq + beta1 * wcd_sq_xa_sq)
}

/// Evaluates both learning-rate bounds at the networks' cached passes.
///
/// A = ½(1 − φ_c²)∘w_c2, C = ½(1 − φ_c²)∘w_cu and D = ½(1 − φ_a²)∘w_a2.
pub fn check_learning_rates(cfg: &LearningConfig, critic: &Mlp, actor: &Mlp) -> Result<RateBounds, NetError> {
    let c = critic.cache()?;
    let a = actor.cache()?;
    let slope_c = activation_slope(&c.phi);
    let a_vec = slope_c.component_mul(&critic.w2.row(0).transpose());
    let l_c = critic_rate_bound(
        cfg.gamma,
        cfg.beta2,
        c.phi.norm_squared(),
        a_vec.norm_squared() * c.input.norm_squared(),
    );

    let n = actor.outputs();
    let wc_c = critic_u_sensitivity(critic, n)?; // w_c2 · C, length n
    let d = DMatrix::from_diagonal(&activation_slope(&a.phi)) * actor.w2.transpose(); // hidden × n
    let wcd = &d * &wc_c; // (w_c2 C Dᵀ)ᵀ
    let l_a = actor_rate_bound(
        cfg.beta1,
        cfg.beta3,
        wc_c.norm_squared() * a.phi.norm_squared(),
        wcd.norm_squared() * a.input.norm_squared(),
    );
    Ok(RateBounds { l_c, l_a })
}

/// Tracks the running minimum of the learning-rate bounds over a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateMonitor {
    pub min_l_c: f64,
    pub min_l_a: f64,
    /// True while every step satisfied both bounds for the rates in force.
    pub all_steps_ok: bool,
}

impl Default for RateMonitor {
    fn default() -> Self {
        Self {
            min_l_c: f64::INFINITY,
            min_l_a: f64::INFINITY,
            all_steps_ok: true,
        }
    }
}

impl RateMonitor {
    /// Folds in one step; returns whether that step's bounds hold.
    pub fn observe(&mut self, bounds: RateBounds, l_c: f64, l_a: f64) -> bool {
        let bc = bounds.l_c.unwrap_or(f64::INFINITY);
        let ba = bounds.l_a.unwrap_or(f64::INFINITY);
        self.min_l_c = self.min_l_c.min(bc);
        self.min_l_a = self.min_l_a.min(ba);
        let ok = l_c < bc && l_a < ba;
        self.all_steps_ok &= ok;
        ok
    }

    /// Whether the configured rates stay below the running minima.
    pub fn rates_below_min(&self, l_c: f64, l_a: f64) -> bool {
        l_c < self.min_l_c && l_a < self.min_l_a
    }
}
