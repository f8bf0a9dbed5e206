#![allow(dead_code)]

use std::path::PathBuf;

use dhdp_core::actor_critic::{
    activation, actor_error, actor_forward, actor_gradient, critic_forward, critic_gradient, td_error, Mlp,
};
use dhdp_core::config::{load_config, ExperimentConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn example(name: &str) -> ExperimentConfig {
    load_config(config_path(name)).expect("bundled config loads")
}

fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// A frozen sample for the critic error E_c = ½e_c².
pub struct CriticCase {
    pub net: Mlp,
    pub x_c: DVector<f64>,
    pub j_prev: f64,
    pub r: f64,
    pub gamma: f64,
}

impl CriticCase {
    pub fn random(n: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            net: Mlp::random(6 * n, hidden, 1, 0.8, rng),
            x_c: random_vec(6 * n, 1.0, rng),
            j_prev: rng.random_range(-1.0..1.0),
            r: rng.random_range(0.0..1.0),
            gamma: rng.random_range(0.5..0.99),
        }
    }

    fn loss(&self, net: &Mlp) -> f64 {
        let j = (&net.w2 * activation(&(&net.w1 * &self.x_c)))[0];
        0.5 * td_error(j, self.j_prev, self.r, self.gamma).powi(2)
    }
}

/// A frozen sample for the actor error E_a = ½e_a², with the chain
/// x_a → f̂ → u = f̂ + c2·e2 → Ĵ(x_a, u), and ‖f̃‖ held fixed.
pub struct ActorCase {
    pub actor: Mlp,
    pub critic: Mlp,
    pub x_a: DVector<f64>,
    pub e2: DVector<f64>,
    pub c2: f64,
    pub f_tilde: DVector<f64>,
    pub u_c: f64,
}

impl ActorCase {
    pub fn random(n: usize, hidden_a: usize, hidden_c: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            actor: Mlp::random(5 * n, hidden_a, n, 0.8, rng),
            critic: Mlp::random(6 * n, hidden_c, 1, 0.8, rng),
            x_a: random_vec(5 * n, 1.0, rng),
            e2: random_vec(n, 1.0, rng),
            c2: rng.random_range(-5.0..-0.5),
            f_tilde: random_vec(n, 1.0, rng),
            u_c: 0.0,
        }
    }

    fn j_of(&self, actor: &Mlp) -> f64 {
        let f_hat = &actor.w2 * activation(&(&actor.w1 * &self.x_a));
        let u = f_hat + &self.e2 * self.c2;
        let x_c = DVector::from_iterator(self.x_a.len() + u.len(), self.x_a.iter().chain(u.iter()).copied());
        (&self.critic.w2 * activation(&(&self.critic.w1 * x_c)))[0]
    }

    fn loss(&self, actor: &Mlp) -> f64 {
        0.5 * actor_error(self.j_of(actor), &self.f_tilde, self.u_c).powi(2)
    }
}

fn central_difference(w: &DMatrix<f64>, eps: f64, mut eval: impl FnMut(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(w.nrows(), w.ncols());
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let mut plus = w.clone();
            plus[(i, j)] += eps;
            let mut minus = w.clone();
            minus[(i, j)] -= eps;
            let wide = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            plus[(i, j)] -= eps / 2.0;
            minus[(i, j)] += eps / 2.0;
            let narrow = (eval(&plus) - eval(&minus)) / eps;
            // Richardson extrapolation of the two central differences
            grad[(i, j)] = (4.0 * narrow - wide) / 3.0;
        }
    }
    grad
}

/// Largest entrywise relative error, with a small absolute floor for
/// entries that vanish analytically.
pub fn max_rel_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

const EPS: f64 = 1e-3;

/// Worst relative error between the analytic critic gradient and central
/// differences of E_c, over both layers.
pub fn critic_gradient_error(case: &mut CriticCase) -> f64 {
    let j = critic_forward(&mut case.net, &case.x_c).unwrap();
    let e_c = td_error(j, case.j_prev, case.r, case.gamma);
    let (g1, g2) = critic_gradient(&case.net, e_c, case.gamma).unwrap();
    let base = case.net.clone();
    let n1 = central_difference(&base.w1, EPS, |w| {
        case.loss(&Mlp::from_weights(w.clone(), base.w2.clone()))
    });
    let n2 = central_difference(&base.w2, EPS, |w| {
        case.loss(&Mlp::from_weights(base.w1.clone(), w.clone()))
    });
    max_rel_error(&g1, &n1).max(max_rel_error(&g2, &n2))
}

pub fn actor_gradient_error(case: &mut ActorCase) -> f64 {
    let f_hat = actor_forward(&mut case.actor, &case.x_a).unwrap();
    let u = &f_hat + &case.e2 * case.c2;
    let x_c = DVector::from_iterator(case.x_a.len() + u.len(), case.x_a.iter().chain(u.iter()).copied());
    let j = critic_forward(&mut case.critic, &x_c).unwrap();
    let e_a = actor_error(j, &case.f_tilde, case.u_c);
    let (g1, g2) = actor_gradient(&case.actor, &case.critic, e_a).unwrap();
    let base = case.actor.clone();
    let n1 = central_difference(&base.w1, EPS, |w| case.loss(&Mlp::from_weights(w.clone(), base.w2.clone())));
    let n2 = central_difference(&base.w2, EPS, |w| case.loss(&Mlp::from_weights(base.w1.clone(), w.clone())));
    max_rel_error(&g1, &n1).max(max_rel_error(&g2, &n2))
}

/// Worst gradient error over `count` random instances with widths 1–8 and
/// one or two joints.
pub fn gradient_oracle_sweep(count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = rng.random_range(1..=2);
        let hc = rng.random_range(1..=8);
        let ha = rng.random_range(1..=8);
        let mut c = CriticCase::random(n, hc, &mut rng);
        worst = worst.max(critic_gradient_error(&mut c));
        let mut a = ActorCase::random(n, ha, hc, &mut rng);
        worst = worst.max(actor_gradient_error(&mut a));
    }
    worst
}
