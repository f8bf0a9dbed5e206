//! Acceptance criteria. Runs as a plain binary so every verdict line is
//! printed; exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::{example, gradient_oracle_sweep};
use dhdp_core::backstepping::{
    check_gain_conditions, compose_control, exact_feedforward, tracking_error, virtual_control,
    virtual_control_next, GainSet,
};
use dhdp_core::config::ModeKind;
use dhdp_core::eval::{format_table, mse_per_joint, run_scenario_suite};
use dhdp_core::plant::{design_model_at, euler_step, PlantState};
use dhdp_core::trainer::{run_trial, Outcome, TrialRecord};
use nalgebra::DVector;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

/// Per-trial quantities needed by the Example-1 criteria, so full records
/// need not be kept in memory.
struct Ex1Trial {
    outcome: Outcome,
    mse_plus: f64,
    all_finite: bool,
    dw_ratio: Option<f64>,
    max_weight_norm: f64,
}

fn dw_ratio(rec: &TrialRecord) -> Option<f64> {
    let n = rec.steps.len();
    if n < 1000 {
        return None;
    }
    let head: f64 = rec.steps[..500].iter().map(|s| s.dw).sum::<f64>() / 500.0;
    let tail: f64 = rec.steps[n - 500..].iter().map(|s| s.dw).sum::<f64>() / 500.0;
    Some(tail / head)
}

fn ex1_trials(mode: ModeKind) -> Vec<Ex1Trial> {
    let mut cfg = example("example1.cfg");
    cfg.controller.mode = mode;
    let trial = cfg.trial_config().expect("example1 resolves");
    (0..50u64)
        .map(|seed| {
            let rec = run_trial(&trial, seed).expect("trial runs");
            let states_finite = rec.steps.iter().all(|s| s.state.is_finite());
            let nets_finite = rec.final_actor.as_ref().is_none_or(|a| a.is_finite())
                && rec.final_critic.as_ref().is_none_or(|c| c.is_finite());
            let max_weight_norm = rec
                .snapshots
                .iter()
                .flat_map(|s| s.actor.iter().chain(&s.critic))
                .fold(0.0f64, |m, w| m.max(w.abs()));
            Ex1Trial {
                outcome: rec.outcome,
                mse_plus: rec.mse_plus,
                all_finite: states_finite && nets_finite && max_weight_norm.is_finite(),
                dw_ratio: dw_ratio(&rec),
                max_weight_norm,
            }
        })
        .collect()
}

fn success_rate(trials: &[Ex1Trial]) -> f64 {
    trials.iter().filter(|t| t.outcome == Outcome::Success).count() as f64 / trials.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_1() -> Verdict {
    let cfg = example("example1.cfg");
    let trial = cfg.trial_config().unwrap();
    let gains = trial.gains;
    let traj = &trial.trajectory;
    let model = trial.model;
    let zero = DVector::zeros(1);
    let mut s = trial.initial.clone();
    let (mut worst1, mut worst2) = (0.0f64, 0.0f64);
    for k in 0..1000 {
        let e1 = tracking_error(&s.q, &traj.at(k)).unwrap();
        let alpha = virtual_control(&e1, &s.q, &traj.at(k + 1), &gains);
        let e2 = &s.qdot - &alpha;
        let alpha_next = virtual_control_next(&e1, &e2, &s.q, &s.qdot, &traj.at(k + 2), &gains);
        let probe = PlantState {
            q: &s.q + &s.qdot * gains.h,
            ..s.clone()
        };
        let design = design_model_at(&model, &s, &probe, gains.h).unwrap();
        let u = compose_control(&exact_feedforward(&design, &alpha_next), &e2, &gains);
        let next = euler_step(&model, &s, &u, &zero, gains.h).unwrap();
        let e1n = tracking_error(&next.q, &traj.at(k + 1)).unwrap();
        let e2n = &next.qdot - virtual_control(&e1n, &next.q, &traj.at(k + 2), &gains);
        worst1 = worst1.max((&e1n - &e1 * gains.c1 - &e2 * gains.h).norm());
        worst2 = worst2.max((&design.m_plus * &e2n - &e2 * gains.c2).norm());
        s = next;
    }
    verdict(
        worst1 < 1e-12 && worst2 < 1e-10,
        format!("max e1 residual {worst1:.3e} (< 1e-12), max e2 residual {worst2:.3e} (< 1e-10)"),
    )
}

fn criterion_2() -> Verdict {
    let worst = gradient_oracle_sweep(100, 2024);
    verdict(worst < 1e-5, format!("worst relative error {worst:.3e} over 100 instances (< 1e-5)"))
}

fn criterion_3(combined: &[Ex1Trial]) -> Verdict {
    let rate = success_rate(combined);
    let med = median(combined.iter().map(|t| t.mse_plus).collect());
    verdict(
        rate >= 0.85 && med <= 1e-3,
        format!("success {:.0}% (>= 85%), median MSE+ {med:.3e} (<= 1e-3)", 100.0 * rate),
    )
}

fn criterion_4(combined: &[Ex1Trial], dhdp_only: &[Ex1Trial]) -> Verdict {
    let a = success_rate(combined);
    let b = success_rate(dhdp_only);
    let diverged = dhdp_only.iter().filter(|t| t.outcome == Outcome::Diverged).count();
    verdict(
        a - b >= 0.40,
        format!(
            "combined {:.0}% vs dHDP-only {:.0}% ({diverged} diverged), gap {:.0} points (>= 40)",
            100.0 * a,
            100.0 * b,
            100.0 * (a - b)
        ),
    )
}

fn criterion_5() -> Verdict {
    let cfg = example("example1.cfg");
    let base = cfg.trial_config().unwrap();
    let rows = run_scenario_suite(&base, 50, cfg.run.seed).expect("suite runs");
    for line in format_table(&rows).lines() {
        println!("    {line}");
    }
    let misses: Vec<String> = rows
        .iter()
        .filter(|r| (r.success_rate - r.reference_success).abs() > 0.15 + 1e-12)
        .map(|r| format!("case {} {:.0}% vs {:.0}%", r.id, 100.0 * r.success_rate, 100.0 * r.reference_success))
        .collect();
    let ordered = rows[0].success_rate >= rows[7].success_rate;
    verdict(
        misses.is_empty() && ordered,
        format!(
            "{} of 9 rows within 15 points{}; case 1 >= case 8: {ordered}",
            9 - misses.len(),
            if misses.is_empty() {
                String::new()
            } else {
                format!(" (outside: {})", misses.join(", "))
            }
        ),
    )
}

fn criterion_6() -> Verdict {
    let cfg = example("example2.cfg");
    let trial = cfg.trial_config().unwrap();
    let half = trial.steps / 2;
    let base = run_trial(&trial.baseline(), cfg.run.seed).unwrap();
    let base_mse = mse_per_joint(&base.e1_series(), half, trial.steps).unwrap();
    let reference = [2.69e-2, 1.54e-2];
    let base_ok = base_mse
        .iter()
        .zip(reference)
        .all(|(m, r)| m / r <= 5.0 && r / m <= 5.0);
    let mut better = 0;
    for seed in 0..20u64 {
        let rec = run_trial(&trial, seed).unwrap();
        if rec.outcome == Outcome::Diverged {
            continue;
        }
        let paired = run_trial(&trial.baseline(), seed).unwrap();
        let pm = mse_per_joint(&paired.e1_series(), half, trial.steps).unwrap();
        let m = mse_per_joint(&rec.e1_series(), half, trial.steps).unwrap();
        if m.iter().zip(&pm).all(|(a, b)| a < b) {
            better += 1;
        }
    }
    let frac = better as f64 / 20.0;
    verdict(
        frac >= 0.80 && base_ok,
        format!(
            "{better}/20 seeds beat the paired baseline on both joints (>= 16); baseline MSE+ q1 {:.3e}, q2 {:.3e} (within 5x of 2.69e-2, 1.54e-2: {base_ok})",
            base_mse[0], base_mse[1]
        ),
    )
}

fn criterion_7() -> Verdict {
    let mut notes = vec![];
    let mut ok = true;
    for name in ["example1.cfg", "example2.cfg"] {
        let trial = example(name).trial_config().unwrap();
        let v = trial.gain_verdict().unwrap();
        let pass = v.passed() && v.c1_margin > 0.0 && v.c2_margin > 0.0;
        ok &= pass;
        notes.push(format!("{name} margins {:.4}/{:.2}", v.c1_margin, v.c2_margin));
    }
    let bad = example("example1.cfg").trial_config().unwrap().gains;
    let bad = check_gain_conditions(&GainSet { c1: 0.8, ..bad }).unwrap();
    ok &= !bad.passed();
    notes.push(format!("c1=0.8 rejected: {}", !bad.passed()));

    let cfg = example("example2.cfg");
    let trial = cfg.trial_config().unwrap();
    let rec = run_trial(&trial, cfg.run.seed).unwrap();
    let m = &rec.rate_monitor;
    let full = rec.steps.len() == trial.steps;
    let rates = m.all_steps_ok && m.rates_below_min(trial.learning.l_c, trial.learning.l_a);
    ok &= full && rates;
    notes.push(format!(
        "example-2 rate bounds running min l_c {:.4} l_a {:.4} over {} steps, held: {rates}",
        m.min_l_c,
        m.min_l_a,
        rec.steps.len()
    ));
    verdict(ok, notes.join("; "))
}

fn criterion_8(combined: &[Ex1Trial]) -> Verdict {
    let finite = combined.iter().all(|t| t.all_finite);
    let diverged = combined.iter().filter(|t| t.outcome == Outcome::Diverged).count();
    let ratios: Vec<f64> = combined
        .iter()
        .filter(|t| t.outcome == Outcome::Success)
        .filter_map(|t| t.dw_ratio)
        .collect();
    let worst = ratios.iter().copied().fold(0.0f64, f64::max);
    let decayed = ratios.iter().filter(|&&r| r < 0.01).count();
    let max_w = combined.iter().map(|t| t.max_weight_norm).fold(0.0f64, f64::max);
    verdict(
        finite && diverged == 0 && decayed == ratios.len() && !ratios.is_empty(),
        format!(
            "finite: {finite}, diverged: {diverged}, max |w| {max_w:.3}, dw decay < 1% in {decayed}/{} successful trials (worst {worst:.3e})",
            ratios.len()
        ),
    )
}

fn report(id: usize, budget: Duration, run: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = run();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let passed = v.passed && in_time;
    println!(
        "criterion {id}: {} ({}; {:.1}s of {:.0}s budget)",
        if passed { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    passed
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = vec![];
    results.push(report(1, secs(1), criterion_1));
    results.push(report(2, secs(10), criterion_2));

    let mut combined = vec![];
    results.push(report(3, secs(120), || {
        combined = ex1_trials(ModeKind::Combined);
        criterion_3(&combined)
    }));
    results.push(report(4, secs(240), || {
        let dhdp_only = ex1_trials(ModeKind::DhdpOnly);
        criterion_4(&combined, &dhdp_only)
    }));
    results.push(report(5, secs(20 * 60), criterion_5));
    results.push(report(6, secs(5 * 60), criterion_6));
    results.push(report(7, secs(60), criterion_7));
    results.push(report(8, secs(60), || criterion_8(&combined)));

    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all 8 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
