//! Command-line entry points and output writers.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::actor_critic::check_learning_rates;
use crate::actor_critic::Mlp;
use crate::config::{load_config, ConfigError, ExperimentConfig};
use crate::eval;
use crate::trainer::{self, EpisodeRecord, Outcome, TrainError, TrialRecord};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("trainer: {0}")]
    Train(#[from] TrainError),
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trace: {0}")]
    Trace(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Train(TrainError::GainCheckFailed { .. } | TrainError::Invalid(_) | TrainError::Gain(_)) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "dhdp", version, about = "Backstepping + dHDP tracking control experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one trial (or a reset episode) and write the trace.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a reset-on-failure episode instead of a single trial.
        #[arg(long)]
        episode: bool,
    },
    /// Run the nine-scenario single-link benchmark grid.
    Suite {
        config: PathBuf,
        /// Episodes per scenario; overrides `run.trials`.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print gain and learning-rate condition margins.
    Check {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert a trace CSV into gnuplot data files.
    PlotData {
        trace: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Print the fully resolved configuration.
    Resolve { config: PathBuf },
}

/// Result of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// A trial diverged or an episode exhausted its reset cap.
    Diverged,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Diverged => 2,
        }
    }
}

pub fn execute(cli: &Cli, log: &mut dyn Write) -> Result<Status, CliError> {
    match &cli.command {
        Command::Run {
            config,
            seed,
            out,
            episode,
        } => {
            let cfg = load_config(config)?;
            let seed = seed.unwrap_or(cfg.run.seed);
            let out = out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            cmd_run(&cfg, seed, &out, *episode || cfg.run.episode, log)
        }
        Command::Suite {
            config,
            trials,
            seed,
            out,
        } => {
            let cfg = load_config(config)?;
            let trials = trials.unwrap_or(cfg.run.trials);
            let seed = seed.unwrap_or(cfg.run.seed);
            let out = out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            cmd_suite(&cfg, trials, seed, &out, log)
        }
        Command::Check { config, seed } => {
            let cfg = load_config(config)?;
            let seed = seed.unwrap_or(cfg.run.seed);
            cmd_check(&cfg, seed, log)
        }
        Command::PlotData { trace, out } => cmd_plot_data(trace, out, log),
        Command::Resolve { config } => {
            let cfg = load_config(config)?;
            write!(log, "{}", cfg.to_toml()).map_err(io_err(config))?;
            Ok(Status::Ok)
        }
    }
}

fn joint_cols(name: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{name}{i}")).collect()
}

/// Trace CSV of a trial: one row per sample.
pub fn trace_csv(record: &TrialRecord, hash: &str) -> String {
    let n = record.steps.first().map(|s| s.e1.len()).unwrap_or(0);
    let mut out = format!("# config_hash={hash} seed={} attempt={}\n", record.seed.seed, record.seed.attempt);
    let mut header = vec!["k".to_string(), "t".to_string()];
    for name in ["q", "qdot", "e1", "e2", "alpha", "u", "f_hat"] {
        header.extend(joint_cols(name, n));
    }
    header.extend(["r", "J_hat", "e_c", "e_a", "l_a", "l_c"].map(String::from));
    out.push_str(&header.join(","));
    out.push('\n');
    for s in &record.steps {
        let mut row = vec![s.k.to_string(), s.state.t.to_string()];
        for v in [&s.state.q, &s.state.qdot, &s.e1, &s.e2, &s.alpha, &s.u, &s.f_hat] {
            row.extend(v.iter().map(|x| x.to_string()));
        }
        row.extend([s.r, s.j_hat, s.e_c, s.e_a, s.l_a, s.l_c].map(|x| x.to_string()));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Weight snapshots keyed by step.
pub fn weights_csv(record: &TrialRecord, hash: &str) -> String {
    let mut out = format!("# config_hash={hash} seed={} attempt={}\n", record.seed.seed, record.seed.attempt);
    let (na, nc) = record
        .snapshots
        .first()
        .map(|s| (s.actor.len(), s.critic.len()))
        .unwrap_or((0, 0));
    let mut header = vec!["k".to_string()];
    header.extend((0..na).map(|i| format!("wa{i}")));
    header.extend((0..nc).map(|i| format!("wc{i}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for s in &record.snapshots {
        let mut row = vec![s.k.to_string()];
        row.extend(s.actor.iter().chain(&s.critic).map(|x| x.to_string()));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Success => "success",
        Outcome::Failure => "failure",
        Outcome::Diverged => "diverged",
    }
}

fn net_norms(net: &Option<Mlp>) -> String {
    match net {
        Some(m) => {
            let (a, b) = m.weight_norms();
            format!("{a} {b}")
        }
        None => "none".into(),
    }
}

pub fn trial_summary(record: &TrialRecord, hash: &str) -> String {
    let v = &record.gain_verdict;
    let m = &record.rate_monitor;
    let mut s = String::new();
    let _ = writeln!(s, "config_hash = {hash}");
    let _ = writeln!(s, "seed = {}", record.seed.seed);
    let _ = writeln!(s, "attempt = {}", record.seed.attempt);
    let _ = writeln!(s, "outcome = {}", outcome_name(record.outcome));
    let _ = writeln!(s, "samples = {}", record.steps.len());
    let _ = writeln!(s, "mse_minus = {}", record.mse_minus);
    let _ = writeln!(s, "mse_plus = {}", record.mse_plus);
    if let Some(b) = record.baseline_mse_plus {
        let _ = writeln!(s, "baseline_mse_plus = {b}");
    }
    let _ = writeln!(s, "c1_margin = {}", v.c1_margin);
    let _ = writeln!(s, "c2_margin = {}", v.c2_margin);
    let _ = writeln!(s, "l_c_running_min = {}", m.min_l_c);
    let _ = writeln!(s, "l_a_running_min = {}", m.min_l_a);
    let _ = writeln!(s, "rates_below_bounds_every_step = {}", m.all_steps_ok);
    let _ = writeln!(s, "actor_weight_norms = {}", net_norms(&record.final_actor));
    let _ = writeln!(s, "critic_weight_norms = {}", net_norms(&record.final_critic));
    s
}

fn episode_summary(ep: &EpisodeRecord, hash: &str) -> String {
    let mut s = trial_summary(&ep.last, hash);
    let _ = writeln!(s, "episode_trials = {}", ep.trials.len());
    let _ = writeln!(s, "episode_resets = {}", ep.resets);
    let _ = writeln!(s, "episode_exhausted = {}", ep.exhausted());
    for t in &ep.trials {
        let _ = writeln!(
            s,
            "trial {} {} mse_minus={} mse_plus={} samples={}",
            t.attempt,
            outcome_name(t.outcome),
            t.mse_minus,
            t.mse_plus,
            t.steps
        );
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn prepare_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(io_err(out))
}

fn worker_pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))
}

pub fn cmd_run(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    episode: bool,
    log: &mut dyn Write,
) -> Result<Status, CliError> {
    let trial = cfg.trial_config()?;
    let hash = cfg.hash();
    prepare_dir(out)?;
    write_file(&out.join("resolved.toml"), &cfg.to_toml())?;

    let (record, summary, status) = if episode {
        let ep = trainer::run_episode(&trial, seed)?;
        let status = if ep.exhausted() { Status::Diverged } else { Status::Ok };
        let summary = episode_summary(&ep, &hash);
        (ep.last, summary, status)
    } else {
        let rec = trainer::run_trial(&trial, seed)?;
        let status = if rec.diverged() { Status::Diverged } else { Status::Ok };
        let summary = trial_summary(&rec, &hash);
        (rec, summary, status)
    };
    write_file(&out.join(format!("trace_seed{seed}.csv")), &trace_csv(&record, &hash))?;
    write_file(&out.join(format!("weights_seed{seed}.csv")), &weights_csv(&record, &hash))?;
    write_file(&out.join(format!("summary_seed{seed}.txt")), &summary)?;
    log.write_all(summary.as_bytes()).map_err(io_err(out))?;
    Ok(status)
}

pub fn cmd_suite(
    cfg: &ExperimentConfig,
    trials: usize,
    seed: u64,
    out: &Path,
    log: &mut dyn Write,
) -> Result<Status, CliError> {
    let trial = cfg.trial_config()?;
    let hash = cfg.hash();
    prepare_dir(out)?;
    let rows = worker_pool(cfg)?.install(|| eval::run_scenario_suite(&trial, trials, seed))?;
    let comment = format!("# config_hash={hash} seed={seed} episodes={trials}\n");
    let text = eval::format_table(&rows);
    write_file(&out.join("resolved.toml"), &cfg.to_toml())?;
    write_file(&out.join("table.txt"), &format!("{comment}{text}"))?;
    write_file(&out.join("table.csv"), &format!("{comment}{}", eval::table_csv(&rows)))?;
    log.write_all(text.as_bytes()).map_err(io_err(out))?;
    Ok(Status::Ok)
}

pub fn cmd_check(cfg: &ExperimentConfig, seed: u64, log: &mut dyn Write) -> Result<Status, CliError> {
    let mut trial = cfg.trial_config()?;
    let v = trial.gain_verdict()?;
    let mut s = String::new();
    let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
    let _ = writeln!(
        s,
        "gain c1: |c1| = {} < {} margin {} {}",
        trial.gains.c1.abs(),
        v.c1_bound,
        v.c1_margin,
        mark(v.c1_ok)
    );
    let _ = writeln!(
        s,
        "gain c2: |c2| = {} < {} margin {} {}",
        trial.gains.c2.abs(),
        v.c2_bound,
        v.c2_margin,
        mark(v.c2_ok)
    );
    if !v.passed() {
        log.write_all(s.as_bytes()).map_err(|e| CliError::Trace(e.to_string()))?;
        return Err(TrainError::GainCheckFailed {
            c1: v.c1_margin,
            c2: v.c2_margin,
        }
        .into());
    }

    // Learning-rate bounds depend on the visited states, so run one trial.
    trial.snapshot_stride = 0;
    let rec = trainer::run_trial(&trial, seed)?;
    let m = &rec.rate_monitor;
    let show = |b: Option<f64>| b.map_or("unbounded".to_string(), |x| x.to_string());
    if let (Some(a), Some(c)) = (&rec.final_actor, &rec.final_critic) {
        let last = check_learning_rates(&trial.learning, c, a);
        if let Ok(b) = last {
            let _ = writeln!(s, "final-step bounds: l_c < {}, l_a < {}", show(b.l_c), show(b.l_a));
        }
    }
    let _ = writeln!(
        s,
        "rate l_c = {}: running min bound {} {}",
        trial.learning.l_c,
        m.min_l_c,
        mark(trial.learning.l_c < m.min_l_c)
    );
    let _ = writeln!(
        s,
        "rate l_a = {}: running min bound {} {}",
        trial.learning.l_a,
        m.min_l_a,
        mark(trial.learning.l_a < m.min_l_a)
    );
    let _ = writeln!(s, "rates below bounds at every step: {}", m.all_steps_ok);
    let _ = writeln!(s, "dry run: {} after {} samples", outcome_name(rec.outcome), rec.steps.len());
    log.write_all(s.as_bytes()).map_err(|e| CliError::Trace(e.to_string()))?;
    Ok(if rec.diverged() { Status::Diverged } else { Status::Ok })
}

/// Parsed trace: column names and numeric rows.
struct Trace {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_trace(path: &Path) -> Result<Trace, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Trace("missing header row".into()))?
        .split(',')
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Trace(format!("row {}: {e}", i + 1)))?;
        if row.len() != header.len() {
            return Err(CliError::Trace(format!("row {} has {} fields", i + 1, row.len())));
        }
        rows.push(row);
    }
    Ok(Trace { header, rows })
}

fn select(trace: &Trace, prefixes: &[&str]) -> Vec<usize> {
    let mut idx = vec![];
    for p in prefixes {
        for (i, h) in trace.header.iter().enumerate() {
            let joint = h
                .strip_prefix(p)
                .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()));
            if h == p || joint {
                idx.push(i);
            }
        }
    }
    idx
}

fn dat_file(trace: &Trace, cols: &[usize]) -> String {
    let mut out = format!(
        "# {}\n",
        cols.iter().map(|&c| trace.header[c].as_str()).collect::<Vec<_>>().join(" ")
    );
    for row in &trace.rows {
        let vals: Vec<String> = cols.iter().map(|&c| row[c].to_string()).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn cmd_plot_data(trace_path: &Path, out: &Path, log: &mut dyn Write) -> Result<Status, CliError> {
    let trace = read_trace(trace_path)?;
    prepare_dir(out)?;
    let groups: [(&str, &[&str]); 3] = [
        ("tracking.dat", &["t", "q", "e1"]),
        ("control.dat", &["t", "u", "f_hat"]),
        ("learning.dat", &["k", "r", "J_hat", "e_c", "e_a", "l_a", "l_c"]),
    ];
    for (name, prefixes) in groups {
        let path = out.join(name);
        write_file(&path, &dat_file(&trace, &select(&trace, prefixes)))?;
        writeln!(log, "wrote {}", path.display()).map_err(io_err(&path))?;
    }
    Ok(Status::Ok)
}
