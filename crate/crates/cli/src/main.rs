use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hiermc_core::estimators::{cell_accuracy, cluster_accuracy, is_success};
use hiermc_core::experiments::{self, converse_experiment, reference_threshold, sweep, CandidateKind, TrialConfig};
use hiermc_core::likelihood::neg_log_likelihood;
use hiermc_core::model::{generate_instance, DeltaPair};
use hiermc_core::threshold::{regime_grid, write_grid_csv};
use hiermc_core::{estimate, oracle, p_star, Error, EstimatorKind, Instance};

/// Hierarchical matrix completion with graph side information.
#[derive(Parser, Debug)]
#[command(name = "hiermc", version, about)]
struct Cli {
    /// Seed: master seed for sweeps, instance seed for `generate`,
    /// estimator seed for `estimate`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file. Defaults to stdout where that makes sense.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON config file, or the name of a bundled preset (fig4a, fig4b).
    #[arg(long, global = true)]
    config: Option<String>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Flags that override individual config fields.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Number of users; replaces `n_values` with this single size.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Number of items; clears `n_over_m`.
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    c: Option<usize>,
    #[arg(long, global = true)]
    g: Option<usize>,
    #[arg(long, global = true)]
    r: Option<usize>,
    #[arg(long, global = true)]
    q: Option<u32>,
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Observation probability; a sweep then runs this single value.
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Comma-separated user counts.
    #[arg(long, global = true, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    /// Comma-separated multiples of p*.
    #[arg(long, global = true, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EstimatorArg {
    Exact,
    Practical,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Column,
    IntraSwap,
    InterSwap,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample an instance and write it as JSON.
    Generate {
        /// Leave the dense ground-truth matrix out of the document.
        #[arg(long)]
        no_matrix: bool,
    },
    /// Run the configured estimator on an instance file.
    Estimate {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Print p*, its three branches and the regime.
    Threshold {
        /// Intra-cluster distance; defaults to the reference ground truth.
        #[arg(long)]
        tau1: Option<f64>,
        /// Inter-cluster distance; defaults to the reference ground truth.
        #[arg(long)]
        tau2: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Regime map over the (I_g, I_c2) grid of the config's `grid` block.
    RegimeGrid,
    /// Monte-Carlo success-rate sweep, resumable.
    Sweep,
    /// Fraction of converse candidates that tie or beat the truth, below and
    /// above p*.
    AdversarialCheck {
        #[arg(long, value_enum, default_value = "column")]
        kind: KindArg,
        #[arg(long, default_value_t = 0.5)]
        ratio_lo: f64,
        #[arg(long, default_value_t = 2.0)]
        ratio_hi: f64,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, default_value_t = 200)]
        max_candidates: usize,
    },
    /// Compare production routines with brute-force references.
    Selftest {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

/// Exit status 1: bad flags, config or input. Exit status 2: the run itself failed.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::InfeasibleDelta { .. } | Error::Dimension(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<TrialConfig, Failure> {
    let mut cfg = match &cli.config {
        None => TrialConfig::default(),
        Some(spec) if Path::new(spec).exists() => TrialConfig::read(Path::new(spec))?,
        Some(spec) => experiments::preset(spec)
            .ok_or_else(|| Failure::Config(format!("no config file or preset named {spec:?}")))?,
    };
    let o = &cli.overrides;
    let p = &mut cfg.params;
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = o.$field { p.$field = v; })*};
    }
    set!(c, g, r, q, theta, alpha, beta, gamma);
    if let Some(n) = o.n {
        p.n = n;
        cfg.n_values = vec![n];
    }
    if let Some(m) = o.m {
        p.m = m;
        cfg.n_over_m = None;
    }
    if let Some(v) = &o.n_values {
        cfg.n_values = v.clone();
    }
    if let Some(prob) = o.p {
        cfg.params.p = prob;
        cfg.ratios.clear();
        cfg.p_values = vec![prob];
    }
    if let Some(r) = &o.ratios {
        cfg.ratios = r.clone();
        cfg.p_values.clear();
    }
    if let Some(t) = o.trials {
        cfg.trials = t;
    }
    if let Some(e) = o.estimator {
        cfg.estimator.kind = match e {
            EstimatorArg::Exact => EstimatorKind::Exact,
            EstimatorArg::Practical => EstimatorKind::Practical,
        };
    }
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if cfg.sizes().is_empty() {
        return Err(Failure::Config("n_values is empty".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(runtime),
        None => {
            let mut stdout = io::stdout().lock();
            let nl: &[u8] = if text.ends_with('\n') { b"" } else { b"\n" };
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.write_all(nl)) {
                // A closed downstream pipe (`| head`) is not a failure.
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(runtime(e)),
                _ => Ok(()),
            }
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(runtime)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(runtime)?;
    }
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Selftest { seeds } => {
            let checks = oracle::selftest(*seeds)?;
            let mut text = String::new();
            for c in &checks {
                text += &format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            emit(out, &text)?;
            if checks.iter().any(|c| !c.passed) {
                return Err(Failure::Runtime("self-test failed".into()));
            }
            Ok(())
        }
        Command::Estimate { instance } => {
            let text =
                fs::read_to_string(instance).map_err(|e| Failure::Config(format!("{}: {e}", instance.display())))?;
            let inst = Instance::from_json(&text)?;
            let cfg = load_config(&cli)?;
            let seed = cli.seed.unwrap_or(inst.seed);
            let start = Instant::now();
            let est = estimate(&inst.observation, &inst.graph, &inst.params, &cfg.estimator, seed)?;
            let truth = &inst.truth;
            let truth_score = neg_log_likelihood(
                &inst.observation,
                &inst.graph,
                &truth.matrix,
                &truth.partition,
                &inst.params,
            )?;
            let summary = serde_json::json!({
                "estimator": cfg.estimator.kind.to_string(),
                "seed": seed,
                "success": is_success(&est, &truth.matrix)?,
                "score": est.score.value(),
                "truth_score": truth_score.value(),
                "cluster_accuracy": cluster_accuracy(&est.partition, &truth.partition),
                "cell_accuracy": cell_accuracy(&est.partition, &truth.partition),
                "iterations": est.diagnostics.iterations,
                "wall_ms": start.elapsed().as_secs_f64() * 1e3,
            });
            if let Some(path) = out {
                emit(Some(path), &to_json(&est)?)?;
            }
            emit(None, &to_json(&summary)?)
        }
        cmd => {
            let cfg = load_config(&cli)?;
            run_config(cmd, &cfg, &cli, out)
        }
    }
}

fn run_config(cmd: &Command, cfg: &TrialConfig, cli: &Cli, out: Option<&Path>) -> Result<(), Failure> {
    let n = cfg.sizes()[0];
    match cmd {
        Command::Generate { no_matrix } => {
            let params = cfg.params_at(n);
            let seed = cli.seed.unwrap_or(cfg.master_seed);
            let inst = generate_instance(&params, &cfg.truth, seed)?;
            emit(out, &serde_json::to_string(&inst.to_doc(!no_matrix)).map_err(runtime)?)
        }
        Command::Threshold { tau1, tau2, json } => {
            let params = cfg.params_at(n);
            let delta = if tau1.is_some() || tau2.is_some() {
                DeltaPair {
                    tau1: *tau1,
                    tau2: *tau2,
                }
            } else {
                reference_threshold(cfg, n)?.0
            };
            let res = p_star(&params, &delta)?;
            let text = if *json {
                to_json(&serde_json::json!({ "tau1": delta.tau1, "tau2": delta.tau2, "result": res }))?
            } else {
                let fmt = |t: Option<f64>| t.map_or("none".to_string(), |v| format!("{v:.6}"));
                let mut s = format!(
                    "n={} m={} tau1={} tau2={}\np_star={:.6e}\nbranch_a={:.6e}\nbranch_b={:.6e}\nbranch_c={:.6e}\nprefactor={:.6}\nregime={}\nfeasible={}\n",
                    params.n,
                    params.m,
                    fmt(delta.tau1),
                    fmt(delta.tau2),
                    res.p_star,
                    res.branches[0],
                    res.branches[1],
                    res.branches[2],
                    res.prefactor,
                    res.regime,
                    res.feasible
                );
                for note in &res.notes {
                    s += &format!("note: {note}\n");
                }
                s
            };
            emit(out, &text)
        }
        Command::RegimeGrid => {
            let gc = &cfg.grid;
            let delta = DeltaPair {
                tau1: Some(gc.tau1),
                tau2: Some(gc.tau2),
            };
            let cells = regime_grid(
                &cfg.params_at(n),
                &delta,
                gc.i_g_range,
                gc.i_c2_range,
                gc.resolution,
                gc.gamma,
            )?;
            let mut buf = Vec::new();
            write_grid_csv(&cells, &mut buf)?;
            emit(out, &String::from_utf8(buf).map_err(runtime)?)
        }
        Command::Sweep => {
            let path = out.ok_or_else(|| Failure::Config("sweep needs --out".into()))?;
            let start = Instant::now();
            let summary = sweep(cfg, path, cli.threads)?;
            eprintln!(
                "{} rows, {} trials computed, {} reused, {:.1}s",
                summary.rows.len(),
                summary.computed,
                summary.reused,
                start.elapsed().as_secs_f64()
            );
            Ok(())
        }
        Command::AdversarialCheck {
            kind,
            ratio_lo,
            ratio_hi,
            seeds,
            max_candidates,
        } => {
            if !(ratio_lo < ratio_hi) || *seeds == 0 {
                return Err(Failure::Config("need ratio_lo < ratio_hi and seeds >= 1".into()));
            }
            let kind = match kind {
                KindArg::Column => CandidateKind::Column,
                KindArg::IntraSwap => CandidateKind::IntraSwap,
                KindArg::InterSwap => CandidateKind::InterSwap,
            };
            let report = converse_experiment(cfg, n, kind, *ratio_lo, *ratio_hi, *seeds, *max_candidates)?;
            emit(out, &to_json(&report)?)
        }
        Command::Selftest { .. } | Command::Estimate { .. } => unreachable!("handled before config loading"),
    }
}
