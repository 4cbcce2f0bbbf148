//! Seeded Monte-Carlo harness: single trials, resumable success-rate sweeps
//! over `p / p*`, and paired converse checks.
//!
//! Trial seeds are `trial_seed(master_seed, point_key, trial)`, where the
//! point key mixes `n` with the bit pattern of the requested ratio (or of the
//! absolute `p`), so adding or removing points never changes the seeds of the
//! others and results do not depend on the thread count.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Binomial, ContinuousCDF, DiscreteCDF};

use crate::adversarial::{column_candidates, converse_check, swap_candidates, SwapKind};
use crate::error::{Error, Result};
use crate::estimators::{estimate, is_success, partition_count, Diagnostics, EstimatorConfig, EstimatorKind};
use crate::likelihood::{neg_log_likelihood, Score};
use crate::model::{build_ground_truth, compute_delta, generate_instance, DeltaPair, GroundTruthMode, ModelParams};
use crate::rng::{derive, tags, trial_seed};
use crate::threshold::p_star;

/// Regime-map block of a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub i_g_range: (f64, f64),
    pub i_c2_range: (f64, f64),
    pub resolution: usize,
    pub gamma: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            tau1: 1.0 / 3.0,
            tau2: 1.0 / 6.0,
            i_g_range: (0.0, 50.0),
            i_c2_range: (0.0, 15.0),
            resolution: 60,
            gamma: 1.0,
        }
    }
}

/// Everything a sweep needs. `params.n`, `params.m` and `params.p` act as
/// defaults: `n_values` overrides `n`, `n_over_m` derives `m`, and the swept
/// probabilities come from `ratios` (times `p*`) or `p_values`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub name: String,
    pub params: ModelParams,
    pub truth: GroundTruthMode,
    pub n_values: Vec<usize>,
    pub n_over_m: Option<f64>,
    pub ratios: Vec<f64>,
    pub p_values: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub estimator: EstimatorConfig,
    pub grid: GridConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            params: ModelParams {
                n: 300,
                m: 100,
                c: 2,
                g: 3,
                r: 2,
                q: 2,
                theta: 0.1,
                p: 0.1,
                alpha: 40.0,
                beta: 10.0,
                gamma: 0.5,
            },
            truth: GroundTruthMode::Random,
            n_values: Vec::new(),
            n_over_m: None,
            ratios: Vec::new(),
            p_values: Vec::new(),
            trials: 1,
            master_seed: 0,
            estimator: EstimatorConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

impl TrialConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parameters at a given `n`.
    pub fn params_at(&self, n: usize) -> ModelParams {
        let m = match self.n_over_m {
            Some(ratio) => ((n as f64 / ratio).round() as usize).max(1),
            None => self.params.m,
        };
        ModelParams {
            n,
            m,
            ..self.params.clone()
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        if self.n_values.is_empty() {
            vec![self.params.n]
        } else {
            self.n_values.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad("ratios must be positive".into());
        }
        if self.p_values.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return bad("p values must lie in [0, 1]".into());
        }
        if !self.ratios.is_empty() && !self.p_values.is_empty() {
            return bad("give either ratios or p_values, not both".into());
        }
        if let Some(r) = self.n_over_m {
            if !(r > 0.0) {
                return bad("n_over_m must be positive".into());
            }
        }
        for n in self.sizes() {
            let p = self.params_at(n);
            p.validate()?;
            if self.estimator.kind == EstimatorKind::Exact {
                let ex = &self.estimator.exact;
                let size = partition_count(n, p.cells());
                if n > ex.max_n || p.cells() > ex.max_cells || size > ex.max_partitions {
                    return Err(Error::BudgetExceeded {
                        size,
                        budget: ex.max_partitions,
                    });
                }
            }
        }
        Ok(())
    }

    /// Stable fingerprint of everything that affects trial outcomes.
    pub fn fingerprint(&self) -> Result<u64> {
        let text = serde_json::to_string(&(&self.params, &self.truth, &self.n_over_m, &self.estimator))?;
        Ok(text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        }))
    }
}

/// One sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub key: u64,
    pub params: ModelParams,
    pub delta: DeltaPair,
    pub p_star: f64,
    /// Realized `p / p*`.
    pub ratio: f64,
}

fn point_key(n: usize, value: f64, absolute: bool) -> u64 {
    derive(derive(n as u64, absolute as u64), value.to_bits())
}

/// Distances and `p*` at size `n`, from a reference ground truth drawn with a
/// seed derived from the master seed.
pub fn reference_threshold(config: &TrialConfig, n: usize) -> Result<(DeltaPair, f64)> {
    let params = config.params_at(n);
    let seed = derive(derive(config.master_seed, tags::GROUND_TRUTH), n as u64);
    let truth = build_ground_truth(&params, &config.truth, seed)?;
    let delta = compute_delta(&truth.vectors);
    Ok((delta, p_star(&params, &delta)?.p_star))
}

pub fn resolve_points(config: &TrialConfig) -> Result<Vec<Point>> {
    config.validate()?;
    let mut out = Vec::new();
    for n in config.sizes() {
        let (delta, ps) = reference_threshold(config, n)?;
        let base = config.params_at(n);
        let mut push = |key: u64, p: f64| {
            out.push(Point {
                key,
                params: base.with_p(p),
                delta,
                p_star: ps,
                ratio: if ps > 0.0 { p / ps } else { f64::INFINITY },
            });
        };
        if !config.p_values.is_empty() {
            for &p in &config.p_values {
                push(point_key(n, p, true), p);
            }
        } else if !config.ratios.is_empty() {
            for &r in &config.ratios {
                push(point_key(n, r, false), (r * ps).min(1.0));
            }
        } else {
            push(point_key(n, base.p, true), base.p);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub n: usize,
    pub p: f64,
    pub p_star: f64,
    pub success: bool,
    pub score: Score,
    pub truth_score: Score,
    pub diagnostics: Diagnostics,
    /// Not part of the deterministic output.
    pub wall_ms: f64,
}

/// Generates an instance at `point` from `seed`, estimates, and compares.
pub fn run_trial(config: &TrialConfig, point: &Point, seed: u64) -> Result<TrialResult> {
    let start = Instant::now();
    let params = &point.params;
    let inst = generate_instance(params, &config.truth, seed)?;
    let est = estimate(&inst.observation, &inst.graph, params, &config.estimator, seed)?;
    let truth_score = neg_log_likelihood(
        &inst.observation,
        &inst.graph,
        &inst.truth.matrix,
        &inst.truth.partition,
        params,
    )?;
    Ok(TrialResult {
        seed,
        n: params.n,
        p: params.p,
        p_star: point.p_star,
        success: is_success(&est, &inst.truth.matrix)?,
        score: est.score,
        truth_score,
        diagnostics: est.diagnostics,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Exact two-sided binomial interval at confidence `level`.
pub fn clopper_pearson(successes: usize, trials: usize, level: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (successes as f64, trials as f64);
    let a = (1.0 - level) / 2.0;
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0).expect("positive shapes").inverse_cdf(a)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k).expect("positive shapes").inverse_cdf(1.0 - a)
    };
    (lo, hi)
}

pub const SWEEP_HEADER: [&str; 22] = [
    "n",
    "m",
    "c",
    "g",
    "r",
    "q",
    "theta",
    "alpha",
    "beta",
    "gamma",
    "tau1",
    "tau2",
    "p",
    "p_star",
    "ratio",
    "trials",
    "successes",
    "success_rate",
    "ci_lo",
    "ci_hi",
    "estimator",
    "master_seed",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub m: usize,
    pub c: usize,
    pub g: usize,
    pub r: usize,
    pub q: u32,
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub p: f64,
    pub p_star: f64,
    pub ratio: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub estimator: String,
    pub master_seed: u64,
}

impl SweepRow {
    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.n.to_string(),
            self.m.to_string(),
            self.c.to_string(),
            self.g.to_string(),
            self.r.to_string(),
            self.q.to_string(),
            self.theta.to_string(),
            self.alpha.to_string(),
            self.beta.to_string(),
            self.gamma.to_string(),
            opt(self.tau1),
            opt(self.tau2),
            self.p.to_string(),
            self.p_star.to_string(),
            self.ratio.to_string(),
            self.trials.to_string(),
            self.successes.to_string(),
            self.success_rate.to_string(),
            self.ci_lo.to_string(),
            self.ci_hi.to_string(),
            self.estimator.clone(),
            self.master_seed.to_string(),
        ]
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SWEEP_HEADER)?;
    for row in rows {
        wr.write_record(row.record())?;
    }
    wr.flush()?;
    Ok(())
}

/// One line of the per-trial sidecar that makes sweeps resumable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: u64,
    pub point: u64,
    pub trial: u64,
    pub seed: u64,
    pub success: bool,
    pub wall_ms: f64,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".trials.jsonl");
    PathBuf::from(s)
}

fn read_sidecar(path: &Path, config: u64) -> Result<HashMap<(u64, u64), TrialRecord>> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        // A torn final line from an interrupted run is skipped.
        if let Ok(rec) = serde_json::from_str::<TrialRecord>(&line) {
            if rec.config == config {
                done.insert((rec.point, rec.trial), rec);
            }
        }
    }
    Ok(done)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub computed: usize,
    pub reused: usize,
}

/// Runs every (point, trial) pair not already recorded in the sidecar next
/// to `out`, appending one line per finished trial, then rewrites `out`
/// atomically with rows sorted by `(n, ratio)`.
pub fn sweep(config: &TrialConfig, out: &Path, threads: Option<usize>) -> Result<SweepSummary> {
    let points = resolve_points(config)?;
    let fp = config.fingerprint()?;
    let side = sidecar_path(out);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut done = read_sidecar(&side, fp)?;
    let mut jobs = Vec::new();
    for (pi, pt) in points.iter().enumerate() {
        for t in 0..config.trials as u64 {
            let seed = trial_seed(config.master_seed, pt.key, t);
            match done.get(&(pt.key, t)) {
                Some(rec) if rec.seed == seed => {}
                _ => jobs.push((pi, t, seed)),
            }
        }
    }
    let reused = points.len() * config.trials - jobs.len();
    let computed = jobs.len();
    if !jobs.is_empty() {
        let file = OpenOptions::new().create(true).append(true).open(&side)?;
        let sink = Mutex::new(file);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.unwrap_or(0))
            .build()
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
        let results: Vec<Result<TrialRecord>> = pool.install(|| {
            jobs.par_iter()
                .map(|&(pi, t, seed)| {
                    let pt = &points[pi];
                    let res = run_trial(config, pt, seed)?;
                    let rec = TrialRecord {
                        config: fp,
                        point: pt.key,
                        trial: t,
                        seed,
                        success: res.success,
                        wall_ms: res.wall_ms,
                    };
                    let mut line = serde_json::to_string(&rec)?;
                    line.push('\n');
                    let mut f = sink.lock().expect("sidecar lock");
                    f.write_all(line.as_bytes())?;
                    f.flush()?;
                    Ok(rec)
                })
                .collect()
        });
        for rec in results {
            let rec = rec?;
            done.insert((rec.point, rec.trial), rec);
        }
    }

    let mut rows: Vec<SweepRow> = points
        .iter()
        .map(|pt| {
            let successes = (0..config.trials as u64)
                .filter(|t| done.get(&(pt.key, *t)).is_some_and(|r| r.success))
                .count();
            let (ci_lo, ci_hi) = clopper_pearson(successes, config.trials, 0.95);
            let p = &pt.params;
            SweepRow {
                n: p.n,
                m: p.m,
                c: p.c,
                g: p.g,
                r: p.r,
                q: p.q,
                theta: p.theta,
                alpha: p.alpha,
                beta: p.beta,
                gamma: p.gamma,
                tau1: pt.delta.tau1,
                tau2: pt.delta.tau2,
                p: p.p,
                p_star: pt.p_star,
                ratio: pt.ratio,
                trials: config.trials,
                successes,
                success_rate: successes as f64 / config.trials as f64,
                ci_lo,
                ci_hi,
                estimator: config.estimator.kind.to_string(),
                master_seed: config.master_seed,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.n.cmp(&b.n).then(a.ratio.total_cmp(&b.ratio)));

    let mut tmp = out.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write_sweep_csv(&rows, File::create(&tmp)?)?;
    fs::rename(&tmp, out)?;
    Ok(SweepSummary { rows, computed, reused })
}

/// Ratio at which the success rate first crosses one half, by linear
/// interpolation between the bracketing points; `rows` must share one `n`.
pub fn half_crossing(rows: &[SweepRow]) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.ratio, r.success_rate)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.first()?.1 >= 0.5 {
        return Some(pts[0].0);
    }
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if y0 < 0.5 && y1 >= 0.5 {
            return Some(x0 + (0.5 - y0) * (x1 - x0) / (y1 - y0));
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Column,
    IntraSwap,
    InterSwap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConverseReport {
    pub n: usize,
    pub kind: CandidateKind,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub p_star: f64,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    /// Seeds where the low-`p` fraction is strictly larger.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided sign-test p-value for `wins` against `wins + losses` fair
    /// coin flips.
    pub p_value: f64,
}

/// `P(X >= wins)` for `X ~ Bin(wins + losses, 1/2)`.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    if wins == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    b.sf(wins as u64 - 1)
}

/// Fraction of converse candidates that tie or beat the ground truth, on the
/// same seeded instances observed at `ratio_lo * p*` and `ratio_hi * p*`.
pub fn converse_experiment(
    config: &TrialConfig,
    n: usize,
    kind: CandidateKind,
    ratio_lo: f64,
    ratio_hi: f64,
    seeds: usize,
    max_candidates: usize,
) -> Result<ConverseReport> {
    let (_, ps) = reference_threshold(config, n)?;
    let base = config.params_at(n);
    let key = derive(point_key(n, ratio_lo, false), ratio_hi.to_bits() ^ tags::ADVERSARIAL);
    let fractions: Vec<Result<(f64, f64)>> = (0..seeds as u64)
        .into_par_iter()
        .map(|s| {
            let seed = trial_seed(config.master_seed, key, s);
            let mut pair = [0.0; 2];
            for (slot, ratio) in [ratio_lo, ratio_hi].into_iter().enumerate() {
                let params = base.with_p((ratio * ps).min(1.0));
                let inst = generate_instance(&params, &config.truth, seed)?;
                let (m0, z0, v) = (&inst.truth.matrix, &inst.truth.partition, &inst.truth.vectors);
                let cands: Vec<_> = match kind {
                    CandidateKind::Column => column_candidates(m0, v, max_candidates)?
                        .iter()
                        .map(|c| (c.matrix(z0), z0.clone()))
                        .collect(),
                    CandidateKind::IntraSwap | CandidateKind::InterSwap => {
                        let sk = if kind == CandidateKind::IntraSwap {
                            SwapKind::IntraCluster
                        } else {
                            SwapKind::InterCluster
                        };
                        swap_candidates(m0, z0, v, sk)?
                            .take(max_candidates)
                            .map(|c| (c.matrix(), c.partition(z0)))
                            .collect()
                    }
                };
                pair[slot] = converse_check(&inst.observation, &inst.graph, m0, z0, cands, &params)?;
            }
            Ok((pair[0], pair[1]))
        })
        .collect();
    let mut low = Vec::with_capacity(seeds);
    let mut high = Vec::with_capacity(seeds);
    for f in fractions {
        let (a, b) = f?;
        low.push(a);
        high.push(b);
    }
    let wins = low.iter().zip(&high).filter(|(a, b)| a > b).count();
    let losses = low.iter().zip(&high).filter(|(a, b)| a < b).count();
    Ok(ConverseReport {
        n,
        kind,
        ratio_lo,
        ratio_hi,
        p_star: ps,
        wins,
        losses,
        ties: seeds - wins - losses,
        p_value: sign_test(wins, losses),
        low,
        high,
    })
}

/// Preset configs shipped with the crate.
pub fn preset(name: &str) -> Option<TrialConfig> {
    let text = match name {
        "fig4a" => include_str!("../presets/fig4a.json"),
        "fig4b" => include_str!("../presets/fig4b.json"),
        _ => return None,
    };
    Some(TrialConfig::from_json(text).expect("presets parse"))
}

/// Distinct `n` values of `rows`, in order of first appearance.
pub fn sizes_of(rows: &[SweepRow]) -> Vec<usize> {
    let mut seen = HashSet::new();
    rows.iter().map(|r| r.n).filter(|n| seen.insert(*n)).collect()
}
