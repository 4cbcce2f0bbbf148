//! Brute-force reference implementations.
//!
//! Everything here is written directly from the model definition (per-cell
//! and per-pair probability products, exhaustive enumeration) and shares no
//! code path with the production routines it is used to check.

use crate::error::{Error, Result};
use crate::mds::{all_codewords, build_code};
use crate::model::{Graph, ModelParams, Observation, Partition, RatingMatrix, ERASED};
use crate::Symbol;

/// (same group, same cluster, different cluster) edge counts.
pub fn classify_edges(edges: &[(u32, u32)], labels: &[u32], g: usize) -> (u64, u64, u64) {
    let mut out = (0, 0, 0);
    for &(a, b) in edges {
        let la = labels[a as usize] as usize;
        let lb = labels[b as usize] as usize;
        if la == lb {
            out.0 += 1;
        } else if la / g == lb / g {
            out.1 += 1;
        } else {
            out.2 += 1;
        }
    }
    out
}

pub fn count_mismatches(y: &[Symbol], x: &[Symbol]) -> usize {
    let mut k = 0;
    for i in 0..y.len() {
        if y[i] != ERASED && y[i] != x[i] {
            k += 1;
        }
    }
    k
}

/// `P[(Y, G) | X, Z]` as a plain product of per-cell and per-pair factors.
pub fn probability(y: &Observation, graph: &Graph, x: &RatingMatrix, z: &Partition, params: &ModelParams) -> f64 {
    let scale = (params.n as f64).ln() / params.n as f64;
    let clamp = |v: f64| (v * scale).min(1.0);
    let (a, b, c) = (clamp(params.alpha), clamp(params.beta), clamp(params.gamma));
    let q = params.q as f64;
    let mut prob = 1.0;
    for u in 0..x.n() {
        for t in 0..x.m() {
            prob *= match y.get(u, t) {
                None => 1.0 - params.p,
                Some(s) if s == x.get(u, t) => params.p * (1.0 - params.theta),
                Some(_) => params.p * params.theta / (q - 1.0),
            };
        }
    }
    let labels = z.labels();
    for u in 0..x.n() {
        for v in u + 1..x.n() {
            let (lu, lv) = (labels[u] as usize, labels[v] as usize);
            let mu = if lu == lv {
                a
            } else if lu / z.g() == lv / z.g() {
                b
            } else {
                c
            };
            prob *= if graph.has_edge(u, v) { mu } else { 1.0 - mu };
        }
    }
    prob
}

/// The candidate-independent part of `-ln P` that the likelihood drops.
pub fn dropped_constant(y: &Observation, params: &ModelParams) -> f64 {
    let observed = y.num_observed() as f64;
    let erased = (y.n() * y.m()) as f64 - observed;
    let mut k = 0.0;
    if observed > 0.0 {
        k -= observed * (params.p.ln() + (1.0 - params.theta).ln());
    }
    if erased > 0.0 {
        k -= erased * (1.0 - params.p).ln();
    }
    k
}

/// Every equal-size labeled partition, in lexicographic order of the label
/// vector, found by counting through all `k^n` label vectors.
pub fn all_partitions(n: usize, c: usize, g: usize) -> Vec<Partition> {
    let k = c * g;
    let mut out = Vec::new();
    let total = (k as u64).pow(n as u32);
    for code in 0..total {
        let mut labels = vec![0u32; n];
        let mut rem = code;
        for u in (0..n).rev() {
            labels[u] = (rem % k as u64) as u32;
            rem /= k as u64;
        }
        if let Ok(z) = Partition::from_labels(c, g, labels) {
            out.push(z);
        }
    }
    out
}

fn count_candidates(params: &ModelParams) -> Result<(Vec<Partition>, Vec<Vec<Symbol>>)> {
    let code = build_code(params.g, params.r, params.q)?;
    let words: Vec<Vec<Symbol>> = all_codewords(&code)?.into_iter().map(|w| w.into_inner()).collect();
    let parts = all_partitions(params.n, params.c, params.g);
    let size = parts.len() as f64 * (words.len() as f64).powi((params.c * params.m) as i32);
    if size > 1e6 {
        return Err(Error::BudgetExceeded { size, budget: 1e6 });
    }
    Ok((parts, words))
}

/// Visits every model-class candidate: partitions in label order, then the
/// codeword of each (cluster, column) slot, slot (0, 0) most significant.
pub fn for_each_candidate(params: &ModelParams, mut f: impl FnMut(&RatingMatrix, &Partition)) -> Result<()> {
    let (parts, words) = count_candidates(params)?;
    let (n, m, c) = (params.n, params.m, params.c);
    let slots = c * m;
    let radix = words.len();
    for z in &parts {
        let mut digits = vec![0usize; slots];
        loop {
            let mut entries = vec![0; n * m];
            for u in 0..n {
                let (x, i) = (z.cluster(u), z.group(u));
                for t in 0..m {
                    entries[u * m + t] = words[digits[x * m + t]][i];
                }
            }
            let x = RatingMatrix::new(n, m, params.q, entries).expect("codeword symbols are in range");
            f(&x, z);
            let mut pos = slots;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                digits[pos] += 1;
                if digits[pos] < radix {
                    break;
                }
                digits[pos] = 0;
            }
            if digits.iter().all(|&d| d == 0) {
                break;
            }
        }
    }
    Ok(())
}

pub fn all_candidates(params: &ModelParams) -> Result<Vec<(RatingMatrix, Partition)>> {
    let mut out = Vec::new();
    for_each_candidate(params, |x, z| out.push((x.clone(), z.clone())))?;
    Ok(out)
}

/// Result of the enumeration oracle.
#[derive(Clone, Debug)]
pub struct OracleMl {
    pub matrix: RatingMatrix,
    pub partition: Partition,
    pub probability: f64,
    /// `-ln P` minus [`dropped_constant`], comparable with the likelihood.
    pub score: f64,
}

/// Most probable candidate; the first in enumeration order wins unless a
/// later one is more probable by a relative margin of `1e-9`.
pub fn ml_oracle(y: &Observation, graph: &Graph, params: &ModelParams) -> Result<OracleMl> {
    let mut best: Option<(f64, RatingMatrix, Partition)> = None;
    for_each_candidate(params, |x, z| {
        let pr = probability(y, graph, x, z, params);
        let better = match &best {
            None => true,
            Some((bp, _, _)) => pr > bp * (1.0 + 1e-9),
        };
        if better {
            best = Some((pr, x.clone(), z.clone()));
        }
    })?;
    let (pr, matrix, partition) = best.expect("at least one candidate");
    Ok(OracleMl {
        score: -pr.ln() - dropped_constant(y, params),
        matrix,
        partition,
        probability: pr,
    })
}

/// Three branches of the sample-complexity threshold and the channel
/// prefactor, written out term by term.
pub fn threshold_branches(
    n: f64,
    m: f64,
    c: f64,
    g: f64,
    r: f64,
    q: f64,
    theta: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    tau1: f64,
    tau2: f64,
) -> ([f64; 3], f64) {
    let sq = |v: f64| v * v;
    let ig = sq(alpha.sqrt() - beta.sqrt());
    let ic1 = sq(alpha.sqrt() - gamma.sqrt());
    let ic2 = sq(beta.sqrt() - gamma.sqrt());
    let a = g * c / (g - r + 1.0) * m.ln() / n;
    let b = (n.ln() / (tau1 * m) * (1.0 - ig / (g * c))).max(0.0);
    let cc = (n.ln() / (tau2 * m) * (1.0 - (ic1 + (g - 1.0) * ic2) / (g * c))).max(0.0);
    let pref = 1.0 / sq((1.0 - theta).sqrt() - (theta / (q - 1.0)).sqrt());
    ([a, b, cc], pref)
}

/// Outcome of one self-test check.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Production routines against the references above: exact ML against
/// enumeration, the likelihood against `-ln P` up to a constant, and `p*`
/// against the term-by-term branches. `seeds` instances per configuration.
pub fn selftest(seeds: u64) -> Result<Vec<SelfCheck>> {
    use crate::estimators::{exact_ml, ExactConfig};
    use crate::likelihood::neg_log_likelihood;
    use crate::model::{generate_instance, DeltaPair, GroundTruthMode};
    use crate::threshold::p_star;

    let small = |n, m, c, g, r, q| ModelParams {
        n,
        m,
        c,
        g,
        r,
        q,
        theta: 0.2,
        p: 0.6,
        alpha: 2.5,
        beta: 1.0,
        gamma: 0.3,
    };
    let configs = [
        small(6, 3, 2, 1, 1, 2),
        small(6, 2, 1, 3, 2, 2),
        small(6, 2, 2, 3, 2, 2),
        small(4, 2, 2, 2, 1, 3),
    ];
    let mode = GroundTruthMode::Random;
    let mut checks = Vec::new();

    let (mut total, mut agree) = (0, 0);
    for p in &configs {
        for seed in 0..seeds {
            let inst = generate_instance(p, &mode, seed)?;
            let est = exact_ml(&inst.observation, &inst.graph, p, &ExactConfig::default())?;
            let want = ml_oracle(&inst.observation, &inst.graph, p)?;
            total += 1;
            let close = (est.score.value() - want.score).abs() <= 1e-9 * want.score.abs().max(1.0);
            if est.matrix == want.matrix && close {
                agree += 1;
            }
        }
    }
    checks.push(SelfCheck {
        name: "exact_ml",
        passed: agree == total,
        detail: format!("{agree}/{total} instances match enumeration"),
    });

    let mut worst = 0.0f64;
    for p in &configs[..2] {
        for seed in 0..seeds {
            let inst = generate_instance(p, &mode, seed)?;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (x, z) in all_candidates(p)? {
                let pr = probability(&inst.observation, &inst.graph, &x, &z, p);
                if pr <= 0.0 {
                    continue;
                }
                let d = neg_log_likelihood(&inst.observation, &inst.graph, &x, &z, p)?.value() + pr.ln();
                lo = lo.min(d);
                hi = hi.max(d);
            }
            worst = worst.max((hi - lo) / lo.abs().max(hi.abs()).max(1.0));
        }
    }
    checks.push(SelfCheck {
        name: "likelihood",
        passed: worst <= 1e-9,
        detail: format!("worst relative spread of L + ln P {worst:.2e}"),
    });

    let mut worst = 0.0f64;
    for (k, &(alpha, beta, gamma, tau1, tau2)) in [
        (40.0, 10.0, 0.5, 0.5, 0.5),
        (17.0, 10.0, 0.5, 1.0 / 3.0, 1.0 / 6.0),
        (5.0, 4.0, 3.0, 0.2, 0.1),
        (60.0, 2.0, 1.0, 0.4, 0.3),
    ]
    .iter()
    .enumerate()
    {
        let params = ModelParams {
            n: 500 + 700 * k,
            m: 200 + 150 * k,
            c: 2,
            g: 3,
            r: 2,
            q: 2,
            theta: 0.05 * k as f64,
            p: 0.5,
            alpha,
            beta,
            gamma,
        };
        let delta = DeltaPair {
            tau1: Some(tau1),
            tau2: Some(tau2),
        };
        let got = p_star(&params, &delta)?;
        let (want, pref) = threshold_branches(
            params.n as f64,
            params.m as f64,
            2.0,
            3.0,
            2.0,
            2.0,
            params.theta,
            alpha,
            beta,
            gamma,
            tau1,
            tau2,
        );
        let want_p = want.iter().cloned().fold(0.0, f64::max) * pref;
        worst = worst.max((got.p_star - want_p).abs() / want_p.abs().max(1e-300));
    }
    checks.push(SelfCheck {
        name: "threshold",
        passed: worst <= 1e-12,
        detail: format!("worst relative error of p* {worst:.2e}"),
    });
    Ok(checks)
}
