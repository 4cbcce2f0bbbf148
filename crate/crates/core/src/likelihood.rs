//! Negative log-likelihood of a candidate `(X, Z)` given `(Y, G)`, up to an
//! additive constant that does not depend on the candidate:
//!
//! ```text
//! L = ln((q-1)(1-theta)/theta) * Lambda
//!   + sum over mu in {alpha_e, beta_e, gamma_e} of
//!       ln((1-mu)/mu) * e_mu - ln(1-mu) * |P_mu|
//! ```
//!
//! The dropped constant is `-|Omega| ln p - (nm - |Omega|) ln(1-p) - |Omega| ln(1-theta)`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mds::MdsCode;
use crate::model::{Graph, ModelParams, Observation, PairClass, Partition, RatingMatrix, RatingVectorSet, ERASED};

/// Extended real score; `Infinite` marks a candidate that cannot have
/// produced the observation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum Score {
    Finite(f64),
    Infinite,
}

impl Score {
    pub fn value(self) -> f64 {
        match self {
            Score::Finite(v) => v,
            Score::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Score::Finite(_))
    }

    /// `self` is smaller than `other` by more than `rel` (relative to the
    /// larger magnitude).
    pub fn better_than(self, other: Score, rel: f64) -> bool {
        match (self, other) {
            (Score::Finite(a), Score::Finite(b)) => a < b - rel * a.abs().max(b.abs()).max(1.0),
            (Score::Finite(_), Score::Infinite) => true,
            _ => false,
        }
    }
}

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Score::Finite(a), Score::Finite(b)) => a.total_cmp(b),
            (Score::Finite(_), Score::Infinite) => Ordering::Less,
            (Score::Infinite, Score::Finite(_)) => Ordering::Greater,
            (Score::Infinite, Score::Infinite) => Ordering::Equal,
        }
    }
}

impl std::ops::Add for Score {
    type Output = Score;
    fn add(self, rhs: Score) -> Score {
        match (self, rhs) {
            (Score::Finite(a), Score::Finite(b)) => Score::Finite(a + b),
            _ => Score::Infinite,
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Finite(v) => write!(f, "{v}"),
            Score::Infinite => write!(f, "inf"),
        }
    }
}

/// Edge counts and pair-set sizes by pair class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairClassCounts {
    pub e_alpha: u64,
    pub e_beta: u64,
    pub e_gamma: u64,
    pub p_alpha: u64,
    pub p_beta: u64,
    pub p_gamma: u64,
}

fn choose2(k: u64) -> u64 {
    k * k.saturating_sub(1) / 2
}

/// Number of same-group, same-cluster and cross-cluster user pairs.
pub fn pair_set_sizes(n: usize, c: usize, g: usize) -> Result<(u64, u64, u64)> {
    if c == 0 || g == 0 || n % (c * g) != 0 {
        return Err(Error::InvalidParams(format!(
            "n = {n} is not divisible by c*g = {}",
            c * g
        )));
    }
    let (n, c, g) = (n as u64, c as u64, g as u64);
    let s = n / (g * c);
    Ok((
        g * c * choose2(s),
        c * choose2(g) * s * s,
        choose2(c) * (n / c) * (n / c),
    ))
}

pub fn edge_counts(graph: &Graph, z: &Partition) -> Result<PairClassCounts> {
    if graph.n() != z.n() {
        return Err(Error::Dimension(format!(
            "graph has {} vertices, partition {} users",
            graph.n(),
            z.n()
        )));
    }
    let (p_alpha, p_beta, p_gamma) = pair_set_sizes(z.n(), z.c(), z.g())?;
    let mut out = PairClassCounts {
        p_alpha,
        p_beta,
        p_gamma,
        ..Default::default()
    };
    for &(a, b) in graph.edges() {
        match z.class(a as usize, b as usize) {
            PairClass::SameGroup => out.e_alpha += 1,
            PairClass::SameCluster => out.e_beta += 1,
            PairClass::Different => out.e_gamma += 1,
        }
    }
    Ok(out)
}

/// Observed cells where `y` disagrees with `x`.
pub fn rating_mismatch(y: &Observation, x: &RatingMatrix) -> Result<usize> {
    if y.n() != x.n() || y.m() != x.m() {
        return Err(Error::Dimension(format!(
            "observation is {}x{}, matrix {}x{}",
            y.n(),
            y.m(),
            x.n(),
            x.m()
        )));
    }
    Ok(y.as_slice()
        .iter()
        .zip(x.as_slice())
        .filter(|&(&o, &t)| o != ERASED && o != t)
        .count())
}

/// `-e ln(mu) - (P - e) ln(1 - mu)`, i.e. `ln((1-mu)/mu) e - ln(1-mu) P`,
/// with `0 * ln 0 = 0`.
pub fn class_term(mu: f64, edges: u64, pairs: u64) -> Score {
    let non = pairs - edges;
    if mu <= 0.0 {
        if edges > 0 {
            Score::Infinite
        } else {
            Score::Finite(0.0)
        }
    } else if mu >= 1.0 {
        if non > 0 {
            Score::Infinite
        } else {
            Score::Finite(0.0)
        }
    } else {
        Score::Finite(((1.0 - mu) / mu).ln() * edges as f64 - (1.0 - mu).ln() * pairs as f64)
    }
}

/// `ln((q-1)(1-theta)/theta) * Lambda`.
pub fn rating_term(theta: f64, q: u32, mismatches: usize) -> Score {
    if mismatches == 0 {
        Score::Finite(0.0)
    } else if theta <= 0.0 {
        Score::Infinite
    } else {
        Score::Finite(((q - 1) as f64 * (1.0 - theta) / theta).ln() * mismatches as f64)
    }
}

/// Graph part of the likelihood for the partition `z`.
pub fn graph_term(graph: &Graph, z: &Partition, params: &ModelParams) -> Result<Score> {
    let counts = edge_counts(graph, z)?;
    let e = params.edge_probs();
    Ok(class_term(e.alpha, counts.e_alpha, counts.p_alpha)
        + class_term(e.beta, counts.e_beta, counts.p_beta)
        + class_term(e.gamma, counts.e_gamma, counts.p_gamma))
}

pub fn neg_log_likelihood(
    y: &Observation,
    graph: &Graph,
    x: &RatingMatrix,
    z: &Partition,
    params: &ModelParams,
) -> Result<Score> {
    if x.n() != z.n() {
        return Err(Error::Dimension(format!(
            "matrix has {} rows, partition {} users",
            x.n(),
            z.n()
        )));
    }
    let lambda = rating_mismatch(y, x)?;
    Ok(rating_term(params.theta, y.q(), lambda) + graph_term(graph, z, params)?)
}

/// The vector set realized by `(x, z)` if `x` lies in the model class: rows
/// constant on each cell and every cluster column a codeword.
pub fn model_vectors(x: &RatingMatrix, z: &Partition, code: &MdsCode) -> Option<RatingVectorSet> {
    let (c, g, r, m) = (z.c(), z.g(), code.dimension(), x.m());
    if g != code.length() || x.n() != z.n() || x.q() != code.modulus() {
        return None;
    }
    let members = z.members();
    let rows: Vec<&[u32]> = members.iter().map(|cell| x.row(cell[0])).collect();
    for (cell, us) in members.iter().enumerate() {
        if us.iter().any(|&u| x.row(u) != rows[cell]) {
            return None;
        }
    }
    let mut bases = Vec::with_capacity(c * r * m);
    for xc in 0..c {
        for j in 0..r {
            bases.extend_from_slice(rows[xc * g + j]);
        }
    }
    let v = RatingVectorSet::from_bases(code.clone(), c, m, bases).ok()?;
    (0..c * g).all(|k| v.cell_vector(k) == rows[k]).then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_ground_truth, generate_instance, GroundTruthMode};
    use crate::oracle;
    use proptest::prelude::*;

    fn params(n: usize, m: usize, c: usize, g: usize, r: usize, q: u32) -> ModelParams {
        ModelParams {
            n,
            m,
            c,
            g,
            r,
            q,
            theta: 0.2,
            p: 0.6,
            alpha: 2.0,
            beta: 1.2,
            gamma: 0.5,
        }
    }

    #[test]
    fn pair_sizes_match_enumeration() {
        for &(n, c, g) in &[(12usize, 2usize, 3usize), (6, 1, 1), (400, 10, 5), (20, 2, 2)] {
            let z = Partition::contiguous(n, c, g).unwrap();
            let mut counts = [0u64; 3];
            for u in 0..n {
                for v in u + 1..n {
                    counts[match z.class(u, v) {
                        PairClass::SameGroup => 0,
                        PairClass::SameCluster => 1,
                        PairClass::Different => 2,
                    }] += 1;
                }
            }
            let (a, b, gm) = pair_set_sizes(n, c, g).unwrap();
            assert_eq!([a, b, gm], counts);
            assert_eq!(a + b + gm, (n * (n - 1) / 2) as u64);
        }
        assert_eq!(pair_set_sizes(12, 2, 3).unwrap(), (6, 24, 36));
        assert_eq!(pair_set_sizes(9, 1, 1).unwrap(), (36, 0, 0));
        assert_eq!(
            pair_set_sizes(4000, 10, 5).unwrap(),
            (50 * 80 * 79 / 2, 10 * 10 * 80 * 80, 45 * 400 * 400)
        );
        assert!(pair_set_sizes(13, 2, 3).is_err());
    }

    #[test]
    fn edge_counts_extremes_and_oracle() {
        let z = Partition::contiguous(12, 2, 3).unwrap();
        let empty = edge_counts(&Graph::empty(12), &z).unwrap();
        assert_eq!((empty.e_alpha, empty.e_beta, empty.e_gamma), (0, 0, 0));
        let full = edge_counts(&Graph::complete(12), &z).unwrap();
        assert_eq!((full.e_alpha, full.e_beta, full.e_gamma), (6, 24, 36));
        assert!(edge_counts(&Graph::empty(6), &z).is_err());

        let mut p = params(60, 4, 2, 3, 2, 2);
        p.alpha = 10.0;
        p.beta = 4.0;
        p.gamma = 1.0;
        for seed in 0..10 {
            let inst = generate_instance(&p, &GroundTruthMode::Random, seed).unwrap();
            let z = &inst.truth.partition;
            let got = edge_counts(&inst.graph, z).unwrap();
            let want = oracle::classify_edges(inst.graph.edges(), z.labels(), z.g());
            assert_eq!((got.e_alpha, got.e_beta, got.e_gamma), want);
            assert_eq!(got.e_alpha + got.e_beta + got.e_gamma, inst.graph.num_edges() as u64);
        }
    }

    #[test]
    fn mismatch_counts() {
        let p = params(12, 5, 2, 3, 2, 3);
        let gt = build_ground_truth(&p, &GroundTruthMode::Random, 1).unwrap();
        let full = Observation::full(&gt.matrix);
        assert_eq!(rating_mismatch(&full, &gt.matrix).unwrap(), 0);
        let erased = Observation::erased(12, 5, 3);
        let other = build_ground_truth(&p, &GroundTruthMode::Random, 2).unwrap();
        assert_eq!(rating_mismatch(&erased, &other.matrix).unwrap(), 0);
        for seed in 0..10 {
            let inst = generate_instance(&p, &GroundTruthMode::Random, seed).unwrap();
            let want = oracle::count_mismatches(inst.observation.as_slice(), other.matrix.as_slice());
            assert_eq!(rating_mismatch(&inst.observation, &other.matrix).unwrap(), want);
        }
    }

    #[test]
    fn empty_graph_no_mismatch_value() {
        let p = params(12, 3, 2, 3, 2, 2);
        let gt = build_ground_truth(&p, &GroundTruthMode::Random, 0).unwrap();
        let y = Observation::full(&gt.matrix);
        let l = neg_log_likelihood(&y, &Graph::empty(12), &gt.matrix, &gt.partition, &p).unwrap();
        let e = p.edge_probs();
        let want = -(6.0 * (1.0 - e.alpha).ln() + 24.0 * (1.0 - e.beta).ln() + 36.0 * (1.0 - e.gamma).ln());
        assert!((l.value() - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn one_corrected_mismatch_costs_rating_weight() {
        let mut p = params(12, 3, 2, 3, 2, 5);
        p.p = 1.0;
        let gt = build_ground_truth(&p, &GroundTruthMode::Random, 0).unwrap();
        let mut entries = gt.matrix.as_slice().to_vec();
        entries[4] = (entries[4] + 1) % 5;
        let y = Observation::new(12, 3, 5, entries).unwrap();
        let g = Graph::empty(12);
        let l_true = neg_log_likelihood(&y, &g, &gt.matrix, &gt.partition, &p).unwrap();
        let mut fixed = gt.matrix.clone();
        fixed.set(1, 1, y.get(1, 1).unwrap());
        let l_fixed = neg_log_likelihood(&y, &g, &fixed, &gt.partition, &p).unwrap();
        let w = (4.0 * 0.8 / 0.2f64).ln();
        assert!((l_true.value() - l_fixed.value() - w).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sentinels() {
        assert_eq!(rating_term(0.0, 2, 1), Score::Infinite);
        assert_eq!(rating_term(0.0, 2, 0), Score::Finite(0.0));
        assert_eq!(class_term(0.0, 1, 5), Score::Infinite);
        assert_eq!(class_term(0.0, 0, 5), Score::Finite(0.0));
        assert_eq!(class_term(1.0, 5, 5), Score::Finite(0.0));
        assert_eq!(class_term(1.0, 4, 5), Score::Infinite);
        assert!(Score::Finite(1e300) < Score::Infinite);
        assert!(Score::Finite(1.0).better_than(Score::Infinite, 1e-9));
        assert!(!Score::Finite(1.0).better_than(Score::Finite(1.0 + 1e-12), 1e-9));
    }

    #[test]
    fn matches_brute_force_up_to_constant() {
        let p = params(4, 2, 2, 1, 1, 2);
        for seed in 0..20 {
            let inst = generate_instance(&p, &GroundTruthMode::Random, seed).unwrap();
            let y = &inst.observation;
            let gr = &inst.graph;
            let cands = oracle::all_candidates(&p).unwrap();
            let (x0, z0) = &cands[0];
            let l0 = neg_log_likelihood(y, gr, x0, z0, &p).unwrap().value();
            let b0 = -oracle::probability(y, gr, x0, z0, &p).ln();
            for (x, z) in &cands[1..] {
                let l = neg_log_likelihood(y, gr, x, z, &p).unwrap().value();
                let b = -oracle::probability(y, gr, x, z, &p).ln();
                let diff = (l - l0) - (b - b0);
                assert!(diff.abs() <= 1e-9 * (l - l0).abs().max(1.0), "seed {seed}: {diff}");
            }
        }
    }

    #[test]
    fn model_membership() {
        let p = params(12, 4, 2, 3, 2, 2);
        let gt = build_ground_truth(&p, &GroundTruthMode::Random, 3).unwrap();
        let code = gt.vectors.code().clone();
        assert_eq!(
            model_vectors(&gt.matrix, &gt.partition, &code),
            Some(gt.vectors.clone())
        );
        let mut broken = gt.matrix.clone();
        broken.set(0, 0, 1 - broken.get(0, 0));
        assert!(model_vectors(&broken, &gt.partition, &code).is_none());
    }

    proptest! {
        #[test]
        fn relabeling_leaves_likelihood_unchanged(seed in 0u64..300, xperm in 0usize..2, gperm in 0usize..6) {
            let p = params(12, 4, 2, 3, 2, 2);
            let inst = generate_instance(&p, &GroundTruthMode::Random, seed).unwrap();
            let z = &inst.truth.partition;
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let labels = z
                .labels()
                .iter()
                .map(|&l| {
                    let (x, i) = (l as usize / 3, l as usize % 3);
                    let x2 = if xperm == 1 { 1 - x } else { x };
                    (x2 * 3 + perms[gperm][i]) as u32
                })
                .collect();
            let z2 = Partition::from_labels(2, 3, labels).unwrap();
            let a = neg_log_likelihood(&inst.observation, &inst.graph, &inst.truth.matrix, z, &p).unwrap();
            let b = neg_log_likelihood(&inst.observation, &inst.graph, &inst.truth.matrix, &z2, &p).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
