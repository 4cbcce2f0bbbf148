//! Failure constructions from the converse argument: single-column codeword
//! replacements, user swaps between closest groups, and edge-free subsets.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffield::{hamming, Symbol};
use crate::likelihood::neg_log_likelihood;
use crate::model::{closest_pairs, Graph, ModelParams, Observation, Partition, RatingMatrix, RatingVectorSet};
use crate::rng::{stream, tags};

/// `base` with the cluster-0 codeword of one column replaced by `codeword`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnCandidate<'a> {
    pub base: &'a RatingMatrix,
    pub column: usize,
    pub codeword: Vec<Symbol>,
}

impl ColumnCandidate<'_> {
    pub fn matrix(&self, z0: &Partition) -> RatingMatrix {
        let mut x = self.base.clone();
        for u in 0..x.n() {
            if z0.cluster(u) == 0 {
                x.set(u, self.column, self.codeword[z0.group(u)]);
            }
        }
        x
    }
}

/// Column indices grouped by the stacked basis column of every cluster.
pub fn sections(vectors: &RatingVectorSet) -> BTreeMap<Vec<Symbol>, Vec<usize>> {
    let (c, m) = (vectors.c(), vectors.m());
    let r = vectors.code().dimension();
    let mut out: BTreeMap<Vec<Symbol>, Vec<usize>> = BTreeMap::new();
    for t in 0..m {
        let key: Vec<Symbol> = (0..c)
            .flat_map(|x| (0..r).map(move |j| vectors.basis(x)[j * m + t]))
            .collect();
        out.entry(key).or_default().push(t);
    }
    out
}

/// Up to `max_count` candidates on the columns of the largest section (the
/// lexicographically first on ties), each using the lexicographically first
/// codeword at distance exactly `g - r + 1` from the true cluster-0 column.
pub fn column_candidates<'a>(
    m0: &'a RatingMatrix,
    vectors: &RatingVectorSet,
    max_count: usize,
) -> Result<Vec<ColumnCandidate<'a>>> {
    let code = vectors.code();
    let g = code.length();
    let d = code.designed_distance();
    let table = code.codeword_table()?;
    let secs = sections(vectors);
    let largest = secs
        .values()
        .fold(None::<&Vec<usize>>, |best, cols| match best {
            Some(b) if b.len() >= cols.len() => Some(b),
            _ => Some(cols),
        })
        .expect("m >= 1");
    let mut out = Vec::new();
    for &t in largest.iter().take(max_count) {
        let truth: Vec<Symbol> = (0..g).map(|i| vectors.vector(0, i)[t]).collect();
        let w = table
            .chunks_exact(g)
            .find(|w| hamming(w, &truth) == d)
            .expect("an MDS code attains its minimum distance from every codeword");
        out.push(ColumnCandidate {
            base: m0,
            column: t,
            codeword: w.to_vec(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapKind {
    IntraCluster,
    InterCluster,
}

/// `base` with rows `a` and `b` exchanged, together with the partition in
/// which the two users trade cells.
#[derive(Clone, Debug, PartialEq)]
pub struct SwapCandidate<'a> {
    pub base: &'a RatingMatrix,
    pub a: usize,
    pub b: usize,
    pub kind: SwapKind,
}

impl SwapCandidate<'_> {
    pub fn matrix(&self) -> RatingMatrix {
        let mut x = self.base.clone();
        x.swap_rows(self.a, self.b);
        x
    }

    pub fn partition(&self, z0: &Partition) -> Partition {
        let mut labels = z0.labels().to_vec();
        labels.swap(self.a, self.b);
        Partition::from_labels(z0.c(), z0.g(), labels).expect("a swap keeps cell sizes")
    }
}

/// Lazily yields swaps of one user from each of the two closest cells of the
/// requested kind, in row-major order over (user of first cell, user of
/// second cell). Nothing is yielded when the two cells share a vector.
pub fn swap_candidates<'a>(
    m0: &'a RatingMatrix,
    z0: &Partition,
    vectors: &RatingVectorSet,
    kind: SwapKind,
) -> Result<impl Iterator<Item = SwapCandidate<'a>> + 'a> {
    let (intra, inter) = closest_pairs(vectors);
    let pair = match kind {
        SwapKind::IntraCluster => {
            intra.ok_or_else(|| Error::InvalidParams("intra-cluster swaps need g >= 2".into()))?
        }
        SwapKind::InterCluster => {
            inter.ok_or_else(|| Error::InvalidParams("inter-cluster swaps need c >= 2".into()))?
        }
    };
    let members = z0.members();
    let left = members[pair.a].clone();
    let right = members[pair.b].clone();
    let live = pair.distance > 0;
    Ok(left
        .into_iter()
        .flat_map(move |a| right.clone().into_iter().map(move |b| (a, b)))
        .filter(move |_| live)
        .map(move |(a, b)| SwapCandidate { base: m0, a, b, kind }))
}

/// Subsets of two disjoint cells with no edge inside their union, by the
/// alteration method: sample `2 * target` users per cell, drop both
/// endpoints of every remaining internal edge, and keep the first `target`
/// survivors of each side in cell order. When the union is already edge-free
/// the first `target` users of each cell are returned without sampling.
pub fn edge_free_subsets(
    graph: &Graph,
    cell_i: &[usize],
    cell_j: &[usize],
    target: usize,
    seed: u64,
) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
    if cell_i.len() < 2 * target || cell_j.len() < 2 * target {
        return Err(Error::InvalidParams(format!(
            "cells of sizes {} and {} cannot supply 2 x {target} users",
            cell_i.len(),
            cell_j.len()
        )));
    }
    let n = graph.n();
    let mut in_union = vec![false; n];
    for &u in cell_i.iter().chain(cell_j) {
        if u >= n {
            return Err(Error::VertexOutOfRange { vertex: u, n });
        }
        if in_union[u] {
            return Err(Error::InvalidParams(format!("user {u} appears twice")));
        }
        in_union[u] = true;
    }
    let internal = |alive: &[bool]| -> Vec<(u32, u32)> {
        graph
            .edges()
            .iter()
            .copied()
            .filter(|&(a, b)| alive[a as usize] && alive[b as usize])
            .collect()
    };
    if internal(&in_union).is_empty() {
        return Ok(Some((cell_i[..target].to_vec(), cell_j[..target].to_vec())));
    }

    let mut rng = stream(seed, tags::ADVERSARIAL);
    let mut alive = vec![false; n];
    for cell in [cell_i, cell_j] {
        for idx in sample(&mut rng, cell.len(), 2 * target) {
            alive[cell[idx]] = true;
        }
    }
    for (a, b) in internal(&alive) {
        if alive[a as usize] && alive[b as usize] {
            alive[a as usize] = false;
            alive[b as usize] = false;
        }
    }
    let keep = |cell: &[usize]| -> Vec<usize> { cell.iter().copied().filter(|&u| alive[u]).take(target).collect() };
    let (si, sj) = (keep(cell_i), keep(cell_j));
    if si.len() < target || sj.len() < target {
        return Ok(None);
    }
    Ok(Some((si, sj)))
}

/// Fraction of candidates `(X, Z)` whose likelihood is at least that of the
/// ground truth, i.e. `L(X, Z) <= L(M0, Z0)`; ties count as failures of the
/// ML estimator. An empty candidate list gives 0.
pub fn converse_check<I>(
    y: &Observation,
    graph: &Graph,
    m0: &RatingMatrix,
    z0: &Partition,
    candidates: I,
    params: &ModelParams,
) -> Result<f64>
where
    I: IntoIterator<Item = (RatingMatrix, Partition)>,
{
    let truth = neg_log_likelihood(y, graph, m0, z0, params)?;
    let (mut total, mut bad) = (0usize, 0usize);
    for (x, z) in candidates {
        total += 1;
        if neg_log_likelihood(y, graph, &x, &z, params)? <= truth {
            bad += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { bad as f64 / total as f64 })
}
