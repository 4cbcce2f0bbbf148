//! Estimators of the rating matrix: exhaustive maximum likelihood for tiny
//! instances and a staged practical procedure for the rest.

mod exact;
mod practical;
pub mod spectral;

use serde::{Deserialize, Serialize};

pub use exact::{exact_ml, partition_count, ExactConfig};
pub use practical::{practical_estimate, PracticalConfig};

use crate::error::{Error, Result};
use crate::likelihood::Score;
use crate::mds::{best_codeword_index, MdsCode};
use crate::model::{ModelParams, Observation, Partition, RatingMatrix, RatingVectorSet, ERASED};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Exact,
    #[default]
    Practical,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Exact => "exact",
            EstimatorKind::Practical => "practical",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub exact: ExactConfig,
    pub practical: PracticalConfig,
}

/// One stage of an estimation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub score: Option<Score>,
    pub partition: Option<Partition>,
    pub note: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub stages: Vec<StageRecord>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the input carries no usable information (no observations
    /// and no edges), so every stage resolves by tie-breaking.
    pub tie_dominated: bool,
}

impl Diagnostics {
    pub(crate) fn push(&mut self, stage: &str, score: Option<Score>, partition: Option<&Partition>, note: String) {
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            score,
            partition: partition.cloned(),
            note,
        });
    }

    /// (stage, cluster accuracy, cell accuracy) for every stage that
    /// recorded a partition.
    pub fn accuracies(&self, truth: &Partition) -> Vec<(String, f64, f64)> {
        self.stages
            .iter()
            .filter_map(|s| {
                s.partition
                    .as_ref()
                    .map(|z| (s.stage.clone(), cluster_accuracy(z, truth), cell_accuracy(z, truth)))
            })
            .collect()
    }
}

/// Output of an estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub matrix: RatingMatrix,
    pub partition: Partition,
    pub vectors: RatingVectorSet,
    pub score: Score,
    pub diagnostics: Diagnostics,
}

/// Exact recovery: the estimated matrix equals the truth entrywise.
pub fn is_success(est: &Estimate, m0: &RatingMatrix) -> Result<bool> {
    if est.matrix.n() != m0.n() || est.matrix.m() != m0.m() {
        return Err(Error::Dimension(format!(
            "estimate is {}x{}, truth {}x{}",
            est.matrix.n(),
            est.matrix.m(),
            m0.n(),
            m0.m()
        )));
    }
    Ok(est.matrix.as_slice() == m0.as_slice())
}

/// Observed symbol counts per (cell, column, symbol).
pub(crate) struct CellCounts {
    m: usize,
    q: usize,
    counts: Vec<u32>,
}

impl CellCounts {
    pub(crate) fn new(y: &Observation, z: &Partition) -> Self {
        let (m, q) = (y.m(), y.q() as usize);
        let mut counts = vec![0u32; z.num_cells() * m * q];
        for u in 0..y.n() {
            let base = z.cell(u) * m;
            for (t, &s) in y.row(u).iter().enumerate() {
                if s != ERASED {
                    counts[(base + t) * q + s as usize] += 1;
                }
            }
        }
        Self { m, q, counts }
    }

    #[inline]
    pub(crate) fn slice(&self, cell: usize, t: usize) -> &[u32] {
        let at = (cell * self.m + t) * self.q;
        &self.counts[at..at + self.q]
    }
}

/// Best codeword per column for a cluster whose code positions are filled by
/// `cells` in order. Returns the total agreement and the chosen codeword
/// indices.
pub(crate) fn decode_cluster(counts: &CellCounts, cells: &[usize], table: &[u32], g: usize) -> (u64, Vec<usize>) {
    let q = counts.q;
    let mut scores = vec![0.0; g * q];
    let mut total = 0u64;
    let mut picks = Vec::with_capacity(counts.m);
    for t in 0..counts.m {
        for (i, &cell) in cells.iter().enumerate() {
            for (s, &cnt) in counts.slice(cell, t).iter().enumerate() {
                scores[i * q + s] = cnt as f64;
            }
        }
        let idx = best_codeword_index(table, g, q, &scores);
        let word = &table[idx * g..(idx + 1) * g];
        total += word
            .iter()
            .enumerate()
            .map(|(i, &w)| counts.slice(cells[i], t)[w as usize] as u64)
            .sum::<u64>();
        picks.push(idx);
    }
    (total, picks)
}

/// Vector set from chosen codeword indices, `picks[x][t]`.
pub(crate) fn vectors_from_picks(code: &MdsCode, picks: &[Vec<usize>], m: usize) -> Result<RatingVectorSet> {
    let (g, r) = (code.length(), code.dimension());
    let table = code.codeword_table()?;
    let c = picks.len();
    let mut bases = vec![0; c * r * m];
    for (x, cols) in picks.iter().enumerate() {
        for (t, &idx) in cols.iter().enumerate() {
            for j in 0..r {
                bases[(x * r + j) * m + t] = table[idx * g + j];
            }
        }
    }
    RatingVectorSet::from_bases(code.clone(), c, m, bases)
}

/// Maximum-likelihood rating vectors for a fixed partition: each (cluster,
/// column) takes the codeword with the most agreeing observations, which
/// minimizes the mismatch count because its weight is positive for every
/// admissible theta. Ties go to the lexicographically smallest codeword.
pub fn per_column_ml(
    code: &MdsCode,
    y: &Observation,
    z: &Partition,
    params: &ModelParams,
) -> Result<(RatingMatrix, RatingVectorSet)> {
    if y.n() != z.n() || y.n() != params.n || y.m() != params.m {
        return Err(Error::Dimension("observation, partition and params disagree".into()));
    }
    if z.g() != code.length() || y.q() != code.modulus() {
        return Err(Error::Dimension("partition or alphabet does not match the code".into()));
    }
    let table = code.codeword_table()?;
    let counts = CellCounts::new(y, z);
    let g = z.g();
    let picks: Vec<Vec<usize>> = (0..z.c())
        .map(|x| {
            let cells: Vec<usize> = (x * g..(x + 1) * g).collect();
            decode_cluster(&counts, &cells, table, g).1
        })
        .collect();
    let v = vectors_from_picks(code, &picks, y.m())?;
    let x = RatingMatrix::from_parts(&v, z)?;
    Ok((x, v))
}

/// Largest overlap between two labelings over bijections of labels, by
/// enumeration for up to 8 labels and greedily beyond.
fn best_overlap(confusion: &[Vec<usize>]) -> usize {
    let k = confusion.len();
    if k <= 8 {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = 0;
        permute(&mut perm, 0, &mut |p| {
            best = best.max((0..k).map(|a| confusion[a][p[a]]).sum());
        });
        best
    } else {
        let mut used_a = vec![false; k];
        let mut used_b = vec![false; k];
        let mut entries: Vec<(usize, usize, usize)> = (0..k)
            .flat_map(|a| (0..k).map(move |b| (a, b)))
            .map(|(a, b)| (confusion[a][b], a, b))
            .collect();
        entries.sort_by(|x, y| y.cmp(x));
        let mut total = 0;
        for (v, a, b) in entries {
            if !used_a[a] && !used_b[b] {
                used_a[a] = true;
                used_b[b] = true;
                total += v;
            }
        }
        total
    }
}

/// Calls `f` on every permutation of `items[at..]` (Heap-free recursion,
/// lexicographic when `items` starts sorted).
pub(crate) fn permute(items: &mut Vec<usize>, at: usize, f: &mut impl FnMut(&[usize])) {
    if at + 1 >= items.len() {
        f(items);
        return;
    }
    for i in at..items.len() {
        let v = items.remove(i);
        items.insert(at, v);
        permute(items, at + 1, f);
        let v = items.remove(at);
        items.insert(i, v);
    }
}

/// Fraction of users whose cluster matches the truth up to relabeling.
pub fn cluster_accuracy(est: &Partition, truth: &Partition) -> f64 {
    let c = truth.c();
    let mut conf = vec![vec![0usize; c]; c];
    for u in 0..truth.n() {
        conf[est.cluster(u)][truth.cluster(u)] += 1;
    }
    best_overlap(&conf) as f64 / truth.n() as f64
}

/// Fraction of users whose cell matches the truth up to relabeling.
pub fn cell_accuracy(est: &Partition, truth: &Partition) -> f64 {
    let k = truth.num_cells();
    let mut conf = vec![vec![0usize; k]; k];
    for u in 0..truth.n() {
        conf[est.cell(u)][truth.cell(u)] += 1;
    }
    best_overlap(&conf) as f64 / truth.n() as f64
}

/// Runs the configured estimator.
pub fn estimate(
    y: &Observation,
    graph: &crate::model::Graph,
    params: &ModelParams,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<Estimate> {
    match config.kind {
        EstimatorKind::Exact => exact_ml(y, graph, params, &config.exact),
        EstimatorKind::Practical => practical_estimate(y, graph, params, &config.practical, seed),
    }
}
