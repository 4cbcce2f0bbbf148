//! Staged estimator: spectral clustering, rating-aided grouping, per-column
//! decoding and likelihood-guarded local refinement.

use serde::{Deserialize, Serialize};

use super::spectral::{kmeans, rebalance, spectral_embedding};
use super::{decode_cluster, permute, vectors_from_picks, CellCounts, Diagnostics, Estimate};
use crate::error::Result;
use crate::likelihood::{neg_log_likelihood, Score};
use crate::mds::{build_code, MdsCode};
use crate::model::{Graph, ModelParams, Observation, Partition, RatingMatrix, RatingVectorSet, ERASED};
use crate::rng::{stream, tags};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PracticalConfig {
    pub max_iters: usize,
    /// Embedding dimension; defaults to `c * g`.
    pub spectral_dim: Option<usize>,
    pub spectral_iters: usize,
    pub kmeans_restarts: usize,
    pub kmeans_iters: usize,
    pub cluster_rounds: usize,
    pub grouping_rounds: usize,
    /// Largest number of cell-to-position permutations tried per cluster.
    pub permutation_cap: usize,
    pub grouping: bool,
    pub refinement: bool,
}

impl Default for PracticalConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            spectral_dim: None,
            spectral_iters: 60,
            kmeans_restarts: 4,
            kmeans_iters: 50,
            cluster_rounds: 5,
            grouping_rounds: 10,
            permutation_cap: 720,
            grouping: true,
            refinement: true,
        }
    }
}

/// Per-pair costs used for user moves: `-ln mu` per edge and `-ln(1 - mu)`
/// per non-edge, indexed same group / same cluster / different cluster, and
/// the per-mismatch rating cost. Probabilities are clamped away from 0 and 1
/// so every cost is finite.
struct Weights {
    rating: f64,
    edge: [f64; 3],
    non_edge: [f64; 3],
}

impl Weights {
    fn new(params: &ModelParams) -> Self {
        let q = params.q as f64;
        let theta = params.theta.clamp(1e-9, (q - 1.0) / q - 1e-9);
        let e = params.edge_probs();
        let clamp = |mu: f64| mu.clamp(1e-6, 1.0 - 1e-6);
        let mus = [clamp(e.alpha), clamp(e.beta), clamp(e.gamma)];
        Self {
            rating: ((q - 1.0) * (1.0 - theta) / theta).ln().max(1e-9),
            edge: mus.map(|m| -m.ln()),
            non_edge: mus.map(|m| -(1.0 - m).ln()),
        }
    }
}

struct Ctx<'a> {
    y: &'a Observation,
    graph: &'a Graph,
    params: &'a ModelParams,
    code: MdsCode,
    weights: Weights,
    k: usize,
    g: usize,
    s: usize,
}

impl Ctx<'_> {
    #[inline]
    fn rel(&self, a: usize, b: usize) -> usize {
        if a == b {
            0
        } else if a / self.g == b / self.g {
            1
        } else {
            2
        }
    }

    /// Neighbor counts per cell, `n x k`.
    fn neighbor_counts(&self, labels: &[u32]) -> Vec<u32> {
        let n = labels.len();
        let mut out = vec![0u32; n * self.k];
        for u in 0..n {
            for &v in self.graph.neighbors(u) {
                out[u * self.k + labels[v as usize] as usize] += 1;
            }
        }
        out
    }

    /// Cost of moving each user to each cell given everyone else's current
    /// cell and the per-cell rating profiles (`ERASED` entries carry no
    /// evidence). Only cells accepted by `allowed` are scored; the others
    /// get `+inf`.
    fn user_costs(&self, labels: &[u32], profiles: &[u32], allowed: impl Fn(usize, usize) -> bool) -> Vec<f64> {
        let (k, m) = (self.k, self.params.m);
        let n = labels.len();
        let nbr = self.neighbor_counts(labels);
        let w = &self.weights;
        let mut costs = vec![f64::INFINITY; n * k];
        for u in 0..n {
            let own = labels[u] as usize;
            let row = self.y.row(u);
            for j in 0..k {
                if !allowed(u, j) {
                    continue;
                }
                let mut graph_cost = 0.0;
                for l in 0..k {
                    let rel = self.rel(j, l);
                    let size = (self.s - (l == own) as usize) as f64;
                    let e = nbr[u * k + l] as f64;
                    graph_cost += e * (w.edge[rel] - w.non_edge[rel]) + size * w.non_edge[rel];
                }
                let prof = &profiles[j * m..(j + 1) * m];
                let miss = row
                    .iter()
                    .zip(prof)
                    .filter(|&(&a, &b)| a != ERASED && b != ERASED && a != b)
                    .count();
                costs[u * k + j] = graph_cost + w.rating * miss as f64;
            }
        }
        costs
    }

    /// Rebalances within every cluster to `s` users per cell.
    fn rebalance_within(&self, labels: &[u32], costs: &[f64]) -> Vec<u32> {
        let (k, g) = (self.k, self.g);
        let mut out = labels.to_vec();
        for x in 0..k / g {
            let users: Vec<usize> = (0..labels.len()).filter(|&u| labels[u] as usize / g == x).collect();
            let sub: Vec<f64> = users
                .iter()
                .flat_map(|&u| (0..g).map(move |i| costs[u * k + x * g + i]))
                .collect();
            let local = rebalance(&sub, g, self.s);
            for (idx, &u) in users.iter().enumerate() {
                out[u] = (x * g) as u32 + local[idx];
            }
        }
        out
    }

    /// Majority observed symbol per (cell, column); `ERASED` when a column
    /// has no observation in the cell.
    fn majority_profiles(&self, z: &Partition) -> Vec<u32> {
        let counts = CellCounts::new(self.y, z);
        let m = self.params.m;
        let mut out = vec![ERASED; self.k * m];
        for cell in 0..self.k {
            for t in 0..m {
                let sl = counts.slice(cell, t);
                let (mut best, mut bc) = (ERASED, 0);
                for (s, &cnt) in sl.iter().enumerate() {
                    if cnt > bc {
                        bc = cnt;
                        best = s as u32;
                    }
                }
                out[cell * m + t] = best;
            }
        }
        out
    }

    /// Per-column decoding, choosing for each cluster the order of its cells
    /// along the code positions that maximizes agreement.
    fn decode(&self, labels: &[u32], perm_cap: usize) -> Result<(Partition, RatingVectorSet, RatingMatrix, Score)> {
        let (g, k) = (self.g, self.k);
        let z = Partition::from_labels(k / g, g, labels.to_vec())?;
        let table = self.code.codeword_table()?;
        let counts = CellCounts::new(self.y, &z);
        let mut picks = Vec::with_capacity(k / g);
        let mut relabel = vec![0u32; k];
        for x in 0..k / g {
            let mut cells: Vec<usize> = (x * g..(x + 1) * g).collect();
            let mut best: Option<(u64, Vec<usize>, Vec<usize>)> = None;
            let mut tried = 0usize;
            permute(&mut cells, 0, &mut |order| {
                if tried >= perm_cap.max(1) {
                    return;
                }
                tried += 1;
                let (total, p) = decode_cluster(&counts, order, table, g);
                if best.as_ref().is_none_or(|(b, _, _)| total > *b) {
                    best = Some((total, order.to_vec(), p));
                }
            });
            let (_, order, p) = best.expect("at least one ordering");
            for (i, &cell) in order.iter().enumerate() {
                relabel[cell] = (x * g + i) as u32;
            }
            picks.push(p);
        }
        let z = Partition::from_labels(k / g, g, labels.iter().map(|&l| relabel[l as usize]).collect())?;
        let v = vectors_from_picks(&self.code, &picks, self.params.m)?;
        let x = RatingMatrix::from_parts(&v, &z)?;
        let score = neg_log_likelihood(self.y, self.graph, &x, &z, self.params)?;
        Ok((z, v, x, score))
    }
}

/// Assigns `k = c * g` cells to `c` clusters of `g` cells maximizing the
/// summed edge density between cells placed together. Exhaustive when the
/// number of assignments is small, greedy otherwise.
fn merge_cells(edges: &[Vec<f64>], sizes: &[usize], c: usize, g: usize) -> Vec<usize> {
    let k = c * g;
    let dens = |a: usize, b: usize| {
        let pairs = if a == b {
            (sizes[a] * sizes[a].saturating_sub(1) / 2) as f64
        } else {
            (sizes[a] * sizes[b]) as f64
        };
        if pairs > 0.0 {
            edges[a.min(b)][a.max(b)] / pairs
        } else {
            0.0
        }
    };
    if c == 1 {
        return vec![0; k];
    }
    if g == 1 {
        return (0..k).collect();
    }
    let ln_fact = |n: usize| (1..=n).map(|i| (i as f64).ln()).sum::<f64>();
    let count = (ln_fact(k) - c as f64 * ln_fact(g) - ln_fact(c)).exp();
    if count <= 1e5 {
        let mut assign = vec![usize::MAX; k];
        let mut best: (f64, Vec<usize>) = (f64::NEG_INFINITY, vec![]);
        fn rec(
            assign: &mut Vec<usize>,
            fill: &mut Vec<usize>,
            at: usize,
            opened: usize,
            g: usize,
            score: f64,
            dens: &dyn Fn(usize, usize) -> f64,
            best: &mut (f64, Vec<usize>),
        ) {
            let k = assign.len();
            if at == k {
                if score > best.0 {
                    *best = (score, assign.clone());
                }
                return;
            }
            let c = fill.len();
            for x in 0..c.min(opened + 1) {
                if fill[x] == g {
                    continue;
                }
                let add: f64 = (0..at).filter(|&b| assign[b] == x).map(|b| dens(at, b)).sum();
                assign[at] = x;
                fill[x] += 1;
                rec(assign, fill, at + 1, opened.max(x + 1), g, score + add, dens, best);
                fill[x] -= 1;
                assign[at] = usize::MAX;
            }
        }
        let mut fill = vec![0; c];
        rec(&mut assign, &mut fill, 0, 0, g, 0.0, &dens, &mut best);
        return best.1;
    }
    // Greedy: seed each cluster with the densest free pair, then grow.
    let mut assign = vec![usize::MAX; k];
    for x in 0..c {
        let free: Vec<usize> = (0..k).filter(|&a| assign[a] == usize::MAX).collect();
        let mut seed = (f64::NEG_INFINITY, free[0], free[0]);
        for (i, &a) in free.iter().enumerate() {
            for &b in &free[i + 1..] {
                if dens(a, b) > seed.0 {
                    seed = (dens(a, b), a, b);
                }
            }
        }
        assign[seed.1] = x;
        assign[seed.2] = x;
        let mut members = vec![seed.1, seed.2];
        while members.len() < g {
            let cand = (0..k)
                .filter(|&a| assign[a] == usize::MAX)
                .max_by(|&a, &b| {
                    let da: f64 = members.iter().map(|&m| dens(a, m)).sum();
                    let db: f64 = members.iter().map(|&m| dens(b, m)).sum();
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("free cells remain");
            assign[cand] = x;
            members.push(cand);
        }
    }
    assign
}

/// Staged estimator; every stage's partition and score are recorded in the
/// diagnostics, and refinement only accepts strictly better likelihoods.
pub fn practical_estimate(
    y: &Observation,
    graph: &Graph,
    params: &ModelParams,
    config: &PracticalConfig,
    seed: u64,
) -> Result<Estimate> {
    params.validate()?;
    let code = build_code(params.g, params.r, params.q)?;
    let (n, c, g) = (params.n, params.c, params.g);
    let k = c * g;
    let ctx = Ctx {
        y,
        graph,
        params,
        code,
        weights: Weights::new(params),
        k,
        g,
        s: params.group_size(),
    };
    let mut rng = stream(seed, tags::ESTIMATOR);
    let mut diag = Diagnostics {
        tie_dominated: y.num_observed() == 0 && graph.num_edges() == 0,
        ..Default::default()
    };

    // Stage 1: spectral cells, merged into clusters, rebalanced.
    let raw: Vec<u32> = if k == 1 {
        vec![0; n]
    } else {
        let dim = config.spectral_dim.unwrap_or(k).max(1);
        let emb = spectral_embedding(graph, dim, config.spectral_iters, &mut rng);
        kmeans(
            &emb,
            dim.min(n),
            k,
            config.kmeans_restarts,
            config.kmeans_iters,
            &mut rng,
        )
    };
    let mut sizes = vec![0usize; k];
    for &l in &raw {
        sizes[l as usize] += 1;
    }
    let mut cell_edges = vec![vec![0.0; k]; k];
    for &(a, b) in graph.edges() {
        let (la, lb) = (raw[a as usize] as usize, raw[b as usize] as usize);
        cell_edges[la.min(lb)][la.max(lb)] += 1.0;
    }
    let cell_cluster = merge_cells(&cell_edges, &sizes, c, g);
    let mut clusters: Vec<u32> = raw.iter().map(|&l| cell_cluster[l as usize] as u32).collect();
    if c > 1 {
        for _ in 0..config.cluster_rounds {
            let mut costs = vec![0.0; n * c];
            for u in 0..n {
                for &v in graph.neighbors(u) {
                    costs[u * c + clusters[v as usize] as usize] -= 1.0;
                }
            }
            let next = rebalance(&costs, c, n / c);
            if next == clusters {
                break;
            }
            clusters = next;
        }
    }
    // Position of each raw cell inside its cluster.
    let mut slot = vec![0usize; k];
    let mut used = vec![0usize; c];
    for cell in 0..k {
        let x = cell_cluster[cell];
        slot[cell] = used[x].min(g - 1);
        used[x] += 1;
    }
    let mut labels: Vec<u32> = (0..n)
        .map(|u| {
            let x = clusters[u] as usize;
            let i = if cell_cluster[raw[u] as usize] == x {
                slot[raw[u] as usize]
            } else {
                0
            };
            (x * g + i) as u32
        })
        .collect();
    // Exact group sizes inside each cluster from the graph alone.
    let blank = vec![ERASED; k * params.m];
    let costs = ctx.user_costs(&labels, &blank, |u, j| j / g == labels[u] as usize / g);
    labels = ctx.rebalance_within(&labels, &costs);
    let z1 = Partition::from_labels(c, g, labels.clone())?;
    diag.push("clustering", None, Some(&z1), format!("{} edges", graph.num_edges()));

    // Stage 2: groups from graph plus rating profiles, within clusters.
    if config.grouping && g > 1 {
        let mut rounds = 0;
        for _ in 0..config.grouping_rounds {
            rounds += 1;
            let z = Partition::from_labels(c, g, labels.clone())?;
            let profiles = ctx.majority_profiles(&z);
            let costs = ctx.user_costs(&labels, &profiles, |u, j| j / g == labels[u] as usize / g);
            let next = ctx.rebalance_within(&labels, &costs);
            if next == labels {
                break;
            }
            labels = next;
        }
        let z2 = Partition::from_labels(c, g, labels.clone())?;
        diag.push("grouping", None, Some(&z2), format!("{rounds} rounds"));
    }

    // Stage 3: per-column decoding.
    let (mut z, mut v, mut x, mut score) = ctx.decode(&labels, config.permutation_cap)?;
    diag.push("decoding", Some(score), Some(&z), String::new());

    // Stage 4: refinement by single-user moves.
    diag.converged = true;
    if config.refinement {
        diag.converged = false;
        for it in 0..config.max_iters {
            let m = params.m;
            let mut profiles = vec![0; k * m];
            for cell in 0..k {
                profiles[cell * m..(cell + 1) * m].copy_from_slice(v.cell_vector(cell));
            }
            let costs = ctx.user_costs(z.labels(), &profiles, |_, _| true);
            let next = rebalance(&costs, k, ctx.s);
            if next == z.labels() {
                diag.converged = true;
                diag.iterations = it;
                break;
            }
            let (z2, v2, x2, s2) = ctx.decode(&next, config.permutation_cap)?;
            diag.iterations = it + 1;
            if s2 < score {
                z = z2;
                v = v2;
                x = x2;
                score = s2;
            } else {
                diag.converged = true;
                break;
            }
        }
        diag.push(
            "refinement",
            Some(score),
            Some(&z),
            format!("{} iterations", diag.iterations),
        );
    }

    Ok(Estimate {
        matrix: x,
        partition: z,
        vectors: v,
        score,
        diagnostics: diag,
    })
}
