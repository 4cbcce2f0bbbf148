//! Spectral embedding, k-means and exact-size assignment.

use rand::Rng;

use crate::model::Graph;

/// Leading `dim` eigenvectors (as an `n x dim` row-major matrix) of the
/// regularized normalized adjacency `(D + tau I)^-1/2 A (D + tau I)^-1/2`,
/// with `tau` the mean degree, found by subspace iteration on the operator
/// shifted by the identity so that the leading eigenvalues are also the
/// largest in magnitude.
pub fn spectral_embedding<R: Rng + ?Sized>(graph: &Graph, dim: usize, iters: usize, rng: &mut R) -> Vec<f64> {
    let n = graph.n();
    let dim = dim.min(n).max(1);
    let mean_deg = if n > 0 {
        2.0 * graph.num_edges() as f64 / n as f64
    } else {
        0.0
    };
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|u| {
            let d = graph.degree(u) as f64 + mean_deg;
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut x: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>() - 0.5).collect();
    orthonormalize(&mut x, n, dim);
    let mut y = vec![0.0; n * dim];
    for _ in 0..iters {
        for u in 0..n {
            let row = &mut y[u * dim..(u + 1) * dim];
            row.copy_from_slice(&x[u * dim..(u + 1) * dim]);
            let su = inv_sqrt[u];
            for &v in graph.neighbors(u) {
                let w = su * inv_sqrt[v as usize];
                let src = &x[v as usize * dim..(v as usize + 1) * dim];
                for (a, &b) in row.iter_mut().zip(src) {
                    *a += w * b;
                }
            }
        }
        std::mem::swap(&mut x, &mut y);
        orthonormalize(&mut x, n, dim);
    }
    x
}

/// Modified Gram-Schmidt on the columns of an `n x dim` row-major matrix.
fn orthonormalize(x: &mut [f64], n: usize, dim: usize) {
    for j in 0..dim {
        for k in 0..j {
            let dot: f64 = (0..n).map(|u| x[u * dim + j] * x[u * dim + k]).sum();
            for u in 0..n {
                x[u * dim + j] -= dot * x[u * dim + k];
            }
        }
        let norm: f64 = (0..n).map(|u| x[u * dim + j] * x[u * dim + j]).sum::<f64>().sqrt();
        if norm > 1e-300 {
            for u in 0..n {
                x[u * dim + j] /= norm;
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; the lowest-inertia run of
/// `restarts` wins. Returns labels in `0..k`.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[f64],
    dim: usize,
    k: usize,
    restarts: usize,
    iters: usize,
    rng: &mut R,
) -> Vec<u32> {
    let n = points.len() / dim;
    let pt = |u: usize| &points[u * dim..(u + 1) * dim];
    let mut best: Option<(f64, Vec<u32>)> = None;
    for _ in 0..restarts.max(1) {
        // k-means++ seeding.
        let mut centers = Vec::with_capacity(k * dim);
        centers.extend_from_slice(pt(rng.random_range(0..n)));
        let mut d2: Vec<f64> = (0..n).map(|u| sq_dist(pt(u), &centers[0..dim])).collect();
        while centers.len() < k * dim {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut chosen = n - 1;
                for (u, &w) in d2.iter().enumerate() {
                    if target < w {
                        chosen = u;
                        break;
                    }
                    target -= w;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            let start = centers.len();
            centers.extend_from_slice(pt(pick));
            for u in 0..n {
                d2[u] = d2[u].min(sq_dist(pt(u), &centers[start..start + dim]));
            }
        }

        let mut labels = vec![0u32; n];
        for it in 0..iters.max(1) {
            let mut changed = false;
            for u in 0..n {
                let mut bl = 0;
                let mut bd = f64::INFINITY;
                for c in 0..k {
                    let d = sq_dist(pt(u), &centers[c * dim..(c + 1) * dim]);
                    if d < bd {
                        bd = d;
                        bl = c as u32;
                    }
                }
                if labels[u] != bl || it == 0 {
                    changed |= labels[u] != bl;
                    labels[u] = bl;
                }
            }
            if it > 0 && !changed {
                break;
            }
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for u in 0..n {
                let c = labels[u] as usize;
                counts[c] += 1;
                for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(pt(u)) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for j in 0..dim {
                        centers[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                    }
                } else {
                    let u = rng.random_range(0..n);
                    centers[c * dim..(c + 1) * dim].copy_from_slice(pt(u));
                }
            }
        }
        let inertia: f64 = (0..n)
            .map(|u| {
                sq_dist(
                    pt(u),
                    &centers[labels[u] as usize * dim..(labels[u] as usize + 1) * dim],
                )
            })
            .sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

/// Assigns every user to one of `k` slots of capacity `cap` (so `n = k *
/// cap`) given an `n x k` row-major cost matrix. Users are placed in order of
/// decreasing margin between their best and second-best cost, each taking
/// its cheapest slot with room left; ties go to the lower user index and the
/// lower slot.
pub fn rebalance(costs: &[f64], k: usize, cap: usize) -> Vec<u32> {
    let n = costs.len() / k;
    let row = |u: usize| &costs[u * k..(u + 1) * k];
    let margin = |u: usize| {
        let r = row(u);
        let (mut b1, mut b2) = (f64::INFINITY, f64::INFINITY);
        for &v in r {
            if v < b1 {
                b2 = b1;
                b1 = v;
            } else if v < b2 {
                b2 = v;
            }
        }
        if b2.is_finite() {
            b2 - b1
        } else {
            f64::INFINITY
        }
    };
    let margins: Vec<f64> = (0..n).map(margin).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| margins[b].total_cmp(&margins[a]).then(a.cmp(&b)));
    let mut room = vec![cap; k];
    let mut labels = vec![0u32; n];
    for u in order {
        let r = row(u);
        let mut best = usize::MAX;
        for j in 0..k {
            if room[j] > 0 && (best == usize::MAX || r[j] < r[best]) {
                best = j;
            }
        }
        room[best] -= 1;
        labels[u] = best as u32;
    }
    labels
}
