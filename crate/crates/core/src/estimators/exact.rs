use serde::{Deserialize, Serialize};

use super::{per_column_ml, Diagnostics, Estimate};
use crate::error::{Error, Result};
use crate::likelihood::{graph_term, neg_log_likelihood, rating_mismatch, rating_term, Score};
use crate::mds::build_code;
use crate::model::{Graph, ModelParams, Observation, Partition};

/// Relative margin a later candidate must beat the incumbent by.
const TIE_TOLERANCE: f64 = 1e-9;

/// Search budget for [`exact_ml`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExactConfig {
    pub max_n: usize,
    pub max_cells: usize,
    pub max_partitions: f64,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self {
            max_n: 12,
            max_cells: 6,
            max_partitions: 1e7,
        }
    }
}

/// Number of labeled equal-size partitions, `n! / (s!)^k`.
pub fn partition_count(n: usize, cells: usize) -> f64 {
    let s = n / cells;
    let ln_fact = |k: usize| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    (ln_fact(n) - cells as f64 * ln_fact(s)).exp().round()
}

/// Global minimizer of the likelihood over every equal-size labeled
/// partition and every codeword assignment.
///
/// Partitions are visited in lexicographic order of their label vectors and
/// a later one replaces the incumbent only when it is better by a relative
/// margin of `1e-9`; within a partition the per-column codeword tie-break is
/// lexicographic.
pub fn exact_ml(y: &Observation, graph: &Graph, params: &ModelParams, config: &ExactConfig) -> Result<Estimate> {
    params.validate()?;
    let (n, k) = (params.n, params.cells());
    let size = partition_count(n, k);
    if n > config.max_n || k > config.max_cells || size > config.max_partitions {
        return Err(Error::BudgetExceeded {
            size,
            budget: config.max_partitions,
        });
    }
    let code = build_code(params.g, params.r, params.q)?;
    let s = params.group_size();

    let mut best: Option<(Score, Partition)> = None;
    let mut labels = vec![0u32; n];
    let mut fill = vec![0usize; k];
    let mut visited = 0usize;
    let mut stack_err = None;
    visit(&mut labels, &mut fill, 0, s, &mut |labels| {
        visited += 1;
        let z = Partition::from_labels(params.c, params.g, labels.to_vec()).expect("balanced by construction");
        let scored = per_column_ml(&code, y, &z, params).and_then(|(x, _)| {
            let lambda = rating_mismatch(y, &x)?;
            Ok(rating_term(params.theta, params.q, lambda) + graph_term(graph, &z, params)?)
        });
        match scored {
            Ok(score) => {
                if best.as_ref().is_none_or(|(b, _)| score.better_than(*b, TIE_TOLERANCE)) {
                    best = Some((score, z));
                }
            }
            Err(e) => {
                stack_err.get_or_insert(e);
            }
        }
    });
    if let Some(e) = stack_err {
        return Err(e);
    }
    let (_, partition) = best.ok_or_else(|| Error::InvalidParams("no candidate partition".into()))?;
    let (matrix, vectors) = per_column_ml(&code, y, &partition, params)?;
    let score = neg_log_likelihood(y, graph, &matrix, &partition, params)?;
    let mut diagnostics = Diagnostics {
        converged: true,
        tie_dominated: y.num_observed() == 0 && graph.num_edges() == 0,
        ..Default::default()
    };
    diagnostics.push(
        "exhaustive",
        Some(score),
        Some(&partition),
        format!("{visited} partitions"),
    );
    Ok(Estimate {
        matrix,
        partition,
        vectors,
        score,
        diagnostics,
    })
}

/// Depth-first enumeration of balanced label vectors in lexicographic order.
fn visit(labels: &mut [u32], fill: &mut [usize], at: usize, cap: usize, f: &mut impl FnMut(&[u32])) {
    if at == labels.len() {
        f(labels);
        return;
    }
    for cell in 0..fill.len() {
        if fill[cell] < cap {
            fill[cell] += 1;
            labels[at] = cell as u32;
            visit(labels, fill, at + 1, cap, f);
            fill[cell] -= 1;
        }
    }
}
