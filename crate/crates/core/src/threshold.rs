//! Optimal observation probability, graph quality metrics and regime maps.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeltaPair, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    /// Information per observed entry, `p (sqrt(1 - theta) - sqrt(theta / (q - 1)))^2`.
    pub i_r: f64,
    pub i_g: f64,
    pub i_c1: f64,
    pub i_c2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Perfect,
    GroupingLimited,
    ClusteringLimited,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Perfect => "perfect",
            Regime::GroupingLimited => "grouping_limited",
            Regime::ClusteringLimited => "clustering_limited",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// `+inf` when a distance is zero or the noise makes observations useless.
    pub p_star: f64,
    /// The three candidates of the max, before the noise prefactor.
    pub branches: [f64; 3],
    /// `1 / (sqrt(1 - theta) - sqrt(theta / (q - 1)))^2`.
    pub prefactor: f64,
    pub regime: Regime,
    /// `p_star <= 1`.
    pub feasible: bool,
    /// Branches whose parenthetical went negative and were clamped to 0.
    pub floored: [bool; 3],
    /// Another branch equals the maximum exactly.
    pub tie: bool,
    pub notes: Vec<String>,
}

fn sq(v: f64) -> f64 {
    v * v
}

fn check_order(alpha: f64, beta: f64, gamma: f64) -> Result<()> {
    if !(alpha >= beta && beta >= gamma && gamma >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "need alpha >= beta >= gamma >= 0, got ({alpha}, {beta}, {gamma})"
        )));
    }
    Ok(())
}

pub fn quality_metrics(params: &ModelParams) -> Result<QualityMetrics> {
    let (a, b, c) = (params.alpha, params.beta, params.gamma);
    check_order(a, b, c)?;
    let q = params.q as f64;
    Ok(QualityMetrics {
        i_r: params.p * sq((1.0 - params.theta).sqrt() - (params.theta / (q - 1.0)).sqrt()),
        i_g: sq(a.sqrt() - b.sqrt()),
        i_c1: sq(a.sqrt() - c.sqrt()),
        i_c2: sq(b.sqrt() - c.sqrt()),
    })
}

/// Sharp threshold on the observation probability. A missing distance
/// (`g = 1` has no intra-cluster pair, `c = 1` no inter-cluster pair) makes the
/// corresponding branch vanish; a zero distance makes it infinite.
pub fn p_star(params: &ModelParams, delta: &DeltaPair) -> Result<ThresholdResult> {
    if params.n < 2 || params.m < 2 {
        return Err(Error::InvalidParams("p* needs n, m >= 2".into()));
    }
    if params.g < params.r || params.r == 0 {
        return Err(Error::InvalidParams(format!(
            "need 1 <= r <= g, got r = {}, g = {}",
            params.r, params.g
        )));
    }
    for tau in [delta.tau1, delta.tau2].into_iter().flatten() {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidDelta(format!("distance {tau} outside [0, 1]")));
        }
    }
    let qm = quality_metrics(params)?;
    let (n, m) = (params.n as f64, params.m as f64);
    let (c, g, r, q) = (params.c as f64, params.g as f64, params.r as f64, params.q as f64);
    let gc = g * c;
    let mut notes = Vec::new();

    let a = gc / (g - r + 1.0) * m.ln() / n;
    let branch = |tau: Option<f64>, paren: f64, what: &str, notes: &mut Vec<String>| -> (f64, bool) {
        match tau {
            None => {
                notes.push(format!("no {what} pair; branch inactive"));
                (0.0, false)
            }
            Some(0.0) => {
                notes.push(format!("{what} distance is zero; branch infinite"));
                (f64::INFINITY, false)
            }
            Some(t) => {
                let v = n.ln() / (t * m) * paren;
                if v < 0.0 {
                    (0.0, true)
                } else {
                    (v, false)
                }
            }
        }
    };
    let (b, fb) = branch(delta.tau1, 1.0 - qm.i_g / gc, "intra-cluster", &mut notes);
    let (cc, fc) = branch(
        delta.tau2,
        1.0 - (qm.i_c1 + (g - 1.0) * qm.i_c2) / gc,
        "inter-cluster",
        &mut notes,
    );
    let branches = [a, b, cc];
    let mut best = 0;
    for i in 1..3 {
        if branches[i] > branches[best] {
            best = i;
        }
    }
    let tie = (0..3).any(|i| i != best && branches[i] == branches[best]);
    let gap = sq((1.0 - params.theta).sqrt() - (params.theta / (q - 1.0)).sqrt());
    let prefactor = if (1.0 - params.theta).sqrt() > (params.theta / (q - 1.0)).sqrt() {
        1.0 / gap
    } else {
        notes.push("observations carry no information at this noise level".into());
        f64::INFINITY
    };
    let p = branches[best] * prefactor;
    let regime = [Regime::Perfect, Regime::GroupingLimited, Regime::ClusteringLimited][best];
    Ok(ThresholdResult {
        p_star: p,
        branches,
        prefactor,
        regime,
        feasible: p <= 1.0,
        floored: [false, fb, fc],
        tie,
        notes,
    })
}

/// Achieving branch of [`p_star`]. When `tau1 <= tau2` the clustering-limited
/// branch cannot be the strict maximum.
pub fn classify_regime(params: &ModelParams, delta: &DeltaPair) -> Result<Regime> {
    let res = p_star(params, delta)?;
    if let (Some(t1), Some(t2)) = (delta.tau1, delta.tau2) {
        if t1 > 0.0 && t1 <= t2 {
            debug_assert!(res.branches[2] <= res.branches[1]);
        }
    }
    Ok(res.regime)
}

/// Edge constants with the given `(i_g, i_c2)` and `gamma`.
pub fn constants_from_metrics(i_g: f64, i_c2: f64, gamma: f64) -> (f64, f64, f64) {
    let beta = sq(i_c2.sqrt() + gamma.sqrt());
    let alpha = sq(i_g.sqrt() + beta.sqrt());
    (alpha, beta, gamma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub i_g: f64,
    pub i_c2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub p_star: f64,
    pub branches: [f64; 3],
    pub regime: Option<Regime>,
    pub feasible: bool,
}

pub const GRID_HEADER: [&str; 11] = [
    "i_g", "i_c2", "alpha", "beta", "gamma", "p_star", "branch_a", "branch_b", "branch_c", "regime", "feasible",
];

fn linspace(range: (f64, f64), k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![range.0];
    }
    (0..k)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (k - 1) as f64)
        .collect()
}

/// Regime map over an `(i_g, i_c2)` grid with `resolution` points per axis,
/// `gamma` held fixed and `(alpha, beta)` solved for. Points whose metrics are
/// negative are kept but flagged infeasible with no regime.
pub fn regime_grid(
    params: &ModelParams,
    delta: &DeltaPair,
    i_g_range: (f64, f64),
    i_c2_range: (f64, f64),
    resolution: usize,
    gamma: f64,
) -> Result<Vec<GridCell>> {
    if resolution == 0 || i_g_range.0 > i_g_range.1 || i_c2_range.0 > i_c2_range.1 {
        return Err(Error::InvalidParams("empty grid range".into()));
    }
    let mut out = Vec::with_capacity(resolution * resolution);
    for &i_c2 in &linspace(i_c2_range, resolution) {
        for &i_g in &linspace(i_g_range, resolution) {
            if i_g < 0.0 || i_c2 < 0.0 || gamma < 0.0 {
                out.push(GridCell {
                    i_g,
                    i_c2,
                    alpha: f64::NAN,
                    beta: f64::NAN,
                    gamma,
                    p_star: f64::NAN,
                    branches: [f64::NAN; 3],
                    regime: None,
                    feasible: false,
                });
                continue;
            }
            let (alpha, beta, gamma) = constants_from_metrics(i_g, i_c2, gamma);
            let p = ModelParams {
                alpha,
                beta,
                gamma,
                ..params.clone()
            };
            let res = p_star(&p, delta)?;
            out.push(GridCell {
                i_g,
                i_c2,
                alpha,
                beta,
                gamma,
                p_star: res.p_star,
                branches: res.branches,
                regime: Some(res.regime),
                feasible: res.feasible,
            });
        }
    }
    Ok(out)
}

pub fn write_grid_csv<W: Write>(cells: &[GridCell], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(GRID_HEADER)?;
    for c in cells {
        wr.write_record([
            c.i_g.to_string(),
            c.i_c2.to_string(),
            c.alpha.to_string(),
            c.beta.to_string(),
            c.gamma.to_string(),
            c.p_star.to_string(),
            c.branches[0].to_string(),
            c.branches[1].to_string(),
            c.branches[2].to_string(),
            c.regime.map(|r| r.as_str()).unwrap_or("infeasible").to_string(),
            c.feasible.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_grid_file(cells: &[GridCell], path: &Path) -> Result<()> {
    write_grid_csv(cells, std::fs::File::create(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselinePoint {
    pub i_g: f64,
    pub alpha: f64,
    /// `n m p*` with the hierarchy and code structure.
    pub hierarchical: f64,
    /// `n m p` for `gc` flat clusters of independent vectors at distance `tau2`.
    pub baseline: f64,
}

/// Sample-complexity curves against `i_g` with `beta`, `gamma` fixed. The
/// baseline treats the instance as `gc` independent clusters: a flat level of
/// `c r log m / n` and a graph-limited branch at distance `tau2` whose graph
/// information is `i_g`.
pub fn baseline_comparison(params: &ModelParams, delta: &DeltaPair, i_g_values: &[f64]) -> Result<Vec<BaselinePoint>> {
    let tau2 = delta
        .tau2
        .ok_or_else(|| Error::InvalidDelta("baseline needs an inter-cluster distance".into()))?;
    let (n, m) = (params.n as f64, params.m as f64);
    let (c, g, r) = (params.c as f64, params.g as f64, params.r as f64);
    let mut out = Vec::with_capacity(i_g_values.len());
    for &i_g in i_g_values {
        let alpha = sq(i_g.sqrt() + params.beta.sqrt());
        let p = ModelParams {
            alpha,
            ..params.clone()
        };
        let res = p_star(&p, delta)?;
        let flat = c * r * m.ln() / n;
        let graph = if tau2 > 0.0 {
            (n.ln() / (tau2 * m) * (1.0 - i_g / (g * c))).max(0.0)
        } else {
            f64::INFINITY
        };
        out.push(BaselinePoint {
            i_g,
            alpha,
            hierarchical: n * m * res.p_star,
            baseline: n * m * flat.max(graph) * res.prefactor,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::threshold_branches;
    use proptest::prelude::*;

    fn sweep_params(alpha: f64) -> ModelParams {
        ModelParams {
            n: 300,
            m: 100,
            c: 2,
            g: 3,
            r: 2,
            q: 2,
            theta: 0.1,
            p: 0.5,
            alpha,
            beta: 10.0,
            gamma: 0.5,
        }
    }

    fn grid_params(alpha: f64, beta: f64, gamma: f64) -> ModelParams {
        ModelParams {
            n: 4000,
            m: 500,
            c: 10,
            g: 5,
            r: 3,
            q: 5,
            theta: 0.0,
            p: 0.1,
            alpha,
            beta,
            gamma,
        }
    }

    fn delta(t1: f64, t2: f64) -> DeltaPair {
        DeltaPair {
            tau1: Some(t1),
            tau2: Some(t2),
        }
    }

    #[test]
    fn metrics_closed_forms() {
        let q = quality_metrics(&sweep_params(40.0)).unwrap();
        assert!((q.i_g - 10.0).abs() < 1e-12);
        let want = (40f64.sqrt() - 0.5f64.sqrt()).powi(2);
        assert!((q.i_c1 - want).abs() < 1e-9);
        assert!((q.i_c1 - 31.5558).abs() < 1e-4);
        let q = quality_metrics(&grid_params(3.0, 3.0, 3.0)).unwrap();
        assert_eq!((q.i_g, q.i_c1, q.i_c2), (0.0, 0.0, 0.0));
        assert!(quality_metrics(&grid_params(1.0, 2.0, 0.5)).is_err());
    }

    #[test]
    fn remark_coefficients() {
        // (c, g, r, q) = (2, 3, 2, 2): 3 log(m) / n, and the /6, /3 factors.
        let p = sweep_params(40.0);
        let d = delta(0.5, 0.5);
        let res = p_star(&p, &d).unwrap();
        let (n, m) = (300f64, 100f64);
        assert!((res.branches[0] - 3.0 * m.ln() / n).abs() < 1e-15);
        let q = quality_metrics(&p).unwrap();
        let b = n.ln() / (0.5 * m) * (1.0 - q.i_g / 6.0);
        assert!((res.branches[1] - b.max(0.0)).abs() < 1e-15);
        let c = n.ln() / (0.5 * m) * (1.0 - q.i_c1 / 6.0 - q.i_c2 / 3.0);
        assert!((res.branches[2] - c.max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn noiseless_prefactor_is_one() {
        let mut p = sweep_params(40.0);
        p.theta = 0.0;
        assert_eq!(p_star(&p, &delta(0.5, 0.5)).unwrap().prefactor, 1.0);
    }

    #[test]
    fn matches_independent_formula_on_grid() {
        for &(t1, t2) in &[(1.0 / 3.0, 1.0 / 6.0), (1.0 / 6.0, 1.0 / 3.0)] {
            for i in 0..20 {
                for j in 0..20 {
                    let gamma = 1.0;
                    let beta = gamma + j as f64 * 0.9;
                    let alpha = beta + i as f64 * 3.1;
                    let p = grid_params(alpha, beta, gamma);
                    let res = p_star(&p, &delta(t1, t2)).unwrap();
                    let (want, pref) =
                        threshold_branches(4000.0, 500.0, 10.0, 5.0, 3.0, 5.0, 0.0, alpha, beta, gamma, t1, t2);
                    for k in 0..3 {
                        assert!((res.branches[k] - want[k]).abs() <= 1e-12 * want[k].abs().max(1e-12));
                    }
                    let mut arg = 0;
                    for k in 1..3 {
                        if want[k] > want[arg] {
                            arg = k;
                        }
                    }
                    assert_eq!(res.regime.index(), arg);
                    assert!((res.p_star - want[arg] * pref).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn regimes_by_graph_quality() {
        let d = delta(1.0 / 3.0, 1.0 / 6.0);
        let (a, b, c) = constants_from_metrics(45.0, 12.0, 1.0);
        assert_eq!(classify_regime(&grid_params(a, b, c), &d).unwrap(), Regime::Perfect);
        let d = delta(0.3, 0.25);
        assert_eq!(
            classify_regime(&grid_params(20.0, 20.0, 0.1), &d).unwrap(),
            Regime::GroupingLimited
        );
        let d = delta(1.0 / 6.0, 1.0 / 3.0);
        for i in 0..15 {
            for j in 0..15 {
                let (a, b, c) = constants_from_metrics(i as f64 * 3.0, j as f64, 1.0);
                assert_ne!(
                    classify_regime(&grid_params(a, b, c), &d).unwrap(),
                    Regime::ClusteringLimited
                );
            }
        }
    }

    #[test]
    fn zero_and_missing_distances() {
        let p = sweep_params(40.0);
        let res = p_star(&p, &delta(0.0, 0.3)).unwrap();
        assert!(res.p_star.is_infinite() && !res.feasible);
        let res = p_star(
            &p,
            &DeltaPair {
                tau1: None,
                tau2: Some(0.3),
            },
        )
        .unwrap();
        assert_eq!(res.branches[1], 0.0);
        assert!(p_star(&p, &delta(1.5, 0.3)).is_err());
    }

    #[test]
    fn negative_parentheticals_are_floored() {
        let res = p_star(&sweep_params(40.0), &delta(0.5, 0.5)).unwrap();
        // i_g = 10 > gc = 6.
        assert!(res.floored[1]);
        assert_eq!(res.branches[1], 0.0);
    }

    #[test]
    fn regime_grids_by_distance_order() {
        let p = grid_params(1.0, 1.0, 1.0);
        let grid = regime_grid(&p, &delta(1.0 / 3.0, 1.0 / 6.0), (0.0, 50.0), (0.0, 15.0), 40, 1.0).unwrap();
        let mut seen = std::collections::HashSet::new();
        for c in &grid {
            seen.insert(c.regime.unwrap());
        }
        assert_eq!(seen.len(), 3);
        let grid = regime_grid(&p, &delta(1.0 / 6.0, 1.0 / 3.0), (0.0, 50.0), (0.0, 15.0), 40, 1.0).unwrap();
        assert!(grid.iter().all(|c| c.regime != Some(Regime::ClusteringLimited)));

        let single = regime_grid(&p, &delta(1.0 / 3.0, 1.0 / 6.0), (7.0, 7.0), (2.0, 2.0), 1, 1.0).unwrap();
        assert_eq!(single.len(), 1);
        let (a, b, c) = constants_from_metrics(7.0, 2.0, 1.0);
        assert_eq!(
            single[0].regime,
            Some(classify_regime(&grid_params(a, b, c), &delta(1.0 / 3.0, 1.0 / 6.0)).unwrap())
        );
        assert!(regime_grid(&p, &delta(0.3, 0.1), (2.0, 1.0), (0.0, 1.0), 3, 1.0).is_err());
    }

    #[test]
    fn grid_csv_header() {
        let p = grid_params(1.0, 1.0, 1.0);
        let grid = regime_grid(&p, &delta(1.0 / 3.0, 1.0 / 6.0), (0.0, 1.0), (0.0, 1.0), 2, 1.0).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&grid, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i_g,i_c2,alpha,beta,gamma,p_star,branch_a,branch_b,branch_c,regime,feasible\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn hierarchy_beats_baseline() {
        let p = grid_params(5.0, 5.0, 1.0);
        let d = delta(1.0 / 3.0, 1.0 / 6.0);
        let ig: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let curve = baseline_comparison(&p, &d, &ig).unwrap();
        for pt in &curve {
            assert!(pt.hierarchical <= pt.baseline * (1.0 + 1e-12), "{pt:?}");
        }
        // Flat parts: (gc / (g - r + 1)) m log m against c r m log m.
        let last = curve.last().unwrap();
        let (m, c, g, r) = (500f64, 10f64, 5f64, 3f64);
        assert!((last.hierarchical - g * c / (g - r + 1.0) * m * m.ln()).abs() < 1e-6);
        assert!((last.baseline - c * r * m * m.ln()).abs() < 1e-6);
        assert!((last.baseline / last.hierarchical - r * (g - r + 1.0) / g).abs() < 1e-12);
    }

    #[test]
    fn flat_levels_coincide_when_r_equals_g() {
        let mut p = grid_params(5.0, 5.0, 1.0);
        p.r = 5;
        let curve = baseline_comparison(&p, &delta(1.0 / 3.0, 1.0 / 6.0), &[200.0]).unwrap();
        assert!((curve[0].hierarchical - curve[0].baseline).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn monotone_in_quality_and_distance(
            a0 in 0.0f64..30.0, b0 in 0.0f64..30.0, gamma in 0.0f64..10.0,
            t1 in 0.05f64..1.0, t2 in 0.05f64..1.0,
            bump in 0.0f64..5.0, tb in 0.0f64..0.5,
        ) {
            let beta = gamma + b0;
            let alpha = beta + a0;
            let d = delta(t1, t2);
            let base = p_star(&grid_params(alpha, beta, gamma), &d).unwrap().p_star;
            // Larger alpha raises i_g and i_c1.
            let up = p_star(&grid_params(alpha + bump, beta, gamma), &d).unwrap().p_star;
            prop_assert!(up <= base * (1.0 + 1e-12));
            // Larger i_c2 at fixed i_g.
            let (a2, b2, g2) = constants_from_metrics(
                (alpha.sqrt() - beta.sqrt()).powi(2),
                (beta.sqrt() - gamma.sqrt()).powi(2) + bump,
                gamma,
            );
            let up = p_star(&grid_params(a2, b2, g2), &d).unwrap().p_star;
            prop_assert!(up <= base * (1.0 + 1e-9));
            let d2 = delta((t1 + tb).min(1.0), (t2 + tb).min(1.0));
            let up = p_star(&grid_params(alpha, beta, gamma), &d2).unwrap().p_star;
            prop_assert!(up <= base * (1.0 + 1e-12));
        }

        #[test]
        fn clustering_branch_inactive_when_tau1_le_tau2(
            a0 in 0.0f64..60.0, b0 in 0.0f64..30.0, gamma in 0.0f64..10.0,
            t1 in 0.01f64..1.0, extra in 0.0f64..0.5,
        ) {
            let beta = gamma + b0;
            let alpha = beta + a0;
            let t2 = (t1 + extra).min(1.0);
            let res = p_star(&grid_params(alpha, beta, gamma), &delta(t1, t2)).unwrap();
            prop_assert!(res.branches[2] <= res.branches[1]);
            prop_assert_ne!(res.regime, Regime::ClusteringLimited);
        }

        #[test]
        fn prefactor_scaling_in_theta(theta in 0.0f64..0.7) {
            let mut p = grid_params(10.0, 5.0, 1.0);
            p.theta = theta;
            let d = delta(1.0 / 3.0, 1.0 / 6.0);
            let res = p_star(&p, &d).unwrap();
            let mut p0 = p.clone();
            p0.theta = 0.0;
            let base = p_star(&p0, &d).unwrap().p_star;
            let gap = ((1.0 - theta).sqrt() - (theta / 4.0).sqrt()).powi(2);
            prop_assert!((res.p_star - base / gap).abs() <= 1e-12 * res.p_star);
        }
    }
}
