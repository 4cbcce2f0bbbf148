//! Problem instances: parameters, partitions, MDS-structured rating vectors,
//! HSBM similarity graphs and the noisy erasure channel.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffield::{hamming, PrimeField, Symbol};
use crate::mds::{build_code, MdsCode};
use crate::rng::{stream, tags};

/// Marker for an unobserved cell.
pub const ERASED: Symbol = Symbol::MAX;

/// Cap on the number of column patterns the canonical constructions list.
const MAX_SECTIONS: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub m: usize,
    pub c: usize,
    pub g: usize,
    pub r: usize,
    pub q: u32,
    pub theta: f64,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Edge probabilities `alpha * ln(n) / n` and friends, clamped to [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeProbs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub clamped: bool,
}

/// Relation of a user pair under a partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairClass {
    SameGroup,
    SameCluster,
    Different,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.n == 0 || self.m == 0 {
            return bad("n and m must be positive".into());
        }
        if self.c == 0 || self.g == 0 {
            return bad("c and g must be positive".into());
        }
        if self.r == 0 || self.r > self.g {
            return bad(format!("r = {} must lie in [1, g = {}]", self.r, self.g));
        }
        if self.n % (self.c * self.g) != 0 {
            return bad(format!("n = {} is not divisible by c*g = {}", self.n, self.c * self.g));
        }
        PrimeField::new(self.q)?;
        let max_theta = (self.q - 1) as f64 / self.q as f64;
        if !(self.theta >= 0.0 && self.theta < max_theta) {
            return bad(format!("theta = {} must lie in [0, {max_theta})", self.theta));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p = {} must lie in [0, 1]", self.p));
        }
        let finite = [self.alpha, self.beta, self.gamma].iter().all(|v| v.is_finite());
        if !finite || !(self.alpha >= self.beta && self.beta >= self.gamma && self.gamma >= 0.0) {
            return bad(format!(
                "graph constants must satisfy alpha >= beta >= gamma >= 0, got ({}, {}, {})",
                self.alpha, self.beta, self.gamma
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.c * self.g
    }

    #[inline]
    pub fn group_size(&self) -> usize {
        self.n / (self.c * self.g)
    }

    pub fn with_p(&self, p: f64) -> Self {
        Self { p, ..self.clone() }
    }

    pub fn edge_probs(&self) -> EdgeProbs {
        let scale = if self.n > 1 {
            (self.n as f64).ln() / self.n as f64
        } else {
            0.0
        };
        let mut clamped = false;
        let mut f = |v: f64| {
            let x = v * scale;
            if x > 1.0 {
                clamped = true;
                1.0
            } else {
                x.max(0.0)
            }
        };
        let (alpha, beta, gamma) = (f(self.alpha), f(self.beta), f(self.gamma));
        EdgeProbs {
            alpha,
            beta,
            gamma,
            clamped,
        }
    }
}

impl EdgeProbs {
    #[inline]
    pub fn of(&self, class: PairClass) -> f64 {
        match class {
            PairClass::SameGroup => self.alpha,
            PairClass::SameCluster => self.beta,
            PairClass::Different => self.gamma,
        }
    }
}

/// Equal-size assignment of users to `c * g` cells; cell `x * g + i` is group
/// `i` of cluster `x`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr")]
pub struct Partition {
    c: usize,
    g: usize,
    labels: Vec<u32>,
}

#[derive(Deserialize)]
struct PartitionRepr {
    c: usize,
    g: usize,
    labels: Vec<u32>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;
    fn try_from(r: PartitionRepr) -> Result<Self> {
        Partition::from_labels(r.c, r.g, r.labels)
    }
}

impl Partition {
    /// Users `k * s .. (k + 1) * s` form cell `k`.
    pub fn contiguous(n: usize, c: usize, g: usize) -> Result<Self> {
        if c == 0 || g == 0 || n % (c * g) != 0 || n == 0 {
            return Err(Error::InvalidParams(format!(
                "cannot split {n} users into {c}x{g} equal cells"
            )));
        }
        let s = n / (c * g);
        Ok(Self {
            c,
            g,
            labels: (0..n).map(|u| (u / s) as u32).collect(),
        })
    }

    pub fn from_labels(c: usize, g: usize, labels: Vec<u32>) -> Result<Self> {
        let k = c * g;
        let n = labels.len();
        if k == 0 || n == 0 || n % k != 0 {
            return Err(Error::InvalidParams(format!(
                "cannot split {n} users into {c}x{g} equal cells"
            )));
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            let l = l as usize;
            if l >= k {
                return Err(Error::InvalidParams(format!("cell label {l} >= {k}")));
            }
            counts[l] += 1;
        }
        if counts.iter().any(|&s| s != n / k) {
            return Err(Error::InvalidParams(format!(
                "cells must all have size {}, got {counts:?}",
                n / k
            )));
        }
        Ok(Self { c, g, labels })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn g(&self) -> usize {
        self.g
    }

    #[inline]
    pub fn num_cells(&self) -> usize {
        self.c * self.g
    }

    #[inline]
    pub fn cell_size(&self) -> usize {
        self.labels.len() / (self.c * self.g)
    }

    #[inline]
    pub fn cell(&self, u: usize) -> usize {
        self.labels[u] as usize
    }

    #[inline]
    pub fn cluster(&self, u: usize) -> usize {
        self.labels[u] as usize / self.g
    }

    #[inline]
    pub fn group(&self, u: usize) -> usize {
        self.labels[u] as usize % self.g
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn class(&self, u: usize, v: usize) -> PairClass {
        let (a, b) = (self.labels[u], self.labels[v]);
        if a == b {
            PairClass::SameGroup
        } else if a as usize / self.g == b as usize / self.g {
            PairClass::SameCluster
        } else {
            PairClass::Different
        }
    }

    /// Members of every cell, in increasing user order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::with_capacity(self.cell_size()); self.num_cells()];
        for (u, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(u);
        }
        out
    }

    /// Partition of the relabeled users, where user `u` becomes `perm[u]`.
    pub fn permute_users(&self, perm: &[usize]) -> Self {
        let mut labels = vec![0; self.labels.len()];
        for (u, &l) in self.labels.iter().enumerate() {
            labels[perm[u]] = l;
        }
        Self { labels, ..self.clone() }
    }
}

/// The `c * g` group rating vectors, each cluster's stack being `Phi * Q_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingVectorSet {
    code: MdsCode,
    c: usize,
    m: usize,
    /// c blocks of r x m, row-major.
    bases: Vec<Symbol>,
    /// c * g rows of length m.
    vectors: Vec<Symbol>,
}

#[derive(Serialize, Deserialize)]
struct RatingVectorSetRepr {
    code: MdsCode,
    c: usize,
    m: usize,
    bases: Vec<Vec<Vec<Symbol>>>,
}

impl Serialize for RatingVectorSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RatingVectorSetRepr {
            code: self.code.clone(),
            c: self.c,
            m: self.m,
            bases: self.bases_nested(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RatingVectorSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = RatingVectorSetRepr::deserialize(d)?;
        RatingVectorSet::from_nested(repr.code, repr.c, repr.m, &repr.bases).map_err(serde::de::Error::custom)
    }
}

impl RatingVectorSet {
    /// `bases` holds c consecutive r x m row-major blocks.
    pub fn from_bases(code: MdsCode, c: usize, m: usize, bases: Vec<Symbol>) -> Result<Self> {
        let (g, r) = (code.length(), code.dimension());
        if c == 0 || m == 0 {
            return Err(Error::InvalidParams("c and m must be positive".into()));
        }
        if bases.len() != c * r * m {
            return Err(Error::LengthMismatch {
                left: bases.len(),
                right: c * r * m,
            });
        }
        if let Some(&bad) = bases.iter().find(|&&s| s >= code.modulus()) {
            return Err(Error::OutOfRange {
                value: bad,
                modulus: code.modulus(),
            });
        }
        let mut vectors = vec![0; c * g * m];
        let mut msg = vec![0; r];
        let mut word = vec![0; g];
        for x in 0..c {
            let basis = &bases[x * r * m..(x + 1) * r * m];
            for t in 0..m {
                for j in 0..r {
                    msg[j] = basis[j * m + t];
                }
                code.encode_into(&msg, &mut word);
                for i in 0..g {
                    vectors[(x * g + i) * m + t] = word[i];
                }
            }
        }
        Ok(Self {
            code,
            c,
            m,
            bases,
            vectors,
        })
    }

    pub fn from_nested(code: MdsCode, c: usize, m: usize, bases: &[Vec<Vec<Symbol>>]) -> Result<Self> {
        let r = code.dimension();
        if bases.len() != c || bases.iter().any(|b| b.len() != r || b.iter().any(|row| row.len() != m)) {
            return Err(Error::Dimension(format!("bases must be {c} blocks of {r} x {m}")));
        }
        let flat = bases.iter().flatten().flatten().copied().collect();
        Self::from_bases(code, c, m, flat)
    }

    pub fn code(&self) -> &MdsCode {
        &self.code
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn g(&self) -> usize {
        self.code.length()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    /// Rating vector of group `i` in cluster `x`.
    #[inline]
    pub fn vector(&self, x: usize, i: usize) -> &[Symbol] {
        let cell = x * self.g() + i;
        &self.vectors[cell * self.m..(cell + 1) * self.m]
    }

    #[inline]
    pub fn cell_vector(&self, cell: usize) -> &[Symbol] {
        &self.vectors[cell * self.m..(cell + 1) * self.m]
    }

    /// Basis Q_x as an r x m row-major slice.
    pub fn basis(&self, x: usize) -> &[Symbol] {
        let rm = self.code.dimension() * self.m;
        &self.bases[x * rm..(x + 1) * rm]
    }

    pub fn bases_nested(&self) -> Vec<Vec<Vec<Symbol>>> {
        (0..self.c)
            .map(|x| self.basis(x).chunks(self.m).map(|r| r.to_vec()).collect())
            .collect()
    }

    /// Whether every column of every cluster's stack is a codeword.
    pub fn is_consistent(&self) -> bool {
        let g = self.g();
        let mut col = vec![0; g];
        (0..self.c).all(|x| {
            (0..self.m).all(|t| {
                for (i, v) in col.iter_mut().enumerate() {
                    *v = self.vector(x, i)[t];
                }
                self.code.contains(&col)
            })
        })
    }
}

/// Dense n x m matrix over GF(q).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingMatrix {
    n: usize,
    m: usize,
    q: u32,
    entries: Vec<Symbol>,
}

impl RatingMatrix {
    pub fn new(n: usize, m: usize, q: u32, entries: Vec<Symbol>) -> Result<Self> {
        if entries.len() != n * m {
            return Err(Error::LengthMismatch {
                left: entries.len(),
                right: n * m,
            });
        }
        if let Some(&bad) = entries.iter().find(|&&s| s >= q) {
            return Err(Error::OutOfRange { value: bad, modulus: q });
        }
        Ok(Self { n, m, q, entries })
    }

    /// Row u is the vector of the cell containing u.
    pub fn from_parts(v: &RatingVectorSet, z: &Partition) -> Result<Self> {
        if v.c() != z.c() || v.g() != z.g() {
            return Err(Error::Dimension(format!(
                "vector set is {}x{} but partition is {}x{}",
                v.c(),
                v.g(),
                z.c(),
                z.g()
            )));
        }
        let (n, m) = (z.n(), v.m());
        let mut entries = Vec::with_capacity(n * m);
        for u in 0..n {
            entries.extend_from_slice(v.cell_vector(z.cell(u)));
        }
        Ok(Self {
            n,
            m,
            q: v.code().modulus(),
            entries,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn q(&self) -> u32 {
        self.q
    }

    #[inline]
    pub fn get(&self, u: usize, t: usize) -> Symbol {
        self.entries[u * self.m + t]
    }

    #[inline]
    pub fn row(&self, u: usize) -> &[Symbol] {
        &self.entries[u * self.m..(u + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[Symbol] {
        &self.entries
    }

    pub fn set(&mut self, u: usize, t: usize, s: Symbol) {
        assert!(s < self.q);
        self.entries[u * self.m + t] = s;
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a != b {
            for t in 0..self.m {
                self.entries.swap(a * self.m + t, b * self.m + t);
            }
        }
    }

    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let mut entries = vec![0; self.entries.len()];
        for u in 0..self.n {
            let dst = perm[u];
            entries[dst * self.m..(dst + 1) * self.m].copy_from_slice(self.row(u));
        }
        Self {
            entries,
            ..self.clone()
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_grid(path, self.n, self.m, |u, t| self.get(u, t).to_string())
    }

    pub fn read_csv(path: &Path, q: u32) -> Result<Self> {
        let (n, m, cells) = read_grid(path)?;
        let entries = cells
            .iter()
            .map(|s| s.parse::<Symbol>().map_err(|e| Error::Serde(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, m, q, entries)
    }
}

/// Undirected simple graph on `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(u32, u32)>,
    adj: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    n: usize,
    edges: Vec<(u32, u32)>,
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphRepr {
            n: self.n,
            edges: self.edges.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = GraphRepr::deserialize(d)?;
        Graph::from_edges(repr.n, repr.edges).map_err(serde::de::Error::custom)
    }
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: vec![],
            adj: vec![vec![]; n],
        }
    }

    /// Canonicalizes to `u < v`, drops duplicates, rejects self-loops.
    pub fn from_edges(n: usize, edges: Vec<(u32, u32)>) -> Result<Self> {
        let mut canon = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            for v in [a, b] {
                if v as usize >= n {
                    return Err(Error::VertexOutOfRange { vertex: v as usize, n });
                }
            }
            if a == b {
                return Err(Error::InvalidParams(format!("self-loop at vertex {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        let mut adj = vec![vec![]; n];
        for &(a, b) in &canon {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Self { n, edges: canon, adj })
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n as u32)
            .flat_map(|a| (a + 1..n as u32).map(move |b| (a, b)))
            .collect();
        Self::from_edges(n, edges).expect("valid complete graph")
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.adj[u]
    }

    #[inline]
    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && self.adj[u].binary_search(&(v as u32)).is_ok()
    }

    /// Graph with vertex `u` renamed to `perm[u]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let edges = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a as usize] as u32, perm[b as usize] as u32))
            .collect();
        Self::from_edges(self.n, edges).expect("a permutation preserves validity")
    }
}

/// Partially observed noisy matrix; erased cells hold [`ERASED`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    n: usize,
    m: usize,
    q: u32,
    entries: Vec<Symbol>,
}

impl Observation {
    pub fn new(n: usize, m: usize, q: u32, entries: Vec<Symbol>) -> Result<Self> {
        if entries.len() != n * m {
            return Err(Error::LengthMismatch {
                left: entries.len(),
                right: n * m,
            });
        }
        if let Some(&bad) = entries.iter().find(|&&s| s != ERASED && s >= q) {
            return Err(Error::OutOfRange { value: bad, modulus: q });
        }
        Ok(Self { n, m, q, entries })
    }

    pub fn erased(n: usize, m: usize, q: u32) -> Self {
        Self {
            n,
            m,
            q,
            entries: vec![ERASED; n * m],
        }
    }

    /// Fully observed copy of `x`.
    pub fn full(x: &RatingMatrix) -> Self {
        Self {
            n: x.n,
            m: x.m,
            q: x.q,
            entries: x.entries.clone(),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn q(&self) -> u32 {
        self.q
    }

    #[inline]
    pub fn get(&self, u: usize, t: usize) -> Option<Symbol> {
        let s = self.entries[u * self.m + t];
        (s != ERASED).then_some(s)
    }

    /// Raw row, erased cells as [`ERASED`].
    #[inline]
    pub fn row(&self, u: usize) -> &[Symbol] {
        &self.entries[u * self.m..(u + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[Symbol] {
        &self.entries
    }

    pub fn num_observed(&self) -> usize {
        self.entries.iter().filter(|&&s| s != ERASED).count()
    }

    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let mut entries = vec![ERASED; self.entries.len()];
        for u in 0..self.n {
            let dst = perm[u];
            entries[dst * self.m..(dst + 1) * self.m].copy_from_slice(self.row(u));
        }
        Self {
            entries,
            ..self.clone()
        }
    }

    /// CSV with `*` for erased cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_grid(path, self.n, self.m, |u, t| match self.get(u, t) {
            Some(s) => s.to_string(),
            None => "*".into(),
        })
    }

    pub fn read_csv(path: &Path, q: u32) -> Result<Self> {
        let (n, m, cells) = read_grid(path)?;
        let entries = cells
            .iter()
            .map(|s| {
                if s == "*" {
                    Ok(ERASED)
                } else {
                    s.parse::<Symbol>().map_err(|e| Error::Serde(format!("{s:?}: {e}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, m, q, entries)
    }
}

fn write_grid(path: &Path, n: usize, m: usize, cell: impl Fn(usize, usize) -> String) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for u in 0..n {
        w.write_record((0..m).map(|t| cell(u, t)))?;
    }
    w.flush()?;
    Ok(())
}

fn read_grid(path: &Path) -> Result<(usize, usize, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut cells = Vec::new();
    let mut n = 0;
    let mut m = None;
    for rec in rdr.records() {
        let rec = rec?;
        match m {
            None => m = Some(rec.len()),
            Some(w) if w != rec.len() => return Err(Error::Dimension(format!("ragged row {n}"))),
            _ => {}
        }
        cells.extend(rec.iter().map(|s| s.trim().to_string()));
        n += 1;
    }
    Ok((n, m.unwrap_or(0), cells))
}

/// Minimum normalized intra-cluster (`tau1`) and inter-cluster (`tau2`)
/// Hamming distances; `None` when there is no such pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaPair {
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
}

/// A closest pair of cells and their Hamming distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClosestPair {
    pub a: usize,
    pub b: usize,
    pub distance: usize,
}

/// First (in cell order) closest intra-cluster and inter-cluster cell pairs.
pub fn closest_pairs(v: &RatingVectorSet) -> (Option<ClosestPair>, Option<ClosestPair>) {
    let g = v.g();
    let k = v.c() * g;
    let mut intra: Option<ClosestPair> = None;
    let mut inter: Option<ClosestPair> = None;
    for a in 0..k {
        for b in a + 1..k {
            let d = hamming(v.cell_vector(a), v.cell_vector(b));
            let slot = if a / g == b / g { &mut intra } else { &mut inter };
            if slot.is_none_or(|cp| d < cp.distance) {
                *slot = Some(ClosestPair { a, b, distance: d });
            }
        }
    }
    (intra, inter)
}

pub fn compute_delta(v: &RatingVectorSet) -> DeltaPair {
    let (intra, inter) = closest_pairs(v);
    let m = v.m() as f64;
    DeltaPair {
        tau1: intra.map(|cp| cp.distance as f64 / m),
        tau2: inter.map(|cp| cp.distance as f64 / m),
    }
}

/// How the per-cluster bases Q_x are chosen.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GroundTruthMode {
    /// Independent uniform full-rank r x m bases.
    #[default]
    Random,
    /// First row of cluster 1 fixed to all ones; columns grouped into
    /// contiguous sections, one per pattern of the remaining `c*r - 1` basis
    /// entries in lexicographic order. `fractions` defaults to uniform.
    Canonical {
        #[serde(default)]
        fractions: Option<Vec<f64>>,
    },
    /// Near-uniform section counts with random remainder placement and a
    /// random column order, redrawn until the realized (tau1, tau2) lies
    /// within `tol` of the targets.
    TargetDelta {
        #[serde(default)]
        tau1: Option<f64>,
        #[serde(default)]
        tau2: Option<f64>,
        #[serde(default)]
        tol: Option<f64>,
        #[serde(default = "default_retries")]
        max_retries: usize,
    },
    /// Bases given explicitly as c blocks of r x m.
    Explicit { bases: Vec<Vec<Vec<Symbol>>> },
}

fn default_retries() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub matrix: RatingMatrix,
    pub vectors: RatingVectorSet,
    pub partition: Partition,
}

pub fn build_ground_truth(params: &ModelParams, mode: &GroundTruthMode, seed: u64) -> Result<GroundTruth> {
    params.validate()?;
    let code = build_code(params.g, params.r, params.q)?;
    let partition = Partition::contiguous(params.n, params.c, params.g)?;
    let mut rng = stream(seed, tags::GROUND_TRUTH);
    let (c, m, r) = (params.c, params.m, params.r);
    let vectors = match mode {
        GroundTruthMode::Random => {
            if m < r {
                return Err(Error::InvalidParams(format!(
                    "full-rank bases need m >= r, got m = {m}"
                )));
            }
            let field = code.field();
            let mut bases = Vec::with_capacity(c * r * m);
            for _ in 0..c {
                loop {
                    let q_x: Vec<Symbol> = (0..r * m).map(|_| rng.random_range(0..params.q)).collect();
                    if rank(&q_x, r, m, field) == r {
                        bases.extend(q_x);
                        break;
                    }
                }
            }
            RatingVectorSet::from_bases(code, c, m, bases)?
        }
        GroundTruthMode::Canonical { fractions } => {
            let k = num_sections(params)?;
            let fr = match fractions {
                Some(f) => f.clone(),
                None => vec![1.0 / k as f64; k],
            };
            let counts = section_counts(&fr, k, m)?;
            let columns = section_columns(&counts);
            canonical_vectors(code, params, &columns)?
        }
        GroundTruthMode::TargetDelta {
            tau1,
            tau2,
            tol,
            max_retries,
        } => {
            let tol = tol.unwrap_or(1.0 / m as f64);
            for t in [tau1, tau2].into_iter().flatten() {
                if !(0.0..=1.0).contains(t) {
                    return Err(Error::InvalidDelta(format!("target {t} outside [0, 1]")));
                }
            }
            let k = num_sections(params)?;
            let mut found = None;
            for _ in 0..(*max_retries).max(1) {
                let mut counts = vec![m / k; k];
                let extra: Vec<usize> = (0..k).collect();
                for &s in extra.choose_multiple(&mut rng, m % k) {
                    counts[s] += 1;
                }
                let mut columns = section_columns(&counts);
                columns.shuffle(&mut rng);
                let v = canonical_vectors(code.clone(), params, &columns)?;
                let d = compute_delta(&v);
                let near = |target: &Option<f64>, got: Option<f64>| match (target, got) {
                    (None, _) => true,
                    (Some(t), Some(x)) => (x - t).abs() <= tol + 1e-12,
                    (Some(_), None) => false,
                };
                if near(tau1, d.tau1) && near(tau2, d.tau2) {
                    found = Some(v);
                    break;
                }
            }
            found.ok_or(Error::InfeasibleDelta {
                tau1: *tau1,
                tau2: *tau2,
                retries: *max_retries,
            })?
        }
        GroundTruthMode::Explicit { bases } => RatingVectorSet::from_nested(code, c, m, bases)?,
    };
    let matrix = RatingMatrix::from_parts(&vectors, &partition)?;
    Ok(GroundTruth {
        matrix,
        vectors,
        partition,
    })
}

fn num_sections(params: &ModelParams) -> Result<usize> {
    let k = (params.q as f64).powi((params.c * params.r) as i32 - 1);
    if k > MAX_SECTIONS as f64 {
        return Err(Error::EnumerationCap {
            size: k,
            cap: MAX_SECTIONS as f64,
        });
    }
    Ok(k as usize)
}

/// Largest-remainder rounding of `fractions * m`; ties go to the lower section.
fn section_counts(fractions: &[f64], k: usize, m: usize) -> Result<Vec<usize>> {
    if fractions.len() != k {
        return Err(Error::LengthMismatch {
            left: fractions.len(),
            right: k,
        });
    }
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParams(
            "section fractions must be in [0, 1] and sum to 1".into(),
        ));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f * m as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let short = m - counts.iter().sum::<usize>().min(m);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &s in order.iter().take(short) {
        counts[s] += 1;
    }
    Ok(counts)
}

fn section_columns(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(s, &cnt)| std::iter::repeat_n(s, cnt))
        .collect()
}

/// Builds the vector set whose column t realizes pattern `sections[t]`.
fn canonical_vectors(code: MdsCode, params: &ModelParams, sections: &[usize]) -> Result<RatingVectorSet> {
    let (c, r, m, q) = (params.c, params.r, params.m, params.q as usize);
    let cr = c * r;
    let mut bases = vec![0; cr * m];
    let mut stacked = vec![0; cr];
    for (t, &s) in sections.iter().enumerate() {
        stacked[0] = 1;
        let mut rem = s;
        for j in (1..cr).rev() {
            stacked[j] = (rem % q) as Symbol;
            rem /= q;
        }
        for x in 0..c {
            for j in 0..r {
                bases[(x * r + j) * m + t] = stacked[x * r + j];
            }
        }
    }
    RatingVectorSet::from_bases(code, c, m, bases)
}

/// Rank over GF(q) of a rows x cols row-major matrix.
pub fn rank(mat: &[Symbol], rows: usize, cols: usize, field: PrimeField) -> usize {
    let mut a = mat.to_vec();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let Some(piv) = (rank..rows).find(|&i| a[i * cols + col] != 0) else {
            continue;
        };
        for k in 0..cols {
            a.swap(piv * cols + k, rank * cols + k);
        }
        let inv = field.inv(a[rank * cols + col]).expect("pivot is nonzero");
        for i in 0..rows {
            if i != rank && a[i * cols + col] != 0 {
                let f = field.mul(a[i * cols + col], inv);
                for k in col..cols {
                    let v = field.mul(f, a[rank * cols + k]);
                    a[i * cols + k] = field.sub(a[i * cols + k], v);
                }
            }
        }
        rank += 1;
    }
    rank
}

pub fn sample_graph(params: &ModelParams, z: &Partition, seed: u64) -> Graph {
    sample_graph_with(params, z, &mut stream(seed, tags::GRAPH))
}

/// Independent Bernoulli edges with probability set by each pair's class.
pub fn sample_graph_with<R: Rng + ?Sized>(params: &ModelParams, z: &Partition, rng: &mut R) -> Graph {
    let probs = params.edge_probs();
    if probs.clamped {
        log::warn!(
            "edge probabilities clamped to 1 at n = {} (alpha = {}, beta = {}, gamma = {})",
            params.n,
            params.alpha,
            params.beta,
            params.gamma
        );
    }
    let n = z.n();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < probs.of(z.class(u, v)) {
                edges.push((u as u32, v as u32));
            }
        }
    }
    Graph::from_edges(n, edges).expect("sampled edges are valid")
}

pub fn sample_observation(m0: &RatingMatrix, params: &ModelParams, seed: u64) -> Observation {
    sample_observation_with(m0, params, &mut stream(seed, tags::OBSERVATION))
}

/// Erasure with probability `1 - p`, then a uniform flip to one of the
/// `q - 1` wrong symbols with probability `theta`.
pub fn sample_observation_with<R: Rng + ?Sized>(m0: &RatingMatrix, params: &ModelParams, rng: &mut R) -> Observation {
    let q = m0.q();
    let entries = m0
        .as_slice()
        .iter()
        .map(|&truth| {
            if rng.random::<f64>() >= params.p {
                ERASED
            } else if q > 1 && rng.random::<f64>() < params.theta {
                (truth + 1 + rng.random_range(0..q - 1)) % q
            } else {
                truth
            }
        })
        .collect();
    Observation {
        n: m0.n(),
        m: m0.m(),
        q,
        entries,
    }
}

/// A generated problem instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub params: ModelParams,
    pub seed: u64,
    pub truth: GroundTruth,
    pub graph: Graph,
    pub observation: Observation,
}

pub fn generate_instance(params: &ModelParams, mode: &GroundTruthMode, seed: u64) -> Result<Instance> {
    let truth = build_ground_truth(params, mode, seed)?;
    let graph = sample_graph(params, &truth.partition, seed);
    let observation = sample_observation(&truth.matrix, params, seed);
    Ok(Instance {
        params: params.clone(),
        seed,
        truth,
        graph,
        observation,
    })
}

/// JSON document for an instance; the dense matrix and the edge list are
/// optional, the rest is enough to rebuild the ground truth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub params: ModelParams,
    pub seed: u64,
    pub partition: Partition,
    pub vectors: RatingVectorSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<Symbol>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(u32, u32)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Vec<Vec<Option<Symbol>>>>,
}

impl Instance {
    pub fn to_doc(&self, with_matrix: bool) -> InstanceDoc {
        let t = &self.truth;
        InstanceDoc {
            params: self.params.clone(),
            seed: self.seed,
            partition: t.partition.clone(),
            vectors: t.vectors.clone(),
            matrix: with_matrix.then(|| (0..t.matrix.n()).map(|u| t.matrix.row(u).to_vec()).collect()),
            edges: Some(self.graph.edges().to_vec()),
            observation: Some(
                (0..self.observation.n())
                    .map(|u| (0..self.observation.m()).map(|t| self.observation.get(u, t)).collect())
                    .collect(),
            ),
        }
    }

    /// Rebuilds an instance; fails when the graph or the observation is
    /// missing, or when a stored matrix disagrees with the vectors.
    pub fn from_doc(doc: InstanceDoc) -> Result<Self> {
        doc.params.validate()?;
        let matrix = RatingMatrix::from_parts(&doc.vectors, &doc.partition)?;
        if let Some(rows) = &doc.matrix {
            let flat: Vec<Symbol> = rows.iter().flatten().copied().collect();
            if flat != matrix.as_slice() {
                return Err(Error::Serde(
                    "stored matrix disagrees with vectors and partition".into(),
                ));
            }
        }
        let (n, m, q) = (doc.params.n, doc.params.m, doc.params.q);
        if matrix.n() != n || matrix.m() != m {
            return Err(Error::Dimension("instance shape disagrees with params".into()));
        }
        let edges = doc
            .edges
            .ok_or_else(|| Error::Serde("instance document has no edge list".into()))?;
        let graph = Graph::from_edges(n, edges)?;
        let obs_rows = doc
            .observation
            .ok_or_else(|| Error::Serde("instance document has no observation".into()))?;
        if obs_rows.len() != n || obs_rows.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension(format!("observation must be {n} x {m}")));
        }
        let entries = obs_rows.into_iter().flatten().map(|s| s.unwrap_or(ERASED)).collect();
        let observation = Observation::new(n, m, q, entries)?;
        Ok(Self {
            params: doc.params,
            seed: doc.seed,
            truth: GroundTruth {
                matrix,
                vectors: doc.vectors,
                partition: doc.partition,
            },
            graph,
            observation,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc(true))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(s)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ffield::{hamming_distance, SymbolVector};
    use proptest::prelude::*;

    pub(crate) fn params(n: usize, m: usize, c: usize, g: usize, r: usize, q: u32) -> ModelParams {
        ModelParams {
            n,
            m,
            c,
            g,
            r,
            q,
            theta: 0.1,
            p: 0.5,
            alpha: 40.0,
            beta: 10.0,
            gamma: 0.5,
        }
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(params(12, 4, 2, 3, 2, 2).validate().is_ok());
        assert!(params(13, 4, 2, 3, 2, 2).validate().is_err());
        assert!(params(12, 4, 2, 3, 4, 2).validate().is_err());
        assert!(params(12, 4, 2, 3, 2, 4).validate().is_err());
        let mut p = params(12, 4, 2, 3, 2, 2);
        p.theta = 0.5;
        assert!(p.validate().is_err());
        p.theta = 0.1;
        p.beta = 50.0;
        assert!(p.validate().is_err());
        p.beta = 10.0;
        p.p = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn edge_probs_scale_and_clamp() {
        let p = params(600, 200, 2, 3, 2, 2);
        let e = p.edge_probs();
        let s = (600f64).ln() / 600.0;
        assert!((e.alpha - 40.0 * s).abs() < 1e-15);
        assert!((e.gamma - 0.5 * s).abs() < 1e-15);
        assert!(!e.clamped);
        let small = params(12, 4, 2, 3, 2, 2).edge_probs();
        assert!(small.clamped);
        assert_eq!(small.alpha, 1.0);
    }

    #[test]
    fn partition_checks_sizes() {
        let z = Partition::contiguous(12, 2, 3).unwrap();
        assert_eq!(z.labels(), &[0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
        assert_eq!(z.cluster(7), 1);
        assert_eq!(z.group(7), 0);
        assert_eq!(z.class(0, 1), PairClass::SameGroup);
        assert_eq!(z.class(0, 2), PairClass::SameCluster);
        assert_eq!(z.class(0, 6), PairClass::Different);
        assert!(Partition::from_labels(2, 1, vec![0, 0, 0, 1]).is_err());
        assert!(Partition::from_labels(2, 1, vec![0, 2]).is_err());
        let json = serde_json::to_string(&z).unwrap();
        assert_eq!(serde_json::from_str::<Partition>(&json).unwrap(), z);
        assert!(serde_json::from_str::<Partition>(r#"{"c":2,"g":1,"labels":[0,0,0,1]}"#).is_err());
    }

    /// Expected rows for the (2,3,2,2) canonical design: cluster 1 rates
    /// (1, l0, 1 + l0) and cluster 2 rates (l1, l2, l1 + l2) on section l.
    fn eq25_rows(counts: &[usize]) -> Vec<Vec<u32>> {
        let mut rows = vec![vec![]; 6];
        for (l, &cnt) in counts.iter().enumerate() {
            let (l0, l1, l2) = ((l >> 2) as u32 & 1, (l >> 1) as u32 & 1, l as u32 & 1);
            let vals = [1, l0, (1 + l0) % 2, l1, l2, (l1 + l2) % 2];
            for (row, v) in rows.iter_mut().zip(vals) {
                row.extend(std::iter::repeat_n(v, cnt));
            }
        }
        rows
    }

    #[test]
    fn canonical_design_matches_block_structure() {
        let mut p = params(12, 16, 2, 3, 2, 2);
        let fractions = vec![0.125, 0.0625, 0.1875, 0.125, 0.0625, 0.25, 0.125, 0.0625];
        let gt = build_ground_truth(
            &p,
            &GroundTruthMode::Canonical {
                fractions: Some(fractions.clone()),
            },
            0,
        )
        .unwrap();
        let counts: Vec<usize> = fractions.iter().map(|f| (f * 16.0) as usize).collect();
        let rows = eq25_rows(&counts);
        for u in 0..12 {
            assert_eq!(gt.matrix.row(u), &rows[u / 2][..], "user {u}");
        }
        assert_eq!(gt.vectors.basis(0), &[rows[0].clone(), rows[1].clone()].concat()[..]);
        p.m = 8;
        let gt = build_ground_truth(&p, &GroundTruthMode::Canonical { fractions: None }, 0).unwrap();
        let d = compute_delta(&gt.vectors);
        assert_eq!(d.tau1, Some(0.5));
        assert_eq!(d.tau2, Some(0.5));
    }

    #[test]
    fn single_group_rows_identical() {
        let p = params(5, 7, 1, 1, 1, 3);
        let gt = build_ground_truth(&p, &GroundTruthMode::Random, 9).unwrap();
        for u in 1..5 {
            assert_eq!(gt.matrix.row(u), gt.matrix.row(0));
        }
        assert_eq!(compute_delta(&gt.vectors), DeltaPair { tau1: None, tau2: None });
    }

    #[test]
    fn random_ground_truth_invariants() {
        for seed in 0..20 {
            for &(c, g, r, q) in &[(2usize, 3usize, 2usize, 2u32), (3, 4, 2, 5), (2, 2, 1, 3), (1, 3, 3, 7)] {
                let p = params(c * g * 3, 10, c, g, r, q);
                let gt = build_ground_truth(&p, &GroundTruthMode::Random, seed).unwrap();
                assert!(gt.vectors.is_consistent());
                for u in 0..p.n {
                    let z = &gt.partition;
                    assert_eq!(gt.matrix.row(u), gt.vectors.vector(z.cluster(u), z.group(u)));
                }
                let field = PrimeField::new(q).unwrap();
                for x in 0..c {
                    assert_eq!(rank(gt.vectors.basis(x), r, 10, field), r);
                }
                assert_eq!(gt, build_ground_truth(&p, &GroundTruthMode::Random, seed).unwrap());
            }
        }
    }

    #[test]
    fn target_delta_reaches_half() {
        for &m in &[50usize, 100, 200] {
            let p = params(3 * m, m, 2, 3, 2, 2);
            let mode = GroundTruthMode::TargetDelta {
                tau1: Some(0.5),
                tau2: Some(0.5),
                tol: None,
                max_retries: 1000,
            };
            let gt = build_ground_truth(&p, &mode, 4).unwrap();
            let d = compute_delta(&gt.vectors);
            assert!((d.tau1.unwrap() - 0.5).abs() <= 1.0 / m as f64 + 1e-12);
            assert!((d.tau2.unwrap() - 0.5).abs() <= 1.0 / m as f64 + 1e-12);
            assert_eq!(gt.matrix.row(0), &vec![1; m][..]);
        }
        let p = params(60, 20, 2, 3, 2, 2);
        let impossible = GroundTruthMode::TargetDelta {
            tau1: Some(0.9),
            tau2: None,
            tol: Some(0.01),
            max_retries: 5,
        };
        assert!(matches!(
            build_ground_truth(&p, &impossible, 0),
            Err(Error::InfeasibleDelta { retries: 5, .. })
        ));
    }

    #[test]
    fn explicit_bases_round_trip() {
        let p = params(12, 3, 2, 3, 2, 2);
        let bases = vec![vec![vec![1, 0, 1], vec![0, 0, 1]], vec![vec![1, 1, 1], vec![0, 1, 0]]];
        let gt = build_ground_truth(&p, &GroundTruthMode::Explicit { bases: bases.clone() }, 0).unwrap();
        assert_eq!(gt.vectors.bases_nested(), bases);
        assert_eq!(gt.vectors.vector(0, 2), &[1, 0, 0]);
        let bad = vec![vec![vec![1, 0, 1]]];
        assert!(build_ground_truth(&p, &GroundTruthMode::Explicit { bases: bad }, 0).is_err());
    }

    #[test]
    fn delta_matches_exhaustive_pairs() {
        for seed in 0..30 {
            let p = params(24, 9, 2, 4, 2, 3);
            let gt = build_ground_truth(&p, &GroundTruthMode::Random, seed).unwrap();
            let vecs: Vec<SymbolVector> = (0..8)
                .map(|k| SymbolVector::new(3, gt.vectors.cell_vector(k).to_vec()).unwrap())
                .collect();
            let (mut intra, mut inter) = (usize::MAX, usize::MAX);
            for a in 0..8 {
                for b in 0..8 {
                    if a == b {
                        continue;
                    }
                    let d = hamming_distance(&vecs[a], &vecs[b]).unwrap();
                    if a / 4 == b / 4 {
                        intra = intra.min(d);
                    } else {
                        inter = inter.min(d);
                    }
                }
            }
            let d = compute_delta(&gt.vectors);
            assert_eq!(d.tau1, Some(intra as f64 / 9.0));
            assert_eq!(d.tau2, Some(inter as f64 / 9.0));
        }
    }

    #[test]
    fn identical_clusters_give_zero_tau2() {
        let p = params(12, 3, 2, 3, 2, 2);
        let b = vec![vec![1, 0, 1], vec![0, 1, 1]];
        let gt = build_ground_truth(
            &p,
            &GroundTruthMode::Explicit {
                bases: vec![b.clone(), b],
            },
            0,
        )
        .unwrap();
        assert_eq!(compute_delta(&gt.vectors).tau2, Some(0.0));
    }

    #[test]
    fn graph_extremes() {
        let mut p = params(12, 4, 2, 3, 2, 2);
        p.alpha = 0.0;
        p.beta = 0.0;
        p.gamma = 0.0;
        let z = Partition::contiguous(12, 2, 3).unwrap();
        assert_eq!(sample_graph(&p, &z, 1).num_edges(), 0);
        p.alpha = 1e6;
        let gr = sample_graph(&p, &z, 1);
        assert_eq!(gr.num_edges(), 6);
        for u in 0..12 {
            for v in u + 1..12 {
                assert_eq!(gr.has_edge(u, v), z.cell(u) == z.cell(v));
            }
        }
    }

    #[test]
    fn graph_rejects_bad_edges() {
        assert!(matches!(
            Graph::from_edges(3, vec![(0, 3)]),
            Err(Error::VertexOutOfRange { vertex: 3, n: 3 })
        ));
        assert!(Graph::from_edges(3, vec![(1, 1)]).is_err());
        let gr = Graph::from_edges(4, vec![(2, 1), (1, 2), (0, 3)]).unwrap();
        assert_eq!(gr.edges(), &[(0, 3), (1, 2)]);
        assert_eq!(gr.neighbors(1), &[2]);
    }

    #[test]
    fn observation_extremes() {
        let mut p = params(12, 5, 2, 3, 2, 5);
        let gt = build_ground_truth(&p, &GroundTruthMode::Random, 2).unwrap();
        p.p = 0.0;
        assert_eq!(sample_observation(&gt.matrix, &p, 3).num_observed(), 0);
        p.p = 1.0;
        p.theta = 0.0;
        assert_eq!(sample_observation(&gt.matrix, &p, 3), Observation::full(&gt.matrix));
    }

    #[test]
    fn observation_flip_rate_is_close_to_theta() {
        let mut p = params(300, 100, 2, 3, 2, 5);
        p.p = 0.5;
        p.theta = 0.2;
        let gt = build_ground_truth(&p, &GroundTruthMode::Random, 0).unwrap();
        let y = sample_observation(&gt.matrix, &p, 0);
        let obs = y.num_observed() as f64;
        let nm = 30000.0;
        assert!((obs - nm * 0.5).abs() < 3.0 * (nm * 0.25f64).sqrt());
        let flips = (0..300)
            .flat_map(|u| (0..100).map(move |t| (u, t)))
            .filter(|&(u, t)| y.get(u, t).is_some_and(|s| s != gt.matrix.get(u, t)))
            .count() as f64;
        assert!((flips - obs * 0.2).abs() < 3.0 * (obs * 0.2 * 0.8).sqrt());
    }

    #[test]
    fn generation_is_deterministic() {
        let p = params(30, 10, 2, 3, 2, 2);
        let a = generate_instance(&p, &GroundTruthMode::Random, 5).unwrap();
        let b = generate_instance(&p, &GroundTruthMode::Random, 5).unwrap();
        let c = generate_instance(&p, &GroundTruthMode::Random, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn json_and_csv_round_trip() {
        let p = params(30, 10, 2, 3, 2, 2);
        let inst = generate_instance(&p, &GroundTruthMode::Random, 5).unwrap();
        let back = Instance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(inst, back);

        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join("m.csv");
        inst.truth.matrix.write_csv(&mp).unwrap();
        assert_eq!(RatingMatrix::read_csv(&mp, 2).unwrap(), inst.truth.matrix);
        let yp = dir.path().join("y.csv");
        inst.observation.write_csv(&yp).unwrap();
        assert_eq!(Observation::read_csv(&yp, 2).unwrap(), inst.observation);

        let mut doc = inst.to_doc(true);
        doc.matrix.as_mut().unwrap()[0][0] ^= 1;
        assert!(Instance::from_doc(doc).is_err());
    }

    #[test]
    fn permutations_commute_with_construction() {
        let p = params(12, 4, 2, 3, 2, 2);
        let gt = build_ground_truth(&p, &GroundTruthMode::Random, 1).unwrap();
        let perm = vec![3, 0, 5, 1, 4, 2, 11, 10, 9, 8, 7, 6];
        let z2 = gt.partition.permute_users(&perm);
        let m2 = RatingMatrix::from_parts(&gt.vectors, &z2).unwrap();
        assert_eq!(m2, gt.matrix.permute_rows(&perm));
    }

    proptest! {
        #[test]
        fn graph_relabel_preserves_edges(seed in 0u64..1000) {
            let p = params(12, 4, 2, 3, 2, 2);
            let z = Partition::contiguous(12, 2, 3).unwrap();
            let gr = sample_graph(&p.with_p(0.5), &z, seed);
            let mut perm: Vec<usize> = (0..12).collect();
            perm.shuffle(&mut stream(seed, 99));
            let h = gr.relabel(&perm);
            prop_assert_eq!(h.num_edges(), gr.num_edges());
            for &(a, b) in gr.edges() {
                prop_assert!(h.has_edge(perm[a as usize], perm[b as usize]));
            }
        }

        #[test]
        fn cells_are_exact(seed in 0u64..500, c in 1usize..4, g in 1usize..4, s in 1usize..5) {
            let mut labels: Vec<u32> = (0..c * g * s).map(|u| (u / s) as u32).collect();
            labels.shuffle(&mut stream(seed, 7));
            let z = Partition::from_labels(c, g, labels).unwrap();
            for cell in z.members() {
                prop_assert_eq!(cell.len(), s);
            }
        }
    }
}
