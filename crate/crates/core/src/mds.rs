//! Systematic (g, r) MDS codes over prime fields.
//!
//! Codes are built as Generalized Reed-Solomon codes with the fixed
//! evaluation points `0, 1, ..., g-1` (plus the point at infinity when
//! `g = q + 1`) and then brought to systematic form `[I; A]`. The
//! repetition (`r = 1`), single-parity (`r = g - 1`) and identity (`r = g`)
//! codes are MDS over every field and are built directly.
//!
//! Decoding is by enumeration: the codes used here have `q^r` small enough to
//! list every codeword.

use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ffield::{PrimeField, Symbol, SymbolVector};

/// Default cap on the number of codewords that may be enumerated.
pub const DEFAULT_ENUMERATION_CAP: f64 = 1e6;

/// Above this many codewords `min_distance` switches from the pairwise scan
/// to the minimum nonzero weight, which is equal for linear codes.
const PAIRWISE_LIMIT: usize = 5000;

pub struct MdsCode {
    g: usize,
    r: usize,
    field: PrimeField,
    /// g x r, row-major.
    generator: Vec<Symbol>,
    codewords: OnceLock<Vec<Symbol>>,
}

impl Clone for MdsCode {
    fn clone(&self) -> Self {
        Self {
            g: self.g,
            r: self.r,
            field: self.field,
            generator: self.generator.clone(),
            codewords: OnceLock::new(),
        }
    }
}

impl PartialEq for MdsCode {
    fn eq(&self, other: &Self) -> bool {
        self.g == other.g && self.r == other.r && self.field == other.field && self.generator == other.generator
    }
}

impl Eq for MdsCode {}

impl std::fmt::Debug for MdsCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MdsCode")
            .field("g", &self.g)
            .field("r", &self.r)
            .field("q", &self.field.order())
            .field("generator", &self.generator_rows())
            .finish()
    }
}

#[derive(Serialize, Deserialize)]
struct CodeRepr {
    g: usize,
    r: usize,
    q: u32,
    generator: Vec<Vec<Symbol>>,
}

impl Serialize for MdsCode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CodeRepr {
            g: self.g,
            r: self.r,
            q: self.field.order(),
            generator: self.generator_rows(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MdsCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = CodeRepr::deserialize(d)?;
        let code = build_code(repr.g, repr.r, repr.q).map_err(serde::de::Error::custom)?;
        if code.generator_rows() != repr.generator {
            return Err(serde::de::Error::custom(
                "stored generator does not match the deterministic construction",
            ));
        }
        Ok(code)
    }
}

/// Whether a (g, r) MDS code over GF(q) exists, per the MDS conjecture
/// (which is a theorem for prime q). Returns the reason when it does not.
pub fn existence(g: usize, r: usize, q: u32) -> std::result::Result<(), String> {
    if r == 0 || r > g {
        return Err(format!("dimension r = {r} must satisfy 1 <= r <= g = {g}"));
    }
    if r == 1 || r == g || r + 1 == g {
        return Ok(());
    }
    let q_us = q as usize;
    if (2..=q_us.saturating_sub(1)).contains(&r) {
        let even_exception = q % 2 == 0 && (r == 3 || r + 1 == q_us);
        let max_len = if even_exception { q_us + 2 } else { q_us + 1 };
        if g <= max_len {
            return Ok(());
        }
        return Err(format!(
            "length g = {g} exceeds the maximum {max_len} for 2 <= r <= q-1"
        ));
    }
    Err(format!(
        "dimension r = {r} >= q = {q} admits only the trivial lengths g <= r + 1"
    ))
}

/// Builds the deterministic systematic (g, r) MDS code over GF(q).
pub fn build_code(g: usize, r: usize, q: u32) -> Result<MdsCode> {
    let field = PrimeField::new(q)?;
    existence(g, r, q).map_err(|reason| Error::CodeDoesNotExist { g, r, q, reason })?;

    let mut generator = vec![0; g * r];
    for i in 0..r {
        generator[i * r + i] = 1;
    }
    if r == g {
        // identity
    } else if r == 1 {
        for i in 0..g {
            generator[i] = 1;
        }
    } else if r + 1 == g && g > q as usize + 1 {
        // Single parity check beyond the GRS length limit.
        for j in 0..r {
            generator[r * r + j] = 1;
        }
    } else {
        generator = grs_systematic(g, r, field)?;
    }

    Ok(MdsCode {
        g,
        r,
        field,
        generator,
        codewords: OnceLock::new(),
    })
}

/// Vandermonde generator over points 0..g-1 (with infinity as the last point
/// when g = q + 1), right-multiplied by the inverse of its top r x r block.
fn grs_systematic(g: usize, r: usize, field: PrimeField) -> Result<Vec<Symbol>> {
    let q = field.order() as usize;
    debug_assert!(g <= q + 1);
    let mut vander = vec![0; g * r];
    for i in 0..g {
        if i == q {
            vander[i * r + (r - 1)] = 1;
        } else {
            for j in 0..r {
                vander[i * r + j] = field.pow(i as Symbol, j as u64);
            }
        }
    }
    let top_inv = invert(&vander[..r * r], r, field)?;
    let mut out = vec![0; g * r];
    for i in 0..g {
        for j in 0..r {
            let mut acc = 0;
            for k in 0..r {
                acc = field.add(acc, field.mul(vander[i * r + k], top_inv[k * r + j]));
            }
            out[i * r + j] = acc;
        }
    }
    Ok(out)
}

/// Gauss-Jordan inverse of an r x r matrix over GF(q).
fn invert(a: &[Symbol], r: usize, field: PrimeField) -> Result<Vec<Symbol>> {
    let w = 2 * r;
    let mut m = vec![0; r * w];
    for i in 0..r {
        m[i * w..i * w + r].copy_from_slice(&a[i * r..i * r + r]);
        m[i * w + r + i] = 1;
    }
    for col in 0..r {
        let pivot = (col..r)
            .find(|&row| m[row * w + col] != 0)
            .ok_or_else(|| Error::InvalidParams("singular matrix".into()))?;
        if pivot != col {
            for k in 0..w {
                m.swap(pivot * w + k, col * w + k);
            }
        }
        let inv = field.inv(m[col * w + col])?;
        for k in 0..w {
            m[col * w + k] = field.mul(m[col * w + k], inv);
        }
        for row in 0..r {
            if row != col && m[row * w + col] != 0 {
                let f = m[row * w + col];
                for k in 0..w {
                    let v = field.mul(f, m[col * w + k]);
                    m[row * w + k] = field.sub(m[row * w + k], v);
                }
            }
        }
    }
    Ok((0..r).flat_map(|i| m[i * w + r..i * w + w].to_vec()).collect())
}

impl MdsCode {
    #[inline]
    pub fn length(&self) -> usize {
        self.g
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        self.r
    }

    #[inline]
    pub fn field(&self) -> PrimeField {
        self.field
    }

    #[inline]
    pub fn modulus(&self) -> u32 {
        self.field.order()
    }

    /// The designed minimum distance g - r + 1.
    pub fn designed_distance(&self) -> usize {
        self.g - self.r + 1
    }

    pub fn generator_rows(&self) -> Vec<Vec<Symbol>> {
        self.generator.chunks(self.r).map(|c| c.to_vec()).collect()
    }

    /// Generator entry at (row, col).
    #[inline]
    pub fn generator_at(&self, row: usize, col: usize) -> Symbol {
        self.generator[row * self.r + col]
    }

    /// Number of codewords, q^r, as a float so that huge codes do not overflow.
    pub fn size(&self) -> f64 {
        (self.modulus() as f64).powi(self.r as i32)
    }

    /// Unchecked systematic encoding of a raw message of length r into `out`.
    #[inline]
    pub fn encode_into(&self, message: &[Symbol], out: &mut [Symbol]) {
        let f = self.field;
        for (i, o) in out.iter_mut().enumerate().take(self.g) {
            let row = &self.generator[i * self.r..(i + 1) * self.r];
            let mut acc = 0;
            for (&gij, &mj) in row.iter().zip(message) {
                acc = f.add(acc, f.mul(gij, mj));
            }
            *o = acc;
        }
    }

    pub fn encode_raw(&self, message: &[Symbol]) -> Vec<Symbol> {
        let mut out = vec![0; self.g];
        self.encode_into(message, &mut out);
        out
    }

    /// Whether `word` (length g) is a codeword.
    pub fn contains(&self, word: &[Symbol]) -> bool {
        word.len() == self.g && self.encode_raw(&word[..self.r]) == word
    }

    /// Flattened codeword table in lexicographic order (q^r rows of g
    /// symbols), enumerating with the default cap.
    pub fn codeword_table(&self) -> Result<&[Symbol]> {
        if self.size() > DEFAULT_ENUMERATION_CAP {
            return Err(Error::EnumerationCap {
                size: self.size(),
                cap: DEFAULT_ENUMERATION_CAP,
            });
        }
        Ok(self.codewords.get_or_init(|| self.enumerate()))
    }

    fn enumerate(&self) -> Vec<Symbol> {
        let q = self.modulus();
        let count = self.size() as usize;
        let mut table = vec![0; count * self.g];
        let mut message = vec![0; self.r];
        for idx in 0..count {
            // Most significant digit first so that message order is lexicographic;
            // systematic form makes codeword order agree with message order.
            let mut rem = idx;
            for j in (0..self.r).rev() {
                message[j] = (rem % q as usize) as Symbol;
                rem /= q as usize;
            }
            self.encode_into(&message, &mut table[idx * self.g..(idx + 1) * self.g]);
        }
        table
    }
}

/// Encodes a length-r message; the first r output symbols equal the message.
pub fn encode(code: &MdsCode, message: &SymbolVector) -> Result<SymbolVector> {
    if message.modulus() != code.modulus() {
        return Err(Error::ModulusMismatch {
            left: message.modulus(),
            right: code.modulus(),
        });
    }
    if message.len() != code.r {
        return Err(Error::LengthMismatch {
            left: message.len(),
            right: code.r,
        });
    }
    SymbolVector::new(code.modulus(), code.encode_raw(message.as_slice()))
}

/// All q^r codewords in lexicographic order, subject to `cap`.
pub fn all_codewords_capped(code: &MdsCode, cap: f64) -> Result<Vec<SymbolVector>> {
    if code.size() > cap {
        return Err(Error::EnumerationCap { size: code.size(), cap });
    }
    let table = if code.size() <= DEFAULT_ENUMERATION_CAP {
        code.codeword_table()?.to_vec()
    } else {
        code.enumerate()
    };
    table
        .chunks(code.g)
        .map(|c| SymbolVector::new(code.modulus(), c.to_vec()))
        .collect()
}

pub fn all_codewords(code: &MdsCode) -> Result<Vec<SymbolVector>> {
    all_codewords_capped(code, DEFAULT_ENUMERATION_CAP)
}

/// Minimum pairwise Hamming distance over all codewords.
pub fn min_distance(code: &MdsCode) -> Result<usize> {
    let table = code.codeword_table()?;
    let g = code.g;
    let count = table.len() / g;
    if count < 2 {
        return Ok(g);
    }
    let word = |i: usize| &table[i * g..(i + 1) * g];
    let mut best = usize::MAX;
    if count <= PAIRWISE_LIMIT {
        for i in 0..count {
            for j in i + 1..count {
                best = best.min(crate::ffield::hamming(word(i), word(j)));
            }
        }
    } else {
        for i in 1..count {
            best = best.min(word(i).iter().filter(|&&s| s != 0).count());
        }
    }
    Ok(best)
}

/// Index (into the lexicographic codeword table) of the codeword maximizing
/// `sum_i scores[i * q + w_i]`; the first maximum wins ties.
#[inline]
pub fn best_codeword_index(table: &[Symbol], g: usize, q: usize, scores: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (idx, word) in table.chunks_exact(g).enumerate() {
        let mut s = 0.0;
        for (i, &w) in word.iter().enumerate() {
            s += scores[i * q + w as usize];
        }
        if s > best_score {
            best_score = s;
            best = idx;
        }
    }
    best
}

/// The codeword maximizing the total score, where `scores[i][s]` rewards
/// symbol `s` at position `i`. Ties go to the lexicographically smallest
/// codeword.
pub fn best_codeword(code: &MdsCode, scores: &[Vec<f64>]) -> Result<SymbolVector> {
    let q = code.modulus() as usize;
    if scores.len() != code.g || scores.iter().any(|row| row.len() != q) {
        return Err(Error::Dimension(format!("score matrix must be {} x {}", code.g, q)));
    }
    if scores.iter().flatten().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParams("scores must be finite".into()));
    }
    let flat: Vec<f64> = scores.iter().flatten().copied().collect();
    let table = code.codeword_table()?;
    let idx = best_codeword_index(table, code.g, q, &flat);
    SymbolVector::new(code.modulus(), table[idx * code.g..(idx + 1) * code.g].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sv(q: u32, v: &[u32]) -> SymbolVector {
        SymbolVector::new(q, v.to_vec()).unwrap()
    }

    #[test]
    fn parity_code_over_gf2() {
        let code = build_code(3, 2, 2).unwrap();
        assert_eq!(code.generator_rows(), vec![vec![1, 0], vec![0, 1], vec![1, 1]]);
        let words: Vec<Vec<u32>> = all_codewords(&code)
            .unwrap()
            .into_iter()
            .map(|w| w.into_inner())
            .collect();
        assert_eq!(words, vec![vec![0, 0, 0], vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]]);
        assert_eq!(min_distance(&code).unwrap(), 2);
        assert_eq!(encode(&code, &sv(2, &[1, 0])).unwrap(), sv(2, &[1, 0, 1]));
    }

    #[test]
    fn identity_and_repetition_codes() {
        let id = build_code(4, 4, 5).unwrap();
        assert_eq!(min_distance(&id).unwrap(), 1);
        for (i, row) in id.generator_rows().iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, (i == j) as u32);
            }
        }
        let rep = build_code(4, 1, 3).unwrap();
        let words = all_codewords(&rep).unwrap();
        assert_eq!(words.len(), 3);
        for (k, w) in words.iter().enumerate() {
            assert_eq!(w.as_slice(), &[k as u32; 4]);
        }
    }

    #[test]
    fn existence_rules() {
        assert!(matches!(build_code(5, 2, 2), Err(Error::CodeDoesNotExist { .. })));
        assert!(build_code(6, 3, 5).is_ok());
        assert!(matches!(build_code(7, 3, 5), Err(Error::CodeDoesNotExist { .. })));
        assert!(build_code(7, 6, 2).is_ok());
        assert!(build_code(3, 0, 2).is_err());
        assert!(build_code(3, 4, 2).is_err());
        assert!(matches!(build_code(3, 2, 4), Err(Error::NotPrime(4))));
    }

    #[test]
    fn gf5_code_has_25_codewords_at_distance_three() {
        let code = build_code(4, 2, 5).unwrap();
        let words = all_codewords(&code).unwrap();
        assert_eq!(words.len(), 25);
        for i in 0..words.len() {
            for j in i + 1..words.len() {
                assert!(crate::ffield::hamming_distance(&words[i], &words[j]).unwrap() >= 3);
            }
        }
    }

    #[test]
    fn encode_matches_naive_matrix_multiply() {
        let code = build_code(4, 2, 5).unwrap();
        let gen = code.generator_rows();
        let msg = [2u32, 3];
        let mut naive = [0u32; 4];
        for i in 0..4 {
            let mut acc = 0u64;
            for j in 0..2 {
                acc += gen[i][j] as u64 * msg[j] as u64;
            }
            naive[i] = (acc % 5) as u32;
        }
        assert_eq!(encode(&code, &sv(5, &msg)).unwrap().as_slice(), &naive[..]);
        assert_eq!(encode(&code, &sv(5, &[0, 0])).unwrap().as_slice(), &[0, 0, 0, 0]);
        assert!(encode(&code, &sv(5, &[1, 2, 3])).is_err());
    }

    #[test]
    fn min_distance_5_3_5_exhaustive() {
        let code = build_code(5, 3, 5).unwrap();
        let words = all_codewords(&code).unwrap();
        assert_eq!(words.len(), 125);
        let mut min = usize::MAX;
        for i in 0..words.len() {
            for j in i + 1..words.len() {
                min = min.min(crate::ffield::hamming_distance(&words[i], &words[j]).unwrap());
            }
        }
        assert_eq!(min, 3);
        assert_eq!(min_distance(&code).unwrap(), 3);
    }

    #[test]
    fn best_codeword_examples() {
        let code = build_code(3, 2, 2).unwrap();
        let uniform = vec![vec![0.5; 2]; 3];
        assert_eq!(best_codeword(&code, &uniform).unwrap().as_slice(), &[0, 0, 0]);
        let favour = vec![vec![0.0, 5.0], vec![5.0, 0.0], vec![0.0, 5.0]];
        assert_eq!(best_codeword(&code, &favour).unwrap().as_slice(), &[1, 0, 1]);
        assert!(best_codeword(&code, &[vec![f64::NAN, 0.0], vec![0.0; 2], vec![0.0; 2]]).is_err());
    }

    #[test]
    fn best_codeword_matches_exhaustive_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(g, r, q) in &[(3usize, 2usize, 2u32), (4, 2, 5), (5, 3, 5), (4, 3, 3)] {
            let code = build_code(g, r, q).unwrap();
            let words = all_codewords(&code).unwrap();
            for _ in 0..50 {
                let scores: Vec<Vec<f64>> = (0..g)
                    .map(|_| (0..q).map(|_| rng.random_range(-3i32..4) as f64).collect())
                    .collect();
                let mut best: Option<(f64, &SymbolVector)> = None;
                for w in &words {
                    let s: f64 = w
                        .as_slice()
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| scores[i][x as usize])
                        .sum();
                    let better = match best {
                        None => true,
                        Some((bs, bw)) => s > bs || (s == bs && w.as_slice() < bw.as_slice()),
                    };
                    if better {
                        best = Some((s, w));
                    }
                }
                assert_eq!(&best_codeword(&code, &scores).unwrap(), best.unwrap().1);
            }
        }
    }

    fn small_codes() -> Vec<(usize, usize, u32)> {
        let mut out = vec![];
        for q in [2u32, 3, 5, 7, 11] {
            for g in 1..=(q as usize + 2).min(8) {
                for r in 1..=g {
                    if existence(g, r, q).is_ok() && (q as f64).powi(r as i32) <= 1e5 {
                        out.push((g, r, q));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn every_constructible_small_code_is_mds() {
        for (g, r, q) in small_codes() {
            let code = build_code(g, r, q).unwrap();
            assert_eq!(min_distance(&code).unwrap(), g - r + 1, "({g},{r},{q})");
            for i in 0..r {
                for j in 0..r {
                    assert_eq!(code.generator_at(i, j), (i == j) as u32);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn encoding_is_linear_and_systematic(
            idx in 0usize..1000,
            a in prop::collection::vec(0u32..11, 8),
            b in prop::collection::vec(0u32..11, 8),
        ) {
            let codes = small_codes();
            let (g, r, q) = codes[idx % codes.len()];
            let code = build_code(g, r, q).unwrap();
            let m1 = SymbolVector::new(q, a[..r].iter().map(|x| x % q).collect())?;
            let m2 = SymbolVector::new(q, b[..r].iter().map(|x| x % q).collect())?;
            let c1 = encode(&code, &m1)?;
            let c2 = encode(&code, &m2)?;
            prop_assert_eq!(c1.add(&c2)?, encode(&code, &m1.add(&m2)?)?);
            prop_assert_eq!(&c1.as_slice()[..r], m1.as_slice());
            prop_assert!(code.contains(c1.as_slice()));
        }
    }
}
