//! Arithmetic over prime fields GF(q) and Hamming distances between symbol
//! vectors.
//!
//! Two layers are provided. [`FieldElem`] and [`SymbolVector`] carry their
//! modulus and check it on every operation; they are the checked public
//! surface. [`PrimeField`] operates on bare residues ([`Symbol`]) and is what
//! the hot loops in the estimators use once the modulus is known to agree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A canonical residue in `0..q`.
pub type Symbol = u32;

/// Largest modulus accepted. Products of two residues must fit in `u64`,
/// and symbols must stay clear of the erased-cell sentinel.
pub const MAX_MODULUS: u32 = 1 << 16;

pub fn is_prime(q: u32) -> bool {
    if q < 2 {
        return false;
    }
    let mut d = 2u32;
    while (d as u64) * (d as u64) <= q as u64 {
        if q % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Descriptor of GF(q) for prime `q`, operating on bare residues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct PrimeField {
    q: u32,
}

impl TryFrom<u32> for PrimeField {
    type Error = Error;
    fn try_from(q: u32) -> Result<Self> {
        PrimeField::new(q)
    }
}

impl From<PrimeField> for u32 {
    fn from(f: PrimeField) -> u32 {
        f.q
    }
}

impl PrimeField {
    pub fn new(q: u32) -> Result<Self> {
        if q > MAX_MODULUS || !is_prime(q) {
            return Err(Error::NotPrime(q));
        }
        Ok(Self { q })
    }

    #[inline]
    pub fn order(self) -> u32 {
        self.q
    }

    #[inline]
    pub fn contains(self, s: Symbol) -> bool {
        s < self.q
    }

    #[inline]
    pub fn add(self, a: Symbol, b: Symbol) -> Symbol {
        ((a as u64 + b as u64) % self.q as u64) as Symbol
    }

    #[inline]
    pub fn sub(self, a: Symbol, b: Symbol) -> Symbol {
        ((a as u64 + self.q as u64 - (b as u64 % self.q as u64)) % self.q as u64) as Symbol
    }

    #[inline]
    pub fn neg(self, a: Symbol) -> Symbol {
        self.sub(0, a)
    }

    #[inline]
    pub fn mul(self, a: Symbol, b: Symbol) -> Symbol {
        ((a as u64 * b as u64) % self.q as u64) as Symbol
    }

    pub fn pow(self, base: Symbol, mut exp: u64) -> Symbol {
        let mut result = 1 % self.q;
        let mut b = base % self.q;
        while exp > 0 {
            if exp & 1 == 1 {
                result = self.mul(result, b);
            }
            b = self.mul(b, b);
            exp >>= 1;
        }
        result
    }

    /// Multiplicative inverse by Fermat's little theorem.
    pub fn inv(self, a: Symbol) -> Result<Symbol> {
        if a % self.q == 0 {
            return Err(Error::ZeroInverse);
        }
        Ok(self.pow(a, self.q as u64 - 2))
    }

    pub fn elem(self, value: u32) -> Result<FieldElem> {
        FieldElem::new(value, self.q)
    }
}

/// An element of GF(q) that carries its modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldElem {
    value: u32,
    modulus: u32,
}

impl FieldElem {
    /// Builds an element; the modulus must be prime and `value < modulus`.
    pub fn new(value: u32, modulus: u32) -> Result<Self> {
        PrimeField::new(modulus)?;
        if value >= modulus {
            return Err(Error::OutOfRange { value, modulus });
        }
        Ok(Self { value, modulus })
    }

    pub fn zero(modulus: u32) -> Result<Self> {
        Self::new(0, modulus)
    }

    pub fn one(modulus: u32) -> Result<Self> {
        Self::new(1, modulus)
    }

    #[inline]
    pub fn value(self) -> u32 {
        self.value
    }

    #[inline]
    pub fn modulus(self) -> u32 {
        self.modulus
    }

    #[inline]
    fn field(self) -> PrimeField {
        PrimeField { q: self.modulus }
    }

    fn check(self, other: FieldElem) -> Result<()> {
        if self.modulus != other.modulus {
            return Err(Error::ModulusMismatch {
                left: self.modulus,
                right: other.modulus,
            });
        }
        Ok(())
    }

    pub fn add(self, other: FieldElem) -> Result<FieldElem> {
        self.check(other)?;
        Ok(Self {
            value: self.field().add(self.value, other.value),
            modulus: self.modulus,
        })
    }

    pub fn sub(self, other: FieldElem) -> Result<FieldElem> {
        self.check(other)?;
        Ok(Self {
            value: self.field().sub(self.value, other.value),
            modulus: self.modulus,
        })
    }

    pub fn mul(self, other: FieldElem) -> Result<FieldElem> {
        self.check(other)?;
        Ok(Self {
            value: self.field().mul(self.value, other.value),
            modulus: self.modulus,
        })
    }

    pub fn neg(self) -> FieldElem {
        Self {
            value: self.field().neg(self.value),
            modulus: self.modulus,
        }
    }

    pub fn inv(self) -> Result<FieldElem> {
        Ok(Self {
            value: self.field().inv(self.value)?,
            modulus: self.modulus,
        })
    }
}

impl std::fmt::Display for FieldElem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// A row vector over GF(q) (a rating vector, a codeword, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymbolVector {
    modulus: u32,
    entries: Vec<Symbol>,
}

impl SymbolVector {
    pub fn new(modulus: u32, entries: Vec<Symbol>) -> Result<Self> {
        let field = PrimeField::new(modulus)?;
        if entries.is_empty() {
            return Err(Error::InvalidParams("symbol vector must be non-empty".into()));
        }
        if let Some(&bad) = entries.iter().find(|&&s| !field.contains(s)) {
            return Err(Error::OutOfRange { value: bad, modulus });
        }
        Ok(Self { modulus, entries })
    }

    pub fn from_elems(elems: &[FieldElem]) -> Result<Self> {
        let first = elems
            .first()
            .ok_or_else(|| Error::InvalidParams("symbol vector must be non-empty".into()))?;
        let mut entries = Vec::with_capacity(elems.len());
        for e in elems {
            first.check(*e)?;
            entries.push(e.value);
        }
        Ok(Self {
            modulus: first.modulus,
            entries,
        })
    }

    pub fn zeros(modulus: u32, len: usize) -> Result<Self> {
        Self::new(modulus, vec![0; len])
    }

    #[inline]
    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<FieldElem> {
        self.entries.get(i).map(|&value| FieldElem {
            value,
            modulus: self.modulus,
        })
    }

    #[inline]
    pub fn as_slice(&self) -> &[Symbol] {
        &self.entries
    }

    pub fn into_inner(self) -> Vec<Symbol> {
        self.entries
    }

    pub fn add(&self, other: &SymbolVector) -> Result<SymbolVector> {
        self.check(other)?;
        let f = PrimeField { q: self.modulus };
        Ok(Self {
            modulus: self.modulus,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| f.add(a, b))
                .collect(),
        })
    }

    fn check(&self, other: &SymbolVector) -> Result<()> {
        if self.modulus != other.modulus {
            return Err(Error::ModulusMismatch {
                left: self.modulus,
                right: other.modulus,
            });
        }
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }
}

/// Number of coordinates where `u` and `v` differ.
pub fn hamming_distance(u: &SymbolVector, v: &SymbolVector) -> Result<usize> {
    u.check(v)?;
    Ok(hamming(u.as_slice(), v.as_slice()))
}

/// Unchecked Hamming distance on raw residues; slices must have equal length.
#[inline]
pub fn hamming(a: &[Symbol], b: &[Symbol]) -> usize {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(v: u32, q: u32) -> FieldElem {
        FieldElem::new(v, q).unwrap()
    }

    #[test]
    fn addition_examples() {
        assert_eq!(e(1, 2).add(e(1, 2)).unwrap(), e(0, 2));
        assert_eq!(e(3, 5).add(e(4, 5)).unwrap(), e(2, 5));
        for x in 0..5 {
            assert_eq!(e(x, 5).add(e(0, 5)).unwrap(), e(x, 5));
        }
    }

    #[test]
    fn multiplication_examples() {
        assert_eq!(e(3, 5).mul(e(4, 5)).unwrap(), e(2, 5));
        for x in 0..5 {
            assert_eq!(e(x, 5).mul(e(1, 5)).unwrap(), e(x, 5));
        }
        assert_eq!(e(1, 2).mul(e(1, 2)).unwrap(), e(1, 2));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(e(2, 5).inv().unwrap(), e(3, 5));
        assert_eq!(e(1, 5).inv().unwrap(), e(1, 5));
        assert_eq!(e(3, 7).inv().unwrap(), e(5, 7));
        assert_eq!(e(0, 7).inv(), Err(Error::ZeroInverse));
    }

    #[test]
    fn rejects_bad_moduli_and_mismatches() {
        assert_eq!(FieldElem::new(0, 4), Err(Error::NotPrime(4)));
        assert_eq!(FieldElem::new(0, 1), Err(Error::NotPrime(1)));
        assert!(matches!(FieldElem::new(5, 5), Err(Error::OutOfRange { .. })));
        assert!(matches!(
            e(1, 3).add(e(1, 5)),
            Err(Error::ModulusMismatch { left: 3, right: 5 })
        ));
        assert!(e(1, 3).mul(e(1, 5)).is_err());
    }

    #[test]
    fn hamming_examples() {
        let u = SymbolVector::new(2, vec![0, 0, 1, 1]).unwrap();
        let v = SymbolVector::new(2, vec![0, 1, 1, 0]).unwrap();
        assert_eq!(hamming_distance(&u, &v).unwrap(), 2);
        assert_eq!(hamming_distance(&u, &u).unwrap(), 0);

        let w = SymbolVector::new(2, vec![0, 1, 1]).unwrap();
        assert!(matches!(hamming_distance(&u, &w), Err(Error::LengthMismatch { .. })));
        let x = SymbolVector::new(3, vec![0, 1, 1, 0]).unwrap();
        assert!(matches!(hamming_distance(&u, &x), Err(Error::ModulusMismatch { .. })));
    }

    #[test]
    fn hamming_matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a: Vec<u32> = (0..100).map(|_| rng.random_range(0..5)).collect();
            let b: Vec<u32> = (0..100).map(|_| rng.random_range(0..5)).collect();
            let u = SymbolVector::new(5, a.clone()).unwrap();
            let v = SymbolVector::new(5, b.clone()).unwrap();
            let mut expected = 0;
            for i in 0..100 {
                if u.get(i).unwrap() != v.get(i).unwrap() {
                    expected += 1;
                }
            }
            assert_eq!(hamming_distance(&u, &v).unwrap(), expected);
        }
    }

    fn prime() -> impl Strategy<Value = u32> {
        prop::sample::select(vec![2u32, 3, 5, 7])
    }

    proptest! {
        #[test]
        fn field_axioms(q in prime(), a in 0u32..7, b in 0u32..7, c in 0u32..7) {
            let (a, b, c) = (e(a % q, q), e(b % q, q), e(c % q, q));
            let zero = FieldElem::zero(q).unwrap();
            let one = FieldElem::one(q).unwrap();
            prop_assert_eq!(a.add(b)?.add(c)?, a.add(b.add(c)?)?);
            prop_assert_eq!(a.mul(b)?.mul(c)?, a.mul(b.mul(c)?)?);
            prop_assert_eq!(a.add(b)?, b.add(a)?);
            prop_assert_eq!(a.mul(b)?, b.mul(a)?);
            prop_assert_eq!(a.mul(b.add(c)?)?, a.mul(b)?.add(a.mul(c)?)?);
            prop_assert_eq!(a.add(zero)?, a);
            prop_assert_eq!(a.mul(one)?, a);
            prop_assert_eq!(a.add(a.neg())?, zero);
            prop_assert_eq!(a.sub(b)?.add(b)?, a);
            if a != zero {
                prop_assert_eq!(a.mul(a.inv()?)?, one);
            }
        }

        #[test]
        fn hamming_is_a_metric(
            q in prime(),
            raw in prop::collection::vec((0u32..7, 0u32..7, 0u32..7), 1..40),
        ) {
            let u = SymbolVector::new(q, raw.iter().map(|t| t.0 % q).collect())?;
            let v = SymbolVector::new(q, raw.iter().map(|t| t.1 % q).collect())?;
            let w = SymbolVector::new(q, raw.iter().map(|t| t.2 % q).collect())?;
            let duv = hamming_distance(&u, &v)?;
            prop_assert_eq!(duv, hamming_distance(&v, &u)?);
            prop_assert_eq!(duv == 0, u == v);
            prop_assert!(hamming_distance(&u, &w)? <= duv + hamming_distance(&v, &w)?);
        }
    }
}
