//! Arithmetic and linear algebra over prime fields GF(q).
//!
//! Besides the usual field operations this module provides a ranked
//! enumeration of the full-rank matrices in reduced row echelon form (RREF).
//! Two RREF matrices of full row rank have the same null space only if they
//! are equal, so enumerating them enumerates the subspaces of a given
//! codimension exactly once. The enumeration order is fixed:
//!
//! 1. pivot-column sets in lexicographic order;
//! 2. within one pivot set, the free entries (row-major) read as the digits
//!    of a little-endian mixed-radix number in base `q`.

use std::fmt;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Largest supported modulus, 2^31 - 1.
pub const MAX_MODULUS: u64 = (1 << 31) - 1;

/// Deterministic primality test by trial division (moduli are at most 2^31).
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n < 4 {
        return true;
    }
    if n.is_multiple_of(2) || n.is_multiple_of(3) {
        return false;
    }
    let mut d = 5u64;
    while d * d <= n {
        if n.is_multiple_of(d) || n.is_multiple_of(d + 2) {
            return false;
        }
        d += 6;
    }
    true
}

/// Iterator over the primes in ascending order, starting from 2.
pub fn primes() -> impl Iterator<Item = u64> {
    (2u64..).filter(|&n| is_prime(n))
}

/// The prime field GF(q).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PrimeField {
    q: u32,
}

impl PrimeField {
    pub fn new(q: u64) -> Result<Self> {
        if q > MAX_MODULUS || !is_prime(q) {
            return Err(Error::NotPrime(q));
        }
        Ok(PrimeField { q: q as u32 })
    }

    #[inline]
    pub fn order(&self) -> u32 {
        self.q
    }

    /// Reduces an arbitrary integer into the field.
    #[inline]
    pub fn element(&self, x: u64) -> u32 {
        (x % self.q as u64) as u32
    }

    #[inline]
    pub fn add(&self, a: u32, b: u32) -> u32 {
        debug_assert!(a < self.q && b < self.q);
        ((a as u64 + b as u64) % self.q as u64) as u32
    }

    #[inline]
    pub fn sub(&self, a: u32, b: u32) -> u32 {
        debug_assert!(a < self.q && b < self.q);
        ((a as u64 + self.q as u64 - b as u64) % self.q as u64) as u32
    }

    #[inline]
    pub fn neg(&self, a: u32) -> u32 {
        if a == 0 {
            0
        } else {
            self.q - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u32, b: u32) -> u32 {
        debug_assert!(a < self.q && b < self.q);
        ((a as u64 * b as u64) % self.q as u64) as u32
    }

    pub fn pow(&self, a: u32, mut e: u64) -> u32 {
        let mut base = a;
        let mut acc = 1 % self.q;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by Fermat's little theorem.
    pub fn inv(&self, a: u32) -> Result<u32> {
        if a.is_multiple_of(self.q) {
            return Err(Error::ZeroInverse(self.q));
        }
        Ok(self.pow(a, self.q as u64 - 2))
    }
}

/// A dense row-major matrix over a prime field.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct FieldMatrix {
    field: PrimeField,
    rows: usize,
    cols: usize,
    data: Vec<u32>,
}

impl fmt::Debug for FieldMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "FieldMatrix GF({}) {}x{}", self.field.q, self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        Ok(())
    }
}

impl FieldMatrix {
    pub fn new(field: PrimeField, rows: usize, cols: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&x| x >= field.q) {
            return Err(Error::invalid(format!("entry {bad} not reduced mod {}", field.q)));
        }
        Ok(FieldMatrix { field, rows, cols, data })
    }

    pub fn zeros(field: PrimeField, rows: usize, cols: usize) -> Self {
        FieldMatrix { field, rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(field: PrimeField, n: usize) -> Self {
        let mut m = Self::zeros(field, n, n);
        for i in 0..n {
            m.data[i * n + i] = 1 % field.q;
        }
        m
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, x: u32) {
        self.data[r * self.cols + c] = self.field.element(x as u64);
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<u32> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Matrix product over GF(q). Products are accumulated in 128 bits and
    /// reduced once per entry.
    pub fn mul(&self, other: &FieldMatrix) -> Result<FieldMatrix> {
        if self.field != other.field {
            return Err(Error::Dimension(format!(
                "GF({}) times GF({})",
                self.field.q, other.field.q
            )));
        }
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let q = self.field.q as u128;
        let mut out = FieldMatrix::zeros(self.field, self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc: u128 = 0;
                for i in 0..self.cols {
                    acc += self.get(r, i) as u128 * other.get(i, c) as u128;
                }
                out.data[r * other.cols + c] = (acc % q) as u32;
            }
        }
        Ok(out)
    }

    /// Rank by Gaussian elimination on a copy.
    pub fn rank(&self) -> usize {
        let f = self.field;
        let mut m = self.data.clone();
        let (rows, cols) = (self.rows, self.cols);
        let mut rank = 0;
        for c in 0..cols {
            if rank == rows {
                break;
            }
            let Some(p) = (rank..rows).find(|&r| m[r * cols + c] != 0) else {
                continue;
            };
            for i in 0..cols {
                m.swap(p * cols + i, rank * cols + i);
            }
            let inv = f.inv(m[rank * cols + c]).expect("pivot is nonzero");
            for i in 0..cols {
                m[rank * cols + i] = f.mul(m[rank * cols + i], inv);
            }
            for r in 0..rows {
                if r != rank && m[r * cols + c] != 0 {
                    let factor = m[r * cols + c];
                    for i in 0..cols {
                        let d = f.mul(factor, m[rank * cols + i]);
                        m[r * cols + i] = f.sub(m[r * cols + i], d);
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    /// Whether the matrix is in reduced row echelon form with no zero rows.
    pub fn is_full_rank_rref(&self) -> bool {
        let mut last_pivot: Option<usize> = None;
        for r in 0..self.rows {
            let Some(p) = self.row(r).iter().position(|&x| x != 0) else {
                return false;
            };
            if self.get(r, p) != 1 || last_pivot.is_some_and(|lp| p <= lp) {
                return false;
            }
            if (0..self.rows).any(|o| o != r && self.get(o, p) != 0) {
                return false;
            }
            last_pivot = Some(p);
        }
        true
    }
}

/// Gaussian binomial coefficient `[n choose s]_q`, computed exactly.
pub fn gaussian_binomial(n: u64, s: u64, q: u64) -> BigUint {
    if s > n {
        return BigUint::zero();
    }
    let q = BigUint::from(q);
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 0..s {
        num *= q.pow((n - i) as u32) - 1u32;
        den *= q.pow((i + 1) as u32) - 1u32;
    }
    let (quot, rem) = num.div_rem(&den);
    assert!(rem.is_zero(), "Gaussian binomial numerator must divide exactly");
    quot
}

/// Number of full-rank `s x n` matrices over GF(q) in reduced row echelon form.
pub fn rref_count(s: usize, n: usize, field: PrimeField) -> BigUint {
    gaussian_binomial(n as u64, s as u64, field.q as u64)
}

/// One pivot-column set and the free positions it leaves.
#[derive(Clone, Debug)]
pub struct PivotSet {
    pub pivots: Vec<usize>,
    /// Free positions as `row * n + col`, row-major.
    pub free: Vec<usize>,
    /// `q^free.len()`.
    pub count: u64,
    /// Rank of the first matrix with this pivot set.
    pub start: u64,
}

/// Ranked enumeration of the full-rank `s x n` RREF matrices over GF(q).
#[derive(Clone, Debug)]
pub struct RrefEnumeration {
    field: PrimeField,
    s: usize,
    n: usize,
    sets: Vec<PivotSet>,
    total: u64,
}

impl RrefEnumeration {
    pub fn new(s: usize, n: usize, field: PrimeField) -> Result<Self> {
        if s == 0 || s > n {
            return Err(Error::invalid(format!("RREF shape {s}x{n} needs 1 <= s <= n")));
        }
        let q = field.q as u64;
        let mut sets = Vec::new();
        let mut start: u64 = 0;
        let mut pivots: Vec<usize> = (0..s).collect();
        loop {
            let mut free = Vec::new();
            for (r, &p) in pivots.iter().enumerate() {
                for c in p + 1..n {
                    if !pivots.contains(&c) {
                        free.push(r * n + c);
                    }
                }
            }
            let count = u32::try_from(free.len())
                .ok()
                .and_then(|e| q.checked_pow(e))
                .ok_or_else(|| Error::invalid("RREF enumeration exceeds 2^64 matrices"))?;
            sets.push(PivotSet { pivots: pivots.clone(), free, count, start });
            start = start
                .checked_add(count)
                .ok_or_else(|| Error::invalid("RREF enumeration exceeds 2^64 matrices"))?;
            if !next_combination(&mut pivots, n) {
                break;
            }
        }
        Ok(RrefEnumeration { field, s, n, sets, total: start })
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn rows(&self) -> usize {
        self.s
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn pivot_sets(&self) -> &[PivotSet] {
        &self.sets
    }

    /// Writes matrix `j` row-major into `out` (length `s * n`) and returns its
    /// pivot set.
    pub fn unrank_into(&self, j: u64, out: &mut [u32]) -> Result<&PivotSet> {
        if j >= self.total {
            return Err(Error::OutOfRange { index: j, count: self.total });
        }
        debug_assert_eq!(out.len(), self.s * self.n);
        let idx = self.sets.partition_point(|p| p.start + p.count <= j);
        let set = &self.sets[idx];
        out.fill(0);
        for (r, &p) in set.pivots.iter().enumerate() {
            out[r * self.n + p] = 1;
        }
        let q = self.field.q as u64;
        let mut local = j - set.start;
        for &pos in &set.free {
            out[pos] = (local % q) as u32;
            local /= q;
        }
        Ok(set)
    }

    pub fn unrank(&self, j: u64) -> Result<FieldMatrix> {
        let mut data = vec![0; self.s * self.n];
        self.unrank_into(j, &mut data)?;
        Ok(FieldMatrix { field: self.field, rows: self.s, cols: self.n, data })
    }

    pub fn iter(&self) -> impl Iterator<Item = FieldMatrix> + '_ {
        (0..self.total).map(move |j| self.unrank(j).expect("index in range"))
    }
}

/// The `j`-th full-rank `s x n` RREF matrix over GF(q) in the fixed order.
pub fn rref_enumerate(s: usize, n: usize, field: PrimeField, j: u64) -> Result<FieldMatrix> {
    RrefEnumeration::new(s, n, field)?.unrank(j)
}

/// Advances `comb` to the next `k`-combination of `0..n` in lexicographic order.
pub(crate) fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if comb[i] < n - k + i {
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Converts a count that is known to be small.
pub(crate) fn big_to_u64(x: &BigUint) -> Result<u64> {
    x.to_u64().ok_or_else(|| Error::invalid(format!("{x} does not fit in 64 bits")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn gf(q: u64) -> PrimeField {
        PrimeField::new(q).unwrap()
    }

    #[test]
    fn small_field_examples() {
        assert_eq!(gf(7).mul(3, 5), 1);
        assert_eq!(gf(23).inv(2).unwrap(), 12);
        assert_eq!(gf(2).add(1, 1), 0);
        assert!(matches!(gf(5).inv(0), Err(Error::ZeroInverse(5))));
    }

    #[test]
    fn rejects_non_primes() {
        for q in [0, 1, 4, 9, 15, 1 << 31, 2147483649] {
            assert!(PrimeField::new(q).is_err(), "{q}");
        }
        assert!(PrimeField::new(MAX_MODULUS).is_ok());
    }

    #[test]
    fn field_axioms_exhaustive() {
        for q in [2u64, 3, 5, 7] {
            let f = gf(q);
            let els: Vec<u32> = (0..q as u32).collect();
            for &a in &els {
                assert_eq!(f.add(a, f.neg(a)), 0);
                if a != 0 {
                    assert_eq!(f.mul(a, f.inv(a).unwrap()), 1);
                }
                for &b in &els {
                    assert_eq!(f.add(a, b), f.add(b, a));
                    assert_eq!(f.mul(a, b), f.mul(b, a));
                    assert_eq!(f.sub(f.add(a, b), b), a);
                    for &c in &els {
                        assert_eq!(f.add(f.add(a, b), c), f.add(a, f.add(b, c)));
                        assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
                        assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn field_axioms_large_prime(a in 0u32..2147483647, b in 0u32..2147483647, c in 0u32..2147483647) {
            let f = gf(MAX_MODULUS);
            prop_assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
            prop_assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
            if a != 0 {
                prop_assert_eq!(f.mul(a, f.inv(a).unwrap()), 1);
            }
        }
    }

    #[test]
    fn mat_mul_examples() {
        let f = gf(5);
        let p = FieldMatrix::new(f, 3, 4, (0..12).map(|x| x % 5).collect()).unwrap();
        assert_eq!(FieldMatrix::identity(f, 3).mul(&p).unwrap(), p);

        let f2 = gf(2);
        let a = FieldMatrix::new(f2, 1, 2, vec![1, 1]).unwrap();
        let b = FieldMatrix::new(f2, 2, 1, vec![1, 1]).unwrap();
        assert_eq!(a.mul(&b).unwrap().as_slice(), &[0]);
        assert!(matches!(a.mul(&a), Err(Error::Dimension(_))));
    }

    #[test]
    fn mat_mul_matches_naive_oracle() {
        let f = gf(5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a: Vec<u32> = (0..9).map(|_| rng.gen_range(0..5)).collect();
            let b: Vec<u32> = (0..9).map(|_| rng.gen_range(0..5)).collect();
            let mut naive = [0u32; 9];
            for i in 0..3 {
                for j in 0..3 {
                    let mut s = 0;
                    for k in 0..3 {
                        s += a[i * 3 + k] * b[k * 3 + j];
                    }
                    naive[i * 3 + j] = s % 5;
                }
            }
            let ma = FieldMatrix::new(f, 3, 3, a).unwrap();
            let mb = FieldMatrix::new(f, 3, 3, b).unwrap();
            assert_eq!(ma.mul(&mb).unwrap().as_slice(), &naive);
        }
    }

    #[test]
    fn gaussian_binomial_values() {
        assert_eq!(rref_count(2, 3, gf(2)), BigUint::from(7u32));
        assert_eq!(rref_count(1, 5, gf(23)), BigUint::from(292561u32));
        assert_eq!(rref_count(4, 5, gf(19)), BigUint::from(137561u32));
        assert_eq!(rref_count(1, 3, gf(3)), BigUint::from(13u32));
    }

    /// All full-rank RREF matrices found by brute force over every matrix.
    fn brute_force_rref(s: usize, n: usize, q: u64) -> HashSet<Vec<u32>> {
        let f = gf(q);
        let cells = s * n;
        let total = q.pow(cells as u32);
        let mut found = HashSet::new();
        for code in 0..total {
            let mut c = code;
            let data: Vec<u32> = (0..cells)
                .map(|_| {
                    let d = (c % q) as u32;
                    c /= q;
                    d
                })
                .collect();
            let m = FieldMatrix::new(f, s, n, data.clone()).unwrap();
            if m.is_full_rank_rref() {
                found.insert(data);
            }
        }
        found
    }

    #[test]
    fn rref_enumeration_matches_brute_force() {
        for (s, n, q) in [(2, 3, 2), (1, 3, 3), (2, 4, 2), (2, 4, 3), (1, 4, 5), (3, 4, 2)] {
            let e = RrefEnumeration::new(s, n, gf(q)).unwrap();
            let produced: Vec<Vec<u32>> = e.iter().map(|m| m.as_slice().to_vec()).collect();
            let set: HashSet<Vec<u32>> = produced.iter().cloned().collect();
            assert_eq!(set.len(), produced.len(), "injective for {s}x{n} GF({q})");
            assert_eq!(set, brute_force_rref(s, n, q), "{s}x{n} GF({q})");
            assert_eq!(e.len(), big_to_u64(&rref_count(s, n, gf(q))).unwrap());
        }
    }

    #[test]
    fn rref_outputs_have_full_rank() {
        let e = RrefEnumeration::new(3, 6, gf(3)).unwrap();
        for j in (0..e.len()).step_by(97) {
            let m = e.unrank(j).unwrap();
            assert!(m.is_full_rank_rref());
            assert_eq!(m.rank(), 3);
        }
    }

    #[test]
    fn first_rref_is_leading_identity() {
        let m = rref_enumerate(2, 5, gf(7), 0).unwrap();
        assert_eq!(m.as_slice(), &[1, 0, 0, 0, 0, 0, 1, 0, 0, 0]);
        assert!(matches!(
            rref_enumerate(2, 3, gf(2), 7),
            Err(Error::OutOfRange { index: 7, count: 7 })
        ));
    }

    #[test]
    fn pivot_set_counts_sum_to_gaussian_binomial() {
        for q in [2u64, 3, 5, 7, 11] {
            for n in 1..=6usize {
                for s in 1..=n {
                    let count = rref_count(s, n, gf(q));
                    if count > BigUint::from(100_000u32) {
                        continue;
                    }
                    let e = RrefEnumeration::new(s, n, gf(q)).unwrap();
                    let sum: u64 = e.pivot_sets().iter().map(|p| p.count).sum();
                    assert_eq!(BigUint::from(sum), count, "s={s} n={n} q={q}");
                }
            }
        }
    }

    #[test]
    fn rank_of_singular_matrix() {
        let m = FieldMatrix::new(gf(3), 2, 3, vec![1, 2, 0, 2, 1, 0]).unwrap();
        assert_eq!(m.rank(), 1);
    }
}
