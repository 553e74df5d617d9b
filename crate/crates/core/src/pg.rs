//! Projective-geometry coverings and their partially-induced covering
//! verification designs, generated block by block.
//!
//! Points of PG(m, q) are the canonical representatives of the one-dimensional
//! subspaces of GF(q)^(m+1): for `d = 0..=m`, the vectors whose first nonzero
//! coordinate sits at position `d` and equals 1, with the trailing `m - d`
//! coordinates running through GF(q)^(m-d) in lexicographic order. Point
//! indices are 1-based in that order.
//!
//! The (t-1)-flats are the null spaces of the full-rank `(m-t+1) x (m+1)` RREF
//! matrices, which [`RrefEnumeration`] ranks. A CVD stream multiplies each
//! matrix only against the `v` selected points, so the underlying PG covering
//! is never materialized.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gf::{gaussian_binomial, FieldMatrix, PrimeField, RrefEnumeration};

/// Parameters `(q, m, t)` of a PG covering `C(v', k', t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PgParams {
    q: u32,
    m: usize,
    t: usize,
    v_prime: u64,
    k_prime: u64,
}

fn projective_count(q: u64, dim: usize) -> Option<u64> {
    // (q^(dim) - 1) / (q - 1) = 1 + q + ... + q^(dim-1)
    let mut acc: u64 = 0;
    let mut pow: u64 = 1;
    for _ in 0..dim {
        acc = acc.checked_add(pow)?;
        pow = pow.checked_mul(q)?;
    }
    Some(acc)
}

impl PgParams {
    pub fn new(q: u64, m: usize, t: usize) -> Result<Self> {
        let field = PrimeField::new(q)?;
        if t < 2 {
            return Err(Error::invalid(format!("t = {t} must be at least 2")));
        }
        if m < t {
            return Err(Error::invalid(format!("m = {m} must be at least t = {t}")));
        }
        let v_prime = projective_count(q, m + 1)
            .ok_or_else(|| Error::invalid(format!("PG({m},{q}) has more than 2^64 points")))?;
        let k_prime = projective_count(q, t).expect("k' <= v'");
        Ok(PgParams { q: field.order(), m, t, v_prime, k_prime })
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn field(&self) -> PrimeField {
        PrimeField::new(self.q as u64).expect("validated on construction")
    }

    /// Number of points, `(q^(m+1) - 1) / (q - 1)`.
    pub fn v_prime(&self) -> u64 {
        self.v_prime
    }

    /// Points per flat, `(q^t - 1) / (q - 1)`.
    pub fn k_prime(&self) -> u64 {
        self.k_prime
    }

    /// Number of blocks, the Gaussian binomial `[m+1, t]_q`.
    pub fn block_count(&self) -> BigUint {
        gaussian_binomial(self.m as u64 + 1, self.t as u64, self.q as u64)
    }

    /// Rows of the constraint matrices, `m - t + 1`.
    pub fn constraint_rows(&self) -> usize {
        self.m - self.t + 1
    }

    pub fn enumeration(&self) -> Result<RrefEnumeration> {
        RrefEnumeration::new(self.constraint_rows(), self.m + 1, self.field())
    }
}

impl fmt::Display for PgParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PG(q={}, m={}, t={})", self.q, self.m, self.t)
    }
}

/// A strictly increasing list of 1-based indices. May be empty.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Block(Vec<u32>);

impl Block {
    /// Fails unless `indices` is strictly increasing and 1-based.
    pub fn new(indices: Vec<u32>) -> Result<Self> {
        if indices.first() == Some(&0) {
            return Err(Error::invalid("block indices are 1-based"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("block {indices:?} is not strictly increasing")));
        }
        Ok(Block(indices))
    }

    /// Sorts and deduplicates.
    pub fn from_unsorted(mut indices: Vec<u32>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Block::new(indices)
    }

    pub(crate) fn from_sorted_unchecked(indices: Vec<u32>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Block(indices)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }

    pub fn contains(&self, i: u32) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &Block) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{i}")?;
        }
        Ok(())
    }
}

/// The ordered selection `L` of `v` distinct points out of `[1, v']`.
///
/// Induced block indices are positions in this list (1-based), which renames
/// the selected points onto `[1, v]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InducedSelection {
    points: Vec<u64>,
    seed: Option<u64>,
}

impl InducedSelection {
    pub fn new(points: Vec<u64>, v_prime: u64) -> Result<Self> {
        let mut sorted = points.clone();
        sorted.sort_unstable();
        if sorted.first() == Some(&0) || sorted.last().is_some_and(|&x| x > v_prime) {
            return Err(Error::invalid(format!("selection must lie in [1, {v_prime}]")));
        }
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("selection contains duplicates"));
        }
        Ok(InducedSelection { points, seed: None })
    }

    /// Draws `v` points uniformly without replacement, in random order.
    pub fn random(v_prime: u64, v: usize, seed: u64) -> Result<Self> {
        if v as u64 > v_prime {
            return Err(Error::invalid(format!("cannot select {v} of {v_prime} points")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, v_prime as usize, v).into_vec();
        idx.shuffle(&mut rng);
        let points = idx.into_iter().map(|i| i as u64 + 1).collect();
        Ok(InducedSelection { points, seed: Some(seed) })
    }

    /// The identity selection `[1, 2, ..., v']`, which leaves the PG covering intact.
    pub fn all(v_prime: u64) -> Self {
        InducedSelection { points: (1..=v_prime).collect(), seed: None }
    }

    pub fn points(&self) -> &[u64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// Coordinates of point `index` (1-based) in the canonical order.
pub fn point_vector(params: &PgParams, index: u64) -> Result<Vec<u32>> {
    if index == 0 || index > params.v_prime {
        return Err(Error::OutOfRange { index, count: params.v_prime });
    }
    let q = params.q as u64;
    let n = params.m + 1;
    let mut rest = index - 1;
    let mut out = vec![0u32; n];
    for d in 0..n {
        let count = q.pow((params.m - d) as u32);
        if rest < count {
            out[d] = 1;
            for pos in (d + 1..n).rev() {
                out[pos] = (rest % q) as u32;
                rest /= q;
            }
            return Ok(out);
        }
        rest -= count;
    }
    unreachable!("index checked against v'")
}

/// Inverse of [`point_vector`]: the 1-based index of the projective point
/// spanned by a nonzero vector.
pub fn point_index(params: &PgParams, vector: &[u32]) -> Result<u64> {
    let field = params.field();
    let n = params.m + 1;
    if vector.len() != n {
        return Err(Error::Dimension(format!("point of length {} in PG({})", vector.len(), params.m)));
    }
    let Some(d) = vector.iter().position(|&x| x % field.order() != 0) else {
        return Err(Error::invalid("the zero vector is not a projective point"));
    };
    let scale = field.inv(field.element(vector[d] as u64))?;
    let q = params.q as u64;
    let mut index: u64 = (0..d).map(|e| q.pow((params.m - e) as u32)).sum();
    let mut tail = 0u64;
    for &x in &vector[d + 1..] {
        tail = tail * q + field.mul(field.element(x as u64), scale) as u64;
    }
    index += tail;
    Ok(index + 1)
}

/// The `(m+1) x v'` matrix whose columns are the canonical points.
pub fn pg_points(params: &PgParams) -> Result<FieldMatrix> {
    let n = params.m + 1;
    let v = params.v_prime as usize;
    let mut data = vec![0u32; n * v];
    for i in 0..v {
        let col = point_vector(params, i as u64 + 1)?;
        for (r, x) in col.into_iter().enumerate() {
            data[r * v + i] = x;
        }
    }
    FieldMatrix::new(params.field(), n, v, data)
}

/// Block `j` of the PG covering, as point indices in `[1, v']`.
pub fn pg_block(params: &PgParams, j: u64) -> Result<Block> {
    let enumeration = params.enumeration()?;
    let constraints = enumeration.unrank(j)?;
    let points = pg_points(params)?;
    let product = constraints.mul(&points)?;
    let block = (0..product.cols())
        .filter(|&c| (0..product.rows()).all(|r| product.get(r, c) == 0))
        .map(|c| c as u32 + 1)
        .collect();
    Ok(Block::from_sorted_unchecked(block))
}

/// Parameters `(v, b, r, k, lambda)` of the BIBD formed by the PG covering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BibdParams {
    pub v: u64,
    pub b: BigUint,
    pub r: BigUint,
    pub k: u64,
    pub lambda: BigUint,
}

pub fn bibd_parameters(params: &PgParams) -> BibdParams {
    let (q, m, t) = (params.q as u64, params.m as u64, params.t as u64);
    BibdParams {
        v: params.v_prime,
        b: gaussian_binomial(m + 1, t, q),
        r: gaussian_binomial(m, t - 1, q),
        k: params.k_prime,
        lambda: gaussian_binomial(m - 1, t - 2, q),
    }
}

/// Streams the induced blocks of one worker's share of a CVD.
///
/// Worker `w` of `n` visits the constraint matrices `j` with `j % n == w` in
/// increasing order. The selected points are held in an [`Arc`], so cloning a
/// stream (or building one per worker from the same selection via
/// [`CvdStream::for_worker`]) does not copy them.
#[derive(Clone)]
pub struct CvdStream {
    params: PgParams,
    enumeration: Arc<RrefEnumeration>,
    /// Selected points, one column of `m + 1` coordinates after another.
    points: Arc<[u32]>,
    v: usize,
    next: u64,
    step: u64,
    matrix: Vec<u32>,
    sparse: Vec<(u32, u32)>,
    row_ends: Vec<usize>,
    /// Set when listing each flat's k' points beats scanning the v selected
    /// points.
    flat: Option<Arc<FlatLookup>>,
}

/// Position in L of every selected point, plus field inverses, for
/// enumerating a flat directly.
struct FlatLookup {
    positions: Positions,
    inverse: Vec<u64>,
}

enum Positions {
    Dense(Vec<u32>),
    Sparse(HashMap<u64, u32>),
}

impl Positions {
    fn get(&self, index: u64) -> Option<u32> {
        match self {
            Positions::Dense(p) => p.get(index as usize).copied().filter(|&x| x != 0),
            Positions::Sparse(p) => p.get(&index).copied(),
        }
    }
}

const DENSE_LOOKUP_MAX: u64 = 1 << 22;

impl FlatLookup {
    fn new(params: &PgParams, selection: &InducedSelection) -> Result<Self> {
        let positions = if params.v_prime <= DENSE_LOOKUP_MAX {
            let mut p = vec![0u32; params.v_prime as usize + 1];
            for (i, &x) in selection.points().iter().enumerate() {
                p[x as usize] = i as u32 + 1;
            }
            Positions::Dense(p)
        } else {
            Positions::Sparse(selection.points().iter().enumerate().map(|(i, &x)| (x, i as u32 + 1)).collect())
        };
        let field = params.field();
        let inverse = (0..params.q).map(|a| if a == 0 { Ok(0) } else { field.inv(a).map(u64::from) }).collect::<Result<_>>()?;
        Ok(FlatLookup { positions, inverse })
    }
}

impl CvdStream {
    pub fn new(
        params: PgParams,
        selection: &InducedSelection,
        worker: usize,
        workers: usize,
    ) -> Result<Self> {
        let n = params.m + 1;
        let mut points = Vec::with_capacity(selection.len() * n);
        for &p in selection.points() {
            points.extend(point_vector(&params, p)?);
        }
        let base = CvdStream {
            params,
            enumeration: Arc::new(params.enumeration()?),
            points: points.into(),
            v: selection.len(),
            next: 0,
            step: 1,
            matrix: vec![0; params.constraint_rows() * n],
            sparse: Vec::new(),
            row_ends: Vec::new(),
            flat: None,
        };
        let mut base = base;
        // a flat has k' points, each costing about t + 2 point products
        let flat_cost = params.k_prime.saturating_mul(params.t as u64 + 2);
        if params.q < (1 << 16) && flat_cost < selection.len() as u64 {
            base.flat = Some(Arc::new(FlatLookup::new(&params, selection)?));
        }
        base.for_worker(worker, workers)
    }

    /// A stream over the same design restricted to `worker`'s share.
    pub fn for_worker(&self, worker: usize, workers: usize) -> Result<Self> {
        if workers == 0 || worker >= workers {
            return Err(Error::invalid(format!("worker {worker} of {workers}")));
        }
        let mut s = self.clone();
        s.next = worker as u64;
        s.step = workers as u64;
        Ok(s)
    }

    pub fn params(&self) -> &PgParams {
        &self.params
    }

    /// Number of selected points, i.e. the index range `[1, v]` of the blocks.
    pub fn v(&self) -> usize {
        self.v
    }

    /// Blocks left in this worker's share.
    pub fn remaining(&self) -> u64 {
        let total = self.enumeration.len();
        if self.next >= total {
            0
        } else {
            (total - self.next).div_ceil(self.step)
        }
    }

    fn induce(&mut self, j: u64) -> Block {
        self.enumeration
            .unrank_into(j, &mut self.matrix)
            .expect("stream index below enumeration length");
        match self.flat.clone() {
            Some(lookup) => self.induce_flat(&lookup),
            None => self.induce_scan(),
        }
    }

    /// Lists the points of the null space of `self.matrix` and keeps the
    /// selected ones.
    fn induce_flat(&self, lookup: &FlatLookup) -> Block {
        let n = self.params.m + 1;
        let t = self.params.t;
        let q = self.params.q as u64;
        let mut is_pivot = vec![false; n];
        let pivots: Vec<usize> = self
            .matrix
            .chunks_exact(n)
            .map(|row| {
                let p = row.iter().position(|&x| x != 0).expect("full rank");
                is_pivot[p] = true;
                p
            })
            .collect();
        // basis vector for free column f: e_f minus the pivot entries of column f
        let mut basis = vec![0u64; t * n];
        for (b, f) in (0..n).filter(|&c| !is_pivot[c]).enumerate() {
            let v = &mut basis[b * n..(b + 1) * n];
            v[f] = 1;
            for (r, &p) in pivots.iter().enumerate() {
                v[p] = (q - self.matrix[r * n + f] as u64) % q;
            }
        }
        let mut heads = vec![0u64; n];
        for d in 1..n {
            heads[d] = heads[d - 1] + q.pow((self.params.m - (d - 1)) as u32);
        }
        let mut out = Vec::new();
        let mut coeff = vec![0u64; t];
        let mut vec = vec![0u64; n];
        for lead in 0..t {
            coeff.iter_mut().for_each(|c| *c = 0);
            coeff[lead] = 1;
            loop {
                vec.iter_mut().for_each(|x| *x = 0);
                for (b, &c) in coeff.iter().enumerate().skip(lead) {
                    if c != 0 {
                        for (x, &y) in vec.iter_mut().zip(&basis[b * n..(b + 1) * n]) {
                            *x += c * y;
                        }
                    }
                }
                let d = vec.iter().position(|&x| x % q != 0).expect("independent basis");
                let scale = lookup.inverse[(vec[d] % q) as usize];
                let tail = vec[d + 1..].iter().fold(0u64, |acc, &x| acc * q + (x % q) * scale % q);
                if let Some(pos) = lookup.positions.get(heads[d] + tail + 1) {
                    out.push(pos);
                }
                // next coefficient tuple after the lead, little end last
                let mut i = t;
                loop {
                    if i == lead + 1 {
                        break;
                    }
                    i -= 1;
                    coeff[i] += 1;
                    if coeff[i] < q {
                        break;
                    }
                    coeff[i] = 0;
                }
                if coeff[lead + 1..].iter().all(|&c| c == 0) {
                    break;
                }
            }
        }
        out.sort_unstable();
        Block::from_sorted_unchecked(out)
    }

    fn induce_scan(&mut self) -> Block {
        let n = self.params.m + 1;
        self.sparse.clear();
        self.row_ends.clear();
        for row in self.matrix.chunks_exact(n) {
            for (c, &x) in row.iter().enumerate() {
                if x != 0 {
                    self.sparse.push((c as u32, x));
                }
            }
            self.row_ends.push(self.sparse.len());
        }
        let q = self.params.q as u64;
        let mut block = Vec::new();
        if q < (1 << 16) {
            for (i, point) in self.points.chunks_exact(n).enumerate() {
                let mut start = 0;
                let mut member = true;
                for &end in &self.row_ends {
                    let acc: u64 = self.sparse[start..end]
                        .iter()
                        .map(|&(c, a)| a as u64 * point[c as usize] as u64)
                        .sum();
                    if !acc.is_multiple_of(q) {
                        member = false;
                        break;
                    }
                    start = end;
                }
                if member {
                    block.push(i as u32 + 1);
                }
            }
        } else {
            let q = q as u128;
            for (i, point) in self.points.chunks_exact(n).enumerate() {
                let mut start = 0;
                let mut member = true;
                for &end in &self.row_ends {
                    let acc: u128 = self.sparse[start..end]
                        .iter()
                        .map(|&(c, a)| a as u128 * point[c as usize] as u128)
                        .sum();
                    if !acc.is_multiple_of(q) {
                        member = false;
                        break;
                    }
                    start = end;
                }
                if member {
                    block.push(i as u32 + 1);
                }
            }
        }
        Block::from_sorted_unchecked(block)
    }
}

impl Iterator for CvdStream {
    type Item = Block;

    fn next(&mut self) -> Option<Block> {
        if self.next >= self.enumeration.len() {
            return None;
        }
        let j = self.next;
        self.next = self.next.saturating_add(self.step);
        Some(self.induce(j))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let r = usize::try_from(self.remaining()).unwrap_or(usize::MAX);
        (r, Some(r))
    }
}

/// The full PG covering over `[1, v']`, streamed.
pub fn pg_stream(params: PgParams, worker: usize, workers: usize) -> Result<CvdStream> {
    CvdStream::new(params, &InducedSelection::all(params.v_prime), worker, workers)
}
