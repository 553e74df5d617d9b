//! Closed-form block-size statistics of covering verification designs,
//! candidate enumeration and block-size distribution estimates.
//!
//! For a `(v', b, r, k', lambda)`-BIBD partially induced by any `v`-subset of
//! its points, the block sizes have
//!
//! ```text
//! mean     = v k' / v'
//! variance = mean (1 + (v - 1)(k' - 1) / (v' - 1) - mean)   <= mean
//! ```
//!
//! independently of which subset is chosen. Means and variances are kept as
//! exact rationals; floats appear only at the Gaussian CDF.

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use libm::erfc;

use crate::error::{Error, Result};
use crate::gf::primes;
use crate::pg::{Block, PgParams};

fn ratio(n: impl Into<BigInt>, d: impl Into<BigInt>) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Mean and variance of the induced block sizes of a `(v', ., ., k', .)`-BIBD.
pub fn theorem_moments(v_prime: u64, k_prime: u64, v: u64) -> Result<(BigRational, BigRational)> {
    if v_prime < 2 {
        return Err(Error::invalid("v' must exceed 1"));
    }
    if v == 0 || v > v_prime {
        return Err(Error::invalid(format!("v = {v} must lie in [1, {v_prime}]")));
    }
    let mean = ratio(v * k_prime, v_prime);
    let spread = ratio((v - 1) * (k_prime - 1), v_prime - 1);
    let variance = &mean * (BigRational::one() + spread - &mean);
    assert!(variance <= mean, "variance is bounded by the mean");
    assert!(variance >= BigRational::zero());
    Ok((mean, variance))
}

/// A CVD candidate: a PG covering plus the pixel count it will be induced to.
#[derive(Clone, Debug, PartialEq)]
pub struct CvdCandidate {
    pub params: PgParams,
    pub v: usize,
    pub b: BigUint,
    pub mean: BigRational,
    pub variance: BigRational,
}

impl CvdCandidate {
    pub fn mean_f64(&self) -> f64 {
        to_f64(&self.mean)
    }

    pub fn variance_f64(&self) -> f64 {
        to_f64(&self.variance)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance_f64().sqrt()
    }

    pub fn b_f64(&self) -> f64 {
        self.b.to_f64().unwrap_or(f64::INFINITY)
    }

    /// Expected number of blocks larger than `max_k` under the Gaussian model.
    pub fn expected_oversized(&self, max_k: usize) -> f64 {
        let mu = self.mean_f64();
        let sigma = self.std_dev();
        let tail = if sigma == 0.0 {
            if mu > max_k as f64 { 1.0 } else { 0.0 }
        } else {
            upper_tail((max_k as f64 - mu) / sigma)
        };
        self.b_f64() * tail
    }
}

pub fn cvd_stats(params: PgParams, v: usize) -> Result<CvdCandidate> {
    let (mean, variance) = theorem_moments(params.v_prime(), params.k_prime(), v as u64)?;
    Ok(CvdCandidate { params, v, b: params.block_count(), mean, variance })
}

/// Running sums of block sizes, for exact empirical moments over a stream.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SizeMoments {
    count: u64,
    sum: u128,
    sum_sq: u128,
}

impl SizeMoments {
    pub fn push(&mut self, size: usize) {
        self.count += 1;
        self.sum += size as u128;
        self.sum_sq += (size as u128) * (size as u128);
    }

    pub fn merge(&mut self, other: &SizeMoments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Population mean and variance as exact rationals.
    pub fn moments(&self) -> Result<(BigRational, BigRational)> {
        if self.count == 0 {
            return Err(Error::Empty("no block sizes"));
        }
        let n = BigInt::from(self.count);
        let mean = BigRational::new(BigInt::from(self.sum), n.clone());
        let second = BigRational::new(BigInt::from(self.sum_sq), n);
        let variance = second - &mean * &mean;
        Ok((mean, variance))
    }
}

impl Extend<usize> for SizeMoments {
    fn extend<I: IntoIterator<Item = usize>>(&mut self, iter: I) {
        for s in iter {
            self.push(s);
        }
    }
}

/// Exact population mean and variance of the block sizes.
pub fn empirical_stats<'a>(
    blocks: impl IntoIterator<Item = &'a Block>,
) -> Result<(BigRational, BigRational)> {
    let mut m = SizeMoments::default();
    m.extend(blocks.into_iter().map(Block::len));
    m.moments()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `1 - normal_cdf(z)` without cancellation in the upper tail.
pub fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Candidate filters. `min_k` bounds the mean block size from below; the
/// expected number of blocks above `max_k` must not exceed `eps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateFilter {
    pub min_k: f64,
    pub max_k: usize,
    pub eps: f64,
}

impl CandidateFilter {
    pub fn with_defaults(t: usize) -> Self {
        CandidateFilter {
            min_k: t as f64,
            max_k: crate::defaults::MAX_K,
            eps: crate::defaults::EPS,
        }
    }
}

/// All prime-`q` PG coverings with `m >= t`, `v' >= v` and mean induced
/// block size at least `min_k` that pass the oversized-block filter, sorted
/// by `(q, m)`.
pub fn enumerate_candidates(v: usize, t: usize, filter: CandidateFilter) -> Result<Vec<CvdCandidate>> {
    if t < 2 {
        return Err(Error::invalid("t must be at least 2"));
    }
    if filter.min_k < t as f64 {
        return Err(Error::invalid(format!("min_k = {} is below t = {t}", filter.min_k)));
    }
    let mut out = Vec::new();
    for m in t.. {
        // the mean shrinks as m grows; stop once even q = 2 falls short
        let Ok(smallest) = PgParams::new(2, m, t) else { break };
        if smallest.v_prime() >= v as u64
            && cvd_stats(smallest, v)?.mean_f64() < filter.min_k
        {
            break;
        }
        for q in primes() {
            let Ok(params) = PgParams::new(q, m, t) else { break };
            if params.v_prime() < v as u64 {
                continue;
            }
            let c = cvd_stats(params, v)?;
            if c.mean_f64() < filter.min_k {
                break;
            }
            if c.expected_oversized(filter.max_k) <= filter.eps {
                out.push(c);
            }
        }
    }
    out.sort_by_key(|c| (c.params.q(), c.params.m()));
    Ok(out)
}

/// How fractional expected counts become block counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rounding {
    /// `floor(x)` plus a seeded Bernoulli draw with the fractional part.
    Bernoulli { seed: u64 },
    /// Round half to even, for reproducible reports.
    HalfEven,
    /// Keep the real-valued expectations.
    Expected,
}

/// Estimated number of blocks of each size `t..=max_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeDistribution {
    pub counts: BTreeMap<usize, f64>,
    pub rounding: Rounding,
}

impl SizeDistribution {
    pub fn total(&self) -> f64 {
        self.counts.values().sum()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.counts.get(&k).copied().unwrap_or(0.0)
    }
}

/// Expected number of blocks of size `k` under the discretized Gaussian
/// model, for every `k` in `lo..=hi`.
pub fn expected_counts(c: &CvdCandidate, lo: usize, hi: usize) -> BTreeMap<usize, f64> {
    let b = c.b_f64();
    let mu = c.mean_f64();
    let sigma = c.std_dev();
    (lo..=hi)
        .map(|k| {
            let p = if sigma == 0.0 {
                // every block has exactly k' points
                if (k as f64 - mu).abs() < 0.5 { 1.0 } else { 0.0 }
            } else {
                let a = (k as f64 - 0.5 - mu) / sigma;
                let z = (k as f64 + 0.5 - mu) / sigma;
                // difference of upper tails keeps precision far right of the mean
                if a > 0.0 { upper_tail(a) - upper_tail(z) } else { normal_cdf(z) - normal_cdf(a) }
            };
            (k, b * p)
        })
        .collect()
}

fn round_half_even(x: f64) -> f64 {
    let f = x.floor();
    let frac = x - f;
    if frac > 0.5 || (frac == 0.5 && f % 2.0 != 0.0) {
        f + 1.0
    } else {
        f
    }
}

pub fn estimate_distribution(c: &CvdCandidate, max_k: usize, rounding: Rounding) -> SizeDistribution {
    let t = c.params.t();
    let expected = if t <= max_k { expected_counts(c, t, max_k) } else { BTreeMap::new() };
    let counts = match rounding {
        Rounding::Expected => expected,
        Rounding::HalfEven => expected.into_iter().map(|(k, x)| (k, round_half_even(x))).collect(),
        Rounding::Bernoulli { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            expected
                .into_iter()
                .map(|(k, x)| {
                    let f = x.floor();
                    let extra = if rng.gen_bool((x - f).clamp(0.0, 1.0)) { 1.0 } else { 0.0 };
                    (k, f + extra)
                })
                .collect()
        }
    };
    SizeDistribution { counts, rounding }
}

/// Half the L1 distance between two histograms after dividing both by `total`.
pub fn total_variation(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>, total: f64) -> f64 {
    let keys: std::collections::BTreeSet<usize> = a.keys().chain(b.keys()).copied().collect();
    keys.into_iter()
        .map(|k| (a.get(&k).copied().unwrap_or(0.0) - b.get(&k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
        / total
        / 2.0
}

/// Schönheim lower bound on the size of a `C(v, k, t)` covering:
/// `L(v, k, t) = ceil(v / k * L(v - 1, k - 1, t - 1))`, `L(., ., 0) = 1`.
pub fn schonheim_bound(v: u64, k: u64, t: u64) -> Result<BigUint> {
    if !(t <= k && k <= v) || k == 0 {
        return Err(Error::invalid(format!("Schönheim bound needs 1 <= t <= k <= v, got ({v},{k},{t})")));
    }
    let mut bound = BigUint::one();
    for i in (0..t).rev() {
        let num = bound * BigUint::from(v - i);
        bound = num.div_ceil(&BigUint::from(k - i));
    }
    Ok(bound)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioRow {
    pub q: u32,
    pub m: usize,
    pub mean: f64,
    pub b: BigUint,
    pub bound: BigUint,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioReport {
    pub v: usize,
    pub t: usize,
    pub rows: Vec<RatioRow>,
}

impl RatioReport {
    pub fn average(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| r.ratio).sum::<f64>() / self.rows.len() as f64
    }

    /// CSV with header `q,m,mean,b,schonheim,ratio`, then an `average` line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("q,m,mean,b,schonheim,ratio\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.6},{},{},{:.6}\n", r.q, r.m, r.mean, r.b, r.bound, r.ratio));
        }
        s.push_str(&format!("average,,,,,{:.6}\n", self.average()));
        s
    }
}

/// Size of each candidate CVD relative to the Schönheim bound for
/// `(v, ceil(mean), t)`, over the candidates whose mean is at least `min_mean`.
pub fn ratio_report(v: usize, t: usize, min_mean: f64) -> Result<RatioReport> {
    let filter = CandidateFilter { min_k: min_mean, ..CandidateFilter::with_defaults(t) };
    let mut rows = Vec::new();
    for c in enumerate_candidates(v, t, filter)? {
        let k = c.mean_f64().ceil() as u64;
        let bound = schonheim_bound(v as u64, k, t as u64)?;
        let ratio = BigRational::new(BigInt::from(c.b.clone()), BigInt::from(bound.clone()));
        rows.push(RatioRow {
            q: c.params.q(),
            m: c.params.m(),
            mean: c.mean_f64(),
            b: c.b.clone(),
            bound,
            ratio: to_f64(&ratio),
        });
    }
    Ok(RatioReport { v, t, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pg::{CvdStream, InducedSelection};

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn blocks(sets: &[&[u32]]) -> Vec<Block> {
        sets.iter().map(|s| Block::new(s.to_vec()).unwrap()).collect()
    }

    #[test]
    fn fano_moments() {
        let c = cvd_stats(PgParams::new(2, 2, 2).unwrap(), 4).unwrap();
        assert_eq!(c.mean, r(12, 7));
        assert_eq!(c.variance, r(24, 49));
    }

    #[test]
    fn running_example_moments() {
        let c = cvd_stats(PgParams::new(23, 4, 4).unwrap(), 784).unwrap();
        assert!((c.mean_f64() - 34.087).abs() < 5e-3);
        assert!((c.variance_f64() - 32.518).abs() < 5e-3);
        assert_eq!(c.b, BigUint::from(292561u32));
        let c = cvd_stats(PgParams::new(19, 4, 4).unwrap(), 784).unwrap();
        assert!((c.mean_f64() - 41.263).abs() < 5e-3);
        assert!((c.variance_f64() - 38.867).abs() < 5e-3);
        assert_eq!(c.b, BigUint::from(137561u32));
    }

    #[test]
    fn stats_reject_oversized_v() {
        assert!(cvd_stats(PgParams::new(2, 2, 2).unwrap(), 8).is_err());
        assert!(cvd_stats(PgParams::new(2, 2, 2).unwrap(), 0).is_err());
    }

    #[test]
    fn empirical_examples() {
        let c1 = blocks(&[&[], &[4, 6], &[5, 7], &[4, 7], &[5, 6], &[4, 5], &[6, 7]]);
        let c2 = blocks(&[&[1, 2, 3], &[1, 4], &[1], &[2, 4], &[2], &[3, 4], &[3]]);
        assert_eq!(empirical_stats(&c1).unwrap(), (r(12, 7), r(24, 49)));
        assert_eq!(empirical_stats(&c2).unwrap(), (r(12, 7), r(24, 49)));
        assert_eq!(empirical_stats(&blocks(&[&[1, 2, 5]])).unwrap(), (r(3, 1), r(0, 1)));
        assert!(matches!(empirical_stats(&Vec::<Block>::new()), Err(Error::Empty(_))));
    }

    #[test]
    fn moments_match_generated_designs() {
        for (q, m, t, v, seed) in [(2, 3, 2, 9, 1), (3, 3, 2, 17, 2), (3, 4, 3, 40, 3), (5, 3, 2, 100, 4)] {
            let p = PgParams::new(q, m, t).unwrap();
            let sel = InducedSelection::random(p.v_prime(), v, seed).unwrap();
            let mut mom = SizeMoments::default();
            mom.extend(CvdStream::new(p, &sel, 0, 1).unwrap().map(|b| b.len()));
            let c = cvd_stats(p, v).unwrap();
            assert_eq!(mom.moments().unwrap(), (c.mean.clone(), c.variance.clone()));
        }
    }

    #[test]
    fn normal_cdf_tabulated_values() {
        // standard table values
        for (z, phi) in [
            (0.0, 0.5),
            (1.0, 0.841_344_746_068_542_9),
            (-1.0, 0.158_655_253_931_457_05),
            (1.96, 0.975_002_104_851_780_1),
            (-3.0, 0.001_349_898_031_630_094_6),
            (2.5, 0.993_790_334_674_223_7),
        ] {
            assert!((normal_cdf(z) - phi).abs() < 1e-12, "z={z} got {}", normal_cdf(z));
        }
        assert!((upper_tail(8.0) - 6.220_960_574_271_785e-16).abs() < 1e-25);
    }

    #[test]
    fn candidate_count_for_mnist_t4() {
        let cands = enumerate_candidates(784, 4, CandidateFilter::with_defaults(4)).unwrap();
        assert_eq!(cands.len(), 50);
        let pairs: Vec<(u32, usize)> = cands.iter().map(|c| (c.params.q(), c.params.m())).collect();
        assert!(pairs.contains(&(23, 4)) && pairs.contains(&(19, 4)));
        for c in &cands {
            assert!(c.variance <= c.mean);
            assert!(c.mean_f64() >= 4.0);
        }
    }

    #[test]
    fn pg_exact_candidate_for_364() {
        let cands = enumerate_candidates(364, 5, CandidateFilter::with_defaults(5)).unwrap();
        let c = cands.iter().find(|c| (c.params.q(), c.params.m()) == (3, 5)).unwrap();
        assert_eq!((c.params.v_prime(), c.params.k_prime()), (364, 121));
        assert_eq!(c.variance, r(0, 1));
    }

    #[test]
    fn mean_is_monotone_in_q_and_m() {
        let v = 500;
        for t in 2..=4 {
            for m in t..t + 4 {
                let means: Vec<BigRational> = primes()
                    .take(8)
                    .filter_map(|q| PgParams::new(q, m, t).ok())
                    .filter(|p| p.v_prime() >= v)
                    .map(|p| cvd_stats(p, v as usize).unwrap().mean)
                    .collect();
                assert!(means.windows(2).all(|w| w[0] > w[1]));
            }
            for q in [2u64, 3, 5] {
                let means: Vec<BigRational> = (t..t + 6)
                    .map(|m| PgParams::new(q, m, t).unwrap())
                    .filter(|p| p.v_prime() >= v)
                    .map(|p| cvd_stats(p, v as usize).unwrap().mean)
                    .collect();
                assert!(means.windows(2).all(|w| w[0] > w[1]));
            }
        }
    }

    #[test]
    fn schonheim_examples() {
        assert_eq!(schonheim_bound(7, 3, 2).unwrap(), BigUint::from(7u32));
        assert_eq!(schonheim_bound(10, 10, 3).unwrap(), BigUint::one());
        // (10,4,2): ceil(10/4 * ceil(9/3)) = 8
        assert_eq!(schonheim_bound(10, 4, 2).unwrap(), BigUint::from(8u32));
        // hand recursion for (784,35,4): ceil(781/32)=25, ceil(782/33*25)=593,
        // ceil(783/34*593)=13657, ceil(784/35*13657)=305917
        assert_eq!(schonheim_bound(784, 35, 4).unwrap(), BigUint::from(305917u32));
        assert!(schonheim_bound(5, 6, 2).is_err());
        assert!(schonheim_bound(5, 2, 3).is_err());
    }

    #[test]
    fn distribution_sums_and_determinism() {
        let c = cvd_stats(PgParams::new(23, 4, 4).unwrap(), 784).unwrap();
        let whole = expected_counts(&c, 0, 400);
        assert!((whole.values().sum::<f64>() - c.b_f64()).abs() < 1e-6 * c.b_f64());

        let exp = estimate_distribution(&c, 200, Rounding::Expected);
        let mu = c.mean_f64();
        let s = c.std_dev();
        let target = c.b_f64() * (normal_cdf((200.5 - mu) / s) - normal_cdf((3.5 - mu) / s));
        assert!((exp.total() - target).abs() < 1.0);

        let a = estimate_distribution(&c, 200, Rounding::Bernoulli { seed: 7 });
        let b = estimate_distribution(&c, 200, Rounding::Bernoulli { seed: 7 });
        assert_eq!(a, b);
        assert!(a.counts.values().all(|&x| x >= 0.0 && x.fract() == 0.0));
        assert!(a.total() <= c.b_f64());
        let h = estimate_distribution(&c, 200, Rounding::HalfEven);
        assert!(h.counts.values().all(|&x| x.fract() == 0.0));
        assert_eq!(round_half_even(2.5), 2.0);
        assert_eq!(round_half_even(3.5), 4.0);
    }

    #[test]
    fn degenerate_variance_is_a_point_mass() {
        let c = cvd_stats(PgParams::new(3, 5, 5).unwrap(), 364).unwrap();
        let d = estimate_distribution(&c, 200, Rounding::HalfEven);
        assert_eq!(d.get(121), c.b_f64());
        assert_eq!(d.total(), c.b_f64());
    }

    #[test]
    fn ratio_report_rows() {
        let rep = ratio_report(784, 4, 10.0).unwrap();
        assert!(!rep.rows.is_empty());
        for row in &rep.rows {
            assert!(row.mean >= 10.0);
            if row.b == row.bound {
                assert_eq!(row.ratio, 1.0);
            }
        }
        assert!(rep.to_csv().starts_with("q,m,mean,b,schonheim,ratio\n"));
    }
}
