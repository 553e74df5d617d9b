//! Planning a verification run: per-size backend statistics, the refinement
//! map `f_R`, and the choice of design.
//!
//! For a block of size `k` that the incomplete backend cannot verify, the
//! expected cost of refining it is `T(k)`. With
//! `R(k) = time(k) + (1 - success(k)) * T(k)` the expected cost of analyzing
//! one block of size `k`,
//!
//! ```text
//! T(t) = T_complete
//! T(k) = min over t <= k'' < k of |C(k, k'', t)| * R(k'')
//! ```
//!
//! and `f_R(k)` is the minimizing `k''` (the larger one on ties). A candidate
//! design with estimated size histogram `N_k` is scored by
//! `sum over k >= t of N_k * R(k)`.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coverdb::{random_subset, CoveringSizes};
use crate::defaults::{COMPLETE_SAMPLES, DEFAULT_WORKERS, MAX_K, N_FAIL, N_SAMPLES, N_SAMPLES_REDUCED};
use crate::design::{enumerate_candidates, estimate_distribution, CandidateFilter, CvdCandidate, Rounding, SizeDistribution};
use crate::error::{Error, Result};
use crate::nnverify::{Backend, Outcome};
use crate::pg::{Block, InducedSelection};

/// Sampled behavior of the incomplete backend at one block size.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KStat {
    pub samples: usize,
    pub successes: usize,
    /// Sum of the per-call times in seconds.
    pub total_time: f64,
}

impl KStat {
    pub fn success(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.successes as f64 / self.samples as f64
        }
    }

    pub fn time(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.total_time / self.samples as f64
        }
    }

    fn merge(&mut self, other: &KStat) {
        self.samples += other.samples;
        self.successes += other.successes;
        self.total_time += other.total_time;
    }
}

/// Per-size statistics for `k` in `t..=max_k`.
///
/// Sizes above the largest sampled one are treated as never verified and as
/// expensive as the largest sampled size.
#[derive(Clone, Debug, PartialEq)]
pub struct KStats {
    pub t: usize,
    pub per_k: BTreeMap<usize, KStat>,
    /// For each sampling worker, the size at which it switched to the reduced quota.
    pub reduced_after: Vec<Option<usize>>,
}

impl KStats {
    /// Statistics given directly as `k -> (success, time)`, e.g. the exact
    /// expectations of a scripted profile.
    pub fn from_rates(t: usize, rates: &BTreeMap<usize, (f64, f64)>) -> Result<Self> {
        const SCALE: usize = 1 << 20;
        let mut per_k = BTreeMap::new();
        for (&k, &(p, time)) in rates.range(t..) {
            if !(0.0..=1.0).contains(&p) || time < 0.0 {
                return Err(Error::invalid(format!("rate row {k}: ({p}, {time})")));
            }
            // success counts are integers; this keeps p exact for dyadic rates
            let successes = (p * SCALE as f64).round() as usize;
            per_k.insert(k, KStat { samples: SCALE, successes, total_time: time * SCALE as f64 });
        }
        if per_k.is_empty() {
            return Err(Error::Empty("statistics"));
        }
        Ok(KStats { t, per_k, reduced_after: Vec::new() })
    }

    pub fn max_sampled(&self) -> usize {
        *self.per_k.keys().next_back().unwrap_or(&self.t)
    }

    pub fn get(&self, k: usize) -> Option<&KStat> {
        self.per_k.get(&k)
    }

    pub fn success(&self, k: usize) -> f64 {
        match self.per_k.get(&k) {
            Some(s) => s.success(),
            None => 0.0,
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        match self.per_k.get(&k) {
            Some(s) => s.time(),
            None => self.per_k.range(..=k).next_back().or(self.per_k.iter().next()).map_or(0.0, |(_, s)| s.time()),
        }
    }

    /// Tab-separated `k success time samples` table.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("k\tsuccess\ttime\tsamples\n");
        for (k, st) in &self.per_k {
            s.push_str(&format!("{k}\t{:.6}\t{:.9}\t{}\n", st.success(), st.time(), st.samples));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct SamplingConfig {
    pub t: usize,
    pub max_k: usize,
    pub n_samples: usize,
    pub n_fail: usize,
    pub reduced_samples: usize,
    pub workers: usize,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn new(t: usize) -> Self {
        SamplingConfig {
            t,
            max_k: MAX_K,
            n_samples: N_SAMPLES,
            n_fail: N_FAIL,
            reduced_samples: N_SAMPLES_REDUCED,
            workers: DEFAULT_WORKERS,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.workers == 0 || !self.n_samples.is_multiple_of(self.workers) || !self.reduced_samples.is_multiple_of(self.workers) {
            return Err(Error::invalid(format!(
                "sample counts {} and {} must be divisible by {} workers",
                self.n_samples, self.reduced_samples, self.workers
            )));
        }
        if self.t == 0 || self.max_k < self.t {
            return Err(Error::invalid(format!("sampling range t={} .. max_k={}", self.t, self.max_k)));
        }
        Ok(())
    }
}

/// Seconds charged for one backend call: the virtual time when the backend
/// reports one, otherwise the measured wall time.
pub(crate) fn charged(outcome: &Outcome, started: Instant) -> f64 {
    outcome.virtual_time.unwrap_or_else(|| started.elapsed().as_secs_f64())
}

/// Samples the incomplete backend on random `k`-subsets of `[v]` for every
/// `k` from `t` to `min(max_k, v)`.
///
/// Each worker draws `n_samples / workers` subsets per size from its own
/// seeded stream. After a worker has seen `n_fail` sizes with no success, it
/// continues with `reduced_samples / workers` subsets per size.
pub fn sample_kstats(v: usize, cfg: &SamplingConfig, backend: &dyn Backend) -> Result<KStats> {
    cfg.validate()?;
    let hi = cfg.max_k.min(v);
    let quota = cfg.n_samples / cfg.workers;
    let reduced = cfg.reduced_samples / cfg.workers;
    let run_worker = |w: usize| -> Result<(BTreeMap<usize, KStat>, Option<usize>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (w as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut per_k = BTreeMap::new();
        let mut zero_sizes = 0;
        let mut reduced_after = None;
        for k in cfg.t..=hi {
            let n = if reduced_after.is_some() { reduced } else { quota };
            let mut stat = KStat::default();
            for _ in 0..n {
                let s = Block::new(random_subset(v, k, &mut rng))?;
                let started = Instant::now();
                let outcome = backend.check(&s)?;
                stat.samples += 1;
                stat.successes += outcome.verdict.is_verified() as usize;
                stat.total_time += charged(&outcome, started);
            }
            if n > 0 && stat.successes == 0 {
                zero_sizes += 1;
                if zero_sizes == cfg.n_fail && reduced_after.is_none() {
                    reduced_after = Some(k);
                }
            }
            per_k.insert(k, stat);
        }
        Ok((per_k, reduced_after))
    };
    let results: Vec<Result<_>> = if cfg.workers == 1 {
        vec![run_worker(0)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..cfg.workers).map(|w| scope.spawn(move || run_worker(w))).collect();
            handles.into_iter().map(|h| h.join().expect("sampling worker panicked")).collect()
        })
    };
    let mut per_k: BTreeMap<usize, KStat> = BTreeMap::new();
    let mut reduced_after = Vec::with_capacity(cfg.workers);
    for r in results {
        let (stats, red) = r?;
        for (k, s) in stats {
            per_k.entry(k).or_default().merge(&s);
        }
        reduced_after.push(red);
    }
    Ok(KStats { t: cfg.t, per_k, reduced_after })
}

/// Mean seconds per call of the complete backend over `n` random t-subsets of `[v]`.
pub fn estimate_complete_time(v: usize, t: usize, n: usize, backend: &dyn Backend, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n {
        let s = Block::new(random_subset(v, t, &mut rng))?;
        let started = Instant::now();
        let outcome = backend.check(&s)?;
        total += charged(&outcome, started);
    }
    Ok(total / n as f64)
}

pub fn estimate_complete_time_default(v: usize, t: usize, backend: &dyn Backend, seed: u64) -> Result<f64> {
    estimate_complete_time(v, t, COMPLETE_SAMPLES, backend, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementPlan {
    pub t: usize,
    pub max_k: usize,
    pub t_complete: f64,
    /// Expected seconds to refine a failed block of size `k`; infinite when
    /// no covering is available for any smaller size.
    pub cost: BTreeMap<usize, f64>,
    pub f_r: BTreeMap<usize, usize>,
}

impl RefinementPlan {
    pub fn refinement_cost(&self, k: usize) -> f64 {
        self.cost.get(&k).copied().unwrap_or(f64::INFINITY)
    }

    pub fn next_size(&self, k: usize) -> Option<usize> {
        self.f_r.get(&k).copied()
    }

    /// The `(v, k)` pairs of coverings the plan refines with.
    pub fn coverings(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.f_r.iter().map(|(&k, &next)| (k, next))
    }
}

/// Expected cost of analyzing one block of size `k`.
pub fn block_cost(stats: &KStats, plan: &RefinementPlan, k: usize) -> f64 {
    let fail = 1.0 - stats.success(k);
    let refine = if fail > 0.0 { fail * plan.refinement_cost(k) } else { 0.0 };
    stats.time(k) + refine
}

/// Dynamic program for `T` and `f_R` over `t..=max_k`. Sizes without a
/// known covering are not considered.
pub fn refine_plan(stats: &KStats, sizes: &dyn CoveringSizes, t_complete: f64, max_k: usize) -> RefinementPlan {
    let t = stats.t;
    let mut plan = RefinementPlan { t, max_k, t_complete, cost: BTreeMap::new(), f_r: BTreeMap::new() };
    plan.cost.insert(t, t_complete);
    for k in t + 1..=max_k {
        let mut best: Option<(f64, usize)> = None;
        for next in t..k {
            let Some(size) = sizes.covering_size(k, next) else { continue };
            let c = size as f64 * block_cost(stats, &plan, next);
            if best.is_none_or(|(b, _)| c <= b) {
                best = Some((c, next));
            }
        }
        match best {
            Some((c, next)) if c.is_finite() => {
                plan.cost.insert(k, c);
                plan.f_r.insert(k, next);
            }
            _ => {
                plan.cost.insert(k, f64::INFINITY);
            }
        }
    }
    plan
}

/// Predicted analysis time of a design with the given size histogram.
/// Sizes below `t` are not analyzed and cost nothing.
pub fn score_candidate(dist: &SizeDistribution, stats: &KStats, plan: &RefinementPlan) -> f64 {
    dist.counts
        .range(stats.t..)
        .filter(|(_, &n)| n > 0.0)
        .map(|(&k, &n)| n * block_cost(stats, plan, k))
        .sum()
}

#[derive(Clone, Debug)]
pub struct ScoredCandidate {
    pub candidate: CvdCandidate,
    pub distribution: SizeDistribution,
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct DesignChoice {
    /// All candidates in enumeration order.
    pub scored: Vec<ScoredCandidate>,
    /// Index into `scored` of the chosen candidate.
    pub chosen: usize,
    pub selection: InducedSelection,
}

impl DesignChoice {
    pub fn candidate(&self) -> &CvdCandidate {
        &self.scored[self.chosen].candidate
    }

    pub fn score(&self) -> f64 {
        self.scored[self.chosen].score
    }
}

/// Index of the lowest score, ties going to the smaller design.
pub fn argmin_candidate(scored: &[ScoredCandidate]) -> Option<usize> {
    (0..scored.len()).min_by(|&a, &b| {
        scored[a]
            .score
            .total_cmp(&scored[b].score)
            .then_with(|| scored[a].candidate.b.cmp(&scored[b].candidate.b))
    })
}

/// Scores every candidate and picks the cheapest, then draws the selection
/// `L` of `v` points from `[1, v']` with `seed`.
pub fn choose_design(
    v: usize,
    filter: CandidateFilter,
    stats: &KStats,
    plan: &RefinementPlan,
    seed: u64,
) -> Result<DesignChoice> {
    let candidates = enumerate_candidates(v, stats.t, filter)?;
    choose_among(candidates, filter.max_k, stats, plan, seed)
}

/// [`choose_design`] over an explicit candidate list.
pub fn choose_among(
    candidates: Vec<CvdCandidate>,
    max_k: usize,
    stats: &KStats,
    plan: &RefinementPlan,
    seed: u64,
) -> Result<DesignChoice> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let scored: Vec<ScoredCandidate> = candidates
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let rounding = Rounding::Bernoulli { seed: seed ^ (i as u64 + 1).wrapping_mul(0xd134_2543_de82_ef95) };
            let distribution = estimate_distribution(&c, max_k, rounding);
            let score = score_candidate(&distribution, stats, plan);
            ScoredCandidate { candidate: c, distribution, score }
        })
        .collect();
    let chosen = argmin_candidate(&scored).expect("nonempty");
    let c = &scored[chosen].candidate;
    let selection = InducedSelection::random(c.params.v_prime(), c.v, seed)?;
    Ok(DesignChoice { scored, chosen, selection })
}
