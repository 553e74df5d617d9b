//! The verification loop.
//!
//! Every worker walks its share of the design's blocks with a depth-first
//! stack. A popped block `S` is first given to the incomplete backend. If
//! that fails and `|S| > t`, `S` is replaced on the stack by the blocks of
//! the covering `C(|S|, f_R(|S|), t)` renamed into `S`. If it fails at
//! `|S| = t`, the block goes to the complete backend, once across all
//! workers. A counterexample stops every worker.
//!
//! Workers share only the covering cache (read-only), the set of t-blocks
//! already submitted to the complete backend, and a stop flag. [`Worker::step`]
//! does one unit of work, so the same workers can be driven by threads or by
//! a single-threaded round-robin loop.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Map, Value};

use crate::coverdb::{greedy_cover, rename_to, CoverDb, CoveringCache, CoveringFile};
use crate::defaults::{COMPLETE_SAMPLES, DB_CAP, DEFAULT_WORKERS, EPS, MAX_K, N_FAIL, N_SAMPLES, N_SAMPLES_REDUCED};
use crate::design::CandidateFilter;
use crate::error::{Error, Result};
use crate::nnverify::{Backend, BackendVerdict};
use crate::planner::{
    choose_design, estimate_complete_time, refine_plan, sample_kstats, DesignChoice, KStats,
    RefinementPlan, SamplingConfig,
};
use crate::pg::{Block, CvdStream, InducedSelection, PgParams};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub t: usize,
    pub workers: usize,
    pub timeout: Option<Duration>,
    pub seed: u64,
    pub max_k: usize,
    /// Smallest admissible mean block size; `t` when unset.
    pub min_k: Option<f64>,
    pub eps: f64,
    pub n_samples: usize,
    pub n_fail: usize,
    pub reduced_samples: usize,
    pub complete_samples: usize,
    pub scheduler: Scheduler,
}

impl RunConfig {
    pub fn new(t: usize) -> Self {
        RunConfig {
            t,
            workers: DEFAULT_WORKERS,
            timeout: None,
            seed: 0,
            max_k: MAX_K,
            min_k: None,
            eps: EPS,
            n_samples: N_SAMPLES,
            n_fail: N_FAIL,
            reduced_samples: N_SAMPLES_REDUCED,
            complete_samples: COMPLETE_SAMPLES,
            scheduler: Scheduler::Threads,
        }
    }

    pub fn filter(&self) -> CandidateFilter {
        CandidateFilter { min_k: self.min_k.unwrap_or(self.t as f64), max_k: self.max_k, eps: self.eps }
    }

    /// Sampling spreads its quota over the largest worker count, up to
    /// `workers`, that divides both sample counts.
    pub fn sampling(&self, v: usize) -> SamplingConfig {
        let workers = (1..=self.workers.max(1))
            .rev()
            .find(|w| self.n_samples.is_multiple_of(*w) && self.reduced_samples.is_multiple_of(*w))
            .unwrap_or(1);
        SamplingConfig {
            t: self.t,
            max_k: self.max_k.min(v),
            n_samples: self.n_samples,
            n_fail: self.n_fail,
            reduced_samples: self.reduced_samples,
            workers,
            seed: self.seed,
        }
    }
}

/// How workers are driven.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheduler {
    /// One OS thread per worker.
    Threads,
    /// All workers on the calling thread, one step each in turn.
    RoundRobin,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Robust,
    /// `witness` lies in `I_block(x)` and is not classified as the label.
    NonRobust { witness: Vec<f64>, block: Block },
    /// Some t-blocks were left undecided, or the run timed out.
    Unknown { unresolved: usize, timed_out: bool },
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Robust => "robust",
            Verdict::NonRobust { .. } => "non-robust",
            Verdict::Unknown { timed_out: true, .. } => "timeout",
            Verdict::Unknown { .. } => "unknown",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub cvd_blocks: u64,
    /// Design blocks with fewer than `t` points, which need no analysis.
    pub skipped_small: u64,
    pub incomplete_calls: u64,
    pub incomplete_by_size: BTreeMap<usize, u64>,
    pub complete_calls: u64,
    /// t-blocks not submitted because another worker already had.
    pub complete_duplicates: u64,
    pub refinements: u64,
    pub min_size: Option<usize>,
    pub max_size: Option<usize>,
    pub wall_seconds: f64,
    /// Sum of backend-reported virtual seconds.
    pub virtual_seconds: f64,
    pub verdict: String,
}

impl RunStats {
    fn record_size(&mut self, k: usize) {
        self.incomplete_calls += 1;
        *self.incomplete_by_size.entry(k).or_default() += 1;
        self.min_size = Some(self.min_size.map_or(k, |m| m.min(k)));
        self.max_size = Some(self.max_size.map_or(k, |m| m.max(k)));
    }

    fn merge(&mut self, o: &RunStats) {
        self.cvd_blocks += o.cvd_blocks;
        self.skipped_small += o.skipped_small;
        self.incomplete_calls += o.incomplete_calls;
        for (&k, &n) in &o.incomplete_by_size {
            *self.incomplete_by_size.entry(k).or_default() += n;
        }
        self.complete_calls += o.complete_calls;
        self.complete_duplicates += o.complete_duplicates;
        self.refinements += o.refinements;
        self.min_size = match (self.min_size, o.min_size) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.max_size = match (self.max_size, o.max_size) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        self.virtual_seconds += o.virtual_seconds;
    }

    /// Flat key-value document; per-size counts appear as `incomplete_calls_k{size}`.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("verdict".into(), json!(self.verdict));
        m.insert("cvd_blocks".into(), json!(self.cvd_blocks));
        m.insert("skipped_small".into(), json!(self.skipped_small));
        m.insert("incomplete_calls".into(), json!(self.incomplete_calls));
        m.insert("complete_calls".into(), json!(self.complete_calls));
        m.insert("complete_duplicates".into(), json!(self.complete_duplicates));
        m.insert("refinements".into(), json!(self.refinements));
        m.insert("min_size".into(), json!(self.min_size));
        m.insert("max_size".into(), json!(self.max_size));
        m.insert("wall_seconds".into(), json!(self.wall_seconds));
        m.insert("virtual_seconds".into(), json!(self.virtual_seconds));
        for (k, n) in &self.incomplete_by_size {
            m.insert(format!("incomplete_calls_k{k}"), json!(n));
        }
        Value::Object(m)
    }
}

/// Replaces a failed block by a covering of it.
///
/// Sizes in the plan use the preloaded database coverings. A block with no
/// planned size (larger than the planned range, which the design allows with
/// small probability) is covered by an in-memory greedy covering into the
/// largest planned size below it.
pub struct Refiner {
    t: usize,
    f_r: BTreeMap<usize, usize>,
    cache: CoveringCache,
    fallback: Mutex<HashMap<usize, Arc<CoveringFile>>>,
}

impl Refiner {
    pub fn new(plan: &RefinementPlan, cache: CoveringCache) -> Result<Self> {
        if cache.t() != plan.t {
            return Err(Error::invalid(format!("covering cache for t = {}, plan for t = {}", cache.t(), plan.t)));
        }
        Ok(Refiner { t: plan.t, f_r: plan.f_r.clone(), cache, fallback: Mutex::new(HashMap::new()) })
    }

    /// Loads every covering the plan refers to from `db`.
    pub fn from_db(plan: &RefinementPlan, db: &CoverDb) -> Result<Self> {
        let cache = db.load_cache(plan.t, plan.coverings())?;
        Refiner::new(plan, cache)
    }

    /// Refinement into one fixed size for every block, built in memory.
    pub fn uniform(t: usize) -> Self {
        Refiner { t, f_r: BTreeMap::new(), cache: CoveringCache::new(t), fallback: Mutex::new(HashMap::new()) }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn next_size(&self, k: usize) -> usize {
        match self.f_r.get(&k) {
            Some(&n) => n,
            None => self.f_r.range(..k).next_back().map_or(self.t, |(&s, _)| s),
        }
    }

    pub fn refine(&self, s: &Block) -> Result<Vec<Block>> {
        let k = s.len();
        if k <= self.t {
            return Err(Error::Contract(format!("refining a block of size {k} with t = {}", self.t)));
        }
        let next = self.next_size(k);
        let cover = match self.f_r.get(&k) {
            Some(&n) => self.cache.get(k, n)?.clone(),
            None => {
                let mut fb = self.fallback.lock().unwrap();
                match fb.get(&k) {
                    Some(c) => c.clone(),
                    None => {
                        let c = Arc::new(greedy_cover(k, next, self.t, DB_CAP)?);
                        fb.insert(k, c.clone());
                        c
                    }
                }
            }
        };
        rename_to(&cover, s.indices())
    }
}

/// The backends and refinement data of one analysis.
pub struct Analysis<'a> {
    pub t: usize,
    pub incomplete: &'a dyn Backend,
    pub complete: Option<&'a dyn Backend>,
    pub refiner: &'a Refiner,
    pub timeout: Option<Duration>,
}

struct Shared {
    stop: AtomicBool,
    timed_out: AtomicBool,
    submitted: Mutex<HashSet<Block>>,
    submissions: AtomicU64,
    unresolved: AtomicUsize,
    /// Counterexample with the lowest submission number.
    witness: Mutex<Option<(u64, Vec<f64>, Block)>>,
    deadline: Option<Instant>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Step {
    Working,
    Done,
    Stopped,
}

pub(crate) struct Worker<I> {
    blocks: I,
    stack: Vec<Block>,
    stats: RunStats,
    /// Blocks shown robust, kept only when instrumented.
    resolved: Option<Vec<Block>>,
}

impl<I: Iterator<Item = Block>> Worker<I> {
    fn new(blocks: I, instrument: bool) -> Self {
        Worker { blocks, stack: Vec::new(), stats: RunStats::default(), resolved: instrument.then(Vec::new) }
    }

    fn resolve(&mut self, s: Block) {
        if let Some(r) = &mut self.resolved {
            r.push(s);
        }
    }

    /// Takes a block from the design when the stack is empty, otherwise
    /// analyzes the top of the stack.
    fn step(&mut self, a: &Analysis<'_>, shared: &Shared) -> Result<Step> {
        if shared.stop.load(Ordering::Acquire) {
            return Ok(Step::Stopped);
        }
        if shared.deadline.is_some_and(|d| Instant::now() >= d) {
            shared.timed_out.store(true, Ordering::Release);
            shared.stop.store(true, Ordering::Release);
            return Ok(Step::Stopped);
        }
        let Some(s) = self.stack.pop() else {
            return Ok(match self.blocks.next() {
                None => Step::Done,
                Some(s) => {
                    self.stats.cvd_blocks += 1;
                    if s.len() < a.t {
                        self.stats.skipped_small += 1;
                    } else {
                        self.stack.push(s);
                    }
                    Step::Working
                }
            });
        };
        let outcome = a.incomplete.check(&s)?;
        self.stats.record_size(s.len());
        if let Some(vt) = outcome.virtual_time {
            self.stats.virtual_seconds += vt;
        }
        match outcome.verdict {
            BackendVerdict::Verified => self.resolve(s),
            // a complete backend in the incomplete role
            BackendVerdict::Falsified(w) => self.found(shared, w, s),
            BackendVerdict::Unknown if s.len() > a.t => {
                let blocks = a.refiner.refine(&s)?;
                self.stats.refinements += 1;
                self.stack.extend(blocks.into_iter().rev());
            }
            BackendVerdict::Unknown => {
                if !shared.submitted.lock().unwrap().insert(s.clone()) {
                    self.stats.complete_duplicates += 1;
                    self.resolve(s);
                    return Ok(Step::Working);
                }
                let order = shared.submissions.fetch_add(1, Ordering::AcqRel);
                match a.complete {
                    None => {
                        shared.unresolved.fetch_add(1, Ordering::AcqRel);
                    }
                    Some(c) => {
                        let outcome = c.check(&s)?;
                        self.stats.complete_calls += 1;
                        if let Some(vt) = outcome.virtual_time {
                            self.stats.virtual_seconds += vt;
                        }
                        match outcome.verdict {
                            BackendVerdict::Verified => self.resolve(s),
                            BackendVerdict::Falsified(w) => {
                                let mut slot = shared.witness.lock().unwrap();
                                if slot.as_ref().is_none_or(|(o, _, _)| order < *o) {
                                    *slot = Some((order, w, s));
                                }
                                shared.stop.store(true, Ordering::Release);
                            }
                            BackendVerdict::Unknown => {
                                shared.unresolved.fetch_add(1, Ordering::AcqRel);
                            }
                        }
                    }
                }
            }
        }
        Ok(Step::Working)
    }

    fn found(&mut self, shared: &Shared, witness: Vec<f64>, s: Block) {
        let order = shared.submissions.fetch_add(1, Ordering::AcqRel);
        let mut slot = shared.witness.lock().unwrap();
        if slot.as_ref().is_none_or(|(o, _, _)| order < *o) {
            *slot = Some((order, witness, s));
        }
        shared.stop.store(true, Ordering::Release);
    }
}

impl Analysis<'_> {
    fn shared(&self) -> Shared {
        Shared {
            stop: AtomicBool::new(false),
            timed_out: AtomicBool::new(false),
            submitted: Mutex::new(HashSet::new()),
            submissions: AtomicU64::new(0),
            unresolved: AtomicUsize::new(0),
            witness: Mutex::new(None),
            deadline: self.timeout.map(|d| Instant::now() + d),
        }
    }

    /// Analyzes the CVD `(params, selection)` with `workers` workers, worker
    /// `w` taking the blocks `j` with `j % workers == w`.
    pub fn run_design(
        &self,
        params: PgParams,
        selection: &InducedSelection,
        workers: usize,
        scheduler: Scheduler,
    ) -> Result<(Verdict, RunStats)> {
        let base = CvdStream::new(params, selection, 0, 1)?;
        let streams = (0..workers.max(1)).map(|w| base.for_worker(w, workers.max(1))).collect::<Result<Vec<_>>>()?;
        self.run_streams(streams, scheduler)
    }

    /// Analyzes arbitrary block sources, one per worker. Together they must
    /// cover every t-subset of the input for a robust verdict to be sound.
    pub fn run_streams<I>(&self, streams: Vec<I>, scheduler: Scheduler) -> Result<(Verdict, RunStats)>
    where
        I: Iterator<Item = Block> + Send,
    {
        let started = Instant::now();
        let shared = self.shared();
        let workers: Vec<Worker<I>> = streams.into_iter().map(|s| Worker::new(s, false)).collect();
        let results = drive(self, &shared, workers, scheduler);
        let mut stats = RunStats::default();
        let mut first_error = None;
        for r in results {
            match r {
                Ok(w) => stats.merge(&w.stats),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }
        stats.wall_seconds = started.elapsed().as_secs_f64();
        let verdict = conclude(&shared);
        stats.verdict = verdict.label().to_string();
        Ok((verdict, stats))
    }
}

fn conclude(shared: &Shared) -> Verdict {
    if let Some((_, witness, block)) = shared.witness.lock().unwrap().take() {
        return Verdict::NonRobust { witness, block };
    }
    let unresolved = shared.unresolved.load(Ordering::Acquire);
    let timed_out = shared.timed_out.load(Ordering::Acquire);
    if timed_out || unresolved > 0 {
        Verdict::Unknown { unresolved, timed_out }
    } else {
        Verdict::Robust
    }
}

fn drive<I>(a: &Analysis<'_>, shared: &Shared, workers: Vec<Worker<I>>, scheduler: Scheduler) -> Vec<Result<Worker<I>>>
where
    I: Iterator<Item = Block> + Send,
{
    match scheduler {
        Scheduler::Threads if workers.len() > 1 => std::thread::scope(|scope| {
            let handles: Vec<_> = workers
                .into_iter()
                .map(|mut w| {
                    scope.spawn(move || loop {
                        match w.step(a, shared) {
                            Ok(Step::Working) => continue,
                            Ok(_) => return Ok(w),
                            Err(e) => {
                                shared.stop.store(true, Ordering::Release);
                                return Err(e);
                            }
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("verification worker panicked")).collect()
        }),
        _ => {
            let mut workers: Vec<Option<Worker<I>>> = workers.into_iter().map(Some).collect();
            let mut out: Vec<Option<Result<Worker<I>>>> = (0..workers.len()).map(|_| None).collect();
            let mut active = workers.len();
            while active > 0 {
                for i in 0..workers.len() {
                    let Some(w) = workers[i].as_mut() else { continue };
                    match w.step(a, shared) {
                        Ok(Step::Working) => {}
                        Ok(_) => {
                            out[i] = Some(Ok(workers[i].take().unwrap()));
                            active -= 1;
                        }
                        Err(e) => {
                            shared.stop.store(true, Ordering::Release);
                            workers[i] = None;
                            out[i] = Some(Err(e));
                            active -= 1;
                        }
                    }
                }
            }
            out.into_iter().map(|r| r.expect("every worker finished")).collect()
        }
    }
}

/// Everything a full run produces.
#[derive(Clone, Debug)]
pub struct Report {
    pub verdict: Verdict,
    pub stats: RunStats,
    pub kstats: KStats,
    pub plan: RefinementPlan,
    pub choice: DesignChoice,
}

/// Plans and runs the verification of the t-ball around an input of `v`
/// pixels: samples the incomplete backend, estimates the complete backend's
/// cost, computes `f_R` from the database's covering sizes, chooses the
/// design and analyzes it.
pub fn verify_ball(
    v: usize,
    incomplete: &dyn Backend,
    complete: Option<&dyn Backend>,
    cfg: &RunConfig,
    db: &CoverDb,
) -> Result<Report> {
    let started = Instant::now();
    let (kstats, plan, choice) = plan_run(v, incomplete, complete, cfg, db)?;
    let refiner = Refiner::from_db(&plan, db)?;
    let analysis = Analysis {
        t: cfg.t,
        incomplete,
        complete,
        refiner: &refiner,
        timeout: cfg.timeout.map(|d| d.saturating_sub(started.elapsed())),
    };
    let c = choice.candidate();
    log::info!(
        "analyzing the CVD of PG({}, {}) on {v} points with {} workers",
        c.params.m(),
        c.params.q(),
        cfg.workers
    );
    let (verdict, mut stats) = analysis.run_design(c.params, &choice.selection, cfg.workers, cfg.scheduler)?;
    stats.wall_seconds = started.elapsed().as_secs_f64();
    Ok(Report { verdict, stats, kstats, plan, choice })
}

/// The planning half of [`verify_ball`].
pub fn plan_run(
    v: usize,
    incomplete: &dyn Backend,
    complete: Option<&dyn Backend>,
    cfg: &RunConfig,
    db: &CoverDb,
) -> Result<(KStats, RefinementPlan, DesignChoice)> {
    if cfg.t < 2 || cfg.t > v {
        return Err(Error::invalid(format!("t = {} for an input of {v} pixels", cfg.t)));
    }
    let kstats = sample_kstats(v, &cfg.sampling(v), incomplete)?;
    // without a complete backend a failed t-block stays undecided; it adds no time
    let t_complete = match complete {
        Some(c) => estimate_complete_time(v, cfg.t, cfg.complete_samples, c, cfg.seed)?,
        None => 0.0,
    };
    let sizes = db.sizes(cfg.t)?;
    let plan = refine_plan(&kstats, &sizes, t_complete, cfg.max_k.min(v));
    let choice = choose_design(v, cfg.filter(), &kstats, &plan, cfg.seed)?;
    Ok((kstats, plan, choice))
}
