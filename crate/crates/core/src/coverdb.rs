//! File-backed database of refinement coverings `C(v, k, t)`.
//!
//! A covering file is plain text: a header line `c v k t b`, then `b` lines
//! each listing `k` sorted 1-based indices separated by single spaces. The
//! body is the same as a La Jolla block listing, so such listings can be
//! imported with the parameters given explicitly.
//!
//! On disk the database is a directory tree `t{T}/C_{v}_{k}_{t}.txt`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::defaults::DB_CAP;
use crate::design::schonheim_bound;
use crate::error::{Error, Result};
use crate::gf::big_to_u64;
use crate::pg::{pg_stream, Block, InducedSelection, PgParams};

/// Environment variable overriding the database root.
pub const DB_ENV: &str = "COVERD_DB";

/// Coverings up to this many points are checked exhaustively.
pub const EXHAUSTIVE_MAX_V: usize = 40;

/// Random t-subsets drawn when a covering is too large to check exhaustively.
pub const VALIDATION_SAMPLES: usize = 100_000;

/// Upper limit on `C(v, t)` for the greedy builder's coverage bitmap.
const MAX_BITMAP_SUBSETS: u64 = 1 << 33;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoveringFile {
    pub v: usize,
    pub k: usize,
    pub t: usize,
    pub blocks: Vec<Block>,
}

impl CoveringFile {
    /// Checks block sizes and index ranges, not coverage.
    pub fn new(v: usize, k: usize, t: usize, blocks: Vec<Block>) -> Result<Self> {
        check_params(v, k, t)?;
        for b in &blocks {
            if b.len() != k {
                return Err(Error::invalid(format!("block {b:?} has size {}, expected {k}", b.len())));
            }
            if b.indices().last().is_some_and(|&i| i as usize > v) {
                return Err(Error::invalid(format!("block {b:?} exceeds v = {v}")));
            }
        }
        Ok(CoveringFile { v, k, t, blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(16 + self.blocks.len() * self.k * 4);
        writeln!(s, "c {} {} {} {}", self.v, self.k, self.t, self.blocks.len()).unwrap();
        for b in &self.blocks {
            writeln!(s, "{b}").unwrap();
        }
        s
    }

    /// Parses the text format. `origin` is only used in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Format { path: origin.to_path_buf(), reason };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| fail("empty file".into()))?;
        let (v, k, t, b) = parse_header(header).map_err(fail)?;
        let mut blocks = Vec::with_capacity(b.min(DB_CAP));
        for (n, line) in lines.enumerate() {
            let block = parse_block(line).map_err(|e| fail(format!("line {}: {e}", n + 2)))?;
            blocks.push(block);
        }
        if blocks.len() != b {
            return Err(fail(format!("header announces {b} blocks, found {}", blocks.len())));
        }
        CoveringFile::new(v, k, t, blocks).map_err(|e| fail(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        CoveringFile::parse(&text, path)
    }

    /// Writes atomically via a temporary file in the same directory.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, self.to_text())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Exhaustive for `v <= 40`, otherwise [`VALIDATION_SAMPLES`] random t-subsets.
    pub fn validate(&self, seed: u64) -> Result<()> {
        let exhaustive_cost = binomial(self.v as u64, self.t as u64);
        if self.v <= EXHAUSTIVE_MAX_V && exhaustive_cost.is_some_and(|c| c <= MAX_BITMAP_SUBSETS) {
            self.validate_exhaustive()
        } else {
            self.validate_sampled(VALIDATION_SAMPLES, seed)
        }
    }

    /// Checks every t-subset of `[v]`.
    pub fn validate_exhaustive(&self) -> Result<()> {
        let ranker = SubsetRanker::new(self.v, self.t);
        let total = ranker.count()?;
        let per_block = binomial(self.k as u64, self.t as u64).unwrap_or(u64::MAX);
        let marking_cost = per_block.saturating_mul(self.blocks.len() as u64);
        let avg_rep = (self.blocks.len() as u64 * self.k as u64).div_ceil(self.v.max(1) as u64);
        if marking_cost <= total.saturating_mul(avg_rep.max(1)) {
            let mut covered = Bitmap::new(total);
            let mut buf = vec![0u32; self.t];
            for b in &self.blocks {
                for_each_subset(b.indices(), self.t, &mut buf, |s| {
                    covered.set(ranker.rank(s));
                });
            }
            match covered.first_clear(0) {
                None => Ok(()),
                Some(r) => Err(Error::NotCovering { t: self.t, subset: ranker.unrank(r) }),
            }
        } else {
            let index = BlockIndex::new(self);
            let mut subset: Vec<u32> = (1..=self.t as u32).collect();
            loop {
                if !index.covers(&subset) {
                    return Err(Error::NotCovering { t: self.t, subset });
                }
                if !next_subset(&mut subset, self.v as u32) {
                    return Ok(());
                }
            }
        }
    }

    /// Checks `samples` uniformly random t-subsets of `[v]`.
    pub fn validate_sampled(&self, samples: usize, seed: u64) -> Result<()> {
        let index = BlockIndex::new(self);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let mut s: Vec<u32> = rand::seq::index::sample(&mut rng, self.v, self.t)
                .into_iter()
                .map(|i| i as u32 + 1)
                .collect();
            s.sort_unstable();
            if !index.covers(&s) {
                return Err(Error::NotCovering { t: self.t, subset: s });
            }
        }
        Ok(())
    }
}

fn check_params(v: usize, k: usize, t: usize) -> Result<()> {
    if t == 0 || t > k || k > v || v > u32::MAX as usize {
        return Err(Error::invalid(format!("covering needs 1 <= t <= k <= v, got ({v},{k},{t})")));
    }
    Ok(())
}

fn parse_header(line: &str) -> std::result::Result<(usize, usize, usize, usize), String> {
    let mut it = line.split(' ');
    if it.next() != Some("c") {
        return Err("header must start with 'c'".into());
    }
    let nums: Vec<usize> = it
        .map(|s| s.parse::<usize>().map_err(|e| format!("bad header field {s:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match nums[..] {
        [v, k, t, b] => Ok((v, k, t, b)),
        _ => Err(format!("header needs 4 numbers, found {}", nums.len())),
    }
}

fn parse_block(line: &str) -> std::result::Result<Block, String> {
    let idx: Vec<u32> = line
        .split(' ')
        .map(|s| s.parse::<u32>().map_err(|e| format!("bad index {s:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    Block::new(idx).map_err(|e| e.to_string())
}

/// Reads only the header line of a covering file and returns `(v, k, t, b)`.
pub fn read_header(path: &Path) -> Result<(usize, usize, usize, usize)> {
    let mut line = String::new();
    BufReader::new(fs::File::open(path)?).read_line(&mut line)?;
    parse_header(line.trim_end_matches(['\n', '\r']))
        .map_err(|reason| Error::Format { path: path.to_path_buf(), reason })
}

/// Exact `C(n, r)` when it fits in a u64.
pub fn binomial(n: u64, r: u64) -> Option<u64> {
    if r > n {
        return Some(0);
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Colexicographic ranking of the t-subsets of `[v]`.
pub(crate) struct SubsetRanker {
    v: usize,
    t: usize,
    /// `table[i][n] = C(n, i)` for `i <= t`, `n <= v`, saturating.
    table: Vec<Vec<u64>>,
}

impl SubsetRanker {
    pub(crate) fn new(v: usize, t: usize) -> Self {
        let table = (0..=t)
            .map(|i| (0..=v).map(|n| binomial(n as u64, i as u64).unwrap_or(u64::MAX)).collect())
            .collect();
        SubsetRanker { v, t, table }
    }

    pub(crate) fn count(&self) -> Result<u64> {
        binomial(self.v as u64, self.t as u64)
            .ok_or_else(|| Error::invalid(format!("C({}, {}) overflows", self.v, self.t)))
    }

    /// `s` must be strictly increasing, 1-based, of length `t`.
    pub(crate) fn rank(&self, s: &[u32]) -> u64 {
        s.iter().enumerate().map(|(i, &x)| self.table[i + 1][x as usize - 1]).sum()
    }

    pub(crate) fn unrank(&self, mut r: u64) -> Vec<u32> {
        let mut out = vec![0u32; self.t];
        let mut hi = self.v;
        for i in (1..=self.t).rev() {
            // largest c < hi with C(c, i) <= r
            let mut c = hi - 1;
            while self.table[i][c] > r {
                c -= 1;
            }
            r -= self.table[i][c];
            out[i - 1] = c as u32 + 1;
            hi = c;
        }
        out
    }
}

struct Bitmap {
    words: Vec<u64>,
    len: u64,
}

impl Bitmap {
    fn new(len: u64) -> Self {
        Bitmap { words: vec![0; len.div_ceil(64) as usize], len }
    }

    fn get(&self, i: u64) -> bool {
        self.words[(i / 64) as usize] >> (i % 64) & 1 == 1
    }

    /// Returns true if the bit was clear.
    fn set(&mut self, i: u64) -> bool {
        let w = &mut self.words[(i / 64) as usize];
        let mask = 1u64 << (i % 64);
        let was_clear = *w & mask == 0;
        *w |= mask;
        was_clear
    }

    fn first_clear(&self, from: u64) -> Option<u64> {
        let mut w = (from / 64) as usize;
        let mut word = self.words.get(w)? | ((1u64 << (from % 64)) - 1);
        loop {
            if word != u64::MAX {
                let i = w as u64 * 64 + (!word).trailing_zeros() as u64;
                return (i < self.len).then_some(i);
            }
            w += 1;
            word = *self.words.get(w)?;
        }
    }
}

/// Calls `f` on every `t`-subset of the sorted slice `items`, in lexicographic order.
pub(crate) fn for_each_subset(items: &[u32], t: usize, buf: &mut [u32], mut f: impl FnMut(&[u32])) {
    let n = items.len();
    if t > n {
        return;
    }
    if t == 0 {
        f(&buf[..0]);
        return;
    }
    let mut pos: Vec<usize> = (0..t).collect();
    loop {
        for (b, &p) in buf.iter_mut().zip(&pos) {
            *b = items[p];
        }
        f(&buf[..t]);
        let Some(i) = (0..t).rev().find(|&i| pos[i] < n - t + i) else {
            return;
        };
        pos[i] += 1;
        for j in i + 1..t {
            pos[j] = pos[j - 1] + 1;
        }
    }
}

/// Advances a sorted 1-based subset of `[n]` to its lexicographic successor.
pub fn next_subset(s: &mut [u32], n: u32) -> bool {
    let t = s.len() as u32;
    let Some(i) = (0..s.len()).rev().find(|&i| s[i] < n - t + i as u32 + 1) else {
        return false;
    };
    s[i] += 1;
    for j in i + 1..s.len() {
        s[j] = s[j - 1] + 1;
    }
    true
}

/// Point-to-blocks incidence lists for containment queries.
struct BlockIndex<'a> {
    cover: &'a CoveringFile,
    by_point: Vec<Vec<u32>>,
}

impl<'a> BlockIndex<'a> {
    fn new(cover: &'a CoveringFile) -> Self {
        let mut by_point = vec![Vec::new(); cover.v + 1];
        for (n, b) in cover.blocks.iter().enumerate() {
            for &i in b.indices() {
                by_point[i as usize].push(n as u32);
            }
        }
        BlockIndex { cover, by_point }
    }

    fn covers(&self, s: &[u32]) -> bool {
        let rarest = s.iter().min_by_key(|&&i| self.by_point[i as usize].len()).unwrap();
        self.by_point[*rarest as usize]
            .iter()
            .any(|&n| s.iter().all(|&i| self.cover.blocks[n as usize].contains(i)))
    }
}

/// Greedy covering of the t-subsets of `[v]` by k-subsets.
///
/// Each block starts from the colex-first uncovered t-subset and grows one
/// element at a time, taking the element that covers the most still-uncovered
/// t-subsets (smallest index on ties). Fails once more than `cap` blocks are
/// needed.
pub fn greedy_cover(v: usize, k: usize, t: usize, cap: usize) -> Result<CoveringFile> {
    check_params(v, k, t)?;
    if k == v {
        return CoveringFile::new(v, k, t, vec![Block::from_sorted_unchecked((1..=v as u32).collect())]);
    }
    let ranker = SubsetRanker::new(v, t);
    let total = ranker.count()?;
    if total > MAX_BITMAP_SUBSETS {
        return Err(Error::invalid(format!("C({v}, {t}) = {total} t-subsets is too many for the greedy builder")));
    }
    let mut covered = Bitmap::new(total);
    let mut remaining = total;
    let mut cursor = 0u64;
    let mut blocks = Vec::new();
    let mut in_block = vec![false; v + 1];
    let mut score = vec![0u64; v + 1];
    let mut buf = vec![0u32; t];
    let mut probe = vec![0u32; t];

    while remaining > 0 {
        if blocks.len() == cap {
            return Err(Error::CapExceeded { v, k, t, cap });
        }
        cursor = covered.first_clear(cursor).expect("remaining > 0");
        let mut block = ranker.unrank(cursor);
        in_block.iter_mut().for_each(|x| *x = false);
        for &i in &block {
            in_block[i as usize] = true;
        }
        // score[e] counts uncovered t-subsets of block + e that contain e
        score.iter_mut().for_each(|x| *x = 0);
        let uncovered_with = |base: &[u32], e: u32, probe: &mut Vec<u32>| {
            probe.clear();
            probe.extend_from_slice(base);
            let at = probe.partition_point(|&x| x < e);
            probe.insert(at, e);
            !covered.get(ranker.rank(probe))
        };
        for_each_subset(&block, t - 1, &mut buf, |r| {
            let r = r.to_vec();
            for e in 1..=v as u32 {
                if !in_block[e as usize] && uncovered_with(&r, e, &mut probe) {
                    score[e as usize] += 1;
                }
            }
        });
        while block.len() < k {
            let best = (1..=v as u32)
                .filter(|&e| !in_block[e as usize])
                .max_by(|&a, &b| score[a as usize].cmp(&score[b as usize]).then(b.cmp(&a)))
                .expect("k < v leaves a candidate");
            if score[best as usize] == 0 {
                // nothing left to gain; fill with the smallest unused indices
                for e in 1..=v as u32 {
                    if block.len() == k {
                        break;
                    }
                    if !in_block[e as usize] {
                        in_block[e as usize] = true;
                        block.push(e);
                    }
                }
                break;
            }
            let old = block.clone();
            in_block[best as usize] = true;
            let at = block.partition_point(|&x| x < best);
            block.insert(at, best);
            if block.len() == k {
                break;
            }
            // new (t-1)-subsets of the block are {best} + (t-2)-subsets of the old block
            let mut small = vec![0u32; t.saturating_sub(2)];
            for_each_subset(&old, t.saturating_sub(2), &mut small, |p| {
                let mut r = p.to_vec();
                let at = r.partition_point(|&x| x < best);
                r.insert(at, best);
                for e in 1..=v as u32 {
                    if !in_block[e as usize] && uncovered_with(&r, e, &mut probe) {
                        score[e as usize] += 1;
                    }
                }
            });
        }
        block.sort_unstable();
        for_each_subset(&block, t, &mut buf, |s| {
            if covered.set(ranker.rank(s)) {
                remaining -= 1;
            }
        });
        blocks.push(Block::from_sorted_unchecked(block));
    }
    CoveringFile::new(v, k, t, blocks)
}

/// Induces a `C(v, k, t)` from `base` using a seeded random selection of `v`
/// of its points. See [`induce_cover_with`].
pub fn induce_cover(base: &CoveringFile, v: usize, k: usize, seed: u64, cap: usize) -> Result<CoveringFile> {
    let selection = InducedSelection::random(base.v as u64, v, seed)?;
    induce_cover_with(base, &selection, k, cap)
}

/// Three-step induction of a `C(v, k, t)` from a `C(v', k', t)`.
///
/// 1. Keep only the points of `selection`, renamed to their 1-based position
///    in it. Blocks left with fewer than `t` points cover nothing and are
///    dropped.
/// 2. Pad blocks smaller than `k` with the smallest absent indices.
/// 3. Replace each block `B` larger than `k` by `greedy_cover(|B|, k, t)`
///    renamed into `B`.
///
/// Duplicate blocks are removed, keeping first occurrences.
pub fn induce_cover_with(
    base: &CoveringFile,
    selection: &InducedSelection,
    k: usize,
    cap: usize,
) -> Result<CoveringFile> {
    let v = selection.len();
    let t = base.t;
    check_params(v, k, t)?;
    if v > base.v || k > base.k {
        return Err(Error::invalid(format!(
            "cannot induce ({v},{k},{t}) from ({},{},{t})",
            base.v, base.k
        )));
    }
    let mut position = vec![0u32; base.v + 1];
    for (n, &p) in selection.points().iter().enumerate() {
        if p == 0 || p as usize > base.v {
            return Err(Error::invalid(format!("selected point {p} outside [1, {}]", base.v)));
        }
        position[p as usize] = n as u32 + 1;
    }
    let mut expansions: HashMap<usize, CoveringFile> = HashMap::new();
    let mut seen: HashSet<Block> = HashSet::new();
    let mut blocks = Vec::new();
    let mut push = |b: Vec<u32>, blocks: &mut Vec<Block>| -> Result<()> {
        let b = Block::from_sorted_unchecked(b);
        if seen.insert(b.clone()) {
            if blocks.len() == cap {
                return Err(Error::CapExceeded { v, k, t, cap });
            }
            blocks.push(b);
        }
        Ok(())
    };
    for b in &base.blocks {
        let mut kept: Vec<u32> =
            b.indices().iter().map(|&i| position[i as usize]).filter(|&p| p != 0).collect();
        if kept.len() < t {
            continue;
        }
        kept.sort_unstable();
        if kept.len() <= k {
            let mut next = 1u32;
            while kept.len() < k {
                while kept.binary_search(&next).is_ok() {
                    next += 1;
                }
                let at = kept.partition_point(|&x| x < next);
                kept.insert(at, next);
            }
            push(kept, &mut blocks)?;
        } else {
            let size = kept.len();
            let cover = match expansions.entry(size) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => e.insert(greedy_cover(size, k, t, cap)?),
            };
            for inner in rename_to(cover, &kept)? {
                push(inner.into_inner(), &mut blocks)?;
            }
        }
    }
    CoveringFile::new(v, k, t, blocks)
}

/// Maps index `i` of every block to the `i`-th smallest element of `s`.
pub fn rename_to(cover: &CoveringFile, s: &[u32]) -> Result<Vec<Block>> {
    if s.len() != cover.v {
        return Err(Error::Dimension(format!("renaming a covering on {} points onto {} points", cover.v, s.len())));
    }
    let mut sorted = s.to_vec();
    sorted.sort_unstable();
    Ok(cover
        .blocks
        .iter()
        .map(|b| Block::from_sorted_unchecked(b.indices().iter().map(|&i| sorted[i as usize - 1]).collect()))
        .collect())
}

/// The PG covering `C(v', k', t)` as a [`CoveringFile`].
pub fn pg_covering(params: PgParams) -> Result<CoveringFile> {
    let b = big_to_u64(&params.block_count())
        .ok()
        .filter(|&b| b <= u32::MAX as u64)
        .ok_or_else(|| Error::invalid(format!("{params} has too many blocks to materialize")))?;
    let mut blocks = Vec::with_capacity(b as usize);
    blocks.extend(pg_stream(params, 0, 1)?);
    CoveringFile::new(params.v_prime() as usize, params.k_prime() as usize, params.t(), blocks)
}

/// Known covering sizes for one strength `t`, keyed by `(v, k)`.
pub trait CoveringSizes {
    fn covering_size(&self, v: usize, k: usize) -> Option<u64>;
}

impl CoveringSizes for BTreeMap<(usize, usize), u64> {
    fn covering_size(&self, v: usize, k: usize) -> Option<u64> {
        self.get(&(v, k)).copied()
    }
}

impl CoveringSizes for HashMap<(usize, usize), u64> {
    fn covering_size(&self, v: usize, k: usize) -> Option<u64> {
        self.get(&(v, k)).copied()
    }
}

/// Where a built covering came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    PgExact,
    PgInduced,
    Greedy,
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub t: usize,
    pub max_v: usize,
    pub cap: usize,
    pub threads: usize,
    /// Rebuild files that already exist.
    pub force: bool,
    pub seed: u64,
}

impl BuildOptions {
    pub fn new(t: usize, max_v: usize) -> Self {
        BuildOptions { t, max_v, cap: DB_CAP, threads: 1, force: false, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuildSummary {
    pub written: usize,
    pub existing: usize,
    /// Triples skipped because no covering within the cap can exist or be built.
    pub skipped: Vec<(usize, usize)>,
    pub pg_exact: usize,
    pub pg_induced: usize,
    pub greedy: usize,
}

/// A covering database rooted at a directory.
#[derive(Clone, Debug)]
pub struct CoverDb {
    root: PathBuf,
}

impl CoverDb {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        CoverDb { root: root.into() }
    }

    /// `$COVERD_DB` if set, otherwise `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(DB_ENV) {
            Some(p) if !p.is_empty() => CoverDb::open(p),
            _ => CoverDb::open(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, v: usize, k: usize, t: usize) -> PathBuf {
        self.root.join(format!("t{t}")).join(format!("C_{v}_{k}_{t}.txt"))
    }

    pub fn contains(&self, v: usize, k: usize, t: usize) -> bool {
        self.path_for(v, k, t).is_file()
    }

    pub fn get(&self, v: usize, k: usize, t: usize) -> Result<CoveringFile> {
        let path = self.path_for(v, k, t);
        if !path.is_file() {
            return Err(Error::NotFound { v, k, t });
        }
        let cover = CoveringFile::read(&path)?;
        if (cover.v, cover.k, cover.t) != (v, k, t) {
            return Err(Error::Format {
                path,
                reason: format!("header ({},{},{}) does not match file name", cover.v, cover.k, cover.t),
            });
        }
        Ok(cover)
    }

    /// Number of blocks, read from the header only.
    pub fn size(&self, v: usize, k: usize, t: usize) -> Result<u64> {
        let path = self.path_for(v, k, t);
        if !path.is_file() {
            return Err(Error::NotFound { v, k, t });
        }
        Ok(read_header(&path)?.3 as u64)
    }

    pub fn put(&self, cover: &CoveringFile) -> Result<PathBuf> {
        let path = self.path_for(cover.v, cover.k, cover.t);
        cover.write(&path)?;
        Ok(path)
    }

    /// Sizes of all stored coverings of strength `t`, from file headers.
    pub fn sizes(&self, t: usize) -> Result<BTreeMap<(usize, usize), u64>> {
        let dir = self.root.join(format!("t{t}"));
        let mut out = BTreeMap::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(triple) = parse_file_name(name) else { continue };
            if triple.2 != t {
                continue;
            }
            let (v, k, tt, b) = read_header(&path)?;
            if (v, k, tt) != triple {
                return Err(Error::Format { path, reason: "header does not match file name".into() });
            }
            out.insert((v, k), b as u64);
        }
        Ok(out)
    }

    /// Imports a covering file. Files with a `c v k t b` header are read as
    /// is; headerless block listings need `params = Some((v, k, t))`. The
    /// covering is validated before it is stored.
    pub fn import(&self, path: &Path, params: Option<(usize, usize, usize)>) -> Result<CoveringFile> {
        let text = fs::read_to_string(path)?;
        let cover = if text.starts_with("c ") {
            let cover = CoveringFile::parse(&text, path)?;
            if let Some(p) = params {
                if p != (cover.v, cover.k, cover.t) {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        reason: format!("header ({},{},{}) disagrees with {p:?}", cover.v, cover.k, cover.t),
                    });
                }
            }
            cover
        } else {
            let (v, k, t) = params.ok_or_else(|| {
                Error::invalid("headerless covering files need explicit --v, --k and --t")
            })?;
            let mut blocks = Vec::new();
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let idx: Vec<u32> = line
                    .split_whitespace()
                    .map(|s| s.parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse { line: n + 1, reason: e.to_string() })?;
                blocks.push(Block::from_unsorted(idx)?);
            }
            CoveringFile::new(v, k, t, blocks)?
        };
        cover.validate(0)?;
        self.put(&cover)?;
        Ok(cover)
    }

    /// Builds `C(v, k, t)` for every `t <= k < v <= max_v` within the cap.
    ///
    /// Each triple takes the smallest of: the PG covering when it matches
    /// exactly, coverings induced from larger PG coverings, and the greedy
    /// covering; ties go to that order. Every result is validated before it
    /// is written.
    pub fn build(&self, opts: &BuildOptions) -> Result<BuildSummary> {
        let t = opts.t;
        if t < 2 || opts.max_v <= t {
            return Err(Error::invalid(format!("db build needs t >= 2 and max_v > t, got t={t}, max_v={}", opts.max_v)));
        }
        let sources = pg_sources(t, opts.max_v, opts.cap)?;
        let mut work = Vec::new();
        let mut summary = BuildSummary::default();
        for v in t + 1..=opts.max_v {
            for k in t..v {
                if !opts.force && self.contains(v, k, t) {
                    summary.existing += 1;
                    continue;
                }
                let bound = schonheim_bound(v as u64, k as u64, t as u64)?;
                if bound.to_u64().is_none_or(|b| b > opts.cap as u64) {
                    summary.skipped.push((v, k));
                    continue;
                }
                work.push((v, k));
            }
        }
        // largest first keeps the slow triples from trailing at the end
        work.sort_by_key(|&(v, k)| std::cmp::Reverse(binomial(v as u64, t as u64).unwrap_or(u64::MAX) / k as u64));
        let next = AtomicUsize::new(0);
        let results = Mutex::new(Vec::new());
        let first_error: Mutex<Option<Error>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..opts.threads.max(1) {
                scope.spawn(|| loop {
                    if first_error.lock().unwrap().is_some() {
                        return;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&(v, k)) = work.get(i) else { return };
                    match build_one(v, k, t, opts, &sources).and_then(|r| {
                        if let Some((cover, source)) = &r {
                            cover.validate(opts.seed ^ (v as u64) << 32 ^ k as u64)?;
                            self.put(cover)?;
                            log::info!("built C({v},{k},{t}) with {} blocks ({source:?})", cover.len());
                        }
                        Ok(r.map(|(_, s)| s))
                    }) {
                        Ok(r) => results.lock().unwrap().push(((v, k), r)),
                        Err(e) => {
                            first_error.lock().unwrap().get_or_insert(e);
                        }
                    }
                });
            }
        });
        if let Some(e) = first_error.into_inner().unwrap() {
            return Err(e);
        }
        let mut results = results.into_inner().unwrap();
        results.sort();
        for ((v, k), r) in results {
            match r {
                Some(Source::PgExact) => summary.pg_exact += 1,
                Some(Source::PgInduced) => summary.pg_induced += 1,
                Some(Source::Greedy) => summary.greedy += 1,
                None => summary.skipped.push((v, k)),
            }
        }
        summary.written = summary.pg_exact + summary.pg_induced + summary.greedy;
        summary.skipped.sort();
        Ok(summary)
    }

    /// Loads the given `(v, k)` coverings of strength `t` into an immutable cache.
    pub fn load_cache(&self, t: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<CoveringCache> {
        let mut map = HashMap::new();
        for (v, k) in pairs {
            if let std::collections::hash_map::Entry::Vacant(e) = map.entry((v, k)) {
                e.insert(Arc::new(self.get(v, k, t)?));
            }
        }
        Ok(CoveringCache { t, map })
    }
}

fn parse_file_name(name: &str) -> Option<(usize, usize, usize)> {
    let rest = name.strip_prefix("C_")?.strip_suffix(".txt")?;
    let mut it = rest.split('_').map(|s| s.parse::<usize>().ok());
    let triple = (it.next()??, it.next()??, it.next()??);
    it.next().is_none().then_some(triple)
}

/// PG coverings small enough to induce from during a build.
fn pg_sources(t: usize, max_v: usize, cap: usize) -> Result<Vec<CoveringFile>> {
    let mut out = Vec::new();
    let limit = 2 * max_v as u64;
    for m in t..usize::MAX {
        let mut any = false;
        for q in crate::gf::primes().take_while(|&q| q <= limit) {
            let params = PgParams::new(q, m, t)?;
            if params.v_prime() > limit {
                break;
            }
            any = true;
            let b = big_to_u64(&params.block_count());
            if b.is_ok_and(|b| b as usize <= cap) {
                out.push(pg_covering(params)?);
            }
        }
        if !any {
            break;
        }
    }
    Ok(out)
}

fn build_one(
    v: usize,
    k: usize,
    t: usize,
    opts: &BuildOptions,
    sources: &[CoveringFile],
) -> Result<Option<(CoveringFile, Source)>> {
    let mut best: Option<(CoveringFile, Source)> = None;
    let mut offer = |cover: CoveringFile, source: Source| {
        if best.as_ref().is_none_or(|(b, _)| cover.len() < b.len()) {
            best = Some((cover, source));
        }
    };
    for s in sources.iter().filter(|s| s.v == v && s.k == k) {
        offer(s.clone(), Source::PgExact);
    }
    for s in sources.iter().filter(|s| s.v >= v && s.v <= 2 * v && s.k >= k && !(s.v == v && s.k == k)) {
        let seed = opts.seed ^ ((v as u64) << 40 | (k as u64) << 20 | s.v as u64);
        match induce_cover(s, v, k, seed, opts.cap) {
            Ok(c) => offer(c, Source::PgInduced),
            Err(Error::CapExceeded { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    match greedy_cover(v, k, t, opts.cap) {
        Ok(c) => offer(c, Source::Greedy),
        Err(Error::CapExceeded { .. }) => {}
        Err(e) => return Err(e),
    }
    Ok(best)
}

/// Immutable in-memory coverings shared by all verification workers.
#[derive(Clone, Debug, Default)]
pub struct CoveringCache {
    t: usize,
    map: HashMap<(usize, usize), Arc<CoveringFile>>,
}

impl CoveringCache {
    pub fn new(t: usize) -> Self {
        CoveringCache { t, map: HashMap::new() }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn insert(&mut self, cover: CoveringFile) -> Result<()> {
        if cover.t != self.t {
            return Err(Error::invalid(format!("cache holds t = {}, got t = {}", self.t, cover.t)));
        }
        self.map.insert((cover.v, cover.k), Arc::new(cover));
        Ok(())
    }

    pub fn get(&self, v: usize, k: usize) -> Result<&Arc<CoveringFile>> {
        self.map.get(&(v, k)).ok_or(Error::NotFound { v, k, t: self.t })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl CoveringSizes for CoveringCache {
    fn covering_size(&self, v: usize, k: usize) -> Option<u64> {
        self.map.get(&(v, k)).map(|c| c.len() as u64)
    }
}

/// Draws a uniformly random t-subset of `[v]`, sorted and 1-based.
pub fn random_subset(v: usize, t: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut s: Vec<u32> = rand::seq::index::sample(rng, v, t).into_iter().map(|i| i as u32 + 1).collect();
    s.sort_unstable();
    s
}
