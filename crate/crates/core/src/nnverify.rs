//! Few-pixel neighborhoods and the robustness backends that analyze them.
//!
//! A neighborhood `I_S(x)` frees the pixels in `S` to range over `[0, 1]` and
//! pins every other pixel to its value in `x`. Backends answer whether the
//! network's classification of `x` holds on the whole neighborhood. A score
//! tie between the label and another class counts as not robust.
//!
//! Network text format:
//!
//! ```text
//! relu-net L
//! layer R C
//! <R rows of C reals>
//! <one row of R bias reals>
//! activation relu|none
//! ... (L layers in total)
//! ```
//!
//! Images are whitespace-separated reals in `[0, 1]`, row-major.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::pg::Block;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::None => "none",
        })
    }
}

/// A dense layer `y = act(W x + b)` with `W` stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if rows == 0 || cols == 0 || weights.len() != rows * cols || bias.len() != rows {
            return Err(Error::Dimension(format!(
                "layer {rows}x{cols} with {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(Layer { rows, cols, weights, bias, activation })
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), x) + self.bias[r]).collect()
    }

    /// `self` applied after `inner`, valid when `inner` has no activation.
    fn compose(&self, inner: &Layer) -> Layer {
        let mut weights = vec![0.0; self.rows * inner.cols];
        for r in 0..self.rows {
            let out = &mut weights[r * inner.cols..(r + 1) * inner.cols];
            for (m, &w) in self.row(r).iter().enumerate() {
                if w != 0.0 {
                    for (o, &a) in out.iter_mut().zip(inner.row(m)) {
                        *o += w * a;
                    }
                }
            }
        }
        let bias = (0..self.rows).map(|r| dot(self.row(r), &inner.bias) + self.bias[r]).collect();
        Layer { rows: self.rows, cols: inner.cols, weights, bias, activation: self.activation }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A fully-connected classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let last = layers.last().ok_or(Error::Empty("network has no layers"))?;
        if last.rows < 2 {
            return Err(Error::invalid("the last layer needs at least two classes"));
        }
        for w in layers.windows(2) {
            if w[1].cols != w[0].rows {
                return Err(Error::Dimension(format!("layer of {} outputs feeds a layer of {} inputs", w[0].rows, w[1].cols)));
            }
        }
        Ok(Network { layers })
    }

    /// Random network with the given layer widths, ReLU on hidden layers if
    /// `relu`, and weights uniform in `[-1, 1]`.
    pub fn random(widths: &[usize], relu: bool, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("need an input and an output width"));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (cols, rows) = (widths[i], widths[i + 1]);
                let w = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let b = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let act = if relu && i + 1 < n { Activation::Relu } else { Activation::None };
                Layer::new(rows, cols, w, b, act)
            })
            .collect::<Result<_>>()?;
        Network::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    pub fn is_affine(&self) -> bool {
        self.layers[..self.layers.len() - 1].iter().all(|l| l.activation == Activation::None)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!("input of length {}, network expects {}", x.len(), self.input_dim())));
        }
        let mut cur = x.to_vec();
        for l in &self.layers {
            cur = l.affine(&cur);
            if l.activation == Activation::Relu {
                cur.iter_mut().for_each(|y| *y = y.max(0.0));
            }
        }
        Ok(cur)
    }

    /// Index of the largest score (the first one on ties).
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        let scores = self.eval(x)?;
        Ok(argmax(&scores))
    }

    /// Whether `x` is classified as `label` with a strict margin over every other class.
    pub fn strictly_classifies(&self, x: &[f64], label: usize) -> Result<bool> {
        let s = self.eval(x)?;
        Ok(s.iter().enumerate().all(|(j, &y)| j == label || s[label] > y))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "relu-net {}", self.layers.len()).unwrap();
        for l in &self.layers {
            writeln!(s, "layer {} {}", l.rows, l.cols).unwrap();
            for r in 0..l.rows {
                write_reals(&mut s, l.row(r));
            }
            write_reals(&mut s, &l.bias);
            writeln!(s, "activation {}", l.activation).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .map(|(n, l)| (n + 1, l.trim()))
                .ok_or_else(|| Error::Parse { line: 0, reason: format!("unexpected end of file, expected {what}") })
        };
        let (n, header) = next("header")?;
        let count: usize = header
            .strip_prefix("relu-net ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse { line: n, reason: "expected `relu-net L`".into() })?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, line) = next("layer header")?;
            let dims: Vec<usize> = line
                .strip_prefix("layer ")
                .map(|s| s.split_whitespace().filter_map(|x| x.parse().ok()).collect())
                .unwrap_or_default();
            let [rows, cols] = dims[..] else {
                return Err(Error::Parse { line: n, reason: "expected `layer R C`".into() });
            };
            let mut weights = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, line) = next("weight row")?;
                weights.extend(parse_reals(line, cols, n)?);
            }
            let (n, line) = next("bias row")?;
            let bias = parse_reals(line, rows, n)?;
            let (n, line) = next("activation")?;
            let activation = match line.strip_prefix("activation ").map(str::trim) {
                Some("relu") => Activation::Relu,
                Some("none") => Activation::None,
                _ => return Err(Error::Parse { line: n, reason: "expected `activation relu|none`".into() }),
            };
            layers.push(Layer::new(rows, cols, weights, bias, activation)?);
        }
        if let Some((n, _)) = lines.next() {
            return Err(Error::Parse { line: n + 1, reason: "trailing content after the last layer".into() });
        }
        Network::new(layers)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Network::parse(&fs::read_to_string(path)?)
    }
}

fn write_reals(s: &mut String, xs: &[f64]) {
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x}").unwrap();
    }
    s.push('\n');
}

fn parse_reals(line: &str, expected: usize, n: usize) -> Result<Vec<f64>> {
    let xs: Vec<f64> = line
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse { line: n, reason: e.to_string() })?;
    if xs.len() != expected {
        return Err(Error::Parse { line: n, reason: format!("expected {expected} reals, found {}", xs.len()) });
    }
    Ok(xs)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn parse_image(text: &str) -> Result<Vec<f64>> {
    let xs: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse { line: 0, reason: e.to_string() })?;
    if xs.is_empty() {
        return Err(Error::Empty("image"));
    }
    if let Some(x) = xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!("pixel {x} outside [0, 1]")));
    }
    Ok(xs)
}

pub fn read_image(path: &Path) -> Result<Vec<f64>> {
    parse_image(&fs::read_to_string(path)?)
}

pub fn image_to_text(x: &[f64]) -> String {
    let mut s = String::new();
    write_reals(&mut s, x);
    s
}

/// Per-pixel box bounds of `I_S(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Neighborhood {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    /// Number of non-degenerate coordinates.
    pub fn free_count(&self) -> usize {
        self.lo.iter().zip(&self.hi).filter(|(l, h)| l < h).count()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if l < h { rng.gen_range(l..=h) } else { l })
            .collect()
    }
}

pub fn make_neighborhood(x: &[f64], s: &Block) -> Result<Neighborhood> {
    if let Some(p) = x.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("pixel {p} outside [0, 1]")));
    }
    let mut lo = x.to_vec();
    let mut hi = x.to_vec();
    for &i in s.indices() {
        let i = i as usize;
        if i > x.len() {
            return Err(Error::OutOfRange { index: i as u64, count: x.len() as u64 });
        }
        lo[i - 1] = 0.0;
        hi[i - 1] = 1.0;
    }
    Ok(Neighborhood { lo, hi })
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackendVerdict {
    Verified,
    Unknown,
    /// A point of the neighborhood on which the label loses its strict margin.
    Falsified(Vec<f64>),
}

impl BackendVerdict {
    pub fn is_verified(&self) -> bool {
        matches!(self, BackendVerdict::Verified)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub verdict: BackendVerdict,
    /// Simulated cost in seconds for backends that do not run in real time.
    pub virtual_time: Option<f64>,
}

impl Outcome {
    fn real(verdict: BackendVerdict) -> Self {
        Outcome { verdict, virtual_time: None }
    }
}

/// A robustness analysis bound to one network, input and label.
///
/// `check(S)` analyzes `I_S(x)`. Implementations must be safe to call from
/// several workers at once.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    /// Whether `Unknown` can never be returned.
    fn is_complete(&self) -> bool;
    fn check(&self, s: &Block) -> Result<Outcome>;
}

/// The network prepared for bound propagation: activation-free layers merged
/// into their successors, and the last layer replaced by the margins
/// `score_label - score_j` for `j != label`.
#[derive(Clone, Debug)]
struct MarginNet {
    layers: Vec<Layer>,
}

impl MarginNet {
    fn new(net: &Network, label: usize) -> Result<Self> {
        if label >= net.classes() {
            return Err(Error::OutOfRange { index: label as u64, count: net.classes() as u64 });
        }
        let mut merged: Vec<Layer> = Vec::new();
        for l in net.layers() {
            match merged.last() {
                Some(prev) if prev.activation == Activation::None => {
                    let c = l.compose(prev);
                    *merged.last_mut().unwrap() = c;
                }
                _ => merged.push(l.clone()),
            }
        }
        let last = merged.pop().unwrap();
        let others: Vec<usize> = (0..last.rows).filter(|&j| j != label).collect();
        let mut weights = Vec::with_capacity(others.len() * last.cols);
        let mut bias = Vec::with_capacity(others.len());
        for &j in &others {
            weights.extend(last.row(label).iter().zip(last.row(j)).map(|(a, b)| a - b));
            bias.push(last.bias[label] - last.bias[j]);
        }
        merged.push(Layer { rows: others.len(), cols: last.cols, weights, bias, activation: Activation::None });
        Ok(MarginNet { layers: merged })
    }

    /// Lower bounds of the margins, given the first layer's pre-activation box.
    fn propagate(&self, mut lo: Vec<f64>, mut hi: Vec<f64>) -> Vec<f64> {
        for (n, l) in self.layers.iter().enumerate() {
            if n > 0 {
                (lo, hi) = interval_affine(l, &lo, &hi);
            }
            if l.activation == Activation::Relu {
                lo.iter_mut().for_each(|y| *y = y.max(0.0));
                hi.iter_mut().for_each(|y| *y = y.max(0.0));
            }
        }
        lo
    }
}

/// Exact interval image of a box under an affine map.
fn interval_affine(l: &Layer, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out_lo = l.bias.clone();
    let mut out_hi = l.bias.clone();
    for r in 0..l.rows {
        let (mut a, mut b) = (0.0, 0.0);
        for ((&w, &x0), &x1) in l.row(r).iter().zip(lo).zip(hi) {
            if w >= 0.0 {
                a += w * x0;
                b += w * x1;
            } else {
                a += w * x1;
                b += w * x0;
            }
        }
        out_lo[r] += a;
        out_hi[r] += b;
    }
    (out_lo, out_hi)
}

/// Interval bound propagation on an arbitrary neighborhood.
pub fn ibp_verify(net: &Network, nbh: &Neighborhood, label: usize) -> Result<BackendVerdict> {
    if nbh.dim() != net.input_dim() {
        return Err(Error::Dimension(format!("neighborhood of dimension {}, network expects {}", nbh.dim(), net.input_dim())));
    }
    let m = MarginNet::new(net, label)?;
    let (lo, hi) = interval_affine(&m.layers[0], &nbh.lo, &nbh.hi);
    Ok(margin_verdict(&m.propagate(lo, hi)))
}

fn margin_verdict(lower: &[f64]) -> BackendVerdict {
    if lower.iter().all(|&m| m > 0.0) {
        BackendVerdict::Verified
    } else {
        BackendVerdict::Unknown
    }
}

/// Exact analysis of an activation-free network: each margin is affine in
/// the input, so its minimum over the box sits at a corner chosen by sign.
pub fn exact_affine_verify(net: &Network, nbh: &Neighborhood, label: usize) -> Result<BackendVerdict> {
    if !net.is_affine() {
        return Err(Error::Contract("exact affine analysis on a network with ReLU layers".into()));
    }
    if nbh.dim() != net.input_dim() {
        return Err(Error::Dimension(format!("neighborhood of dimension {}, network expects {}", nbh.dim(), net.input_dim())));
    }
    let m = MarginNet::new(net, label)?;
    let margins = &m.layers[0];
    let mut worst: Option<(f64, usize)> = None;
    for r in 0..margins.rows {
        let min: f64 = margins.bias[r]
            + margins.row(r).iter().zip(nbh.lo.iter().zip(&nbh.hi)).map(|(&w, (&l, &h))| if w >= 0.0 { w * l } else { w * h }).sum::<f64>();
        if min <= 0.0 && worst.is_none_or(|(w, _)| min < w) {
            worst = Some((min, r));
        }
    }
    Ok(match worst {
        None => BackendVerdict::Verified,
        Some((_, r)) => BackendVerdict::Falsified(
            margins
                .row(r)
                .iter()
                .zip(nbh.lo.iter().zip(&nbh.hi))
                .map(|(&w, (&l, &h))| if w >= 0.0 { l } else { h })
                .collect(),
        ),
    })
}

/// Incomplete interval backend. The first layer's response to `x` is computed
/// once, so each check costs `O(|S|)` per first-layer neuron plus the rest
/// of the network.
pub struct IbpBackend {
    margin: MarginNet,
    x: Vec<f64>,
    /// First-layer pre-activations at `x`.
    base: Vec<f64>,
}

impl IbpBackend {
    pub fn new(net: &Network, x: &[f64], label: usize) -> Result<Self> {
        make_neighborhood(x, &Block::default())?;
        if x.len() != net.input_dim() {
            return Err(Error::Dimension(format!("image of length {}, network expects {}", x.len(), net.input_dim())));
        }
        let margin = MarginNet::new(net, label)?;
        let base = margin.layers[0].affine(x);
        Ok(IbpBackend { margin, x: x.to_vec(), base })
    }
}

/// First-layer pre-activation box for `I_S(x)` from the values at `x`.
fn first_layer_box(l: &Layer, x: &[f64], base: &[f64], s: &Block) -> Result<(Vec<f64>, Vec<f64>)> {
    if s.indices().last().is_some_and(|&i| i as usize > x.len()) {
        return Err(Error::OutOfRange { index: *s.indices().last().unwrap() as u64, count: x.len() as u64 });
    }
    let mut lo = base.to_vec();
    let mut hi = base.to_vec();
    for r in 0..l.rows {
        let row = l.row(r);
        for &i in s.indices() {
            let i = i as usize - 1;
            let w = row[i];
            // moving pixel i from x_i to 0 or to 1
            let (a, b) = (-w * x[i], w * (1.0 - x[i]));
            lo[r] += a.min(b);
            hi[r] += a.max(b);
        }
    }
    Ok((lo, hi))
}

impl Backend for IbpBackend {
    fn name(&self) -> &str {
        "ibp"
    }

    fn is_complete(&self) -> bool {
        false
    }

    fn check(&self, s: &Block) -> Result<Outcome> {
        let (lo, hi) = first_layer_box(&self.margin.layers[0], &self.x, &self.base, s)?;
        Ok(Outcome::real(margin_verdict(&self.margin.propagate(lo, hi))))
    }
}

/// Complete backend for activation-free networks.
pub struct ExactAffineBackend {
    margin: MarginNet,
    x: Vec<f64>,
    base: Vec<f64>,
}

impl ExactAffineBackend {
    pub fn new(net: &Network, x: &[f64], label: usize) -> Result<Self> {
        if !net.is_affine() {
            return Err(Error::Contract("exact affine backend on a network with ReLU layers".into()));
        }
        make_neighborhood(x, &Block::default())?;
        if x.len() != net.input_dim() {
            return Err(Error::Dimension(format!("image of length {}, network expects {}", x.len(), net.input_dim())));
        }
        let margin = MarginNet::new(net, label)?;
        let base = margin.layers[0].affine(x);
        Ok(ExactAffineBackend { margin, x: x.to_vec(), base })
    }
}

impl Backend for ExactAffineBackend {
    fn name(&self) -> &str {
        "affine"
    }

    fn is_complete(&self) -> bool {
        true
    }

    fn check(&self, s: &Block) -> Result<Outcome> {
        let l = &self.margin.layers[0];
        let (lo, _) = first_layer_box(l, &self.x, &self.base, s)?;
        let worst = lo
            .iter()
            .enumerate()
            .filter(|(_, &m)| m <= 0.0)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(r, _)| r);
        let verdict = match worst {
            None => BackendVerdict::Verified,
            Some(r) => {
                let mut w = self.x.clone();
                for &i in s.indices() {
                    let i = i as usize - 1;
                    w[i] = if l.row(r)[i] >= 0.0 { 0.0 } else { 1.0 };
                }
                BackendVerdict::Falsified(w)
            }
        };
        Ok(Outcome::real(verdict))
    }
}

/// Per-size behavior of the scripted backend.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    /// `k -> (success probability, seconds per call)`.
    pub sizes: BTreeMap<usize, (f64, f64)>,
    /// Seconds per call of the scripted complete backend.
    pub complete_time: Option<f64>,
}

impl Profile {
    pub fn new(sizes: BTreeMap<usize, (f64, f64)>, complete_time: Option<f64>) -> Result<Self> {
        for (&k, &(p, time)) in &sizes {
            if !(0.0..=1.0).contains(&p) || !(time >= 0.0 && time.is_finite()) {
                return Err(Error::invalid(format!("profile row {k}: probability {p}, time {time}")));
            }
        }
        Ok(Profile { sizes, complete_time })
    }

    /// TSV rows `k<TAB>success<TAB>seconds`, plus an optional row
    /// `complete<TAB>seconds`. Lines starting with `#` are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sizes = BTreeMap::new();
        let mut complete_time = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Parse { line: n + 1, reason };
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            match fields[..] {
                ["complete", time] => complete_time = Some(num(time)?),
                [k, p, time] => {
                    let k: usize = k.parse().map_err(|e| err(format!("{k:?}: {e}")))?;
                    sizes.insert(k, (num(p)?, num(time)?));
                }
                _ => return Err(err("expected `k<TAB>success<TAB>seconds`".into())),
            }
        }
        Profile::new(sizes, complete_time)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Profile::parse(&fs::read_to_string(path)?)
    }

    pub fn get(&self, k: usize) -> Result<(f64, f64)> {
        self.sizes.get(&k).copied().ok_or_else(|| Error::invalid(format!("scripted profile has no row for k = {k}")))
    }
}

/// Simulated incomplete backend: `Verified` with the profile's success
/// probability for `|S|`, otherwise `Unknown`, charging the profile's time
/// as virtual seconds. The draw for a block is a deterministic function of
/// the seed and the block, so results do not depend on which worker asks.
pub struct ScriptedBackend {
    profile: Arc<Profile>,
    seed: u64,
}

impl ScriptedBackend {
    pub fn new(profile: Arc<Profile>, seed: u64) -> Self {
        ScriptedBackend { profile, seed }
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }
}

/// Uniform draw in `[0, 1)` keyed by a seed and a block.
pub(crate) fn keyed_uniform(seed: u64, s: &Block) -> f64 {
    let mut h = splitmix(seed ^ 0x9e37_79b9_7f4a_7c15);
    for &i in s.indices() {
        h = splitmix(h ^ i as u64);
    }
    h = splitmix(h ^ s.len() as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn is_complete(&self) -> bool {
        false
    }

    fn check(&self, s: &Block) -> Result<Outcome> {
        let (p, time) = self.profile.get(s.len())?;
        let verdict = if keyed_uniform(self.seed, s) < p { BackendVerdict::Verified } else { BackendVerdict::Unknown };
        Ok(Outcome { verdict, virtual_time: Some(time) })
    }
}

/// Simulated complete backend that verifies every neighborhood, charging
/// the profile's `complete` time.
pub struct ScriptedComplete {
    time: f64,
}

impl ScriptedComplete {
    pub fn new(profile: &Profile) -> Result<Self> {
        let time = profile
            .complete_time
            .ok_or_else(|| Error::invalid("scripted profile has no `complete` row"))?;
        Ok(ScriptedComplete { time })
    }
}

impl Backend for ScriptedComplete {
    fn name(&self) -> &str {
        "scripted-complete"
    }

    fn is_complete(&self) -> bool {
        true
    }

    fn check(&self, _s: &Block) -> Result<Outcome> {
        Ok(Outcome { verdict: BackendVerdict::Verified, virtual_time: Some(self.time) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(ix: &[u32]) -> Block {
        Block::new(ix.to_vec()).unwrap()
    }

    /// One pixel, two classes: score_0 = p, score_1 = -p + c.
    fn one_pixel(c: f64) -> Network {
        Network::new(vec![Layer::new(2, 1, vec![1.0, -1.0], vec![0.0, c], Activation::None).unwrap()]).unwrap()
    }

    /// Every corner of the free coordinates, independent of the sign analysis.
    fn corners(x: &[f64], s: &Block) -> Vec<Vec<f64>> {
        let free = s.indices();
        (0..1u32 << free.len())
            .map(|mask| {
                let mut y = x.to_vec();
                for (b, &i) in free.iter().enumerate() {
                    y[i as usize - 1] = (mask >> b & 1) as f64;
                }
                y
            })
            .collect()
    }

    #[test]
    fn neighborhoods() {
        let x = vec![0.2, 0.5, 0.9, 0.0];
        let point = make_neighborhood(&x, &Block::default()).unwrap();
        assert_eq!((point.lo.clone(), point.hi.clone()), (x.clone(), x.clone()));
        let full = make_neighborhood(&x, &block(&[1, 2, 3, 4])).unwrap();
        assert_eq!((full.lo, full.hi), (vec![0.0; 4], vec![1.0; 4]));
        let two = make_neighborhood(&x, &block(&[2, 3])).unwrap();
        assert_eq!(two.free_count(), 2);
        assert_eq!(two.lo, vec![0.2, 0.0, 0.0, 0.0]);
        assert_eq!(two.hi, vec![0.2, 1.0, 1.0, 0.0]);
        assert!(make_neighborhood(&x, &block(&[5])).is_err());
        assert!(make_neighborhood(&[1.5], &Block::default()).is_err());
    }

    #[test]
    fn network_text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::random(&[5, 4, 3], true, &mut rng).unwrap();
        let text = net.to_text();
        assert!(text.starts_with("relu-net 2\nlayer 4 5\n"));
        let back = Network::parse(&text).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_networks() {
        for bad in [
            "",
            "relu-net 1\nlayer 2 1\n1\n-1\n0 0\n",
            "relu-net 1\nlayer 2 1\n1\n-1\n0\nactivation none\n",
            "relu-net 1\nlayer 2 1\n1\n-1\n0 0\nactivation tanh\n",
            "relu-net 1\nlayer 1 1\n1\n0\nactivation none\n",
            "relu-net 2\nlayer 2 1\n1\n-1\n0 0\nactivation none\nlayer 2 3\n1 1 1\n1 1 1\n0 0\nactivation none\n",
        ] {
            assert!(Network::parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn images() {
        assert_eq!(parse_image("0 0.5\n1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_image("0 1.5").is_err());
        assert!(parse_image("").is_err());
        assert!(parse_image("a").is_err());
    }

    #[test]
    fn one_pixel_sign_analysis() {
        // at x = 0.8 with c = 1: margin 2p - 1 = 0.6, adversarial corner p = 0
        let net = one_pixel(1.0);
        let x = [0.8];
        assert_eq!(net.classify(&x).unwrap(), 0);
        let nbh = make_neighborhood(&x, &block(&[1])).unwrap();
        assert_eq!(exact_affine_verify(&net, &nbh, 0).unwrap(), BackendVerdict::Falsified(vec![0.0]));
        assert_eq!(ibp_verify(&net, &nbh, 0).unwrap(), BackendVerdict::Unknown);
        let b = ExactAffineBackend::new(&net, &x, 0).unwrap();
        assert_eq!(b.check(&block(&[1])).unwrap().verdict, BackendVerdict::Falsified(vec![0.0]));
        assert!(b.check(&Block::default()).unwrap().verdict.is_verified());
    }

    #[test]
    fn positive_bias_margin_always_verifies() {
        let layer = Layer::new(2, 3, vec![1.0, -2.0, 0.5, 1.0, -2.0, 0.5], vec![0.5, 0.0], Activation::None).unwrap();
        let net = Network::new(vec![layer]).unwrap();
        let x = [0.1, 0.2, 0.3];
        let full = make_neighborhood(&x, &block(&[1, 2, 3])).unwrap();
        assert!(exact_affine_verify(&net, &full, 0).unwrap().is_verified());
        assert!(ibp_verify(&net, &full, 0).unwrap().is_verified());
    }

    #[test]
    fn ties_are_not_robust() {
        let net = one_pixel(1.0);
        let nbh = make_neighborhood(&[0.5], &Block::default()).unwrap();
        assert!(matches!(exact_affine_verify(&net, &nbh, 0).unwrap(), BackendVerdict::Falsified(_)));
        assert!(!net.strictly_classifies(&[0.5], 0).unwrap());
    }

    #[test]
    fn exact_affine_rejects_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::random(&[4, 3, 2], true, &mut rng).unwrap();
        let nbh = make_neighborhood(&[0.0; 4], &Block::default()).unwrap();
        assert!(matches!(exact_affine_verify(&net, &nbh, 0), Err(Error::Contract(_))));
        assert!(ExactAffineBackend::new(&net, &[0.0; 4], 0).is_err());
    }

    #[test]
    fn affine_backends_agree_with_corner_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let v = rng.gen_range(2..=12);
            let depth = rng.gen_range(1..=3);
            let mut widths = vec![v];
            widths.extend((1..depth).map(|_| rng.gen_range(2..6)));
            widths.push(rng.gen_range(2..5));
            let net = Network::random(&widths, false, &mut rng).unwrap();
            let x: Vec<f64> = (0..v).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let label = net.classify(&x).unwrap();
            let size = rng.gen_range(0..=3.min(v));
            let s = crate::coverdb::random_subset(v, size, &mut rng);
            let s = Block::new(s).unwrap();
            let nbh = make_neighborhood(&x, &s).unwrap();
            let robust = corners(&x, &s).iter().all(|c| net.strictly_classifies(c, label).unwrap());
            let exact = exact_affine_verify(&net, &nbh, label).unwrap();
            assert_eq!(exact.is_verified(), robust, "trial {trial}");
            if let BackendVerdict::Falsified(w) = &exact {
                assert!(nbh.contains(w));
                assert!(!net.strictly_classifies(w, label).unwrap());
            }
            let fast = ExactAffineBackend::new(&net, &x, label).unwrap().check(&s).unwrap().verdict;
            assert_eq!(fast.is_verified(), robust, "trial {trial}");
            // interval propagation is exact on affine networks
            let ibp = ibp_verify(&net, &nbh, label).unwrap();
            assert_eq!(ibp.is_verified(), robust, "trial {trial}");
            let ibp_fast = IbpBackend::new(&net, &x, label).unwrap().check(&s).unwrap().verdict;
            assert_eq!(ibp_fast, ibp, "trial {trial}");
        }
    }

    #[test]
    fn ibp_is_sound_on_relu_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut verified = 0;
        for _ in 0..60 {
            let v = 10;
            let net = Network::random(&[v, 8, 6, 3], true, &mut rng).unwrap();
            let x: Vec<f64> = (0..v).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let label = net.classify(&x).unwrap();
            let s = Block::new(crate::coverdb::random_subset(v, rng.gen_range(1..=3), &mut rng)).unwrap();
            let nbh = make_neighborhood(&x, &s).unwrap();
            let verdict = ibp_verify(&net, &nbh, label).unwrap();
            assert_eq!(IbpBackend::new(&net, &x, label).unwrap().check(&s).unwrap().verdict, verdict);
            if verdict.is_verified() {
                verified += 1;
                for _ in 0..10_000 {
                    let y = nbh.sample(&mut rng);
                    assert!(net.strictly_classifies(&y, label).unwrap());
                }
            }
        }
        assert!(verified > 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn ibp_is_monotone_in_the_free_set(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = 12;
            let net = Network::random(&[v, 6, 3], true, &mut rng).unwrap();
            let x: Vec<f64> = (0..v).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let label = net.classify(&x).unwrap();
            let big = crate::coverdb::random_subset(v, 4, &mut rng);
            let small: Vec<u32> = big.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
            let b = IbpBackend::new(&net, &x, label).unwrap();
            if b.check(&Block::new(big).unwrap()).unwrap().verdict.is_verified() {
                prop_assert!(b.check(&Block::new(small).unwrap()).unwrap().verdict.is_verified());
            }
        }
    }

    #[test]
    fn scripted_profile_parsing() {
        let p = Profile::parse("# k\tp\ttime\n2\t1\t0.5\n3\t0.25\t1.0\ncomplete\t4\n").unwrap();
        assert_eq!(p.get(3).unwrap(), (0.25, 1.0));
        assert_eq!(p.complete_time, Some(4.0));
        assert!(p.get(4).is_err());
        assert!(Profile::parse("2\t1.5\t0\n").is_err());
        assert!(Profile::parse("2 1 0\n").is_err());
    }

    #[test]
    fn scripted_backend_is_deterministic_and_calibrated() {
        let profile = Arc::new(Profile::parse("5\t0.3\t2.0\n").unwrap());
        let b = ScriptedBackend::new(profile.clone(), 42);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 20_000;
        let mut hits = 0;
        for _ in 0..n {
            let s = Block::new(crate::coverdb::random_subset(100, 5, &mut rng)).unwrap();
            let o = b.check(&s).unwrap();
            assert_eq!(o.virtual_time, Some(2.0));
            assert_eq!(o, ScriptedBackend::new(profile.clone(), 42).check(&s).unwrap());
            hits += o.verdict.is_verified() as usize;
        }
        let p = hits as f64 / n as f64;
        assert!((p - 0.3).abs() < 3.0 * (0.3f64 * 0.7 / n as f64).sqrt() * 1.5, "{p}");
        assert!(b.check(&block(&[1, 2])).is_err());
        assert!(ScriptedComplete::new(&profile).is_err());
    }
}
