//! Differentiable neural logic functions.
//!
//! A conjunction neuron computes `Π_i (1 - m_i (1 - x_i))` and a disjunction
//! neuron `1 - Π_i (1 - m_i x_i)`, where each membership
//! `m_i = sigmoid(c · w_i)` gates whether input `i` takes part. Stacking a
//! conjunction layer under one disjunction neuron gives a DNF, the reverse a
//! CNF. Memberships can be thresholded back into a Boolean formula.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

/// Raw weight magnitude (times gain) at which a membership is exactly 0 or 1
/// in `f64` for every practical purpose.
pub const SATURATED: f64 = 40.0;

/// Mean raw weight of freshly initialized layers wider than 64 inputs.
pub const DEFAULT_WIDE_MEAN: f64 = -2.0;

const SPARSE_LOW: f64 = 1e-3;
const SPARSE_HIGH: f64 = 0.9;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, thiserror::Error)]
pub enum DnlError {
    #[error("input width mismatch: expected {expected}, found {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("tape was recorded for different weights or another function")]
    StaleTape,
    #[error("invalid shape '{0}'")]
    BadShape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// `¬x`, `x ∧ y`, `x ∨ y` over the unit interval.
pub mod fuzzy {
    pub fn not(x: f64) -> f64 {
        (1.0 - x).clamp(0.0, 1.0)
    }

    pub fn and(x: f64, y: f64) -> f64 {
        (x * y).clamp(0.0, 1.0)
    }

    pub fn or(x: f64, y: f64) -> f64 {
        (1.0 - (1.0 - x) * (1.0 - y)).clamp(0.0, 1.0)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Conj,
    Disj,
    /// Disjunction over `N` conjunction neurons.
    Dnf(usize),
    /// Conjunction over `N` disjunction neurons.
    Cnf(usize),
}

impl Shape {
    pub fn hidden(self) -> usize {
        match self {
            Shape::Conj | Shape::Disj => 0,
            Shape::Dnf(n) | Shape::Cnf(n) => n,
        }
    }

    pub fn num_weights(self, width: usize) -> usize {
        match self {
            Shape::Conj | Shape::Disj => width,
            Shape::Dnf(n) | Shape::Cnf(n) => n * width + n,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Conj => write!(f, "conj"),
            Shape::Disj => write!(f, "disj"),
            Shape::Dnf(n) => write!(f, "dnf:{n}"),
            Shape::Cnf(n) => write!(f, "cnf:{n}"),
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = DnlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DnlError::BadShape(s.to_string());
        match s {
            "conj" => Ok(Shape::Conj),
            "disj" => Ok(Shape::Disj),
            _ => {
                let (k, n) = s.split_once(':').ok_or_else(bad)?;
                let n: usize = n.parse().map_err(|_| bad())?;
                if n == 0 {
                    return Err(bad());
                }
                match k {
                    "dnf" => Ok(Shape::Dnf(n)),
                    "cnf" => Ok(Shape::Cnf(n)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

impl From<crate::logic::NetworkKind> for Shape {
    fn from(k: crate::logic::NetworkKind) -> Self {
        match k {
            crate::logic::NetworkKind::Conj => Shape::Conj,
            crate::logic::NetworkKind::Dnf(n) => Shape::Dnf(n),
            crate::logic::NetworkKind::Cnf(n) => Shape::Cnf(n),
        }
    }
}

/// A neural logic function parameterized by raw membership weights.
///
/// Weight layout: for `Conj`/`Disj` one weight per input; for `Dnf(N)` and
/// `Cnf(N)` the hidden layer row-major (`N × width`) followed by the `N`
/// output-neuron weights.
#[derive(Debug, Clone)]
pub struct DnlFunction {
    shape: Shape,
    width: usize,
    gain: f64,
    weights: Vec<f64>,
    version: u64,
}

impl PartialEq for DnlFunction {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.width == other.width
            && self.gain == other.gain
            && self.weights == other.weights
    }
}

impl DnlFunction {
    pub fn from_weights(shape: Shape, width: usize, gain: f64, weights: Vec<f64>) -> Result<Self, DnlError> {
        if weights.len() != shape.num_weights(width) {
            return Err(DnlError::WidthMismatch { expected: shape.num_weights(width), found: weights.len() });
        }
        Ok(DnlFunction { shape, width, gain, weights, version: next_version() })
    }

    /// Random raw weights `~ Normal(mean, 0.5)`; the mean is 0 for layers
    /// at most 64 inputs wide and -2 for wider layers, so that wide
    /// products start with small memberships.
    pub fn random<R: Rng + ?Sized>(shape: Shape, width: usize, gain: f64, rng: &mut R) -> Self {
        Self::random_with_mean(shape, width, gain, DEFAULT_WIDE_MEAN, rng)
    }

    /// [`DnlFunction::random`] with `wide_mean` as the mean for layers
    /// wider than 64 inputs.
    pub fn random_with_mean<R: Rng + ?Sized>(shape: Shape, width: usize, gain: f64, wide_mean: f64, rng: &mut R) -> Self {
        let layer_mean = |w: usize| if w <= 64 { 0.0 } else { wide_mean };
        let mut draw = |mean: f64, count: usize, out: &mut Vec<f64>| {
            let normal = Normal::new(mean, 0.5).expect("valid normal");
            out.extend((0..count).map(|_| normal.sample(rng)));
        };
        let mut weights = Vec::with_capacity(shape.num_weights(width));
        match shape {
            Shape::Conj | Shape::Disj => draw(layer_mean(width), width, &mut weights),
            Shape::Dnf(n) | Shape::Cnf(n) => {
                draw(layer_mean(width), n * width, &mut weights);
                draw(layer_mean(n), n, &mut weights);
            }
        }
        DnlFunction { shape, width, gain, weights, version: next_version() }
    }

    /// Sparse start for wide layers: each hidden neuron of a layer wider
    /// than 64 inputs gets `ones` random memberships near 1 and the rest at
    /// `1e-3`. Narrow layers are drawn as in [`DnlFunction::random`].
    pub fn random_sparse<R: Rng + ?Sized>(shape: Shape, width: usize, gain: f64, ones: usize, rng: &mut R) -> Self {
        let mut f = Self::random_with_mean(shape, width, gain, DEFAULT_WIDE_MEAN, rng);
        if width <= 64 {
            return f;
        }
        let rows = shape.hidden().max(1);
        let low = (SPARSE_LOW / (1.0 - SPARSE_LOW)).ln() / gain;
        let high = (SPARSE_HIGH / (1.0 - SPARSE_HIGH)).ln() / gain;
        for j in 0..rows {
            let row = &mut f.weights[j * width..(j + 1) * width];
            row.fill(low);
            for i in rand::seq::index::sample(rng, width, ones.min(width)) {
                row[i] = high;
            }
        }
        f
    }

    /// Saturated weights encoding the given Boolean memberships, in the
    /// same layout as [`DnlFunction::weights`].
    pub fn binary(shape: Shape, width: usize, gain: f64, memberships: &[bool]) -> Result<Self, DnlError> {
        let w = memberships.iter().map(|&b| if b { SATURATED / gain } else { -SATURATED / gain }).collect();
        Self::from_weights(shape, width, gain, w)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn input_width(&self) -> usize {
        self.width
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mutable raw weights. Invalidates previously recorded tapes.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        self.version = next_version();
        &mut self.weights
    }

    pub fn memberships(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| sigmoid(self.gain * w)).collect()
    }

    /// Forces membership `index` to (numerically) zero.
    pub fn switch_off(&mut self, index: usize) {
        let g = self.gain;
        self.weights_mut()[index] = -SATURATED / g;
    }

    /// Snapshot of memberships used for batched evaluation.
    pub fn compile(&self) -> CompiledDnl {
        CompiledDnl { shape: self.shape, width: self.width, gain: self.gain, m: self.memberships() }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, DnlError> {
        let mut tape = Tape::default();
        self.forward_tape(x, &mut tape)
    }

    /// Forward pass recording what [`DnlFunction::backward`] needs.
    pub fn forward_tape(&self, x: &[f64], tape: &mut Tape) -> Result<f64, DnlError> {
        if x.len() != self.width {
            return Err(DnlError::WidthMismatch { expected: self.width, found: x.len() });
        }
        let compiled = self.compile();
        let y = compiled.eval(x, &mut tape.scratch);
        tape.version = self.version;
        tape.x.clear();
        tape.x.extend_from_slice(x);
        tape.compiled = Some(compiled);
        Ok(y)
    }

    /// Gradients of `upstream · f(x)` with respect to the raw weights and the
    /// inputs of the recorded forward pass.
    pub fn backward(&self, tape: &Tape, upstream: f64) -> Result<Gradients, DnlError> {
        let compiled = tape.compiled.as_ref().ok_or(DnlError::StaleTape)?;
        if tape.version != self.version {
            return Err(DnlError::StaleTape);
        }
        let mut gm = vec![0.0; self.weights.len()];
        let mut gx = vec![0.0; self.width];
        compiled.backprop(&tape.x, &tape.scratch, upstream, &mut gm, &mut gx);
        Ok(Gradients { weights: compiled.membership_to_weight_grad(&gm), inputs: gx })
    }

    /// Reads the learned Boolean function off the memberships.
    pub fn extract_boolean(&self, threshold: f64) -> BooleanFormula {
        let m = self.memberships();
        let on = |row: &[f64]| -> Vec<usize> {
            row.iter().enumerate().filter(|(_, &v)| v >= threshold).map(|(i, _)| i).collect()
        };
        let w = self.width;
        match self.shape {
            Shape::Conj => BooleanFormula::Dnf(vec![on(&m)]),
            Shape::Disj => BooleanFormula::Dnf(on(&m).into_iter().map(|i| vec![i]).collect()),
            Shape::Dnf(n) | Shape::Cnf(n) => {
                let out = &m[n * w..];
                let terms = (0..n).filter(|&j| out[j] >= threshold).map(|j| on(&m[j * w..(j + 1) * w])).collect();
                if matches!(self.shape, Shape::Dnf(_)) {
                    BooleanFormula::Dnf(terms)
                } else {
                    BooleanFormula::Cnf(terms)
                }
            }
        }
    }

    /// Indices of the hidden neurons whose output-layer membership reaches
    /// `threshold` (all neurons of a single-layer function count as one).
    pub fn active_terms(&self, threshold: f64) -> Vec<usize> {
        match self.shape {
            Shape::Conj | Shape::Disj => vec![0],
            Shape::Dnf(n) | Shape::Cnf(n) => {
                let m = self.memberships();
                (0..n).filter(|&j| m[n * self.width + j] >= threshold).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub inputs: Vec<f64>,
}

/// Recorded forward pass of one [`DnlFunction`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    version: u64,
    x: Vec<f64>,
    scratch: Scratch,
    compiled: Option<CompiledDnl>,
}

/// Intermediate products of one evaluation.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    /// Hidden neuron outputs (`Dnf`/`Cnf` only).
    pub hidden: Vec<f64>,
    /// Raw product per hidden neuron: the conjunction value, or `Π(1 - m x)`
    /// for a disjunction.
    hidden_prod: Vec<f64>,
    out_prod: f64,
    pub output: f64,
}

/// Memberships frozen for batched evaluation.
#[derive(Debug, Clone)]
pub struct CompiledDnl {
    pub shape: Shape,
    pub width: usize,
    pub gain: f64,
    pub m: Vec<f64>,
}

const TINY: f64 = 1e-280;

#[inline]
fn conj_prod(x: &[f64], m: &[f64]) -> f64 {
    let mut acc = [1.0f64; 4];
    let chunks = x.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            let i = 4 * c + k;
            acc[k] *= 1.0 - m[i] * (1.0 - x[i]);
        }
    }
    for i in 4 * chunks..x.len() {
        acc[0] *= 1.0 - m[i] * (1.0 - x[i]);
    }
    (acc[0] * acc[1]) * (acc[2] * acc[3])
}

#[inline]
fn disj_prod(x: &[f64], m: &[f64]) -> f64 {
    let mut acc = [1.0f64; 4];
    let chunks = x.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            let i = 4 * c + k;
            acc[k] *= 1.0 - m[i] * x[i];
        }
    }
    for i in 4 * chunks..x.len() {
        acc[0] *= 1.0 - m[i] * x[i];
    }
    (acc[0] * acc[1]) * (acc[2] * acc[3])
}

/// Calls `visit(i, Π_{j≠i} factor(j))` for every `i` using exact prefix and
/// suffix products; used when the full product is zero or underflows.
fn for_each_others(n: usize, factor: impl Fn(usize) -> f64, mut visit: impl FnMut(usize, f64)) {
    let mut suffix = vec![1.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] * factor(i);
    }
    let mut prefix = 1.0;
    for i in 0..n {
        visit(i, prefix * suffix[i + 1]);
        prefix *= factor(i);
    }
}

/// Accumulates `g · ∂conj/∂m` into `gm` and `g · ∂conj/∂x` into `gx`.
#[inline]
fn conj_backward(x: &[f64], m: &[f64], prod: f64, g: f64, gm: &mut [f64], gx: &mut [f64]) {
    if g == 0.0 {
        return;
    }
    if prod.abs() > TINY {
        let gp = g * prod;
        for (((&xi, &mi), gmi), gxi) in x.iter().zip(m).zip(gm.iter_mut()).zip(gx.iter_mut()) {
            let go = gp / (1.0 - mi * (1.0 - xi));
            *gmi += go * (xi - 1.0);
            *gxi += go * mi;
        }
        return;
    }
    for_each_others(
        x.len(),
        |i| 1.0 - m[i] * (1.0 - x[i]),
        |i, others| {
            let go = g * others;
            gm[i] += go * (x[i] - 1.0);
            gx[i] += go * m[i];
        },
    );
}

/// Same for a disjunction whose complement product is `prod = Π(1 - m x)`.
#[inline]
fn disj_backward(x: &[f64], m: &[f64], prod: f64, g: f64, gm: &mut [f64], gx: &mut [f64]) {
    if g == 0.0 {
        return;
    }
    if prod.abs() > TINY {
        let gp = g * prod;
        for (((&xi, &mi), gmi), gxi) in x.iter().zip(m).zip(gm.iter_mut()).zip(gx.iter_mut()) {
            let go = gp / (1.0 - mi * xi);
            *gmi += go * xi;
            *gxi += go * mi;
        }
        return;
    }
    for_each_others(
        x.len(),
        |i| 1.0 - m[i] * x[i],
        |i, others| {
            let go = g * others;
            gm[i] += go * x[i];
            gx[i] += go * m[i];
        },
    );
}

impl CompiledDnl {
    pub fn num_weights(&self) -> usize {
        self.m.len()
    }

    /// Evaluates the function on `x`, leaving intermediates in `s`.
    pub fn eval(&self, x: &[f64], s: &mut Scratch) -> f64 {
        debug_assert_eq!(x.len(), self.width);
        let w = self.width;
        let y = match self.shape {
            Shape::Conj => {
                s.out_prod = conj_prod(x, &self.m);
                s.out_prod
            }
            Shape::Disj => {
                s.out_prod = disj_prod(x, &self.m);
                1.0 - s.out_prod
            }
            Shape::Dnf(n) => {
                s.hidden.resize(n, 0.0);
                s.hidden_prod.resize(n, 0.0);
                for j in 0..n {
                    let p = conj_prod(x, &self.m[j * w..(j + 1) * w]);
                    s.hidden_prod[j] = p;
                    s.hidden[j] = p;
                }
                s.out_prod = disj_prod(&s.hidden, &self.m[n * w..]);
                1.0 - s.out_prod
            }
            Shape::Cnf(n) => {
                s.hidden.resize(n, 0.0);
                s.hidden_prod.resize(n, 0.0);
                for j in 0..n {
                    let q = disj_prod(x, &self.m[j * w..(j + 1) * w]);
                    s.hidden_prod[j] = q;
                    s.hidden[j] = 1.0 - q;
                }
                s.out_prod = conj_prod(&s.hidden, &self.m[n * w..]);
                s.out_prod
            }
        };
        s.output = y.clamp(0.0, 1.0);
        s.output
    }

    /// Accumulates `g · ∂f/∂m` (membership space) into `gm` and `g · ∂f/∂x`
    /// into `gx` for the evaluation recorded in `s`.
    pub fn backprop(&self, x: &[f64], s: &Scratch, g: f64, gm: &mut [f64], gx: &mut [f64]) {
        if g == 0.0 {
            return;
        }
        let w = self.width;
        match self.shape {
            Shape::Conj => conj_backward(x, &self.m, s.out_prod, g, gm, gx),
            Shape::Disj => disj_backward(x, &self.m, s.out_prod, g, gm, gx),
            Shape::Dnf(n) => {
                let mut gh = vec![0.0; n];
                let (gm_hidden, gm_out) = gm.split_at_mut(n * w);
                disj_backward(&s.hidden, &self.m[n * w..], s.out_prod, g, gm_out, &mut gh);
                for j in 0..n {
                    conj_backward(
                        x,
                        &self.m[j * w..(j + 1) * w],
                        s.hidden_prod[j],
                        gh[j],
                        &mut gm_hidden[j * w..(j + 1) * w],
                        gx,
                    );
                }
            }
            Shape::Cnf(n) => {
                let mut gh = vec![0.0; n];
                let (gm_hidden, gm_out) = gm.split_at_mut(n * w);
                conj_backward(&s.hidden, &self.m[n * w..], s.out_prod, g, gm_out, &mut gh);
                for j in 0..n {
                    disj_backward(
                        x,
                        &self.m[j * w..(j + 1) * w],
                        s.hidden_prod[j],
                        gh[j],
                        &mut gm_hidden[j * w..(j + 1) * w],
                        gx,
                    );
                }
            }
        }
    }

    /// Chain rule through `m = sigmoid(c w)`.
    pub fn membership_to_weight_grad(&self, gm: &[f64]) -> Vec<f64> {
        gm.iter().zip(&self.m).map(|(&g, &m)| g * self.gain * m * (1.0 - m)).collect()
    }
}

/// Boolean formula over input indices read off thresholded memberships.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BooleanFormula {
    /// Disjunction of conjunctions. `Dnf([])` is false, `Dnf([[]])` true.
    Dnf(Vec<Vec<usize>>),
    /// Conjunction of disjunctions. `Cnf([])` is true, `Cnf([[]])` false.
    Cnf(Vec<Vec<usize>>),
}

impl BooleanFormula {
    pub fn evaluate(&self, x: &[bool]) -> bool {
        match self {
            BooleanFormula::Dnf(terms) => terms.iter().any(|t| t.iter().all(|&i| x[i])),
            BooleanFormula::Cnf(terms) => terms.iter().all(|t| t.iter().any(|&i| x[i])),
        }
    }

    pub fn is_constant_false(&self) -> bool {
        match self {
            BooleanFormula::Dnf(t) => t.is_empty(),
            BooleanFormula::Cnf(t) => t.iter().any(Vec::is_empty),
        }
    }
}

impl fmt::Display for BooleanFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (outer, inner, terms) = match self {
            BooleanFormula::Dnf(t) => (" ∨ ", " ∧ ", t),
            BooleanFormula::Cnf(t) => (" ∧ ", " ∨ ", t),
        };
        if terms.is_empty() {
            return write!(f, "{}", if matches!(self, BooleanFormula::Dnf(_)) { "false" } else { "true" });
        }
        let shown: Vec<String> = terms
            .iter()
            .map(|t| {
                if t.is_empty() {
                    return if matches!(self, BooleanFormula::Dnf(_)) { "true".into() } else { "false".into() };
                }
                let lits: Vec<String> = t.iter().map(|i| format!("x{i}")).collect();
                if t.len() > 1 && terms.len() > 1 {
                    format!("({})", lits.join(inner))
                } else {
                    lits.join(inner)
                }
            })
            .collect();
        write!(f, "{}", shown.join(outer))
    }
}

/// JSON weight checkpoint:
///
/// ```json
/// { "format": "diffilp-weights/1",
///   "functions": { "<id>": { "shape": "dnf:4", "input_width": 280,
///                            "gain": 1.0, "weights": [ ... ] } } }
/// ```
///
/// `weights` follows the [`DnlFunction`] layout. Floats round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightCheckpoint {
    pub format: String,
    pub functions: BTreeMap<String, FunctionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub shape: String,
    pub input_width: usize,
    pub gain: f64,
    pub weights: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "diffilp-weights/1";

impl WeightCheckpoint {
    pub fn from_functions<'a>(items: impl IntoIterator<Item = (String, &'a DnlFunction)>) -> Self {
        let functions = items
            .into_iter()
            .map(|(id, f)| {
                (
                    id,
                    FunctionRecord {
                        shape: f.shape.to_string(),
                        input_width: f.width,
                        gain: f.gain,
                        weights: f.weights.clone(),
                    },
                )
            })
            .collect();
        WeightCheckpoint { format: CHECKPOINT_FORMAT.into(), functions }
    }

    pub fn function(&self, id: &str) -> Result<DnlFunction, DnlError> {
        let r = self
            .functions
            .get(id)
            .ok_or_else(|| DnlError::Checkpoint(format!("missing function '{id}'")))?;
        DnlFunction::from_weights(r.shape.parse()?, r.input_width, r.gain, r.weights.clone())
    }

    pub fn to_json(&self) -> Result<String, DnlError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, DnlError> {
        let c: WeightCheckpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(DnlError::Checkpoint(format!("unsupported format '{}'", c.format)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), DnlError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DnlError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
