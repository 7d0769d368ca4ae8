//! Differentiable forward chaining over a compiled grounding.
//!
//! One step evaluates every rule's neural function on every valid
//! substitution of every ground head atom, folds the results with the fuzzy
//! disjunction `1 - Π(1 - v)` and combines the fold with the previous value
//! through the predicate's amalgamate function. Extensional vectors never
//! change.

use crate::dnl::{CompiledDnl, Shape};
use crate::ground::{GroundAtomSpace, GroundingIndex, ABSENT};
use crate::logic::{AmalgamateKind, IlpProblem, PredId};
use rayon::prelude::*;
use std::io::Write;

/// Work items per parallel partition are fixed so the reduction order, and
/// therefore every gradient bit, is independent of the thread count.
const PARTITIONS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum ChainError {
    #[error("background atom {0} lies outside its predicate's ground-atom space")]
    BackgroundOutsideSpace(String),
    #[error("rule {rule}: function has input width {got}, index expects {expected}")]
    ShapeMismatch { rule: usize, expected: usize, got: usize },
    #[error("expected {expected} rule functions, got {got}")]
    FunctionCount { expected: usize, got: usize },
    #[error("valuation vector has length {got}, space has {expected}")]
    StateLength { expected: usize, got: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Valuation vectors of all predicates, flattened, at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationState {
    pub values: Vec<f64>,
    pub t: usize,
}

impl ValuationState {
    pub fn pred<'a>(&'a self, space: &GroundAtomSpace, p: PredId) -> &'a [f64] {
        let s = &space.preds[p];
        &self.values[s.offset..s.offset + s.len]
    }

    pub fn pred_mut<'a>(&'a mut self, space: &GroundAtomSpace, p: PredId) -> &'a mut [f64] {
        let s = &space.preds[p];
        &mut self.values[s.offset..s.offset + s.len]
    }
}

/// `X⁽⁰⁾`: 1 for background atoms, 0 elsewhere, except that predicates
/// amalgamated with AND start from 1.
pub fn init_valuations(problem: &IlpProblem, space: &GroundAtomSpace) -> Result<ValuationState, ChainError> {
    let mut values = vec![0.0; space.total];
    for (p, sig) in problem.signatures.iter().enumerate() {
        if sig.is_intensional() && problem.amalgamate_of(p) == AmalgamateKind::And {
            let s = &space.preds[p];
            values[s.offset..s.offset + s.len].fill(1.0);
        }
    }
    for atom in &problem.background {
        let i = space
            .flat_index(atom)
            .ok_or_else(|| ChainError::BackgroundOutsideSpace(problem.display_ground(atom)))?;
        values[i] = 1.0;
    }
    Ok(ValuationState { values, t: 0 })
}

/// States `X⁽⁰⁾ … X⁽ᵀ⁾`; only the last one unless retention was requested.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<ValuationState>,
    cache: Option<ForwardCache>,
}

/// Row values and moving-input products of a retained run, reused by the
/// backward pass when it is given the same memberships.
#[derive(Debug, Clone)]
struct ForwardCache {
    m: Vec<Vec<f64>>,
    /// Per step, per plan.
    steps: Vec<Vec<RowCache>>,
}

/// Atom-major rows of one plan: for each head atom, every rule's
/// substitutions in order.
#[derive(Debug, Clone, Default)]
struct RowCache {
    vals: Vec<f64>,
    parts: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &ValuationState {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Gradients of a scalar objective with respect to all rule weights and
/// to the initial valuation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGradients {
    /// Raw-weight gradients, one vector per rule.
    pub weights: Vec<Vec<f64>>,
    /// Gradient with respect to `X⁽⁰⁾`; for extensional predicates this is
    /// the total gradient of their (constant) vectors.
    pub init: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PredPlan {
    offset: usize,
    len: usize,
    rules: Vec<usize>,
    amalgamate: AmalgamateKind,
    tmax_override: Option<usize>,
}

/// Inputs of one rule split by whether their value can change while
/// chaining. Entries are input indices into the function's input vector.
#[derive(Debug, Clone)]
struct Split {
    fixed: Vec<usize>,
    moving: Vec<usize>,
}

/// Product factor of a hidden neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Gate {
    /// `1 - m (1 - x)`
    Conj,
    /// `1 - m x`; the neuron outputs `1 - Π`.
    Disj,
}

/// Memberships of one rule re-laid out along a [`Split`], plus the
/// per-row products over the fixed inputs.
#[derive(Debug, Clone)]
struct Prepared {
    gate: Gate,
    hidden: usize,
    out: Option<Gate>,
    m_fixed: Vec<f64>,
    m_moving: Vec<f64>,
    m_out: Vec<f64>,
    /// `[row][hidden]` products over the fixed inputs.
    fixed_prod: Vec<f64>,
}

/// Forward-chaining engine bound to one grounding.
#[derive(Debug)]
pub struct Chainer<'a> {
    pub problem: &'a IlpProblem,
    pub space: &'a GroundAtomSpace,
    pub index: &'a GroundingIndex,
    plans: Vec<PredPlan>,
    splits: Vec<Split>,
}

const TINY: f64 = 1e-280;

#[inline]
fn product<const CONJ: bool>(x: &[f64], m: &[f64]) -> f64 {
    let mut acc = [1.0f64; 4];
    let mut xc = x.chunks_exact(4);
    let mut mc = m.chunks_exact(4);
    for (xs, ms) in (&mut xc).zip(&mut mc) {
        for k in 0..4 {
            acc[k] *= if CONJ { 1.0 - ms[k] * (1.0 - xs[k]) } else { 1.0 - ms[k] * xs[k] };
        }
    }
    for (&xi, &mi) in xc.remainder().iter().zip(mc.remainder()) {
        acc[0] *= if CONJ { 1.0 - mi * (1.0 - xi) } else { 1.0 - mi * xi };
    }
    (acc[0] * acc[1]) * (acc[2] * acc[3])
}

fn gate_product(gate: Gate, x: &[f64], m: &[f64]) -> f64 {
    match gate {
        Gate::Conj => product::<true>(x, m),
        Gate::Disj => product::<false>(x, m),
    }
}

/// For `q = scale · Π f_i` with `part = Π f_i`, adds `g ∂q/∂m_i` to `gm`
/// and `g ∂q/∂x_i` to `gx`.
#[inline]
fn product_backward<const CONJ: bool>(
    x: &[f64],
    m: &[f64],
    scale: f64,
    part: f64,
    g: f64,
    gm: &mut [f64],
    gx: &mut [f64],
) {
    if g == 0.0 || scale == 0.0 {
        return;
    }
    let f = |xi: f64, mi: f64| if CONJ { 1.0 - mi * (1.0 - xi) } else { 1.0 - mi * xi };
    let dm = |xi: f64| if CONJ { xi - 1.0 } else { -xi };
    let dx = |mi: f64| if CONJ { mi } else { -mi };
    if part.abs() > TINY {
        let gp = g * scale * part;
        for (((&xi, &mi), gmi), gxi) in x.iter().zip(m).zip(gm.iter_mut()).zip(gx.iter_mut()) {
            let go = gp / f(xi, mi);
            *gmi += go * dm(xi);
            *gxi += go * dx(mi);
        }
        return;
    }
    // zero or underflowed product: exact prefix and suffix products
    let n = x.len();
    let mut suffix = vec![1.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] * f(x[i], m[i]);
    }
    let mut prefix = g * scale;
    for i in 0..n {
        let go = prefix * suffix[i + 1];
        gm[i] += go * dm(x[i]);
        gx[i] += go * dx(m[i]);
        prefix *= f(x[i], m[i]);
    }
}

/// A chunk's partial gradients and its fixed-product contributions.
type ChunkPartial = (Partial, Vec<(usize, usize, f64)>);

fn gate_backward(gate: Gate, x: &[f64], m: &[f64], scale: f64, part: f64, g: f64, gm: &mut [f64], gx: &mut [f64]) {
    match gate {
        Gate::Conj => product_backward::<true>(x, m, scale, part, g, gm, gx),
        Gate::Disj => product_backward::<false>(x, m, scale, part, g, gm, gx),
    }
}

impl Prepared {
    fn new(f: &CompiledDnl, split: &Split) -> Self {
        let (gate, hidden, out) = match f.shape {
            Shape::Conj => (Gate::Conj, 1, None),
            Shape::Disj => (Gate::Disj, 1, None),
            Shape::Dnf(n) => (Gate::Conj, n, Some(Gate::Disj)),
            Shape::Cnf(n) => (Gate::Disj, n, Some(Gate::Conj)),
        };
        let w = f.width;
        let pick = |idx: &[usize]| -> Vec<f64> {
            (0..hidden).flat_map(|j| idx.iter().map(move |&i| f.m[j * w + i])).collect()
        };
        let m_out = if out.is_some() { f.m[hidden * w..].to_vec() } else { Vec::new() };
        Prepared {
            gate,
            hidden,
            out,
            m_fixed: pick(&split.fixed),
            m_moving: pick(&split.moving),
            m_out,
            fixed_prod: Vec::new(),
        }
    }

    /// Neuron output from its product.
    #[inline]
    fn activation(&self, q: f64) -> f64 {
        match self.gate {
            Gate::Conj => q,
            Gate::Disj => 1.0 - q,
        }
    }

    /// Output value from hidden activations `h`; returns `(value, out_part)`.
    #[inline]
    fn output(&self, h: &[f64]) -> (f64, f64) {
        match self.out {
            None => (h[0], 1.0),
            Some(Gate::Disj) => {
                let p = product::<false>(h, &self.m_out);
                (1.0 - p, p)
            }
            Some(Gate::Conj) => {
                let p = product::<true>(h, &self.m_out);
                (p, p)
            }
        }
    }
}

/// Per-thread buffers.
#[derive(Default)]
struct Work {
    x: Vec<f64>,
    gx: Vec<f64>,
    q: Vec<f64>,
    part: Vec<f64>,
    h: Vec<f64>,
    gh: Vec<f64>,
    vals: Vec<f64>,
    items: Vec<(usize, usize)>,
    xs: Vec<f64>,
    parts: Vec<f64>,
}

/// Gradient buffers of one partition of head atoms.
struct Partial {
    g_state: Vec<f64>,
    gm_moving: Vec<Vec<f64>>,
    gm_out: Vec<Vec<f64>>,
}

impl<'a> Chainer<'a> {
    pub fn new(problem: &'a IlpProblem, space: &'a GroundAtomSpace, index: &'a GroundingIndex) -> Self {
        let plans: Vec<PredPlan> = problem
            .signatures
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_intensional())
            .map(|(p, sig)| PredPlan {
                offset: space.offset(p),
                len: space.len(p),
                rules: problem.rules_of(p).map(|(i, _)| i).collect(),
                amalgamate: problem.amalgamate_of(p),
                tmax_override: sig.tmax_override,
            })
            .collect();
        let moving_preds: Vec<bool> = (0..problem.signatures.len()).map(|p| problem.rules_of(p).next().is_some()).collect();
        let splits = index
            .candidates
            .iter()
            .map(|c| {
                let (mut fixed, mut moving) = (Vec::new(), Vec::new());
                for i in 0..c.width() {
                    if moving_preds[c.input(i).0.pred] {
                        moving.push(i);
                    } else {
                        fixed.push(i);
                    }
                }
                Split { fixed, moving }
            })
            .collect();
        Chainer { problem, space, index, plans, splits }
    }

    fn check(&self, fns: &[CompiledDnl], values: &[f64]) -> Result<(), ChainError> {
        if fns.len() != self.index.rules.len() {
            return Err(ChainError::FunctionCount { expected: self.index.rules.len(), got: fns.len() });
        }
        for (r, (f, ri)) in fns.iter().zip(&self.index.rules).enumerate() {
            if f.width != ri.width() {
                return Err(ChainError::ShapeMismatch { rule: r, expected: ri.width(), got: f.width });
            }
        }
        if values.len() != self.space.total {
            return Err(ChainError::StateLength { expected: self.space.total, got: values.len() });
        }
        Ok(())
    }

    fn active(plan: &PredPlan, t: usize) -> bool {
        !plan.rules.is_empty() && plan.tmax_override.is_none_or(|o| t < o)
    }

    /// Gathers the inputs listed in `which` for row `(e, k)` of rule `r`.
    #[inline]
    fn gather(&self, r: usize, e: usize, k: usize, which: &[usize], values: &[f64], out: &mut Vec<f64>) {
        let ri = &self.index.rules[r];
        let row = ri.row(e, k);
        let n = ri.n_inputs;
        out.clear();
        out.extend(which.iter().map(|&i| {
            let (a, neg) = if i < n { (i, false) } else { (i - n, true) };
            let p = row[a];
            let v = if p == ABSENT { 0.0 } else { values[p as usize] };
            if neg {
                1.0 - v
            } else {
                v
            }
        }));
    }

    /// Compiles the per-epoch products over fixed inputs, which are the
    /// same at every step.
    fn prepare(&self, fns: &[CompiledDnl], values: &[f64]) -> Vec<Prepared> {
        fns.iter()
            .enumerate()
            .map(|(r, f)| {
                let split = &self.splits[r];
                let mut p = Prepared::new(f, split);
                let ri = &self.index.rules[r];
                let rows = ri.n_atoms * ri.n_subst;
                let h = p.hidden;
                let nf = split.fixed.len();
                let mut fixed_prod = vec![0.0; rows * h];
                let chunk = ri.n_atoms.div_ceil(PARTITIONS).max(1) * ri.n_subst * h;
                if chunk > 0 {
                    fixed_prod.par_chunks_mut(chunk).enumerate().for_each_init(Vec::new, |x, (c, out)| {
                        let first_row = c * chunk / h;
                        for (lr, slot) in out.chunks_mut(h).enumerate() {
                            let row = first_row + lr;
                            let (e, k) = (row / ri.n_subst, row % ri.n_subst);
                            if !ri.is_valid(e, k) {
                                continue;
                            }
                            self.gather(r, e, k, &split.fixed, values, x);
                            for (j, s) in slot.iter_mut().enumerate() {
                                *s = gate_product(p.gate, x, &p.m_fixed[j * nf..(j + 1) * nf]);
                            }
                        }
                    });
                }
                p.fixed_prod = fixed_prod;
                p
            })
            .collect()
    }

    /// Evaluates row `(e, k)` of rule `r`, leaving the moving-input
    /// products in `w.part`, neuron products in `w.q` and activations in
    /// `w.h`. The gathered moving inputs are appended to `w.xs`.
    #[inline]
    fn eval_row(&self, r: usize, prep: &Prepared, e: usize, k: usize, values: &[f64], w: &mut Work) -> f64 {
        let split = &self.splits[r];
        let ri = &self.index.rules[r];
        let row = e * ri.n_subst + k;
        let h = prep.hidden;
        let nm = split.moving.len();
        self.gather(r, e, k, &split.moving, values, &mut w.x);
        w.part.clear();
        w.q.clear();
        w.h.clear();
        for j in 0..h {
            let fixed = prep.fixed_prod[row * h + j];
            let part = if fixed == 0.0 { 0.0 } else { gate_product(prep.gate, &w.x, &prep.m_moving[j * nm..(j + 1) * nm]) };
            let q = fixed * part;
            w.part.push(part);
            w.q.push(q);
            w.h.push(prep.activation(q));
        }
        w.xs.extend_from_slice(&w.x);
        prep.output(&w.h).0.clamp(0.0, 1.0)
    }

    /// `F(e) = 1 - Π_i Π_θ (1 - F_i(I|θ))` for head atom `e` of `plan`.
    /// With `rows`, each row's value and moving-input products are stored
    /// in the atom's slots.
    fn fold(
        &self,
        plan: &PredPlan,
        e: usize,
        prep: &[Prepared],
        values: &[f64],
        w: &mut Work,
        mut rows: Option<(&mut [f64], &mut [f64])>,
    ) -> f64 {
        let mut keep = 1.0;
        let (mut vi, mut pi) = (0, 0);
        for &r in &plan.rules {
            let ri = &self.index.rules[r];
            let h = prep[r].hidden;
            for k in 0..ri.n_subst {
                if ri.is_valid(e, k) {
                    w.xs.clear();
                    let v = self.eval_row(r, &prep[r], e, k, values, w);
                    keep *= 1.0 - v;
                    if let Some((vals, parts)) = rows.as_mut() {
                        vals[vi] = v;
                        parts[pi..pi + h].copy_from_slice(&w.part);
                    }
                }
                vi += 1;
                pi += h;
            }
        }
        1.0 - keep
    }

    /// Row slots per head atom of `plan`: `(values, products)`.
    fn strides(&self, plan: &PredPlan, prep: &[Prepared]) -> (usize, usize) {
        plan.rules.iter().fold((0, 0), |(v, p), &r| {
            let n = self.index.rules[r].n_subst;
            (v + n, p + n * prep[r].hidden)
        })
    }

    /// One forward step from `state` (at step `state.t`).
    pub fn step(&self, fns: &[CompiledDnl], state: &ValuationState) -> Result<ValuationState, ChainError> {
        self.check(fns, &state.values)?;
        let prep = self.prepare(fns, &state.values);
        Ok(self.step_prepared(&prep, state, None))
    }

    fn step_prepared(&self, prep: &[Prepared], state: &ValuationState, mut cache: Option<&mut Vec<RowCache>>) -> ValuationState {
        let mut next = state.values.clone();
        let old = &state.values;
        if let Some(c) = cache.as_mut() {
            c.clear();
            c.resize(self.plans.len(), RowCache::default());
        }
        for (pi, plan) in self.plans.iter().enumerate() {
            if !Self::active(plan, state.t) {
                continue;
            }
            let out = &mut next[plan.offset..plan.offset + plan.len];
            let chunk = plan.len.div_ceil(PARTITIONS).max(1);
            let (vs, ps) = self.strides(plan, prep);
            let caching = cache.is_some();
            let mut rc = RowCache::default();
            if caching {
                rc.vals = vec![0.0; plan.len * vs];
                rc.parts = vec![0.0; plan.len * ps];
            }
            // empty pieces keep the zip aligned when nothing is cached
            let n_chunks = plan.len.div_ceil(chunk);
            let vchunks = chunked(&mut rc.vals, if caching { chunk * vs } else { 0 }, n_chunks);
            let pchunks = chunked(&mut rc.parts, if caching { chunk * ps } else { 0 }, n_chunks);
            let pieces = out.par_chunks_mut(chunk).zip(vchunks.into_par_iter()).zip(pchunks.into_par_iter());
            pieces.enumerate().for_each_init(Work::default, |w, (c, ((slice, vrow), prow))| {
                for (j, v) in slice.iter_mut().enumerate() {
                    let e = c * chunk + j;
                    let slots = caching.then(|| (&mut vrow[j * vs..(j + 1) * vs], &mut prow[j * ps..(j + 1) * ps]));
                    let f = self.fold(plan, e, prep, old, w, slots);
                    let prev = old[plan.offset + e];
                    *v = match plan.amalgamate {
                        AmalgamateKind::Or => 1.0 - (1.0 - prev) * (1.0 - f),
                        AmalgamateKind::And => prev * f,
                        AmalgamateKind::Replace => f,
                    }
                    .clamp(0.0, 1.0);
                }
            });
            if let Some(c) = cache.as_mut() {
                c[pi] = rc;
            }
        }
        ValuationState { values: next, t: state.t + 1 }
    }

    /// `t_max` sequential steps from `init`. With `keep` every intermediate
    /// state is retained (needed for [`Chainer::backward`]).
    pub fn run(
        &self,
        fns: &[CompiledDnl],
        init: ValuationState,
        t_max: usize,
        keep: bool,
    ) -> Result<Trajectory, ChainError> {
        self.check(fns, &init.values)?;
        let prep = self.prepare(fns, &init.values);
        let mut states = vec![init];
        let mut cache = keep.then(|| ForwardCache { m: fns.iter().map(|f| f.m.clone()).collect(), steps: Vec::new() });
        for _ in 0..t_max {
            let mut rows = Vec::new();
            let slot = cache.as_ref().map(|_| &mut rows);
            let next = self.step_prepared(&prep, states.last().expect("non-empty"), slot);
            if let Some(c) = cache.as_mut() {
                c.steps.push(rows);
            }
            if !keep {
                states.clear();
            }
            states.push(next);
        }
        Ok(Trajectory { states, cache })
    }

    /// Back-propagates `grad_final` (gradient of the objective with respect
    /// to the last state) through every step of a retained trajectory.
    pub fn backward(
        &self,
        fns: &[CompiledDnl],
        traj: &Trajectory,
        grad_final: &[f64],
    ) -> Result<ChainGradients, ChainError> {
        self.check(fns, grad_final)?;
        let x0 = &traj.states[0].values;
        let prep = self.prepare(fns, x0);
        let mut gm: Vec<Vec<f64>> = fns.iter().map(|f| vec![0.0; f.num_weights()]).collect();
        // Σ over steps of the gradient reaching each fixed-input product
        let mut fixed_grad: Vec<Vec<f64>> = prep.iter().map(|p| vec![0.0; p.fixed_prod.len()]).collect();
        let cache = traj.cache.as_ref().filter(|c| {
            c.steps.len() + 1 == traj.states.len() && c.m.iter().zip(fns).all(|(m, f)| *m == f.m)
        });
        let mut g = grad_final.to_vec();
        for t in (0..traj.states.len() - 1).rev() {
            let rows = cache.map(|c| c.steps[t].as_slice());
            g = self.backward_step(fns, &prep, &traj.states[t], rows, &g, &mut gm, &mut fixed_grad);
        }
        // fixed inputs are constant, so their gradient lands on X⁽⁰⁾
        for (r, p) in prep.iter().enumerate() {
            self.backward_fixed(r, p, &fns[r], x0, &fixed_grad[r], &mut g, &mut gm[r]);
        }
        let weights = fns.iter().zip(&gm).map(|(f, gm)| f.membership_to_weight_grad(gm)).collect();
        Ok(ChainGradients { weights, init: g })
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_fixed(
        &self,
        r: usize,
        p: &Prepared,
        f: &CompiledDnl,
        x0: &[f64],
        fixed_grad: &[f64],
        g: &mut [f64],
        gm: &mut [f64],
    ) {
        let split = &self.splits[r];
        let ri = &self.index.rules[r];
        let nf = split.fixed.len();
        if nf == 0 {
            return;
        }
        let h = p.hidden;
        let w = f.width;
        let rows_per = ri.n_atoms.div_ceil(PARTITIONS).max(1) * ri.n_subst;
        let n_chunks = (ri.n_atoms * ri.n_subst).div_ceil(rows_per.max(1));
        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
            .into_par_iter()
            .map_init(Work::default, |wk, c| {
                let mut gstate = vec![0.0; x0.len()];
                let mut gmf = vec![0.0; h * nf];
                for row in c * rows_per..((c + 1) * rows_per).min(ri.n_atoms * ri.n_subst) {
                    let (e, k) = (row / ri.n_subst, row % ri.n_subst);
                    let gq = &fixed_grad[row * h..(row + 1) * h];
                    if !ri.is_valid(e, k) || gq.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    self.gather(r, e, k, &split.fixed, x0, &mut wk.x);
                    wk.gx.clear();
                    wk.gx.resize(nf, 0.0);
                    for j in 0..h {
                        let mj = &p.m_fixed[j * nf..(j + 1) * nf];
                        let part = p.fixed_prod[row * h + j];
                        gate_backward(p.gate, &wk.x, mj, 1.0, part, gq[j], &mut gmf[j * nf..(j + 1) * nf], &mut wk.gx);
                    }
                    scatter_inputs(ri, e, k, &split.fixed, &wk.gx, &mut gstate);
                }
                (gstate, gmf)
            })
            .collect();
        for (gstate, gmf) in partials {
            for (a, b) in g.iter_mut().zip(&gstate) {
                *a += b;
            }
            for j in 0..h {
                for (i, &idx) in split.fixed.iter().enumerate() {
                    gm[j * w + idx] += gmf[j * nf + i];
                }
            }
        }
    }

    /// Gradient with respect to `X⁽ᵗ⁾` given the gradient `g` with respect
    /// to `X⁽ᵗ⁺¹⁾`. Membership gradients of moving inputs and the output
    /// layer go to `gm`; gradients of the fixed-input products accumulate in
    /// `fixed_grad`.
    fn backward_step(
        &self,
        fns: &[CompiledDnl],
        prep: &[Prepared],
        state: &ValuationState,
        rows: Option<&[RowCache]>,
        g: &[f64],
        gm: &mut [Vec<f64>],
        fixed_grad: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let values = &state.values;
        let mut g_prev = g.to_vec();
        for plan in &self.plans {
            if Self::active(plan, state.t) {
                // rewritten below
                g_prev[plan.offset..plan.offset + plan.len].fill(0.0);
            }
        }
        for (pi, plan) in self.plans.iter().enumerate() {
            if !Self::active(plan, state.t) {
                continue;
            }
            let (vs, ps) = self.strides(plan, prep);
            let cached = rows.map(|r| &r[pi]);
            let chunk = plan.len.div_ceil(PARTITIONS).max(1);
            let n_chunks = plan.len.div_ceil(chunk);
            let partials: Vec<ChunkPartial> = (0..n_chunks)
                .into_par_iter()
                .map_init(Work::default, |w, c| {
                    let mut part = Partial {
                        g_state: vec![0.0; values.len()],
                        gm_moving: plan.rules.iter().map(|&r| vec![0.0; prep[r].m_moving.len()]).collect(),
                        gm_out: plan.rules.iter().map(|&r| vec![0.0; prep[r].m_out.len()]).collect(),
                    };
                    let mut fixed = Vec::new();
                    for e in c * chunk..((c + 1) * chunk).min(plan.len) {
                        let ge = g[plan.offset + e];
                        if ge == 0.0 {
                            continue;
                        }
                        let slots = cached.map(|rc| (&rc.vals[e * vs..(e + 1) * vs], &rc.parts[e * ps..(e + 1) * ps]));
                        self.backward_atom(plan, e, ge, prep, values, slots, w, &mut part, &mut fixed);
                    }
                    (part, fixed)
                })
                .collect();
            for (part, fixed) in partials {
                for (a, b) in g_prev.iter_mut().zip(&part.g_state) {
                    *a += b;
                }
                for (k, &r) in plan.rules.iter().enumerate() {
                    let split = &self.splits[r];
                    let nm = split.moving.len();
                    let w = fns[r].width;
                    let h = prep[r].hidden;
                    for j in 0..h {
                        for (i, &idx) in split.moving.iter().enumerate() {
                            gm[r][j * w + idx] += part.gm_moving[k][j * nm + i];
                        }
                    }
                    for (j, v) in part.gm_out[k].iter().enumerate() {
                        gm[r][h * w + j] += v;
                    }
                }
                for (r, slot, v) in fixed {
                    fixed_grad[r][slot] += v;
                }
            }
        }
        g_prev
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_atom(
        &self,
        plan: &PredPlan,
        e: usize,
        ge: f64,
        prep: &[Prepared],
        values: &[f64],
        slots: Option<(&[f64], &[f64])>,
        w: &mut Work,
        part: &mut Partial,
        fixed: &mut Vec<(usize, usize, f64)>,
    ) {
        // every (rule, θ) of this atom with its moving inputs, re-evaluated
        // unless the forward pass left them in `slots`
        w.items.clear();
        w.vals.clear();
        w.xs.clear();
        w.parts.clear();
        let (mut vi, mut pi) = (0, 0);
        for (k, &r) in plan.rules.iter().enumerate() {
            let ri = &self.index.rules[r];
            let h = prep[r].hidden;
            for s in 0..ri.n_subst {
                if ri.is_valid(e, s) {
                    let v = match slots {
                        Some((vals, parts)) => {
                            self.gather(r, e, s, &self.splits[r].moving, values, &mut w.x);
                            w.xs.extend_from_slice(&w.x);
                            w.parts.extend_from_slice(&parts[pi..pi + h]);
                            vals[vi]
                        }
                        None => {
                            let v = self.eval_row(r, &prep[r], e, s, values, w);
                            w.parts.extend_from_slice(&w.part);
                            v
                        }
                    };
                    w.vals.push(v);
                    w.items.push((k, s));
                }
                vi += 1;
                pi += h;
            }
        }
        let n = w.vals.len();
        let keep: f64 = w.vals.iter().map(|v| 1.0 - v).product();
        let f = 1.0 - keep;
        let prev = values[plan.offset + e];
        let (d_old, d_f) = match plan.amalgamate {
            AmalgamateKind::Or => (1.0 - f, 1.0 - prev),
            AmalgamateKind::And => (f, prev),
            AmalgamateKind::Replace => (0.0, 1.0),
        };
        part.g_state[plan.offset + e] += ge * d_old;
        let gf = ge * d_f;
        if gf == 0.0 || n == 0 {
            return;
        }
        // ∂F/∂v_j = Π_{i≠j} (1 - v_i)
        let mut others = vec![0.0; n];
        let mut prefix = 1.0;
        for j in 0..n {
            others[j] = prefix;
            prefix *= 1.0 - w.vals[j];
        }
        let mut suffix = 1.0;
        for j in (0..n).rev() {
            others[j] *= suffix;
            suffix *= 1.0 - w.vals[j];
        }
        let xs = std::mem::take(&mut w.xs);
        let mut start = 0;
        let mut pstart = 0;
        for j in 0..n {
            let (k, s) = w.items[j];
            let r = plan.rules[k];
            let p = &prep[r];
            let split = &self.splits[r];
            let nm = split.moving.len();
            let x = &xs[start..start + nm];
            start += nm;
            let h = p.hidden;
            let parts = &w.parts[pstart..pstart + h];
            pstart += h;
            let gv = gf * others[j];
            if gv == 0.0 {
                continue;
            }
            let ri = &self.index.rules[r];
            let row = e * ri.n_subst + s;
            w.part.clear();
            w.part.extend_from_slice(parts);
            w.h.clear();
            for jj in 0..h {
                w.h.push(p.activation(p.fixed_prod[row * h + jj] * w.part[jj]));
            }
            // output layer
            w.gh.clear();
            w.gh.resize(h, 0.0);
            match p.out {
                None => w.gh[0] = gv,
                Some(gate) => {
                    let (_, out_part) = p.output(&w.h);
                    // v = 1 - Π for a disjunctive output, Π for a conjunctive one
                    let g_out = if gate == Gate::Disj { -gv } else { gv };
                    gate_backward(gate, &w.h, &p.m_out, 1.0, out_part, g_out, &mut part.gm_out[k], &mut w.gh);
                }
            }
            w.gx.clear();
            w.gx.resize(nm, 0.0);
            for jj in 0..h {
                let gq = if p.gate == Gate::Conj { w.gh[jj] } else { -w.gh[jj] };
                if gq == 0.0 {
                    continue;
                }
                let fp = p.fixed_prod[row * h + jj];
                gate_backward(
                    p.gate,
                    x,
                    &p.m_moving[jj * nm..(jj + 1) * nm],
                    fp,
                    w.part[jj],
                    gq,
                    &mut part.gm_moving[k][jj * nm..(jj + 1) * nm],
                    &mut w.gx,
                );
                if !split.fixed.is_empty() {
                    fixed.push((r, row * h + jj, gq * w.part[jj]));
                }
            }
            scatter_inputs(ri, e, s, &split.moving, &w.gx, &mut part.g_state);
        }
        w.xs = xs;
    }
}

/// `buf` split into `n` pieces of `size`, or `n` empty pieces when `size`
/// is zero.
fn chunked(buf: &mut [f64], size: usize, n: usize) -> Vec<&mut [f64]> {
    if size == 0 {
        return (0..n).map(|_| <&mut [f64]>::default()).collect();
    }
    buf.chunks_mut(size).collect()
}

/// Adds input gradients `gx` (aligned with `which`) to the valuation
/// positions they were gathered from.
#[inline]
fn scatter_inputs(ri: &crate::ground::RuleIndex, e: usize, k: usize, which: &[usize], gx: &[f64], out: &mut [f64]) {
    let row = ri.row(e, k);
    let n = ri.n_inputs;
    for (&i, &d) in which.iter().zip(gx) {
        let (a, sign) = if i < n { (i, 1.0) } else { (i - n, -1.0) };
        let p = row[a];
        if p != ABSENT {
            out[p as usize] += sign * d;
        }
    }
}

/// Writes `step,predicate,atom,value` rows for every entry whose value is
/// at least `threshold`.
pub fn write_trace<W: Write>(
    out: W,
    problem: &IlpProblem,
    space: &GroundAtomSpace,
    traj: &Trajectory,
    threshold: f64,
) -> Result<(), ChainError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "predicate", "atom", "value"])?;
    for state in &traj.states {
        for (i, &v) in state.values.iter().enumerate() {
            if v < threshold {
                continue;
            }
            let (p, pos) = space.decode(i);
            let atom = space.atom_at(p, pos);
            w.write_record([
                state.t.to_string(),
                problem.signatures[p].name.clone(),
                problem.display_ground(&atom),
                format!("{v}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnl::{DnlFunction, Shape};
    use crate::ground::{build_space, compile_index, SpaceOptions};
    use crate::logic::parse_problem;
    use rand::SeedableRng;

    const LT: &str = "\
constants { 0 1 2 3 4 }
pred inc/2 extensional
pred lt/2 intensional vars=2 net=conj neg=false
rule lt vars=3 net=conj neg=false
fact inc(0,1). inc(1,2). inc(2,3). inc(3,4).
pos lt(0,1).
param tmax=4
";

    fn setup(src: &str) -> (IlpProblem, GroundAtomSpace, GroundingIndex) {
        let p = parse_problem(src).unwrap();
        let opts = SpaceOptions::default();
        let space = build_space(&p, &opts).unwrap();
        let index = compile_index(&p, &space, &opts).unwrap();
        (p, space, index)
    }

    /// Rule 1 = inc(A,B) (input 1 of 8), rule 2 = lt(A,C) ∧ inc(C,B)
    /// (inputs 11 and 7 of 18).
    fn lt_program() -> Vec<CompiledDnl> {
        let mut m1 = vec![false; 8];
        m1[1] = true;
        let mut m2 = vec![false; 18];
        m2[11] = true;
        m2[7] = true;
        vec![
            DnlFunction::binary(Shape::Conj, 8, 1.0, &m1).unwrap().compile(),
            DnlFunction::binary(Shape::Conj, 18, 1.0, &m2).unwrap().compile(),
        ]
    }

    fn true_lt(p: &IlpProblem, space: &GroundAtomSpace, s: &ValuationState) -> Vec<(u32, u32)> {
        let lt = p.pred_id("lt").unwrap();
        s.pred(space, lt)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(i, _)| {
                let a = space.atom_at(lt, i);
                (a.args[0], a.args[1])
            })
            .collect()
    }

    #[test]
    fn initial_valuation() {
        let (p, space, _) = setup(LT);
        let s = init_valuations(&p, &space).unwrap();
        assert_eq!(s.pred(&space, 0).iter().filter(|&&v| v == 1.0).count(), 4);
        assert!(s.pred(&space, 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn less_than_chain_reaches_fixpoint() {
        let (p, space, index) = setup(LT);
        let ch = Chainer::new(&p, &space, &index);
        let fns = lt_program();
        let s0 = init_valuations(&p, &space).unwrap();
        let s1 = ch.step(&fns, &s0).unwrap();
        assert_eq!(true_lt(&p, &space, &s1), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
        let traj = ch.run(&fns, s0, 4, true).unwrap();
        assert_eq!(traj.states.len(), 5);
        let fin = traj.last();
        let mut want = Vec::new();
        for a in 0..5 {
            for b in a + 1..5 {
                want.push((a, b));
            }
        }
        assert_eq!(true_lt(&p, &space, fin), want);
        assert!(fin.values.iter().all(|&v| v == 0.0 || v == 1.0));
        // extensional vector untouched
        assert_eq!(fin.pred(&space, 0), traj.states[0].pred(&space, 0));
    }

    #[test]
    fn replace_with_false_rule_clears() {
        let src = LT.replace("param tmax=4", "param tmax=4 amalgamate=replace");
        let (p, space, index) = setup(&src);
        let ch = Chainer::new(&p, &space, &index);
        let mut s = init_valuations(&p, &space).unwrap();
        s.pred_mut(&space, 1).fill(1.0);
        // Dnf with every output membership off is constant false
        let f = |w| DnlFunction::binary(Shape::Disj, w, 1.0, &vec![false; w]).unwrap().compile();
        let next = ch.step(&[f(8), f(18)], &s).unwrap();
        assert!(next.pred(&space, 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn and_amalgamation_starts_from_one() {
        let src = LT.replace("param tmax=4", "param tmax=4 amalgamate=and");
        let (p, space, _) = setup(&src);
        let s = init_valuations(&p, &space).unwrap();
        assert!(s.pred(&space, 1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (p, space, index) = setup(LT);
        let ch = Chainer::new(&p, &space, &index);
        let s0 = init_valuations(&p, &space).unwrap();
        let f = DnlFunction::binary(Shape::Conj, 7, 1.0, &[false; 7]).unwrap().compile();
        assert!(matches!(ch.step(&[f.clone(), f], &s0), Err(ChainError::ShapeMismatch { rule: 0, .. })));
    }

    #[test]
    fn or_chain_is_monotone_with_random_weights() {
        let (p, space, index) = setup(LT);
        let ch = Chainer::new(&p, &space, &index);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let fns = [
            DnlFunction::random(Shape::Dnf(2), 8, 1.0, &mut rng).compile(),
            DnlFunction::random(Shape::Dnf(2), 18, 1.0, &mut rng).compile(),
        ];
        let traj = ch.run(&fns, init_valuations(&p, &space).unwrap(), 6, true).unwrap();
        for w in traj.states.windows(2) {
            for (a, b) in w[0].values.iter().zip(&w[1].values) {
                assert!(b >= a && (0.0..=1.0).contains(b));
            }
        }
    }

    #[test]
    fn tmax_override_stops_rules() {
        let src = LT.replace("neg=false\nrule", "neg=false tmax_override=2\nrule");
        let (p, space, index) = setup(&src);
        let ch = Chainer::new(&p, &space, &index);
        let traj = ch.run(&lt_program(), init_valuations(&p, &space).unwrap(), 4, false).unwrap();
        assert_eq!(traj.states.len(), 1);
        // two effective steps reach pairs at distance ≤ 2 only
        assert_eq!(true_lt(&p, &space, traj.last()).len(), 4 + 3);
    }

    fn objective(ch: &Chainer, fns: &[CompiledDnl], s0: &ValuationState, coef: &[f64]) -> f64 {
        let traj = ch.run(fns, s0.clone(), 3, false).unwrap();
        traj.last().values.iter().zip(coef).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for amalg in ["or", "and", "replace"] {
            let src = LT.replace("param tmax=4", &format!("param tmax=3 amalgamate={amalg}"));
            let (p, space, index) = setup(&src);
            let ch = Chainer::new(&p, &space, &index);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            let mut dnls = [
                DnlFunction::random(Shape::Dnf(2), 8, 1.0, &mut rng),
                DnlFunction::random(Shape::Conj, 18, 1.0, &mut rng),
            ];
            let coef: Vec<f64> = (0..space.total).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect();
            let mut s0 = init_valuations(&p, &space).unwrap();
            // fuzzy background so input gradients are exercised
            for v in s0.pred_mut(&space, 0) {
                *v = 0.2 + 0.6 * *v;
            }
            let fns: Vec<_> = dnls.iter().map(|d| d.compile()).collect();
            let traj = ch.run(&fns, s0.clone(), 3, true).unwrap();
            let grads = ch.backward(&fns, &traj, &coef).unwrap();
            let h = 1e-5;
            for r in 0..2 {
                for k in (0..dnls[r].weights().len()).step_by(3) {
                    let w0 = dnls[r].weights()[k];
                    dnls[r].weights_mut()[k] = w0 + h;
                    let up = objective(&ch, &dnls.iter().map(|d| d.compile()).collect::<Vec<_>>(), &s0, &coef);
                    dnls[r].weights_mut()[k] = w0 - h;
                    let dn = objective(&ch, &dnls.iter().map(|d| d.compile()).collect::<Vec<_>>(), &s0, &coef);
                    dnls[r].weights_mut()[k] = w0;
                    let fd = (up - dn) / (2.0 * h);
                    let an = grads.weights[r][k];
                    assert!((fd - an).abs() <= 1e-3 * fd.abs().max(1e-3), "{amalg} rule {r} w{k}: fd {fd} an {an}");
                }
            }
            for i in 0..25 {
                let mut a = s0.clone();
                a.values[i] += h;
                let mut b = s0.clone();
                b.values[i] -= h;
                let fd = (objective(&ch, &fns, &a, &coef) - objective(&ch, &fns, &b, &coef)) / (2.0 * h);
                let an = grads.init[i];
                assert!((fd - an).abs() <= 1e-3 * fd.abs().max(1e-3), "{amalg} init {i}: fd {fd} an {an}");
            }
        }
    }

    #[test]
    fn trace_lists_true_atoms() {
        let (p, space, index) = setup(LT);
        let ch = Chainer::new(&p, &space, &index);
        let traj = ch.run(&lt_program(), init_valuations(&p, &space).unwrap(), 1, true).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &p, &space, &traj, 0.5).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 + 8);
        assert!(text.contains("1,lt,\"lt(0,1)\",1\n") || text.contains("1,lt,lt(0,1),1\n"));
    }
}
