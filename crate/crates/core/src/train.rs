//! Loss, optimization, pruning and rule extraction.

use crate::chain::{init_valuations, ChainError, Chainer, ValuationState};
use crate::datalog::{clauses_from_formula, Clause};
use crate::dnl::{CompiledDnl, DnlError, DnlFunction, Shape, WeightCheckpoint, DEFAULT_WIDE_MEAN};
use crate::ground::{build_space, compile_index, GroundAtomSpace, GroundError, GroundingIndex, SpaceOptions};
use crate::logic::{GroundAtom, IlpProblem};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("example {0} is not in the ground-atom space")]
    MissingExample(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Dnl(#[from] DnlError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Maximum number of weight updates.
    pub epochs: usize,
    pub seed: u64,
    /// Predictions are clipped to `[eps_log, 1 - eps_log]` inside the loss.
    pub eps_log: f64,
    /// Training stops once the loss drops below this value.
    pub converge_below: f64,
    /// Examples drawn per epoch; `None` is full batch.
    pub batch_size: Option<usize>,
    /// Membership sigmoid gain of the rule functions.
    pub gain: f64,
    /// Loss tolerance of the pruning accept test.
    pub prune_delta: f64,
    /// Mean initial raw weight of layers wider than 64 inputs.
    pub wide_init_mean: f64,
    /// When set, wide layers start sparse with this many memberships near 1
    /// per neuron instead of the normal draw.
    #[serde(default)]
    pub sparse_init: Option<usize>,
    /// Weight of the mean `m (1 - m)` over all memberships, added to the
    /// loss being minimized once the loss has first dropped below
    /// `converge_below`. The logged loss excludes it.
    #[serde(default)]
    pub crisp_penalty: f64,
    /// Convergence also requires the thresholded memberships to fit every
    /// example.
    #[serde(default = "default_true")]
    pub crisp_convergence: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 5000,
            seed: 0,
            eps_log: 1e-7,
            converge_below: 1e-3,
            batch_size: None,
            gain: 1.0,
            prune_delta: 1e-4,
            wide_init_mean: DEFAULT_WIDE_MEAN,
            sparse_init: None,
            crisp_penalty: 0.0,
            crisp_convergence: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.eps_log > 0.0 && self.eps_log < 0.1) {
            return bad("eps_log must lie in (0, 0.1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.gain < 1.0 {
            return bad("membership gain must be at least 1");
        }
        if !(self.crisp_penalty >= 0.0 && self.crisp_penalty.is_finite()) {
            return bad("crisp penalty must be non-negative");
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive");
        }
        Ok(())
    }
}

/// Adam optimizer over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Trainable parameters feeding computed predicates in `X⁽⁰⁾`.
pub trait InputLayer: Send + Sync {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Writes the computed predicates' values into `x0`.
    fn fill(&self, space: &GroundAtomSpace, x0: &mut [f64]);
    /// Parameter gradient given the gradient with respect to `x0`.
    fn backward(&self, space: &GroundAtomSpace, grad_x0: &[f64]) -> Vec<f64>;
    /// Serializable snapshot stored in checkpoints.
    fn to_json(&self) -> serde_json::Value;
}

/// Labelled example positions grouped by target predicate.
#[derive(Debug, Clone)]
struct ExampleSet {
    /// `(flat index, label)` per example, grouped by predicate.
    groups: Vec<Vec<(usize, bool)>>,
}

/// Mean clipped cross-entropy averaged over target predicates and its
/// gradient with respect to the valuation vector.
///
/// Predictions saturated on the wrong side of the clip still receive the
/// gradient at the clip boundary, so a model whose outputs all start far
/// below `eps_log` can still learn.
pub fn loss_and_grad(values: &[f64], groups: &[Vec<(usize, bool)>], eps_log: f64, grad: Option<&mut [f64]>) -> f64 {
    let active: Vec<&Vec<(usize, bool)>> = groups.iter().filter(|g| !g.is_empty()).collect();
    if active.is_empty() {
        return 0.0;
    }
    let np = active.len() as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for g in active {
        let n = g.len() as f64;
        let mut sum = 0.0;
        for &(i, y) in g {
            let raw = values[i];
            let x = raw.clamp(eps_log, 1.0 - eps_log);
            sum -= if y { x.ln() } else { (1.0 - x).ln() };
            if let Some(gr) = grad.as_deref_mut() {
                // A prediction clipped on the wrong side keeps the boundary
                // gradient; one clipped on the right side gets none.
                if y && raw < 1.0 - eps_log {
                    gr[i] -= 1.0 / (x * n * np);
                } else if !y && raw > eps_log {
                    gr[i] += 1.0 / ((1.0 - x) * n * np);
                }
            }
        }
        total += sum / n;
    }
    total / np
}

/// Grounded problem ready for repeated evaluation.
pub struct Session<'p> {
    pub problem: &'p IlpProblem,
    pub space: GroundAtomSpace,
    pub index: GroundingIndex,
    base: ValuationState,
    examples: ExampleSet,
}

/// Loss, per-rule weight gradients, layer parameter gradients.
type LossGrad = (f64, Vec<Vec<f64>>, Vec<f64>);

impl<'p> Session<'p> {
    pub fn new(problem: &'p IlpProblem, opts: &SpaceOptions) -> Result<Self, TrainError> {
        let space = build_space(problem, opts)?;
        let index = compile_index(problem, &space, opts)?;
        Self::with_index(problem, space, index)
    }

    pub fn with_index(problem: &'p IlpProblem, space: GroundAtomSpace, index: GroundingIndex) -> Result<Self, TrainError> {
        let base = init_valuations(problem, &space)?;
        let mut groups = vec![Vec::new(); problem.signatures.len()];
        for (atoms, label) in [(&problem.positives, true), (&problem.negatives, false)] {
            for a in atoms {
                let i = space.flat_index(a).ok_or_else(|| TrainError::MissingExample(problem.display_ground(a)))?;
                groups[a.pred].push((i, label));
            }
        }
        Ok(Session { problem, space, index, base, examples: ExampleSet { groups } })
    }

    /// `(flat index, label)` of every example, grouped by predicate.
    pub fn example_groups(&self) -> &[Vec<(usize, bool)>] {
        &self.examples.groups
    }

    pub fn chainer(&self) -> Chainer<'_> {
        Chainer::new(self.problem, &self.space, &self.index)
    }

    pub fn initial_state(&self, layer: Option<&dyn InputLayer>) -> ValuationState {
        let mut s = self.base.clone();
        if let Some(l) = layer {
            l.fill(&self.space, &mut s.values);
        }
        s
    }

    /// Final valuation `X⁽ᵗᵐᵃˣ⁾`.
    pub fn predict(&self, fns: &[DnlFunction], layer: Option<&dyn InputLayer>) -> Result<ValuationState, TrainError> {
        let compiled: Vec<CompiledDnl> = fns.iter().map(DnlFunction::compile).collect();
        let traj = self.chainer().run(&compiled, self.initial_state(layer), self.problem.t_max, false)?;
        Ok(traj.last().clone())
    }

    /// Value of each ground atom in `atoms` after chaining.
    pub fn scores(
        &self,
        fns: &[DnlFunction],
        layer: Option<&dyn InputLayer>,
        atoms: &[GroundAtom],
    ) -> Result<Vec<f64>, TrainError> {
        let s = self.predict(fns, layer)?;
        atoms
            .iter()
            .map(|a| {
                self.space
                    .flat_index(a)
                    .map(|i| s.values[i])
                    .ok_or_else(|| TrainError::MissingExample(self.problem.display_ground(a)))
            })
            .collect()
    }

    pub fn loss(&self, fns: &[DnlFunction], layer: Option<&dyn InputLayer>, eps_log: f64) -> Result<f64, TrainError> {
        let s = self.predict(fns, layer)?;
        Ok(loss_and_grad(&s.values, &self.examples.groups, eps_log, None))
    }

    /// Loss on `groups` and gradients for rule weights and layer parameters.
    fn loss_grad(
        &self,
        compiled: &[CompiledDnl],
        layer: Option<&dyn InputLayer>,
        groups: &[Vec<(usize, bool)>],
        eps_log: f64,
    ) -> Result<LossGrad, TrainError> {
        let ch = self.chainer();
        let traj = ch.run(compiled, self.initial_state(layer), self.problem.t_max, true)?;
        let mut g = vec![0.0; self.space.total];
        let loss = loss_and_grad(&traj.last().values, groups, eps_log, Some(&mut g));
        let grads = ch.backward(compiled, &traj, &g)?;
        let lg = layer.map(|l| l.backward(&self.space, &grads.init)).unwrap_or_default();
        Ok((loss, grads.weights, lg))
    }

    /// Fresh randomly initialized functions, one per rule.
    pub fn init_functions(&self, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<DnlFunction> {
        self.problem
            .rules
            .iter()
            .zip(&self.index.rules)
            .map(|(r, ri)| {
                let shape = Shape::from(r.network);
                match cfg.sparse_init {
                    Some(ones) => DnlFunction::random_sparse(shape, ri.width(), cfg.gain, ones, rng),
                    None => DnlFunction::random_with_mean(shape, ri.width(), cfg.gain, cfg.wide_init_mean, rng),
                }
            })
            .collect()
    }

    fn sample_groups(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, bool)>> {
        let all: Vec<(usize, usize)> = self
            .examples
            .groups
            .iter()
            .enumerate()
            .flat_map(|(p, g)| (0..g.len()).map(move |k| (p, k)))
            .collect();
        if batch >= all.len() {
            return self.examples.groups.clone();
        }
        let mut picked = sample(rng, all.len(), batch).into_vec();
        picked.sort_unstable();
        let mut groups = vec![Vec::new(); self.examples.groups.len()];
        for i in picked {
            let (p, k) = all[i];
            groups[p].push(self.examples.groups[p][k]);
        }
        groups
    }

    /// Full training loop.
    pub fn train(&self, cfg: &TrainConfig, layer: Option<&mut dyn InputLayer>) -> Result<TrainedModel, TrainError> {
        self.train_with(cfg, layer, |_| {})
    }

    /// [`Session::train`] reporting every log row to `on_epoch`.
    pub fn train_with(
        &self,
        cfg: &TrainConfig,
        mut layer: Option<&mut dyn InputLayer>,
        mut on_epoch: impl FnMut(&LogRow),
    ) -> Result<TrainedModel, TrainError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut fns = self.init_functions(cfg, &mut rng);
        let n_rule: usize = fns.iter().map(|f| f.weights().len()).sum();
        let n_layer = layer.as_ref().map_or(0, |l| l.params().len());
        let mut adam = Adam::new(n_rule + n_layer, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
        let mut params = vec![0.0; n_rule + n_layer];
        let mut flat_grad = vec![0.0; n_rule + n_layer];
        let start = Instant::now();
        let mut log = Vec::new();
        let mut converged = false;
        let mut crisping = false;
        let mut epoch = 0;
        loop {
            let compiled: Vec<CompiledDnl> = fns.iter().map(DnlFunction::compile).collect();
            let layer_ref = layer.as_deref().map(|l| l as &dyn InputLayer);
            let full = self.loss_grad(&compiled, layer_ref, &self.examples.groups, cfg.eps_log);
            let (loss, mut wg, mut lg) = full?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, detail: format!("loss is {loss}") });
            }
            let row = LogRow { epoch, loss, seconds: start.elapsed().as_secs_f64() };
            on_epoch(&row);
            log.push(row);
            if loss < cfg.converge_below && (!cfg.crisp_convergence || self.crisp_fits(&fns, layer_ref, cfg)?) {
                converged = true;
                break;
            }
            if epoch >= cfg.epochs {
                break;
            }
            crisping |= loss < cfg.converge_below;
            if let Some(b) = cfg.batch_size {
                let groups = self.sample_groups(b, &mut rng);
                let layer_ref = layer.as_deref().map(|l| l as &dyn InputLayer);
                let (_, w, l) = self.loss_grad(&compiled, layer_ref, &groups, cfg.eps_log)?;
                wg = w;
                lg = l;
            }
            if crisping && cfg.crisp_penalty > 0.0 {
                let scale = cfg.crisp_penalty / n_rule as f64;
                for (f, g) in fns.iter().zip(wg.iter_mut()) {
                    for (gi, m) in g.iter_mut().zip(f.memberships()) {
                        // d/dw [m (1 - m)] = (1 - 2m) m (1 - m) c
                        *gi += scale * (1.0 - 2.0 * m) * m * (1.0 - m) * f.gain();
                    }
                }
            }
            let mut k = 0;
            for (f, g) in fns.iter().zip(&wg) {
                params[k..k + g.len()].copy_from_slice(f.weights());
                flat_grad[k..k + g.len()].copy_from_slice(g);
                k += g.len();
            }
            if let Some(l) = layer.as_deref() {
                params[k..].copy_from_slice(l.params());
                flat_grad[k..].copy_from_slice(&lg);
            }
            if let Some(bad) = flat_grad.iter().position(|g| !g.is_finite()) {
                return Err(TrainError::Diverged { epoch, detail: format!("gradient entry {bad} is {}", flat_grad[bad]) });
            }
            adam.step(&mut params, &flat_grad);
            let mut k = 0;
            for f in fns.iter_mut() {
                let n = f.weights().len();
                f.weights_mut().copy_from_slice(&params[k..k + n]);
                k += n;
            }
            if let Some(l) = layer.as_deref_mut() {
                l.params_mut().copy_from_slice(&params[k..]);
            }
            lg.clear();
            epoch += 1;
        }
        let program = extract_program(self.problem, &self.index, &fns);
        Ok(TrainedModel {
            problem_hash: self.problem.content_hash(),
            functions: fns,
            layer: layer.as_deref().map(|l| l.to_json()),
            final_loss: log.last().map_or(f64::NAN, |r: &LogRow| r.loss),
            epochs: epoch,
            converged,
            program: program.iter().map(|c| c.display(self.problem).to_string()).collect(),
            log,
        })
    }

    /// Whether the memberships thresholded at 0.5 put every example on the
    /// correct side.
    fn crisp_fits(&self, fns: &[DnlFunction], layer: Option<&dyn InputLayer>, cfg: &TrainConfig) -> Result<bool, TrainError> {
        let crisp = binarize(fns);
        Ok(self.loss(&crisp, layer, cfg.eps_log)? < cfg.converge_below)
    }

    /// Switches off memberships ≥ 0.5 one at a time in weight order (rules
    /// in order, hidden layer before output layer) and keeps every switch
    /// that leaves the loss within `delta` of the unpruned loss. Returns the
    /// switched-off `(rule, weight)` pairs.
    pub fn prune(
        &self,
        fns: &mut [DnlFunction],
        layer: Option<&dyn InputLayer>,
        eps_log: f64,
        delta: f64,
    ) -> Result<Vec<(usize, usize)>, TrainError> {
        let baseline = self.loss(fns, layer, eps_log)?;
        let mut removed = Vec::new();
        for r in 0..fns.len() {
            let m = fns[r].memberships();
            for (k, &mk) in m.iter().enumerate() {
                if mk < 0.5 {
                    continue;
                }
                let saved = fns[r].weights()[k];
                fns[r].switch_off(k);
                let l = self.loss(fns, layer, eps_log)?;
                if l > baseline + delta {
                    fns[r].weights_mut()[k] = saved;
                } else {
                    removed.push((r, k));
                }
            }
        }
        Ok(removed)
    }
}

/// Saturated copies of `fns` with every membership rounded at 0.5.
pub fn binarize(fns: &[DnlFunction]) -> Vec<DnlFunction> {
    fns.iter()
        .map(|f| {
            let on: Vec<bool> = f.memberships().iter().map(|&m| m >= 0.5).collect();
            DnlFunction::binary(f.shape(), f.input_width(), f.gain(), &on).expect("same layout")
        })
        .collect()
}

/// Clauses read off the thresholded memberships of every rule function.
pub fn extract_program(problem: &IlpProblem, index: &GroundingIndex, fns: &[DnlFunction]) -> Vec<Clause> {
    fns.iter()
        .enumerate()
        .flat_map(|(r, f)| clauses_from_formula(problem, r, &index.candidates[r], &f.extract_boolean(0.5)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub problem_hash: String,
    /// One function per rule, aligned with `problem.rules`.
    pub functions: Vec<DnlFunction>,
    pub layer: Option<serde_json::Value>,
    pub final_loss: f64,
    /// Weight updates performed.
    pub epochs: usize,
    pub converged: bool,
    pub program: Vec<String>,
    pub log: Vec<LogRow>,
}

pub const MODEL_FORMAT: &str = "diffilp-model/1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    problem_hash: String,
    final_loss: f64,
    epochs: usize,
    converged: bool,
    program: Vec<String>,
    weights: WeightCheckpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundaries: Option<serde_json::Value>,
}

/// Checkpoint id of rule `r`'s function.
pub fn function_id(problem: &IlpProblem, r: usize) -> String {
    format!("{}#{}", problem.signatures[problem.rules[r].pred].name, r)
}

impl TrainedModel {
    /// Refreshes `program` from the current weights.
    pub fn refresh_program(&mut self, problem: &IlpProblem, index: &GroundingIndex) {
        self.program =
            extract_program(problem, index, &self.functions).iter().map(|c| c.display(problem).to_string()).collect();
    }

    pub fn to_json(&self, problem: &IlpProblem) -> Result<String, TrainError> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            problem_hash: self.problem_hash.clone(),
            final_loss: self.final_loss,
            epochs: self.epochs,
            converged: self.converged,
            program: self.program.clone(),
            weights: WeightCheckpoint::from_functions(
                self.functions.iter().enumerate().map(|(r, f)| (function_id(problem, r), f)),
            ),
            boundaries: self.layer.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Loads a checkpoint written for `problem`; the training log is not
    /// stored in the checkpoint.
    pub fn from_json(text: &str, problem: &IlpProblem) -> Result<Self, TrainError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(TrainError::Checkpoint(format!("unsupported format '{}'", file.format)));
        }
        if file.problem_hash != problem.content_hash() {
            return Err(TrainError::Checkpoint("checkpoint belongs to a different problem".into()));
        }
        let functions = (0..problem.rules.len())
            .map(|r| file.weights.function(&function_id(problem, r)))
            .collect::<Result<_, _>>()?;
        Ok(TrainedModel {
            problem_hash: file.problem_hash,
            functions,
            layer: file.boundaries,
            final_loss: file.final_loss,
            epochs: file.epochs,
            converged: file.converged,
            program: file.program,
            log: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path, problem: &IlpProblem) -> Result<(), TrainError> {
        std::fs::write(path, self.to_json(problem)?)?;
        Ok(())
    }

    pub fn load(path: &Path, problem: &IlpProblem) -> Result<Self, TrainError> {
        Self::from_json(&std::fs::read_to_string(path)?, problem)
    }

    /// Writes the training log as `epoch,loss,seconds` CSV.
    pub fn write_log(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.log {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}
