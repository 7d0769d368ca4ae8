//! Boundary predicates over continuous features.
//!
//! Every feature `x` gets `k` upper-threshold predicates
//! `gt_i = σ(c (x - u_i))` and `k` lower-threshold predicates
//! `lt_i = σ(-c (x - l_i))`. The thresholds are trainable and live in
//! standardized feature space; `c` is fixed. [`attach`] turns a
//! [`FeatureTable`] into a problem with one intensional class predicate per
//! label whose rule body draws on the boundary predicates, and returns the
//! matching [`BoundaryLayer`] that fills them in during training.

use crate::dnl::sigmoid;
use crate::ground::GroundAtomSpace;
use crate::logic::{
    AmalgamateKind, Constant, GroundAtom, IlpProblem, NetworkKind, PredId, PredKind, PredicateSig, ProblemError,
    RuleSpec,
};
use crate::train::InputLayer;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

pub const DEFAULT_SHARPNESS: f64 = 20.0;
pub const DEFAULT_BOUNDARIES: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum ContinuousError {
    #[error("non-finite value in feature '{feature}' at row {row}")]
    NonFinite { feature: String, row: usize },
    #[error("row {row} has {got} features, expected {expected}")]
    FeatureCount { row: usize, expected: usize, got: usize },
    #[error("feature table has no 'class' column")]
    MissingClass,
    #[error("row {row}: cannot parse '{value}' as a number")]
    BadNumber { row: usize, value: String },
    #[error("no training rows")]
    NoRows,
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Numeric features with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self, ContinuousError> {
        for (r, row) in rows.iter().enumerate() {
            if row.len() != names.len() {
                return Err(ContinuousError::FeatureCount { row: r, expected: names.len(), got: row.len() });
            }
            if let Some(f) = row.iter().position(|v| !v.is_finite()) {
                return Err(ContinuousError::NonFinite { feature: names[f].clone(), row: r });
            }
        }
        Ok(FeatureTable { names, rows, labels })
    }

    /// Reads a CSV with a header row; the column named `class` holds the
    /// label and every other column is numeric.
    pub fn from_reader(reader: impl Read) -> Result<Self, ContinuousError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let class_col = header.iter().position(|h| h == "class").ok_or(ContinuousError::MissingClass)?;
        let names: Vec<String> =
            header.iter().enumerate().filter(|&(i, _)| i != class_col).map(|(_, h)| h.to_string()).collect();
        let (mut rows, mut labels) = (Vec::new(), Vec::new());
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(ContinuousError::FeatureCount {
                    row: r,
                    expected: names.len(),
                    got: rec.len().saturating_sub(1),
                });
            }
            let mut row = Vec::with_capacity(names.len());
            for (i, v) in rec.iter().enumerate() {
                if i == class_col {
                    continue;
                }
                row.push(v.parse::<f64>().map_err(|_| ContinuousError::BadNumber { row: r, value: v.to_string() })?);
            }
            rows.push(row);
            labels.push(rec[class_col].to_string());
        }
        Self::new(names, rows, labels)
    }

    pub fn from_path(path: &Path) -> Result<Self, ContinuousError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct labels in sorted order; the position is the class index.
    pub fn classes(&self) -> Vec<String> {
        self.labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn class_index(&self) -> Vec<usize> {
        let classes = self.classes();
        self.labels.iter().map(|l| classes.binary_search(l).expect("label listed")).collect()
    }
}

/// Per-feature mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fitted on the listed rows only. Constant features get unit scale.
    pub fn fit(table: &FeatureTable, rows: &[usize]) -> Result<Self, ContinuousError> {
        if rows.is_empty() {
            return Err(ContinuousError::NoRows);
        }
        let nf = table.names.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; nf];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(&table.rows[r]) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; nf];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(&table.rows[r]).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Trainable thresholds for every feature.
///
/// Parameter layout per feature: `k` lower thresholds `l` then `k` upper
/// thresholds `u`. Outputs per feature: `gt_0..gt_{k-1}` then
/// `lt_0..lt_{k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    pub k: usize,
    pub c: f64,
    pub n_features: usize,
    pub params: Vec<f64>,
}

impl BoundarySet {
    pub fn new(n_features: usize, k: usize, c: f64) -> Self {
        BoundarySet { k, c, n_features, params: vec![0.0; n_features * 2 * k] }
    }

    /// Both threshold families of each feature start at the
    /// `i / (k + 1)` quantiles of `columns[f]`.
    pub fn init_quantiles(&mut self, columns: &[Vec<f64>]) {
        let k = self.k;
        for (f, col) in columns.iter().enumerate().take(self.n_features) {
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            for i in 0..k {
                let q = quantile(&sorted, (i + 1) as f64 / (k + 1) as f64);
                self.params[f * 2 * k + i] = q;
                self.params[f * 2 * k + k + i] = q;
            }
        }
    }

    pub fn lower(&self, f: usize, i: usize) -> f64 {
        self.params[f * 2 * self.k + i]
    }

    pub fn upper(&self, f: usize, i: usize) -> f64 {
        self.params[f * 2 * self.k + self.k + i]
    }

    pub fn gt(&self, f: usize, i: usize, x: f64) -> f64 {
        sigmoid(self.c * (x - self.upper(f, i)))
    }

    pub fn lt(&self, f: usize, i: usize, x: f64) -> f64 {
        sigmoid(-self.c * (x - self.lower(f, i)))
    }

    /// The `2k` fuzzy values of feature `f` at standardized value `x`.
    pub fn forward(&self, f: usize, x: f64) -> Result<Vec<f64>, ContinuousError> {
        if !x.is_finite() {
            return Err(ContinuousError::NonFinite { feature: f.to_string(), row: 0 });
        }
        let gt = (0..self.k).map(|i| self.gt(f, i, x));
        let lt = (0..self.k).map(|i| self.lt(f, i, x));
        Ok(gt.chain(lt).collect())
    }

    /// Adds `g · ∂out/∂params` for the outputs of feature `f` at `x`, with
    /// `g` aligned with [`BoundarySet::forward`].
    pub fn backward(&self, f: usize, x: f64, g: &[f64], grad: &mut [f64]) {
        let k = self.k;
        for i in 0..k {
            let y = self.gt(f, i, x);
            grad[f * 2 * k + k + i] -= g[i] * self.c * y * (1.0 - y);
            let y = self.lt(f, i, x);
            grad[f * 2 * k + i] += g[k + i] * self.c * y * (1.0 - y);
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Which threshold a computed predicate reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Gt,
    Lt,
}

/// Computed predicate bound to one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryPred {
    pub pred: PredId,
    pub feature: usize,
    pub family: Family,
    pub index: usize,
}

/// [`InputLayer`] that writes boundary-predicate values into `X⁽⁰⁾`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryLayer {
    pub set: BoundarySet,
    pub standardizer: Standardizer,
    pub preds: Vec<BoundaryPred>,
    /// Standardized features indexed by constant id; `None` for constants
    /// that are not table rows.
    pub features: Vec<Option<Vec<f64>>>,
}

impl BoundaryLayer {
    fn value(&self, bp: &BoundaryPred, x: f64) -> f64 {
        match bp.family {
            Family::Gt => self.set.gt(bp.feature, bp.index, x),
            Family::Lt => self.set.lt(bp.feature, bp.index, x),
        }
    }

    /// Readable thresholds in original feature units, in parameter order.
    pub fn thresholds(&self) -> Vec<(usize, Family, usize, f64)> {
        let k = self.set.k;
        let mut out = Vec::new();
        for f in 0..self.set.n_features {
            let (m, s) = (self.standardizer.mean[f], self.standardizer.std[f]);
            for i in 0..k {
                out.push((f, Family::Lt, i, self.set.lower(f, i) * s + m));
            }
            for i in 0..k {
                out.push((f, Family::Gt, i, self.set.upper(f, i) * s + m));
            }
        }
        out
    }
}

impl InputLayer for BoundaryLayer {
    fn params(&self) -> &[f64] {
        &self.set.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.set.params
    }

    fn fill(&self, space: &GroundAtomSpace, x0: &mut [f64]) {
        for bp in &self.preds {
            let ps = &space.preds[bp.pred];
            for pos in 0..ps.len {
                let c = ps.args_at(pos)[0] as usize;
                if let Some(Some(row)) = self.features.get(c) {
                    x0[ps.offset + pos] = self.value(bp, row[bp.feature]);
                }
            }
        }
    }

    fn backward(&self, space: &GroundAtomSpace, grad_x0: &[f64]) -> Vec<f64> {
        let k = self.set.k;
        let c = self.set.c;
        let mut grad = vec![0.0; self.set.params.len()];
        for bp in &self.preds {
            let ps = &space.preds[bp.pred];
            let slot = match bp.family {
                Family::Lt => bp.feature * 2 * k + bp.index,
                Family::Gt => bp.feature * 2 * k + k + bp.index,
            };
            for pos in 0..ps.len {
                let g = grad_x0[ps.offset + pos];
                if g == 0.0 {
                    continue;
                }
                let ci = ps.args_at(pos)[0] as usize;
                if let Some(Some(row)) = self.features.get(ci) {
                    let y = self.value(bp, row[bp.feature]);
                    let d = c * y * (1.0 - y);
                    grad[slot] += match bp.family {
                        Family::Gt => -g * d,
                        Family::Lt => g * d,
                    };
                }
            }
        }
        grad
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("boundary layer serializes")
    }
}

/// Options of [`attach`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttachOptions {
    pub k: usize,
    pub c: f64,
    /// Conjunctive terms of each class predicate's DNF.
    pub terms: usize,
}

impl Default for AttachOptions {
    fn default() -> Self {
        AttachOptions { k: DEFAULT_BOUNDARIES, c: DEFAULT_SHARPNESS, terms: 4 }
    }
}

/// Constant name of table row `r`.
pub fn row_constant(r: usize) -> String {
    format!("row{r}")
}

/// Predicate name of the class with label `label`.
pub fn class_predicate(label: &str) -> String {
    format!("class_{}", sanitize(label))
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// Problem with no constants, predicates or rules, one chaining step and
/// OR amalgamation; a starting point for [`attach`].
pub fn empty_problem() -> IlpProblem {
    IlpProblem {
        constants: Vec::new(),
        functions: Vec::new(),
        signatures: Vec::new(),
        rules: Vec::new(),
        background: Vec::new(),
        positives: Vec::new(),
        negatives: Vec::new(),
        t_max: 1,
        amalgamate: AmalgamateKind::Or,
    }
}

/// Extends `problem` with one constant per table row, `2k` computed
/// boundary predicates per feature and one DNF class predicate per label.
/// The rows in `train` become positive examples of their own class and
/// negative examples of every other class; thresholds and standardization
/// are fitted on them. Other rows are present but unlabelled, so they can
/// be scored afterwards. With no features the problem is returned as is.
pub fn attach(
    problem: &IlpProblem,
    table: &FeatureTable,
    train: &[usize],
    opts: &AttachOptions,
) -> Result<(IlpProblem, BoundaryLayer), ContinuousError> {
    let nf = table.names.len();
    let standardizer = Standardizer::fit(table, train)?;
    let mut set = BoundarySet::new(nf, opts.k, opts.c);
    if nf == 0 {
        let layer = BoundaryLayer { set, standardizer, preds: Vec::new(), features: Vec::new() };
        return Ok((problem.clone(), layer));
    }
    let standardized: Vec<Vec<f64>> = table.rows.iter().map(|r| standardizer.apply(r)).collect();
    let columns: Vec<Vec<f64>> = (0..nf).map(|f| train.iter().map(|&r| standardized[r][f]).collect()).collect();
    set.init_quantiles(&columns);

    let mut p = problem.clone();
    let first_row = p.constants.len();
    for r in 0..table.len() {
        let id = p.constants.len() as u32;
        p.constants.push(Constant { id, name: row_constant(r), sort: None });
    }
    let mut features = vec![None; p.constants.len()];
    for (r, row) in standardized.into_iter().enumerate() {
        features[first_row + r] = Some(row);
    }

    let mut preds = Vec::with_capacity(nf * 2 * opts.k);
    for (f, name) in table.names.iter().enumerate() {
        for (family, tag) in [(Family::Gt, "gt"), (Family::Lt, "lt")] {
            for i in 0..opts.k {
                preds.push(BoundaryPred { pred: p.signatures.len(), feature: f, family, index: i });
                p.signatures.push(PredicateSig {
                    name: format!("{tag}_{}_{i}", sanitize(name)),
                    arity: 1,
                    kind: PredKind::Extensional,
                    target: false,
                    sorts: vec![None],
                    computed: true,
                    amalgamate: None,
                    tmax_override: None,
                });
            }
        }
    }
    let body: Vec<PredId> = preds.iter().map(|b| b.pred).collect();
    let classes = table.classes();
    let class_of = table.class_index();
    for (ci, label) in classes.iter().enumerate() {
        let pid = p.signatures.len();
        p.signatures.push(PredicateSig {
            name: class_predicate(label),
            arity: 1,
            kind: PredKind::Intensional,
            target: true,
            sorts: vec![None],
            computed: false,
            amalgamate: None,
            tmax_override: None,
        });
        p.rules.push(RuleSpec {
            pred: pid,
            num_var: 1,
            network: NetworkKind::Dnf(opts.terms),
            use_negation: false,
            body: Some(body.clone()),
            recursion: false,
            var_sorts: vec![None],
        });
        for &r in train {
            let atom = GroundAtom::new(pid, vec![(first_row + r) as u32]);
            if class_of[r] == ci {
                p.positives.push(atom);
            } else {
                p.negatives.push(atom);
            }
        }
    }
    p.validate()?;
    Ok((p, BoundaryLayer { set, standardizer, preds, features }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground::SpaceOptions;
    use crate::train::{Session, TrainConfig};

    fn toy() -> FeatureTable {
        // class a iff x0 > 0.5
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0, ((i * 7) % 5) as f64]).collect();
        let labels = rows.iter().map(|r| if r[0] > 0.5 { "a".into() } else { "b".into() }).collect();
        FeatureTable::new(vec!["x0".into(), "x1".into()], rows, labels).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let text = "f1,class,f2\n1.5,a,2\n-3,b,4e1\n";
        let t = FeatureTable::from_reader(text.as_bytes()).unwrap();
        assert_eq!(t.names, vec!["f1", "f2"]);
        assert_eq!(t.rows, vec![vec![1.5, 2.0], vec![-3.0, 40.0]]);
        assert_eq!(t.classes(), vec!["a", "b"]);
        assert!(matches!(FeatureTable::from_reader("f1\n1\n".as_bytes()), Err(ContinuousError::MissingClass)));
        assert!(matches!(
            FeatureTable::from_reader("f1,class\nx,a\n".as_bytes()),
            Err(ContinuousError::BadNumber { .. })
        ));
    }

    #[test]
    fn boundary_values() {
        let mut s = BoundarySet::new(1, 6, DEFAULT_SHARPNESS);
        s.params = (0..12).map(|i| i as f64 * 0.1).collect();
        let out = s.forward(0, 0.9).unwrap();
        assert_eq!(out.len(), 12);
        // gt_3 compares against u_3 = 0.9
        assert_eq!(out[3], 0.5);
        assert!(s.forward(0, f64::NAN).is_err());
        assert!(s.gt(0, 0, 10.0) > 0.999 && s.gt(0, 0, -10.0) < 0.001);
    }

    #[test]
    fn attach_shapes() {
        let t = toy();
        let train: Vec<usize> = (0..20).collect();
        let (p, layer) = attach(&empty_problem(), &t, &train, &AttachOptions::default()).unwrap();
        assert_eq!(layer.preds.len(), 24);
        assert_eq!(p.targets().count(), 2);
        assert_eq!(p.positives.len() + p.negatives.len(), 40);
        let s = Session::new(&p, &SpaceOptions::default()).unwrap();
        assert_eq!(s.index.candidates[0].width(), 24);
        let empty = FeatureTable::new(vec![], vec![vec![]; 3], vec!["a".into(); 3]).unwrap();
        let (same, _) = attach(&empty_problem(), &empty, &[0, 1, 2], &AttachOptions::default()).unwrap();
        assert_eq!(same, empty_problem());
    }

    #[test]
    fn learns_a_threshold() {
        let t = toy();
        let train: Vec<usize> = (0..20).collect();
        let opts = AttachOptions { terms: 2, ..Default::default() };
        let (p, mut layer) = attach(&empty_problem(), &t, &train, &opts).unwrap();
        let s = Session::new(&p, &SpaceOptions::default()).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 1500, seed: 3, ..Default::default() };
        let m = s.train(&cfg, Some(&mut layer)).unwrap();
        assert!(m.final_loss < 0.05, "loss {}", m.final_loss);
    }
}
