//! Cross-validation, precision-recall metrics and dataset loading.

use crate::continuous::{attach, class_predicate, empty_problem, row_constant, AttachOptions, ContinuousError, FeatureTable};
use crate::ground::SpaceOptions;
use crate::logic::{Constant, GroundAtom, IlpProblem, ParseError, ProblemError};
use crate::train::{Session, TrainConfig, TrainError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cross-validation needs at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("{0} examples cannot fill {1} folds")]
    TooFewExamples(usize, usize),
    #[error("no positive labels")]
    NoPositives,
    #[error("fold {0} has no positive test example")]
    FoldWithoutPositives(usize),
    #[error("{file}:{line}: {detail}")]
    Malformed { file: String, line: usize, detail: String },
    #[error("{file}:{line}: unknown predicate '{name}'")]
    UnknownPredicate { file: String, line: usize, name: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Continuous(#[from] ContinuousError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Seeded assignment of examples to `k` folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for FoldPlan {
    fn default() -> Self {
        FoldPlan { k: 5, seed: 0, stratified: true }
    }
}

impl FoldPlan {
    /// Test indices of each fold for examples with the given class labels.
    /// Stratified plans deal each class's shuffled examples round-robin,
    /// continuing where the previous class stopped, so every fold holds
    /// each class within one example of its share.
    pub fn assign(&self, labels: &[usize]) -> Result<Vec<Vec<usize>>, EvalError> {
        if self.k < 2 {
            return Err(EvalError::TooFewFolds(self.k));
        }
        if labels.len() < self.k {
            return Err(EvalError::TooFewExamples(labels.len(), self.k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let groups: Vec<Vec<usize>> = if self.stratified {
            let n_classes = labels.iter().max().map_or(0, |m| m + 1);
            (0..n_classes).map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect()).collect()
        } else {
            vec![(0..labels.len()).collect()]
        };
        let mut folds = vec![Vec::new(); self.k];
        let mut next = 0;
        for mut g in groups {
            g.shuffle(&mut rng);
            for i in g {
                folds[next % self.k].push(i);
                next += 1;
            }
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        Ok(folds)
    }
}

/// Indices of `0..n` not in `test` (which must be sorted).
pub fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| test.binary_search(i).is_err()).collect()
}

/// Precision-recall curve with its step-wise area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision, threshold)` at every distinct score, highest
    /// threshold first.
    pub points: Vec<(f64, f64, f64)>,
    pub aupr: f64,
}

impl PrCurve {
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["threshold", "recall", "precision"])?;
        for &(r, p, t) in &self.points {
            w.write_record([t.to_string(), r.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Area under the precision-recall curve as `Σ (R_i - R_{i-1}) P_i` over
/// descending distinct score thresholds. Tied scores share a threshold.
pub fn aupr(scores: &[(f64, bool)]) -> Result<PrCurve, EvalError> {
    let n_pos = scores.iter().filter(|s| s.1).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision, t));
    }
    Ok(PrCurve { points, aupr: area })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub aupr: f64,
    pub accuracy: f64,
    /// Final training loss.
    pub loss: f64,
    /// One curve per scored class (one-vs-rest); not part of the report.
    #[serde(skip)]
    pub curves: Vec<(String, PrCurve)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub dataset: String,
    pub folds: Vec<FoldMetrics>,
    pub mean_aupr: f64,
    pub mean_accuracy: f64,
}

impl CvReport {
    fn new(dataset: &str, folds: Vec<FoldMetrics>) -> Self {
        let n = folds.len().max(1) as f64;
        let mean_aupr = folds.iter().map(|f| f.aupr).sum::<f64>() / n;
        let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / n;
        CvReport { dataset: dataset.to_string(), folds, mean_aupr, mean_accuracy }
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Writes `pr_fold<i>_<class>.csv` for every fold and scored class.
    pub fn write_pr_curves(&self, dir: &Path) -> Result<(), EvalError> {
        for (i, f) in self.folds.iter().enumerate() {
            for (name, c) in &f.curves {
                c.write_csv(&dir.join(format!("pr_fold{i}_{name}.csv")))?;
            }
        }
        Ok(())
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// k-fold evaluation of boundary-predicate classifiers on a feature table.
/// Each row is assigned to the class whose predicate scores highest; the
/// fold AUPR is the mean one-vs-rest AUPR over the classes present in the
/// test split (only the second class for a binary table).
pub fn cross_validate_table(
    name: &str,
    table: &FeatureTable,
    plan: &FoldPlan,
    attach_opts: &AttachOptions,
    cfg: &TrainConfig,
) -> Result<CvReport, EvalError> {
    let labels = table.class_index();
    let classes = table.classes();
    let folds = plan.assign(&labels)?;
    let metrics = folds
        .par_iter()
        .map(|test| -> Result<FoldMetrics, EvalError> {
            let train = complement(table.len(), test);
            let (problem, mut layer) = attach(&empty_problem(), table, &train, attach_opts)?;
            let session = Session::new(&problem, &SpaceOptions::default())?;
            let model = session.train(cfg, Some(&mut layer))?;
            let mut per_class = Vec::with_capacity(classes.len());
            for c in &classes {
                let pid = problem.pred_id(&class_predicate(c)).expect("class predicate");
                let atoms: Vec<GroundAtom> = test
                    .iter()
                    .map(|&r| GroundAtom::new(pid, vec![problem.const_id(&row_constant(r)).expect("row constant")]))
                    .collect();
                per_class.push(session.scores(&model.functions, Some(&layer), &atoms)?);
            }
            let correct = (0..test.len())
                .filter(|&j| argmax(&per_class.iter().map(|s| s[j]).collect::<Vec<_>>()) == labels[test[j]])
                .count();
            let scored: Vec<usize> = if classes.len() == 2 { vec![1] } else { (0..classes.len()).collect() };
            let mut curves = Vec::new();
            for c in scored {
                let pairs: Vec<(f64, bool)> =
                    test.iter().enumerate().map(|(j, &r)| (per_class[c][j], labels[r] == c)).collect();
                if pairs.iter().any(|p| p.1) {
                    curves.push((classes[c].clone(), aupr(&pairs)?));
                }
            }
            let aupr = curves.iter().map(|c| c.1.aupr).sum::<f64>() / curves.len().max(1) as f64;
            Ok(FoldMetrics { aupr, accuracy: correct as f64 / test.len() as f64, loss: model.final_loss, curves })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CvReport::new(name, metrics))
}

/// Options of [`cross_validate_relational`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelationalOptions {
    /// Keep at most this many training negatives per training positive.
    pub negative_ratio: Option<f64>,
    pub space: SpaceOptions,
}

/// k-fold evaluation over the labelled examples of a relational problem.
/// Held-out examples are removed from training and scored by their final
/// valuation; accuracy thresholds scores at 0.5.
pub fn cross_validate_relational(
    name: &str,
    problem: &IlpProblem,
    plan: &FoldPlan,
    opts: &RelationalOptions,
    cfg: &TrainConfig,
) -> Result<CvReport, EvalError> {
    let examples: Vec<(GroundAtom, bool)> = problem
        .positives
        .iter()
        .map(|a| (a.clone(), true))
        .chain(problem.negatives.iter().map(|a| (a.clone(), false)))
        .collect();
    let labels: Vec<usize> = examples.iter().map(|e| e.1 as usize).collect();
    let folds = plan.assign(&labels)?;
    let metrics = folds
        .par_iter()
        .enumerate()
        .map(|(fi, test)| -> Result<FoldMetrics, EvalError> {
            let train = complement(examples.len(), test);
            let mut pos: Vec<GroundAtom> = train.iter().filter(|&&i| examples[i].1).map(|&i| examples[i].0.clone()).collect();
            let mut neg: Vec<GroundAtom> = train.iter().filter(|&&i| !examples[i].1).map(|&i| examples[i].0.clone()).collect();
            if let Some(ratio) = opts.negative_ratio {
                let keep = ((pos.len() as f64 * ratio).ceil() as usize).min(neg.len());
                let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ fi as u64);
                neg.shuffle(&mut rng);
                neg.truncate(keep);
                neg.sort();
            }
            pos.sort();
            let fold_problem = problem.with_examples(pos, neg);
            let session = Session::new(&fold_problem, &opts.space)?;
            let model = session.train(cfg, None)?;
            let atoms: Vec<GroundAtom> = test.iter().map(|&i| examples[i].0.clone()).collect();
            let scores = session.scores(&model.functions, None, &atoms)?;
            let pairs: Vec<(f64, bool)> = scores.iter().zip(test).map(|(&s, &i)| (s, examples[i].1)).collect();
            let curve = aupr(&pairs).map_err(|_| EvalError::FoldWithoutPositives(fi))?;
            let correct = pairs.iter().filter(|(s, l)| (*s >= 0.5) == *l).count();
            Ok(FoldMetrics {
                aupr: curve.aupr,
                accuracy: correct as f64 / pairs.len() as f64,
                loss: model.final_loss,
                curves: vec![("target".into(), curve)],
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CvReport::new(name, metrics))
}

/// Counts reported after loading relational data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub constants: usize,
    pub predicates: usize,
    pub facts: usize,
    pub positives: usize,
    pub negatives: usize,
    pub targets: Vec<String>,
}

/// Merges fact files into `schema`.
///
/// Files ending in `.csv` hold rows `kind,predicate,arg1,...,argN` with
/// `kind` one of `fact`, `pos`, `neg`. Any other file uses the problem-file
/// lines `fact p(a,b).`, `pos p(a).`, `neg p(a).`; blank lines and `%`
/// comments are skipped. Unknown constants are added unsorted; unknown
/// predicates are an error.
pub fn load_relational(schema: &IlpProblem, files: &[&Path]) -> Result<(IlpProblem, LoadReport), EvalError> {
    let mut p = schema.clone();
    for path in files {
        let file = path.display().to_string();
        let rows: Vec<(usize, Vec<String>)> = if path.extension().is_some_and(|e| e == "csv") {
            let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path)?;
            let mut out = Vec::new();
            for (i, rec) in rdr.records().enumerate() {
                out.push((i + 1, rec?.iter().map(str::to_string).collect()));
            }
            out
        } else {
            let text = std::fs::read_to_string(path)?;
            let mut out = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.split('%').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let bad = |d: &str| EvalError::Malformed { file: file.clone(), line: i + 1, detail: d.into() };
                let (kind, rest) = line.split_once(char::is_whitespace).ok_or_else(|| bad("expected '<kind> <atom>.'"))?;
                let atom = rest.trim().strip_suffix('.').ok_or_else(|| bad("missing '.'"))?;
                let (pred, args) = atom.split_once('(').ok_or_else(|| bad("missing '('"))?;
                let args = args.strip_suffix(')').ok_or_else(|| bad("missing ')'"))?;
                let mut row = vec![kind.to_string(), pred.trim().to_string()];
                row.extend(args.split(',').map(|a| a.trim().to_string()));
                out.push((i + 1, row));
            }
            out
        };
        for (line, row) in rows {
            if row.iter().all(|c| c.is_empty()) {
                continue;
            }
            let bad = |d: String| EvalError::Malformed { file: file.clone(), line, detail: d };
            if row.len() < 3 {
                return Err(bad("expected kind, predicate and at least one argument".into()));
            }
            let pred = p.pred_id(&row[1]).ok_or_else(|| EvalError::UnknownPredicate {
                file: file.clone(),
                line,
                name: row[1].clone(),
            })?;
            let arity = p.signatures[pred].arity;
            if row.len() - 2 != arity {
                return Err(bad(format!("'{}' takes {arity} arguments, found {}", row[1], row.len() - 2)));
            }
            let args: Vec<u32> = row[2..]
                .iter()
                .map(|name| match p.const_id(name) {
                    Some(id) => id,
                    None => {
                        let id = p.constants.len() as u32;
                        p.constants.push(Constant { id, name: name.clone(), sort: None });
                        id
                    }
                })
                .collect();
            let atom = GroundAtom::new(pred, args);
            match row[0].as_str() {
                "fact" => p.background.push(atom),
                "pos" => p.positives.push(atom),
                "neg" => p.negatives.push(atom),
                k => return Err(bad(format!("unknown kind '{k}'"))),
            }
        }
    }
    p.validate()?;
    let report = LoadReport {
        constants: p.constants.len(),
        predicates: p.signatures.len(),
        facts: p.background.len(),
        positives: p.positives.len(),
        negatives: p.negatives.len(),
        targets: p.targets().map(|t| p.signatures[t].name.clone()).collect(),
    };
    Ok((p, report))
}
