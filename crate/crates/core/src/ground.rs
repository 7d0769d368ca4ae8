//! Propositionalization: per-predicate ground-atom spaces and dense gather
//! indices that map every (ground atom, substitution, candidate atom) triple
//! to a position in the flat valuation vector.
//!
//! All predicates share one flat valuation vector; predicate `p` owns the
//! slice `offset(p)..offset(p) + len(p)`.

use crate::logic::{
    candidate_atoms, rule_terms, CandidateAtomSet, ConstId, GroundAtom, IlpProblem, PredId, PredKind, RuleSpec, Term,
};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Gather position of an atom outside every space; reads as constant 0.
pub const ABSENT: u32 = u32::MAX;

pub const DEFAULT_CAP: usize = 10_000_000;
pub const DEFAULT_INDEX_CAP: usize = 500_000_000;
/// Extensional spaces larger than this are restricted to the background
/// atoms under [`Restrict::Auto`].
pub const AUTO_RESTRICT_ABOVE: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum GroundError {
    #[error("ground-atom space of '{pred}' has {size} atoms, above the cap of {cap}")]
    CapExceeded { pred: String, size: u128, cap: usize },
    #[error("grounding index for rule {rule} of '{pred}' needs {size} entries, above the cap of {cap}")]
    IndexCapExceeded { pred: String, rule: usize, size: u128, cap: usize },
    #[error("cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Restrict {
    /// Restrict extensional spaces only when the full space is large.
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceOptions {
    pub cap: usize,
    pub index_cap: usize,
    pub restrict_extensional: Restrict,
    /// Restrict target predicates to the atoms named in the examples and
    /// background.
    pub restrict_targets: bool,
}

impl Default for SpaceOptions {
    fn default() -> Self {
        SpaceOptions {
            cap: DEFAULT_CAP,
            index_cap: DEFAULT_INDEX_CAP,
            restrict_extensional: Restrict::Auto,
            restrict_targets: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Layout {
    /// Row-major product of per-position sort domains.
    Dense { domains: Vec<Vec<ConstId>>, rank: Vec<HashMap<ConstId, u32>>, strides: Vec<usize> },
    /// Explicit sorted atom list.
    Sparse { tuples: Vec<Vec<ConstId>>, lookup: HashMap<Vec<ConstId>, u32> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredSpace {
    pub pred: PredId,
    pub offset: usize,
    pub len: usize,
    layout: Layout,
}

impl PredSpace {
    pub fn is_restricted(&self) -> bool {
        matches!(self.layout, Layout::Sparse { .. })
    }

    /// Position of the argument tuple inside this predicate's space.
    pub fn position(&self, args: &[ConstId]) -> Option<usize> {
        match &self.layout {
            Layout::Dense { rank, strides, .. } => {
                let mut pos = 0;
                for ((r, s), c) in rank.iter().zip(strides).zip(args) {
                    pos += *r.get(c)? as usize * s;
                }
                Some(pos)
            }
            Layout::Sparse { lookup, .. } => lookup.get(args).map(|&p| p as usize),
        }
    }

    pub fn args_at(&self, pos: usize) -> Vec<ConstId> {
        match &self.layout {
            Layout::Dense { domains, strides, .. } => {
                domains.iter().zip(strides).map(|(d, s)| d[(pos / s) % d.len()]).collect()
            }
            Layout::Sparse { tuples, .. } => tuples[pos].clone(),
        }
    }
}

/// Ground atoms of every predicate, laid out in one flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundAtomSpace {
    pub preds: Vec<PredSpace>,
    pub total: usize,
}

impl GroundAtomSpace {
    pub fn len(&self, pred: PredId) -> usize {
        self.preds[pred].len
    }

    pub fn offset(&self, pred: PredId) -> usize {
        self.preds[pred].offset
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// `index(X_p, e)`: position of `e` inside its predicate's vector.
    pub fn index(&self, atom: &GroundAtom) -> Option<usize> {
        self.preds.get(atom.pred)?.position(&atom.args)
    }

    /// Position of `atom` in the flat valuation vector.
    pub fn flat_index(&self, atom: &GroundAtom) -> Option<usize> {
        self.index(atom).map(|p| self.preds[atom.pred].offset + p)
    }

    pub fn atom_at(&self, pred: PredId, pos: usize) -> GroundAtom {
        GroundAtom::new(pred, self.preds[pred].args_at(pos))
    }

    /// Predicate and in-predicate position of a flat index.
    pub fn decode(&self, flat: usize) -> (PredId, usize) {
        let p = self.preds.partition_point(|s| s.offset + s.len <= flat);
        (p, flat - self.preds[p].offset)
    }
}

/// Enumerates the ground atoms of every predicate.
pub fn build_space(problem: &IlpProblem, opts: &SpaceOptions) -> Result<GroundAtomSpace, GroundError> {
    let mut preds = Vec::with_capacity(problem.signatures.len());
    let mut offset = 0;
    for (pid, sig) in problem.signatures.iter().enumerate() {
        let domains: Vec<Vec<ConstId>> =
            sig.sorts.iter().map(|s| problem.constants_of_sort(s.as_deref())).collect();
        let full: u128 = domains.iter().map(|d| d.len() as u128).product();
        let restrict = match sig.kind {
            PredKind::Extensional if sig.computed => false,
            PredKind::Extensional => match opts.restrict_extensional {
                Restrict::Always => true,
                Restrict::Never => false,
                Restrict::Auto => full > AUTO_RESTRICT_ABOVE as u128,
            },
            PredKind::Intensional => sig.target && opts.restrict_targets,
        };
        let layout = if restrict {
            let mut tuples: Vec<Vec<ConstId>> = problem
                .background
                .iter()
                .chain(if sig.is_intensional() { &problem.positives[..] } else { &[] })
                .chain(if sig.is_intensional() { &problem.negatives[..] } else { &[] })
                .filter(|a| a.pred == pid)
                .map(|a| a.args.clone())
                .collect();
            tuples.sort_unstable();
            tuples.dedup();
            if tuples.len() > opts.cap {
                return Err(GroundError::CapExceeded { pred: sig.name.clone(), size: tuples.len() as u128, cap: opts.cap });
            }
            let lookup = tuples.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
            Layout::Sparse { tuples, lookup }
        } else {
            if full > opts.cap as u128 {
                return Err(GroundError::CapExceeded { pred: sig.name.clone(), size: full, cap: opts.cap });
            }
            let mut strides = vec![1; domains.len()];
            for i in (0..domains.len().saturating_sub(1)).rev() {
                strides[i] = strides[i + 1] * domains[i + 1].len();
            }
            let rank = domains
                .iter()
                .map(|d| d.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect())
                .collect();
            Layout::Dense { domains, rank, strides }
        };
        let len = match &layout {
            Layout::Dense { .. } => full as usize,
            Layout::Sparse { tuples, .. } => tuples.len(),
        };
        preds.push(PredSpace { pred: pid, offset, len, layout });
        offset += len;
    }
    if offset > u32::MAX as usize - 1 {
        return Err(GroundError::CapExceeded { pred: "<all>".into(), size: offset as u128, cap: u32::MAX as usize - 1 });
    }
    Ok(GroundAtomSpace { preds, total: offset })
}

/// Substitution grid of one rule: head variables are fixed by the ground
/// atom, free variables range over their sort domains in row-major order
/// (first free variable slowest).
#[derive(Debug, Clone)]
pub struct SubstitutionGrid {
    pub arity: usize,
    pub free_domains: Vec<Vec<ConstId>>,
    /// Function terms whose definedness decides validity of a substitution.
    fn_terms: Vec<(usize, usize)>,
}

impl SubstitutionGrid {
    pub fn new(problem: &IlpProblem, rule: &RuleSpec) -> Self {
        let arity = problem.signatures[rule.pred].arity;
        let free_domains =
            (arity..rule.num_var).map(|v| problem.constants_of_sort(rule.var_sorts[v].as_deref())).collect();
        let fn_terms = rule_terms(rule, &problem.functions)
            .into_iter()
            .filter_map(|(t, _)| match t {
                Term::Fn { func, var } => Some((func, var)),
                Term::Var(_) => None,
            })
            .collect();
        SubstitutionGrid { arity, free_domains, fn_terms }
    }

    pub fn len(&self) -> usize {
        self.free_domains.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the full variable binding of grid cell `k` for head `args`.
    pub fn binding(&self, head: &[ConstId], k: usize, out: &mut Vec<ConstId>) {
        out.clear();
        out.extend_from_slice(head);
        let mut rem = k;
        let mut free = vec![0; self.free_domains.len()];
        for (i, d) in self.free_domains.iter().enumerate().rev() {
            free[i] = d[rem % d.len()];
            rem /= d.len();
        }
        out.extend(free);
    }

    /// Whether every function term is defined under `binding`.
    pub fn is_valid(&self, problem: &IlpProblem, binding: &[ConstId]) -> bool {
        self.fn_terms.iter().all(|&(f, v)| problem.functions[f].apply(binding[v]).is_some())
    }
}

/// `Θ(e)` for one rule: every valid full variable binding producing `e`.
pub fn substitutions(problem: &IlpProblem, rule: &RuleSpec, e: &GroundAtom) -> Vec<Vec<ConstId>> {
    assert_eq!(e.pred, rule.pred, "ground atom does not belong to the rule's head predicate");
    let grid = SubstitutionGrid::new(problem, rule);
    let mut out = Vec::new();
    let mut b = Vec::new();
    for k in 0..grid.len() {
        grid.binding(&e.args, k, &mut b);
        if grid.is_valid(problem, &b) {
            out.push(b.clone());
        }
    }
    out
}

/// Dense gather index of one rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleIndex {
    pub rule: usize,
    pub pred: PredId,
    pub n_atoms: usize,
    pub n_subst: usize,
    /// Positive candidate atoms; the negated half is implicit.
    pub n_inputs: usize,
    pub negated: bool,
    /// `[n_atoms][n_subst][n_inputs]` flat positions, [`ABSENT`] for atoms
    /// outside every space.
    pub positions: Vec<u32>,
    /// `[n_atoms][n_subst]`; `false` marks dropped substitutions.
    pub valid: Vec<bool>,
}

impl RuleIndex {
    pub fn width(&self) -> usize {
        if self.negated {
            2 * self.n_inputs
        } else {
            self.n_inputs
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n_atoms, self.n_subst, self.width()]
    }

    pub fn row(&self, atom: usize, subst: usize) -> &[u32] {
        let start = (atom * self.n_subst + subst) * self.n_inputs;
        &self.positions[start..start + self.n_inputs]
    }

    pub fn is_valid(&self, atom: usize, subst: usize) -> bool {
        self.valid[atom * self.n_subst + subst]
    }

    /// Fills `x` (length [`RuleIndex::width`]) with the gathered inputs.
    #[inline]
    pub fn gather(&self, atom: usize, subst: usize, values: &[f64], x: &mut [f64]) {
        let row = self.row(atom, subst);
        let n = self.n_inputs;
        for (xi, &p) in x[..n].iter_mut().zip(row) {
            *xi = if p == ABSENT { 0.0 } else { values[p as usize] };
        }
        if self.negated {
            let (pos, neg) = x.split_at_mut(n);
            for (ni, &pi) in neg.iter_mut().zip(pos.iter()) {
                *ni = 1.0 - pi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundingIndex {
    /// One entry per rule, aligned with `problem.rules`.
    pub rules: Vec<RuleIndex>,
    pub candidates: Vec<CandidateAtomSet>,
}

/// Compiles the gather index of every rule.
pub fn compile_index(
    problem: &IlpProblem,
    space: &GroundAtomSpace,
    opts: &SpaceOptions,
) -> Result<GroundingIndex, GroundError> {
    let mut rules = Vec::with_capacity(problem.rules.len());
    let mut candidates = Vec::with_capacity(problem.rules.len());
    for (ri, rule) in problem.rules.iter().enumerate() {
        let cands = candidate_atoms(rule, &problem.signatures, &problem.functions);
        let grid = SubstitutionGrid::new(problem, rule);
        let n_atoms = space.len(rule.pred);
        let n_subst = grid.len();
        let n_inputs = cands.num_atoms();
        let size = n_atoms as u128 * n_subst as u128 * n_inputs as u128;
        if size > opts.index_cap as u128 {
            return Err(GroundError::IndexCapExceeded {
                pred: problem.signatures[rule.pred].name.clone(),
                rule: ri,
                size,
                cap: opts.index_cap,
            });
        }
        let mut positions = Vec::with_capacity(size as usize);
        let mut valid = Vec::with_capacity(n_atoms * n_subst);
        let head_space = &space.preds[rule.pred];
        let mut binding = Vec::new();
        let mut tuple = Vec::new();
        for e in 0..n_atoms {
            let head = head_space.args_at(e);
            for k in 0..n_subst {
                grid.binding(&head, k, &mut binding);
                let ok = grid.is_valid(problem, &binding);
                valid.push(ok);
                for atom in &cands.atoms {
                    if !ok {
                        positions.push(ABSENT);
                        continue;
                    }
                    tuple.clear();
                    tuple.extend(atom.args.iter().map(|t| match *t {
                        Term::Var(v) => binding[v],
                        Term::Fn { func, var } => {
                            problem.functions[func].apply(binding[var]).expect("validated substitution")
                        }
                    }));
                    let p = &space.preds[atom.pred];
                    positions.push(p.position(&tuple).map_or(ABSENT, |pos| (p.offset + pos) as u32));
                }
            }
        }
        rules.push(RuleIndex {
            rule: ri,
            pred: rule.pred,
            n_atoms,
            n_subst,
            n_inputs,
            negated: cands.negated,
            positions,
            valid,
        });
        candidates.push(cands);
    }
    Ok(GroundingIndex { rules, candidates })
}

const CACHE_MAGIC: &[u8; 8] = b"DILPIDX1";

impl GroundingIndex {
    /// Rough memory footprint in bytes.
    pub fn memory_bytes(&self) -> usize {
        self.rules.iter().map(|r| r.positions.len() * 4 + r.valid.len()).sum()
    }

    /// Writes the compiled index keyed by `key` (normally the problem's
    /// content hash). Little-endian binary.
    pub fn write_cache(&self, path: &Path, key: &str) -> Result<(), GroundError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&(key.len() as u64).to_le_bytes());
        buf.extend_from_slice(key.as_bytes());
        buf.extend_from_slice(&(self.rules.len() as u64).to_le_bytes());
        for r in &self.rules {
            for v in [r.rule, r.pred, r.n_atoms, r.n_subst, r.n_inputs, r.negated as usize] {
                buf.extend_from_slice(&(v as u64).to_le_bytes());
            }
            for p in &r.positions {
                buf.extend_from_slice(&p.to_le_bytes());
            }
            buf.extend(r.valid.iter().map(|&v| v as u8));
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    /// Reads a cache written for the same `key`; returns `Ok(None)` when the
    /// key differs. Candidate sets are recomputed from `problem`.
    pub fn read_cache(path: &Path, key: &str, problem: &IlpProblem) -> Result<Option<Self>, GroundError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut cur = 0usize;
        let mut take = |n: usize| -> Result<&[u8], GroundError> {
            let s = buf.get(cur..cur + n).ok_or_else(|| GroundError::Cache("truncated file".into()))?;
            cur += n;
            Ok(s)
        };
        if take(8)? != CACHE_MAGIC {
            return Err(GroundError::Cache("bad magic".into()));
        }
        let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize;
        let klen = u64_at(take(8)?);
        if take(klen)? != key.as_bytes() {
            return Ok(None);
        }
        let n_rules = u64_at(take(8)?);
        if n_rules != problem.rules.len() {
            return Err(GroundError::Cache("rule count differs from problem".into()));
        }
        let mut rules = Vec::with_capacity(n_rules);
        for _ in 0..n_rules {
            let mut h = [0usize; 6];
            for v in &mut h {
                *v = u64_at(take(8)?);
            }
            let [rule, pred, n_atoms, n_subst, n_inputs, negated] = h;
            let count = n_atoms * n_subst * n_inputs;
            let positions = take(count * 4)?
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let valid = take(n_atoms * n_subst)?.iter().map(|&b| b != 0).collect();
            rules.push(RuleIndex { rule, pred, n_atoms, n_subst, n_inputs, negated: negated != 0, positions, valid });
        }
        let candidates = problem
            .rules
            .iter()
            .map(|r| candidate_atoms(r, &problem.signatures, &problem.functions))
            .collect();
        Ok(Some(GroundingIndex { rules, candidates }))
    }
}
