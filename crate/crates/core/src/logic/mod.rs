//! Symbolic vocabulary: constants, term functions, predicates, atoms, rule
//! specifications and the [`IlpProblem`] container.
//!
//! Everything in here is immutable once a problem has been parsed and
//! validated, so a problem can be shared read-only between workers.

mod candidates;
mod parse;

pub use candidates::{candidate_atoms, perm, rule_terms, CandidateAtomSet};
pub use parse::{parse_problem, ParseError, ParseErrorKind};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt;

pub type ConstId = u32;
pub type PredId = usize;
pub type FuncId = usize;
pub type VarId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constant {
    pub id: ConstId,
    pub name: String,
    pub sort: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredKind {
    Extensional,
    Intensional,
}

/// How a ground atom's previous value is combined with the newly inferred
/// value at each forward-chaining step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum AmalgamateKind {
    /// `old ∨ new`
    #[default]
    Or,
    /// `old ∧ new`; the predicate starts from all-true.
    And,
    /// `new`
    Replace,
}

impl AmalgamateKind {
    pub fn keyword(self) -> &'static str {
        match self {
            AmalgamateKind::Or => "or",
            AmalgamateKind::And => "and",
            AmalgamateKind::Replace => "replace",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "or" => Some(AmalgamateKind::Or),
            "and" => Some(AmalgamateKind::And),
            "replace" => Some(AmalgamateKind::Replace),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateSig {
    pub name: String,
    pub arity: usize,
    pub kind: PredKind,
    /// Intensional predicate that carries examples.
    pub target: bool,
    /// Per-argument sort; `None` accepts any constant.
    pub sorts: Vec<Option<String>>,
    /// Extensional predicate whose valuation is supplied at run time
    /// (boundary predicates over continuous features).
    pub computed: bool,
    pub amalgamate: Option<AmalgamateKind>,
    /// Rules of this predicate fire only during the first `t` steps.
    pub tmax_override: Option<usize>,
}

impl PredicateSig {
    pub fn is_intensional(&self) -> bool {
        self.kind == PredKind::Intensional
    }
}

/// Deterministic total-or-partial mapping between constants, precomputed
/// from the problem file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermFunction {
    pub name: String,
    /// Indexed by constant id; `None` marks an undefined entry.
    pub table: Vec<Option<ConstId>>,
    pub domain_sort: Option<String>,
    pub codomain_sort: Option<String>,
}

impl TermFunction {
    pub fn apply(&self, c: ConstId) -> Option<ConstId> {
        self.table.get(c as usize).copied().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Var(VarId),
    /// A term function applied to a variable. Never nested.
    Fn { func: FuncId, var: VarId },
}

impl Term {
    pub fn var(self) -> VarId {
        match self {
            Term::Var(v) | Term::Fn { var: v, .. } => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub pred: PredId,
    pub args: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundAtom {
    pub pred: PredId,
    pub args: Vec<ConstId>,
}

impl GroundAtom {
    pub fn new(pred: PredId, args: Vec<ConstId>) -> Self {
        GroundAtom { pred, args }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetworkKind {
    Dnf(usize),
    Cnf(usize),
    Conj,
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkKind::Dnf(n) => write!(f, "dnf:{n}"),
            NetworkKind::Cnf(n) => write!(f, "cnf:{n}"),
            NetworkKind::Conj => write!(f, "conj"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub pred: PredId,
    /// Head variables plus existentially quantified extras.
    pub num_var: usize,
    pub network: NetworkKind,
    pub use_negation: bool,
    /// Whitelist of body predicates; `None` allows every predicate.
    pub body: Option<Vec<PredId>>,
    /// Include the head predicate's own atoms among the candidates.
    pub recursion: bool,
    /// One entry per variable; head entries mirror the head predicate sorts.
    pub var_sorts: Vec<Option<String>>,
}

/// Display name of the `i`-th rule variable: `A`, `B`, ... `Z`, `V26`, ...
pub fn var_name(i: VarId) -> String {
    if i < 26 {
        ((b'A' + i as u8) as char).to_string()
    } else {
        format!("V{i}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlpProblem {
    pub constants: Vec<Constant>,
    pub functions: Vec<TermFunction>,
    pub signatures: Vec<PredicateSig>,
    /// Rules in declaration order; several rules may share a head predicate.
    pub rules: Vec<RuleSpec>,
    pub background: Vec<GroundAtom>,
    pub positives: Vec<GroundAtom>,
    pub negatives: Vec<GroundAtom>,
    pub t_max: usize,
    pub amalgamate: AmalgamateKind,
}

impl IlpProblem {
    pub fn pred_id(&self, name: &str) -> Option<PredId> {
        self.signatures.iter().position(|s| s.name == name)
    }

    pub fn const_id(&self, name: &str) -> Option<ConstId> {
        self.constants.iter().position(|c| c.name == name).map(|i| i as ConstId)
    }

    pub fn func_id(&self, name: &str) -> Option<FuncId> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn targets(&self) -> impl Iterator<Item = PredId> + '_ {
        self.signatures.iter().enumerate().filter(|(_, s)| s.target).map(|(i, _)| i)
    }

    pub fn rules_of(&self, pred: PredId) -> impl Iterator<Item = (usize, &RuleSpec)> + '_ {
        self.rules.iter().enumerate().filter(move |(_, r)| r.pred == pred)
    }

    pub fn amalgamate_of(&self, pred: PredId) -> AmalgamateKind {
        self.signatures[pred].amalgamate.unwrap_or(self.amalgamate)
    }

    /// Constants whose sort matches `sort`, in id order. `None` matches all.
    pub fn constants_of_sort(&self, sort: Option<&str>) -> Vec<ConstId> {
        self.constants
            .iter()
            .filter(|c| sort.is_none() || c.sort.as_deref() == sort)
            .map(|c| c.id)
            .collect()
    }

    pub fn display_ground(&self, atom: &GroundAtom) -> String {
        let args: Vec<&str> =
            atom.args.iter().map(|&c| self.constants[c as usize].name.as_str()).collect();
        format!("{}({})", self.signatures[atom.pred].name, args.join(","))
    }

    pub fn display_term(&self, term: Term) -> String {
        match term {
            Term::Var(v) => var_name(v),
            Term::Fn { func, var } => format!("{}_{}", var_name(var), self.functions[func].name),
        }
    }

    pub fn display_atom(&self, atom: &Atom) -> String {
        let args: Vec<String> = atom.args.iter().map(|&t| self.display_term(t)).collect();
        format!("{}({})", self.signatures[atom.pred].name, args.join(","))
    }

    /// Canonical problem-file text; parsing it yields an identical problem.
    pub fn to_source(&self) -> String {
        parse::serialize(self)
    }

    /// SHA-256 of the canonical source, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_source().as_bytes()))
    }

    /// Copy of this problem with the example sets replaced.
    pub fn with_examples(&self, positives: Vec<GroundAtom>, negatives: Vec<GroundAtom>) -> Self {
        let mut p = self.clone();
        p.positives = positives;
        p.negatives = negatives;
        p
    }

    /// Checks the structural invariants that every constructed problem must
    /// satisfy. Called by the parser; callers assembling problems
    /// programmatically should call it too.
    pub fn validate(&self) -> Result<(), ProblemError> {
        for (i, c) in self.constants.iter().enumerate() {
            if c.id as usize != i {
                return Err(ProblemError::Invalid(format!("constant '{}' has non-dense id", c.name)));
            }
        }
        let mut names = HashSet::new();
        for c in &self.constants {
            if !names.insert(c.name.as_str()) {
                return Err(ProblemError::Invalid(format!("duplicate constant '{}'", c.name)));
            }
        }
        let mut names = HashSet::new();
        for s in &self.signatures {
            if !names.insert(s.name.as_str()) {
                return Err(ProblemError::Invalid(format!("duplicate predicate '{}'", s.name)));
            }
            if s.arity == 0 {
                return Err(ProblemError::Invalid(format!("predicate '{}' has arity 0", s.name)));
            }
            if s.sorts.len() != s.arity {
                return Err(ProblemError::Invalid(format!("predicate '{}' sort list length", s.name)));
            }
        }
        for (pid, s) in self.signatures.iter().enumerate() {
            let n_rules = self.rules_of(pid).count();
            match s.kind {
                PredKind::Extensional if n_rules > 0 => {
                    return Err(ProblemError::Invalid(format!(
                        "extensional predicate '{}' has a rule",
                        s.name
                    )))
                }
                PredKind::Intensional if n_rules == 0 => {
                    return Err(ProblemError::Invalid(format!(
                        "intensional predicate '{}' has no rule",
                        s.name
                    )))
                }
                _ => {}
            }
        }
        if self.rules.windows(2).any(|w| w[0].pred > w[1].pred) {
            return Err(ProblemError::Invalid("rules must be grouped by head predicate in declaration order".into()));
        }
        for r in &self.rules {
            let head = self
                .signatures
                .get(r.pred)
                .ok_or_else(|| ProblemError::Invalid("rule for unknown predicate".into()))?;
            if r.num_var < head.arity {
                return Err(ProblemError::Invalid(format!(
                    "rule for '{}' uses {} variables, fewer than its arity {}",
                    head.name, r.num_var, head.arity
                )));
            }
            if let NetworkKind::Dnf(0) | NetworkKind::Cnf(0) = r.network {
                return Err(ProblemError::Invalid(format!("rule for '{}' has zero terms", head.name)));
            }
            if r.var_sorts.len() != r.num_var {
                return Err(ProblemError::Invalid(format!("rule for '{}' variable sort list", head.name)));
            }
            for (v, s) in head.sorts.iter().enumerate() {
                if s.is_some() && r.var_sorts[v] != *s {
                    return Err(ProblemError::Invalid(format!(
                        "rule for '{}': head variable {} sort disagrees with predicate",
                        head.name,
                        var_name(v)
                    )));
                }
            }
            if let Some(body) = &r.body {
                if body.iter().any(|&p| p >= self.signatures.len()) {
                    return Err(ProblemError::Invalid("body whitelist references unknown predicate".into()));
                }
            }
        }
        let check_atom = |a: &GroundAtom| -> Result<(), ProblemError> {
            let sig = self
                .signatures
                .get(a.pred)
                .ok_or_else(|| ProblemError::Invalid("atom references unknown predicate".into()))?;
            if a.args.len() != sig.arity {
                return Err(ProblemError::ArityMismatch {
                    pred: sig.name.clone(),
                    expected: sig.arity,
                    found: a.args.len(),
                });
            }
            for (i, &c) in a.args.iter().enumerate() {
                let constant = self
                    .constants
                    .get(c as usize)
                    .ok_or_else(|| ProblemError::Invalid(format!("unknown constant id {c}")))?;
                if let Some(sort) = &sig.sorts[i] {
                    if constant.sort.as_ref() != Some(sort) {
                        return Err(ProblemError::Invalid(format!(
                            "constant '{}' is not of sort '{}' required by {}",
                            constant.name, sort, sig.name
                        )));
                    }
                }
            }
            Ok(())
        };
        for a in &self.background {
            check_atom(a)?;
        }
        let mut pos = HashSet::new();
        for a in &self.positives {
            check_atom(a)?;
            if !self.signatures[a.pred].is_intensional() {
                return Err(ProblemError::Invalid(format!(
                    "example {} is not on an intensional predicate",
                    self.display_ground(a)
                )));
            }
            pos.insert(a);
        }
        for a in &self.negatives {
            check_atom(a)?;
            if !self.signatures[a.pred].is_intensional() {
                return Err(ProblemError::Invalid(format!(
                    "example {} is not on an intensional predicate",
                    self.display_ground(a)
                )));
            }
            if pos.contains(a) {
                return Err(ProblemError::ConflictingExample(self.display_ground(a)));
            }
        }
        for (pid, s) in self.signatures.iter().enumerate() {
            let has_examples =
                self.positives.iter().chain(&self.negatives).any(|a| a.pred == pid);
            if s.target != has_examples {
                return Err(ProblemError::Invalid(format!("target flag of '{}' is inconsistent", s.name)));
            }
        }
        if self.targets().next().is_none() {
            return Err(ProblemError::NoTarget);
        }
        if self.t_max == 0 {
            return Err(ProblemError::Invalid("tmax must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProblemError {
    #[error("no target predicate")]
    NoTarget,
    #[error("arity mismatch for '{pred}': expected {expected} arguments, found {found}")]
    ArityMismatch { pred: String, expected: usize, found: usize },
    #[error("example {0} appears as both positive and negative")]
    ConflictingExample(String),
    #[error("{0}")]
    Invalid(String),
}
