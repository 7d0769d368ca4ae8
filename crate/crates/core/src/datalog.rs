//! Symbolic clauses and a brute-force bottom-up evaluator.
//!
//! The evaluator interprets clauses directly against a set of true ground
//! atoms: it enumerates substitutions itself, applies term functions by
//! table lookup and never touches the grounding index, so it serves as the
//! reference for the differentiable chainer.

use crate::dnl::BooleanFormula;
use crate::logic::{AmalgamateKind, Atom, CandidateAtomSet, ConstId, GroundAtom, IlpProblem, PredId, Term};
use std::collections::{BTreeSet, HashSet};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub atom: Atom,
    pub negated: bool,
}

/// `head(A, B, …) ← body.` with the head variables first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub head: PredId,
    /// Index of the rule specification the clause came from; fixes the
    /// variable count and sorts.
    pub rule: usize,
    pub body: Vec<Literal>,
}

impl Clause {
    pub fn display<'a>(&'a self, problem: &'a IlpProblem) -> impl fmt::Display + 'a {
        ClauseDisplay { clause: self, problem }
    }
}

struct ClauseDisplay<'a> {
    clause: &'a Clause,
    problem: &'a IlpProblem,
}

impl fmt::Display for ClauseDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sig = &self.problem.signatures[self.clause.head];
        let head = Atom { pred: self.clause.head, args: (0..sig.arity).map(Term::Var).collect() };
        write!(f, "{}", self.problem.display_atom(&head))?;
        if self.clause.body.is_empty() {
            return write!(f, ".");
        }
        write!(f, " ← ")?;
        for (i, lit) in self.clause.body.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            if lit.negated {
                write!(f, "¬")?;
            }
            write!(f, "{}", self.problem.display_atom(&lit.atom))?;
        }
        write!(f, ".")
    }
}

/// Rewrites a formula over candidate-atom inputs as clauses. CNF formulas
/// are distributed into DNF first; subsumed and contradictory conjunctions
/// are dropped.
pub fn clauses_from_formula(
    problem: &IlpProblem,
    rule: usize,
    candidates: &CandidateAtomSet,
    formula: &BooleanFormula,
) -> Vec<Clause> {
    let conjunctions: Vec<BTreeSet<usize>> = match formula {
        BooleanFormula::Dnf(terms) => terms.iter().map(|t| t.iter().copied().collect()).collect(),
        BooleanFormula::Cnf(clauses) => {
            let mut acc: Vec<BTreeSet<usize>> = vec![BTreeSet::new()];
            for c in clauses {
                let mut next = Vec::new();
                for partial in &acc {
                    for &lit in c {
                        let mut s = partial.clone();
                        s.insert(lit);
                        next.push(s);
                    }
                }
                acc = next;
            }
            acc
        }
    };
    let n = candidates.num_atoms();
    let mut kept: Vec<BTreeSet<usize>> = Vec::new();
    for c in conjunctions {
        // x ∧ ¬x is unsatisfiable
        if candidates.negated && c.iter().any(|&i| i < n && c.contains(&(i + n))) {
            continue;
        }
        if kept.iter().any(|k| k.is_subset(&c)) {
            continue;
        }
        kept.retain(|k| !c.is_subset(k));
        kept.push(c);
    }
    let head = problem.rules[rule].pred;
    kept.into_iter()
        .map(|c| Clause {
            head,
            rule,
            body: c
                .into_iter()
                .map(|i| {
                    let (atom, negated) = candidates.input(i);
                    Literal { atom: atom.clone(), negated }
                })
                .collect(),
        })
        .collect()
}

/// Brute-force evaluator bound to one problem.
pub struct Evaluator<'a> {
    problem: &'a IlpProblem,
}

impl<'a> Evaluator<'a> {
    pub fn new(problem: &'a IlpProblem) -> Self {
        Evaluator { problem }
    }

    fn tuples(&self, sorts: &[Option<String>]) -> Vec<Vec<ConstId>> {
        let mut out = vec![Vec::new()];
        for s in sorts {
            let dom: Vec<ConstId> = self
                .problem
                .constants
                .iter()
                .filter(|c| s.is_none() || &c.sort == s)
                .map(|c| c.id)
                .collect();
            out = out
                .into_iter()
                .flat_map(|t| {
                    dom.iter().map(move |&c| {
                        let mut t = t.clone();
                        t.push(c);
                        t
                    })
                })
                .collect();
        }
        out
    }

    /// Every ground atom of `pred` over sort-compatible constants.
    pub fn all_atoms(&self, pred: PredId) -> Vec<GroundAtom> {
        self.tuples(&self.problem.signatures[pred].sorts)
            .into_iter()
            .map(|args| GroundAtom { pred, args })
            .collect()
    }

    /// Initial interpretation: the background plus every atom of an
    /// AND-amalgamated intensional predicate.
    pub fn initial(&self) -> HashSet<GroundAtom> {
        let mut i: HashSet<GroundAtom> = self.problem.background.iter().cloned().collect();
        for (p, sig) in self.problem.signatures.iter().enumerate() {
            if sig.is_intensional() && self.problem.amalgamate_of(p) == AmalgamateKind::And {
                i.extend(self.all_atoms(p));
            }
        }
        i
    }

    fn term_value(&self, t: Term, binding: &[ConstId]) -> Option<ConstId> {
        match t {
            Term::Var(v) => Some(binding[v]),
            Term::Fn { func, var } => self.problem.functions[func].apply(binding[var]),
        }
    }

    /// A substitution is usable only if every function applicable to each
    /// variable's sort is defined on its value.
    fn usable(&self, rule: usize, binding: &[ConstId]) -> bool {
        let spec = &self.problem.rules[rule];
        (0..spec.num_var).all(|v| {
            self.problem
                .functions
                .iter()
                .filter(|f| f.domain_sort == spec.var_sorts[v])
                .all(|f| f.apply(binding[v]).is_some())
        })
    }

    /// Head atoms derivable in one step from `interp`, for clauses whose
    /// predicate fires at step `t`.
    pub fn consequences(&self, clauses: &[Clause], interp: &HashSet<GroundAtom>, t: usize) -> HashSet<GroundAtom> {
        let mut out = HashSet::new();
        for c in clauses {
            let sig = &self.problem.signatures[c.head];
            if sig.tmax_override.is_some_and(|o| t >= o) {
                continue;
            }
            let spec = &self.problem.rules[c.rule];
            for binding in self.tuples(&spec.var_sorts) {
                if !self.usable(c.rule, &binding) {
                    continue;
                }
                let holds = c.body.iter().all(|lit| {
                    let args: Vec<ConstId> =
                        lit.atom.args.iter().map(|&t| self.term_value(t, &binding).expect("usable")).collect();
                    interp.contains(&GroundAtom { pred: lit.atom.pred, args }) != lit.negated
                });
                if holds {
                    out.insert(GroundAtom { pred: c.head, args: binding[..sig.arity].to_vec() });
                }
            }
        }
        out
    }

    /// One step: derived atoms combined with the current interpretation per
    /// predicate amalgamation. Predicates without firing clauses keep their
    /// atoms.
    pub fn step(&self, clauses: &[Clause], interp: &HashSet<GroundAtom>, t: usize) -> HashSet<GroundAtom> {
        let derived = self.consequences(clauses, interp, t);
        let firing: HashSet<PredId> = self
            .problem
            .rules
            .iter()
            .map(|r| r.pred)
            .filter(|&p| !self.problem.signatures[p].tmax_override.is_some_and(|o| t >= o))
            .collect();
        let mut next = HashSet::new();
        for a in interp {
            let keep = match (firing.contains(&a.pred), self.problem.amalgamate_of(a.pred)) {
                (false, _) | (true, AmalgamateKind::Or) => true,
                (true, AmalgamateKind::And) => derived.contains(a),
                (true, AmalgamateKind::Replace) => false,
            };
            if keep || !self.problem.signatures[a.pred].is_intensional() {
                next.insert(a.clone());
            }
        }
        for a in derived {
            match self.problem.amalgamate_of(a.pred) {
                AmalgamateKind::And => {}
                _ => {
                    next.insert(a);
                }
            }
        }
        next
    }

    /// `steps` applications of [`Evaluator::step`] from [`Evaluator::initial`].
    pub fn run(&self, clauses: &[Clause], steps: usize) -> HashSet<GroundAtom> {
        let mut i = self.initial();
        for t in 0..steps {
            i = self.step(clauses, &i, t);
        }
        i
    }

    /// Counts (positives entailed, negatives rejected) after `steps`.
    pub fn score_examples(&self, clauses: &[Clause], steps: usize) -> (usize, usize) {
        let i = self.run(clauses, steps);
        let pos = self.problem.positives.iter().filter(|a| i.contains(a)).count();
        let neg = self.problem.negatives.iter().filter(|a| !i.contains(a)).count();
        (pos, neg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{candidate_atoms, parse_problem};

    fn lt_problem() -> IlpProblem {
        parse_problem(
            "constants { 0 1 2 3 4 }\npred inc/2 extensional\n\
             pred lt/2 intensional vars=2 net=conj neg=false\nrule lt vars=3 net=conj neg=true\n\
             fact inc(0,1). inc(1,2). inc(2,3). inc(3,4).\npos lt(0,4).\nneg lt(4,0).\nparam tmax=4\n",
        )
        .unwrap()
    }

    fn lt_clauses(p: &IlpProblem) -> Vec<Clause> {
        let c0 = candidate_atoms(&p.rules[0], &p.signatures, &p.functions);
        let c1 = candidate_atoms(&p.rules[1], &p.signatures, &p.functions);
        let mut cl = clauses_from_formula(p, 0, &c0, &BooleanFormula::Dnf(vec![vec![1]]));
        cl.extend(clauses_from_formula(p, 1, &c1, &BooleanFormula::Dnf(vec![vec![11, 7]])));
        cl
    }

    #[test]
    fn less_than_program_display_and_fixpoint() {
        let p = lt_problem();
        let cl = lt_clauses(&p);
        assert_eq!(cl[0].display(&p).to_string(), "lt(A,B) ← inc(A,B).");
        assert_eq!(cl[1].display(&p).to_string(), "lt(A,B) ← inc(C,B), lt(A,C).");
        let ev = Evaluator::new(&p);
        let one = ev.run(&cl, 1);
        assert_eq!(one.iter().filter(|a| a.pred == 1).count(), 4);
        let fin = ev.run(&cl, 4);
        assert_eq!(fin.iter().filter(|a| a.pred == 1).count(), 10);
        assert_eq!(ev.score_examples(&cl, 4), (1, 1));
    }

    #[test]
    fn negated_literals_and_cnf_distribution() {
        let p = lt_problem();
        let c1 = candidate_atoms(&p.rules[1], &p.signatures, &p.functions);
        // (inc(A,B) ∨ ¬inc(A,B)) ∧ inc(A,B) simplifies to inc(A,B)
        let f = BooleanFormula::Cnf(vec![vec![1, 19], vec![1]]);
        let cl = clauses_from_formula(&p, 1, &c1, &f);
        assert_eq!(cl.len(), 1);
        assert_eq!(cl[0].display(&p).to_string(), "lt(A,B) ← inc(A,B).");
        let neg = clauses_from_formula(&p, 1, &c1, &BooleanFormula::Dnf(vec![vec![19]]));
        assert_eq!(neg[0].display(&p).to_string(), "lt(A,B) ← ¬inc(A,B).");
        let ev = Evaluator::new(&p);
        assert_eq!(ev.run(&neg, 1).iter().filter(|a| a.pred == 1).count(), 21);
        assert!(clauses_from_formula(&p, 1, &c1, &BooleanFormula::Dnf(vec![])).is_empty());
    }

    #[test]
    fn replace_and_and_semantics() {
        let p = lt_problem();
        let cl = lt_clauses(&p);
        let mut rp = p.clone();
        rp.amalgamate = AmalgamateKind::Replace;
        // replace keeps only what is derivable from the previous step
        let ev = Evaluator::new(&rp);
        assert_eq!(ev.run(&cl, 3).iter().filter(|a| a.pred == 1).count(), 4 + 3 + 2);
        let mut ap = p.clone();
        ap.amalgamate = AmalgamateKind::And;
        let ev = Evaluator::new(&ap);
        assert_eq!(ev.initial().iter().filter(|a| a.pred == 1).count(), 25);
        let step1 = ev.run(&cl, 1);
        // everything with a predecessor C where lt(A,C) holds (all true) and inc(C,B)
        assert_eq!(step1.iter().filter(|a| a.pred == 1).count(), 20);
    }
}
