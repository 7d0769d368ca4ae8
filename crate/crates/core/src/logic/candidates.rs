use super::{Atom, PredicateSig, RuleSpec, Term, TermFunction};

/// All `items.len()^n` tuples of length `n` drawn with repetition, in
/// lexicographic order of item position.
pub fn perm<T: Clone>(items: &[T], n: usize) -> Vec<Vec<T>> {
    let mut out = vec![Vec::with_capacity(n)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * items.len());
        for prefix in &out {
            for item in items {
                let mut t = prefix.clone();
                t.push(item.clone());
                next.push(t);
            }
        }
        out = next;
    }
    out
}

/// The ordered input layout of one rule's neural function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateAtomSet {
    /// Positive atoms; when `negated` the negated copies follow them in the
    /// input vector in the same order.
    pub atoms: Vec<Atom>,
    pub negated: bool,
}

impl CandidateAtomSet {
    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Input width of the neural function.
    pub fn width(&self) -> usize {
        if self.negated {
            2 * self.atoms.len()
        } else {
            self.atoms.len()
        }
    }

    /// Atom and polarity of input `i` (`true` = negated).
    pub fn input(&self, i: usize) -> (&Atom, bool) {
        let n = self.atoms.len();
        if i < n {
            (&self.atoms[i], false)
        } else {
            (&self.atoms[i - n], true)
        }
    }
}

/// Terms available to a rule with their sorts: plain variables first, then
/// function applications grouped by variable in function declaration order.
pub fn rule_terms(rule: &RuleSpec, functions: &[TermFunction]) -> Vec<(Term, Option<String>)> {
    let mut terms: Vec<(Term, Option<String>)> =
        (0..rule.num_var).map(|v| (Term::Var(v), rule.var_sorts[v].clone())).collect();
    for v in 0..rule.num_var {
        for (fid, f) in functions.iter().enumerate() {
            if f.domain_sort == rule.var_sorts[v] {
                terms.push((Term::Fn { func: fid, var: v }, f.codomain_sort.clone()));
            }
        }
    }
    terms
}

/// Candidate body atoms of `rule`: for every allowed predicate in
/// declaration order, every sort-compatible tuple of rule terms in
/// lexicographic order.
pub fn candidate_atoms(
    rule: &RuleSpec,
    signatures: &[PredicateSig],
    functions: &[TermFunction],
) -> CandidateAtomSet {
    let terms = rule_terms(rule, functions);
    let mut atoms = Vec::new();
    for (pid, sig) in signatures.iter().enumerate() {
        if let Some(body) = &rule.body {
            if !body.contains(&pid) {
                continue;
            }
        }
        if pid == rule.pred && !rule.recursion {
            continue;
        }
        let per_position: Vec<Vec<Term>> = sig
            .sorts
            .iter()
            .map(|want| {
                terms
                    .iter()
                    .filter(|(_, s)| want.is_none() || s == want)
                    .map(|(t, _)| *t)
                    .collect()
            })
            .collect();
        let mut tuples: Vec<Vec<Term>> = vec![Vec::new()];
        for choices in &per_position {
            let mut next = Vec::with_capacity(tuples.len() * choices.len());
            for prefix in &tuples {
                for &t in choices {
                    let mut tuple = prefix.clone();
                    tuple.push(t);
                    next.push(tuple);
                }
            }
            tuples = next;
        }
        atoms.extend(tuples.into_iter().map(|args| Atom { pred: pid, args }));
    }
    CandidateAtomSet { atoms, negated: rule.use_negation }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{NetworkKind, PredKind};

    fn sig(name: &str, arity: usize, kind: PredKind) -> PredicateSig {
        PredicateSig {
            name: name.into(),
            arity,
            kind,
            target: kind == PredKind::Intensional,
            sorts: vec![None; arity],
            computed: false,
            amalgamate: None,
            tmax_override: None,
        }
    }

    fn rule(pred: usize, num_var: usize) -> RuleSpec {
        RuleSpec {
            pred,
            num_var,
            network: NetworkKind::Conj,
            use_negation: false,
            body: None,
            recursion: true,
            var_sorts: vec![None; num_var],
        }
    }

    #[test]
    fn perm_two_of_two() {
        assert_eq!(
            perm(&['A', 'B'], 2),
            vec![vec!['A', 'A'], vec!['A', 'B'], vec!['B', 'A'], vec!['B', 'B']]
        );
        assert_eq!(perm(&['A', 'B', 'C'], 2).len(), 9);
        assert_eq!(perm(&['A', 'B'], 0), vec![Vec::<char>::new()]);
        assert!(perm::<char>(&[], 2).is_empty());
    }

    #[test]
    fn less_than_candidate_sets() {
        let sigs = vec![sig("inc", 2, PredKind::Extensional), sig("lt", 2, PredKind::Intensional)];
        let set = candidate_atoms(&rule(1, 2), &sigs, &[]);
        let shown: Vec<String> = set
            .atoms
            .iter()
            .map(|a| {
                format!(
                    "{}({})",
                    sigs[a.pred].name,
                    a.args
                        .iter()
                        .map(|t| crate::logic::var_name(t.var()))
                        .collect::<Vec<_>>()
                        .join(",")
                )
            })
            .collect();
        assert_eq!(
            shown,
            [
                "inc(A,A)", "inc(A,B)", "inc(B,A)", "inc(B,B)", "lt(A,A)", "lt(A,B)", "lt(B,A)",
                "lt(B,B)"
            ]
        );
        assert_eq!(candidate_atoms(&rule(1, 3), &sigs, &[]).atoms.len(), 18);

        let mut neg = rule(1, 3);
        neg.use_negation = true;
        let set = candidate_atoms(&neg, &sigs, &[]);
        assert_eq!(set.width(), 36);
        assert_eq!(set.input(20), (&set.atoms[2], true));

        let mut norec = rule(1, 2);
        norec.recursion = false;
        assert_eq!(candidate_atoms(&norec, &sigs, &[]).atoms.len(), 4);
        let mut only_lt = rule(1, 2);
        only_lt.body = Some(vec![1]);
        assert_eq!(candidate_atoms(&only_lt, &sigs, &[]).atoms.len(), 4);
    }

    #[test]
    fn function_terms_respect_sorts() {
        let list = Some("list".to_string());
        let elem = Some("elem".to_string());
        let mut sort = sig("sort", 2, PredKind::Intensional);
        sort.sorts = vec![list.clone(), list.clone()];
        let mut gt = sig("gt", 2, PredKind::Extensional);
        gt.sorts = vec![elem.clone(), elem.clone()];
        let h = TermFunction {
            name: "H".into(),
            table: vec![],
            domain_sort: list.clone(),
            codomain_sort: list.clone(),
        };
        let t = TermFunction {
            name: "t".into(),
            table: vec![],
            domain_sort: list.clone(),
            codomain_sort: elem.clone(),
        };
        let mut r = rule(0, 2);
        r.var_sorts = vec![list.clone(), list.clone()];
        let terms = rule_terms(&r, &[h.clone(), t.clone()]);
        assert_eq!(terms.len(), 6);
        assert_eq!(terms[2].0, Term::Fn { func: 0, var: 0 });
        // sort over 4 list terms, gt over 2 element terms
        let set = candidate_atoms(&r, &[sort, gt], &[h, t]);
        assert_eq!(set.atoms.len(), 16 + 4);
    }
}
