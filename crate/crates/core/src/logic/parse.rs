//! Line-oriented problem-file reader and canonical writer.
//!
//! ```text
//! % comment
//! constant <name> [:<sort>]
//! constants { n1 n2 ... } [:<sort>]
//! function <fname> { <c1> -> <c2> , ... }
//! pred <name>/<arity> extensional [sorts=<s1,..>] [computed]
//! pred <name>/<arity> intensional vars=<k> net=dnf:<N>|cnf:<N>|conj neg=true|false
//!      [tmax_override=<t>] [body=<p1,p2,..>] [recursion=true|false]
//!      [sorts=<s1,..>] [vsorts=<s1,..>] [amalgamate=or|and|replace]
//! rule <name> vars=<k> net=... neg=... [body=..] [recursion=..] [vsorts=..]
//! fact <atom>.   pos <atom>.   neg <atom>.
//! param tmax=<t> [amalgamate=or|and|replace]
//! ```
//!
//! A sort written as `_` means "unsorted". `rule` lines add further rules
//! to an intensional predicate already declared with `pred`.

use super::*;
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown predicate '{0}'")]
    UnknownPredicate(String),
    #[error("unknown constant '{0}'")]
    UnknownConstant(String),
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("arity mismatch for '{pred}': expected {expected} arguments, found {found}")]
    ArityMismatch { pred: String, expected: usize, found: usize },
    #[error("example {0} appears as both positive and negative")]
    ConflictingExample(String),
    #[error("no target predicate")]
    NoTarget,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// 1-based line and column, when the error has a source location.
    pub position: Option<(usize, usize)>,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            Some((line, col)) => write!(f, "line {line}, column {col}: {}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

impl std::error::Error for ParseError {}

impl From<ProblemError> for ParseError {
    fn from(e: ProblemError) -> Self {
        let kind = match e {
            ProblemError::NoTarget => ParseErrorKind::NoTarget,
            ProblemError::ArityMismatch { pred, expected, found } => {
                ParseErrorKind::ArityMismatch { pred, expected, found }
            }
            ProblemError::ConflictingExample(a) => ParseErrorKind::ConflictingExample(a),
            ProblemError::Invalid(s) => ParseErrorKind::Invalid(s),
        };
        ParseError { position: None, kind }
    }
}

fn err<T>(line: usize, col: usize, kind: ParseErrorKind) -> Result<T, ParseError> {
    Err(ParseError { position: Some((line, col)), kind })
}

fn syntax<T>(line: usize, col: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    err(line, col, ParseErrorKind::Syntax(msg.into()))
}

#[derive(Debug)]
struct RawAtom {
    line: usize,
    col: usize,
    pred: String,
    args: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AtomRole {
    Fact,
    Pos,
    Neg,
}

#[derive(Debug)]
struct RawRule {
    line: usize,
    col: usize,
    pred: String,
    num_var: usize,
    network: NetworkKind,
    use_negation: bool,
    body: Option<Vec<(String, usize)>>,
    recursion: bool,
    vsorts: Option<Vec<Option<String>>>,
}

#[derive(Debug)]
struct RawFunction {
    line: usize,
    col: usize,
    name: String,
    entries: Vec<(String, String, usize)>,
}

fn parse_sort(s: &str) -> Option<String> {
    if s == "_" || s.is_empty() {
        None
    } else {
        Some(s.to_string())
    }
}

fn is_name_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, '(' | ')' | ',' | '.' | '{' | '}' | ':' | '%' | '/' | '=')
}

fn check_name(line: usize, col: usize, s: &str, what: &str) -> Result<(), ParseError> {
    if s.is_empty() || !s.chars().all(is_name_char) {
        return syntax(line, col, format!("invalid {what} name '{s}'"));
    }
    Ok(())
}

/// Whitespace-separated words of a line with their 1-based columns.
fn words(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s, &text[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out.into_iter().map(|(i, w)| (text[..i].chars().count() + 1, w)).collect()
}

fn parse_atoms(line: usize, text: &str, offset: usize) -> Result<Vec<RawAtom>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut atoms = Vec::new();
    let skip_ws = |i: &mut usize| {
        while *i < chars.len() && chars[*i].is_whitespace() {
            *i += 1;
        }
    };
    loop {
        skip_ws(&mut i);
        if i >= chars.len() {
            break;
        }
        let start = i;
        while i < chars.len() && is_name_char(chars[i]) {
            i += 1;
        }
        let pred: String = chars[start..i].iter().collect();
        if pred.is_empty() {
            return syntax(line, offset + i, format!("expected predicate name, found '{}'", chars[i]));
        }
        skip_ws(&mut i);
        if i >= chars.len() || chars[i] != '(' {
            return syntax(line, offset + i, "expected '(' after predicate name");
        }
        i += 1;
        let mut args = Vec::new();
        loop {
            skip_ws(&mut i);
            let a0 = i;
            while i < chars.len() && is_name_char(chars[i]) {
                i += 1;
            }
            if a0 == i {
                return syntax(line, offset + i, "expected constant name");
            }
            args.push(chars[a0..i].iter().collect());
            skip_ws(&mut i);
            match chars.get(i) {
                Some(',') => i += 1,
                Some(')') => {
                    i += 1;
                    break;
                }
                _ => return syntax(line, offset + i, "expected ',' or ')'"),
            }
        }
        skip_ws(&mut i);
        if chars.get(i) != Some(&'.') {
            return syntax(line, offset + i, "expected '.' after atom");
        }
        i += 1;
        atoms.push(RawAtom { line, col: offset + start, pred, args });
    }
    if atoms.is_empty() {
        return syntax(line, offset, "expected at least one atom");
    }
    Ok(atoms)
}

fn parse_bool(line: usize, col: usize, v: &str) -> Result<bool, ParseError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => syntax(line, col, format!("expected true or false, found '{v}'")),
    }
}

fn parse_usize(line: usize, col: usize, v: &str) -> Result<usize, ParseError> {
    v.parse().or_else(|_| syntax(line, col, format!("expected a non-negative integer, found '{v}'")))
}

fn parse_network(line: usize, col: usize, v: &str) -> Result<NetworkKind, ParseError> {
    if v == "conj" {
        return Ok(NetworkKind::Conj);
    }
    let (kind, n) = v
        .split_once(':')
        .ok_or_else(|| ParseError {
            position: Some((line, col)),
            kind: ParseErrorKind::Syntax(format!("bad network '{v}'")),
        })?;
    let n = parse_usize(line, col, n)?;
    if n == 0 {
        return err(line, col, ParseErrorKind::Invalid("network needs at least one term".into()));
    }
    match kind {
        "dnf" => Ok(NetworkKind::Dnf(n)),
        "cnf" => Ok(NetworkKind::Cnf(n)),
        _ => syntax(line, col, format!("bad network '{v}'")),
    }
}

fn split_list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Options shared by `pred ... intensional` and `rule` lines.
fn parse_rule_options(
    line: usize,
    pred: &str,
    opts: &[(usize, &str)],
    allow_pred_opts: bool,
    sig: &mut Option<&mut PredicateSig>,
) -> Result<RawRule, ParseError> {
    let mut num_var = None;
    let mut network = None;
    let mut use_negation = false;
    let mut body = None;
    let mut recursion = true;
    let mut vsorts = None;
    let mut seen = HashSet::new();
    for &(col, w) in opts {
        let Some((k, v)) = w.split_once('=') else {
            return syntax(line, col, format!("expected key=value, found '{w}'"));
        };
        if !seen.insert(k) {
            return syntax(line, col, format!("duplicate option '{k}'"));
        }
        match k {
            "vars" => num_var = Some(parse_usize(line, col, v)?),
            "net" => network = Some(parse_network(line, col, v)?),
            "neg" => use_negation = parse_bool(line, col, v)?,
            "recursion" => recursion = parse_bool(line, col, v)?,
            "body" => body = Some(split_list(v).into_iter().map(|p| (p.to_string(), col)).collect()),
            "vsorts" => vsorts = Some(split_list(v).into_iter().map(parse_sort).collect()),
            "sorts" | "amalgamate" | "tmax_override" if allow_pred_opts => {
                let sig = sig.as_mut().expect("predicate options need a signature");
                match k {
                    "sorts" => {
                        let s: Vec<Option<String>> = split_list(v).into_iter().map(parse_sort).collect();
                        if s.len() != sig.arity {
                            return syntax(line, col, "sort list length differs from arity");
                        }
                        sig.sorts = s;
                    }
                    "amalgamate" => {
                        sig.amalgamate = Some(AmalgamateKind::from_keyword(v).ok_or_else(|| {
                            ParseError {
                                position: Some((line, col)),
                                kind: ParseErrorKind::Syntax(format!("bad amalgamate '{v}'")),
                            }
                        })?)
                    }
                    _ => sig.tmax_override = Some(parse_usize(line, col, v)?),
                }
            }
            _ => return syntax(line, col, format!("unknown option '{k}'")),
        }
    }
    let col0 = opts.first().map(|o| o.0).unwrap_or(1);
    let Some(num_var) = num_var else {
        return syntax(line, col0, "missing vars=<k>");
    };
    let Some(network) = network else {
        return syntax(line, col0, "missing net=dnf:<N>|cnf:<N>|conj");
    };
    Ok(RawRule {
        line,
        col: col0,
        pred: pred.to_string(),
        num_var,
        network,
        use_negation,
        body,
        recursion,
        vsorts,
    })
}

/// Parses and validates a problem file.
pub fn parse_problem(text: &str) -> Result<IlpProblem, ParseError> {
    let mut constants: Vec<Constant> = Vec::new();
    let mut const_index: HashMap<String, ConstId> = HashMap::new();
    let mut raw_functions: Vec<RawFunction> = Vec::new();
    let mut signatures: Vec<PredicateSig> = Vec::new();
    let mut raw_rules: Vec<RawRule> = Vec::new();
    let mut raw_atoms: Vec<(AtomRole, RawAtom)> = Vec::new();
    let mut t_max = None;
    let mut amalgamate = AmalgamateKind::Or;

    let mut add_constant =
        |line: usize, col: usize, name: &str, sort: Option<String>| -> Result<(), ParseError> {
            check_name(line, col, name, "constant")?;
            if const_index.contains_key(name) {
                return err(line, col, ParseErrorKind::Invalid(format!("duplicate constant '{name}'")));
            }
            let id = constants.len() as ConstId;
            const_index.insert(name.to_string(), id);
            constants.push(Constant { id, name: name.to_string(), sort });
            Ok(())
        };

    for (ln, raw_line) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw_line.split('%').next().unwrap_or("");
        let ws = words(content);
        let Some(&(kcol, keyword)) = ws.first() else { continue };
        let rest_start = ws.get(1).map(|w| w.0).unwrap_or(content.chars().count() + 1);
        let rest: String = content.chars().skip(rest_start - 1).collect();
        match keyword {
            "constant" => {
                let (name, sort) = match rest.split_once(':') {
                    Some((n, s)) => (n.trim(), parse_sort(s.trim())),
                    None => (rest.trim(), None),
                };
                if name.split_whitespace().count() != 1 {
                    return syntax(line, rest_start, "expected a single constant name");
                }
                add_constant(line, rest_start, name, sort)?;
            }
            "constants" => {
                let (Some(open), Some(close)) = (rest.find('{'), rest.find('}')) else {
                    return syntax(line, rest_start, "expected '{ ... }'");
                };
                if open > close {
                    return syntax(line, rest_start, "expected '{ ... }'");
                }
                let tail = rest[close + 1..].trim();
                let sort = if tail.is_empty() {
                    None
                } else if let Some(s) = tail.strip_prefix(':') {
                    parse_sort(s.trim())
                } else {
                    return syntax(line, rest_start + close + 1, "expected ':<sort>' after '}'");
                };
                for name in rest[open + 1..close].split(|c: char| c.is_whitespace() || c == ',') {
                    if !name.is_empty() {
                        add_constant(line, rest_start + open, name, sort.clone())?;
                    }
                }
            }
            "function" => {
                let Some(&(ncol, name)) = ws.get(1) else {
                    return syntax(line, kcol, "expected function name");
                };
                check_name(line, ncol, name, "function")?;
                let after: String = content.chars().skip(ncol - 1 + name.chars().count()).collect();
                let after = after.trim();
                let Some(inner) = after.strip_prefix('{').and_then(|s| s.strip_suffix('}')) else {
                    return syntax(line, ncol, "expected '{ c1 -> c2, ... }'");
                };
                let mut entries = Vec::new();
                for entry in inner.split(',').map(str::trim).filter(|e| !e.is_empty()) {
                    let Some((a, b)) = entry.split_once("->") else {
                        return syntax(line, ncol, format!("expected 'c1 -> c2', found '{entry}'"));
                    };
                    entries.push((a.trim().to_string(), b.trim().to_string(), ncol));
                }
                raw_functions.push(RawFunction { line, col: ncol, name: name.to_string(), entries });
            }
            "pred" => {
                let Some(&(ncol, decl)) = ws.get(1) else {
                    return syntax(line, kcol, "expected <name>/<arity>");
                };
                let Some((name, arity)) = decl.split_once('/') else {
                    return syntax(line, ncol, "expected <name>/<arity>");
                };
                check_name(line, ncol, name, "predicate")?;
                let arity = parse_usize(line, ncol, arity)?;
                if arity == 0 {
                    return err(line, ncol, ParseErrorKind::Invalid(format!("predicate '{name}' has arity 0")));
                }
                if signatures.iter().any(|s| s.name == name) {
                    return err(line, ncol, ParseErrorKind::Invalid(format!("duplicate predicate '{name}'")));
                }
                let Some(&(kind_col, kind)) = ws.get(2) else {
                    return syntax(line, ncol, "expected 'extensional' or 'intensional'");
                };
                let mut sig = PredicateSig {
                    name: name.to_string(),
                    arity,
                    kind: PredKind::Extensional,
                    target: false,
                    sorts: vec![None; arity],
                    computed: false,
                    amalgamate: None,
                    tmax_override: None,
                };
                match kind {
                    "extensional" => {
                        for &(col, w) in &ws[3..] {
                            if w == "computed" {
                                sig.computed = true;
                            } else if let Some(v) = w.strip_prefix("sorts=") {
                                let s: Vec<Option<String>> = split_list(v).into_iter().map(parse_sort).collect();
                                if s.len() != arity {
                                    return syntax(line, col, "sort list length differs from arity");
                                }
                                sig.sorts = s;
                            } else {
                                return syntax(line, col, format!("unknown option '{w}'"));
                            }
                        }
                    }
                    "intensional" => {
                        sig.kind = PredKind::Intensional;
                        let rule = parse_rule_options(line, name, &ws[3..], true, &mut Some(&mut sig))?;
                        raw_rules.push(rule);
                    }
                    _ => return syntax(line, kind_col, format!("expected 'extensional' or 'intensional', found '{kind}'")),
                }
                signatures.push(sig);
            }
            "rule" => {
                let Some(&(ncol, name)) = ws.get(1) else {
                    return syntax(line, kcol, "expected predicate name");
                };
                let mut rule = parse_rule_options(line, name, &ws[2..], false, &mut None)?;
                rule.col = ncol;
                raw_rules.push(rule);
            }
            "fact" | "pos" | "neg" => {
                let role = match keyword {
                    "fact" => AtomRole::Fact,
                    "pos" => AtomRole::Pos,
                    _ => AtomRole::Neg,
                };
                for atom in parse_atoms(line, &rest, rest_start)? {
                    raw_atoms.push((role, atom));
                }
            }
            "param" => {
                for &(col, w) in &ws[1..] {
                    match w.split_once('=') {
                        Some(("tmax", v)) => {
                            let t = parse_usize(line, col, v)?;
                            if t == 0 {
                                return err(line, col, ParseErrorKind::Invalid("tmax must be at least 1".into()));
                            }
                            t_max = Some(t);
                        }
                        Some(("amalgamate", v)) => {
                            amalgamate = AmalgamateKind::from_keyword(v).ok_or_else(|| ParseError {
                                position: Some((line, col)),
                                kind: ParseErrorKind::Syntax(format!("bad amalgamate '{v}'")),
                            })?
                        }
                        _ => return syntax(line, col, format!("unknown parameter '{w}'")),
                    }
                }
            }
            other => return syntax(line, kcol, format!("unknown statement '{other}'")),
        }
    }

    // Resolution pass.
    let pred_index: HashMap<String, PredId> =
        signatures.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
    let sort_of = |c: ConstId| constants[c as usize].sort.clone();

    let mut functions = Vec::new();
    for rf in &raw_functions {
        if functions.iter().any(|f: &TermFunction| f.name == rf.name) {
            return err(rf.line, rf.col, ParseErrorKind::Invalid(format!("duplicate function '{}'", rf.name)));
        }
        let mut table = vec![None; constants.len()];
        let mut dom: Option<Option<String>> = None;
        let mut cod: Option<Option<String>> = None;
        for (a, b, col) in &rf.entries {
            let ca = *const_index
                .get(a)
                .ok_or_else(|| ParseError { position: Some((rf.line, *col)), kind: ParseErrorKind::UnknownConstant(a.clone()) })?;
            let cb = *const_index
                .get(b)
                .ok_or_else(|| ParseError { position: Some((rf.line, *col)), kind: ParseErrorKind::UnknownConstant(b.clone()) })?;
            if table[ca as usize].is_some() {
                return err(rf.line, *col, ParseErrorKind::Invalid(format!("function '{}' maps '{a}' twice", rf.name)));
            }
            table[ca as usize] = Some(cb);
            for (slot, s) in [(&mut dom, sort_of(ca)), (&mut cod, sort_of(cb))] {
                match slot {
                    None => *slot = Some(s),
                    Some(prev) if *prev != s => {
                        return err(
                            rf.line,
                            *col,
                            ParseErrorKind::Invalid(format!("function '{}' mixes sorts", rf.name)),
                        )
                    }
                    _ => {}
                }
            }
        }
        functions.push(TermFunction {
            name: rf.name.clone(),
            table,
            domain_sort: dom.flatten(),
            codomain_sort: cod.flatten(),
        });
    }

    // Group rules by head predicate in declaration order.
    let mut rules: Vec<(PredId, RuleSpec)> = Vec::new();
    for rr in &raw_rules {
        let pid = *pred_index
            .get(&rr.pred)
            .ok_or_else(|| ParseError { position: Some((rr.line, rr.col)), kind: ParseErrorKind::UnknownPredicate(rr.pred.clone()) })?;
        let sig = &signatures[pid];
        if !sig.is_intensional() {
            return err(rr.line, rr.col, ParseErrorKind::Invalid(format!("'{}' is extensional and cannot have rules", sig.name)));
        }
        if rr.num_var < sig.arity {
            return err(
                rr.line,
                rr.col,
                ParseErrorKind::Invalid(format!("vars={} is smaller than the arity of '{}'", rr.num_var, sig.name)),
            );
        }
        let body = match &rr.body {
            None => None,
            Some(names) => {
                let mut ids = Vec::new();
                for (n, col) in names {
                    let id = *pred_index.get(n).ok_or_else(|| ParseError {
                        position: Some((rr.line, *col)),
                        kind: ParseErrorKind::UnknownPredicate(n.clone()),
                    })?;
                    if !ids.contains(&id) {
                        ids.push(id);
                    }
                }
                ids.sort_unstable();
                Some(ids)
            }
        };
        let var_sorts = match &rr.vsorts {
            Some(v) => {
                if v.len() != rr.num_var {
                    return syntax(rr.line, rr.col, "vsorts length differs from vars");
                }
                v.clone()
            }
            None => {
                let mut v = sig.sorts.clone();
                v.resize(rr.num_var, None);
                v
            }
        };
        rules.push((
            pid,
            RuleSpec {
                pred: pid,
                num_var: rr.num_var,
                network: rr.network,
                use_negation: rr.use_negation,
                body,
                recursion: rr.recursion,
                var_sorts,
            },
        ));
    }
    rules.sort_by_key(|(p, _)| *p);
    let rules: Vec<RuleSpec> = rules.into_iter().map(|(_, r)| r).collect();

    let mut background = Vec::new();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut seen: [HashSet<GroundAtom>; 3] = Default::default();
    let mut first_pos: HashMap<GroundAtom, (usize, usize)> = HashMap::new();
    for (role, ra) in &raw_atoms {
        let pid = *pred_index
            .get(&ra.pred)
            .ok_or_else(|| ParseError { position: Some((ra.line, ra.col)), kind: ParseErrorKind::UnknownPredicate(ra.pred.clone()) })?;
        let sig = &signatures[pid];
        if ra.args.len() != sig.arity {
            return err(
                ra.line,
                ra.col,
                ParseErrorKind::ArityMismatch { pred: sig.name.clone(), expected: sig.arity, found: ra.args.len() },
            );
        }
        let mut args = Vec::with_capacity(ra.args.len());
        for (i, a) in ra.args.iter().enumerate() {
            let c = *const_index
                .get(a)
                .ok_or_else(|| ParseError { position: Some((ra.line, ra.col)), kind: ParseErrorKind::UnknownConstant(a.clone()) })?;
            if let Some(sort) = &sig.sorts[i] {
                if constants[c as usize].sort.as_ref() != Some(sort) {
                    return err(
                        ra.line,
                        ra.col,
                        ParseErrorKind::Invalid(format!("constant '{a}' is not of sort '{sort}' required by {}", sig.name)),
                    );
                }
            }
            args.push(c);
        }
        let atom = GroundAtom::new(pid, args);
        if *role != AtomRole::Fact && !sig.is_intensional() {
            return err(
                ra.line,
                ra.col,
                ParseErrorKind::Invalid(format!("examples must use an intensional predicate, '{}' is extensional", sig.name)),
            );
        }
        let slot = *role as usize;
        if !seen[slot].insert(atom.clone()) {
            continue;
        }
        match role {
            AtomRole::Fact => background.push(atom),
            AtomRole::Pos => {
                first_pos.insert(atom.clone(), (ra.line, ra.col));
                positives.push(atom)
            }
            AtomRole::Neg => negatives.push(atom),
        }
    }
    for (ra_role, ra) in &raw_atoms {
        if *ra_role == AtomRole::Neg {
            let pid = pred_index[&ra.pred];
            let args: Vec<ConstId> = ra.args.iter().map(|a| const_index[a]).collect();
            let atom = GroundAtom::new(pid, args);
            if seen[AtomRole::Pos as usize].contains(&atom) {
                let shown = format!("{}({})", ra.pred, ra.args.join(","));
                return err(ra.line, ra.col, ParseErrorKind::ConflictingExample(shown));
            }
        }
    }
    for a in positives.iter().chain(&negatives) {
        signatures[a.pred].target = true;
    }
    if !signatures.iter().any(|s| s.target) {
        return Err(ParseError { position: None, kind: ParseErrorKind::NoTarget });
    }
    let Some(t_max) = t_max else {
        return Err(ParseError {
            position: None,
            kind: ParseErrorKind::Invalid("missing 'param tmax=<t>'".into()),
        });
    };

    let problem = IlpProblem {
        constants,
        functions,
        signatures,
        rules,
        background,
        positives,
        negatives,
        t_max,
        amalgamate,
    };
    problem.validate()?;
    Ok(problem)
}

fn sort_text(s: &Option<String>) -> &str {
    s.as_deref().unwrap_or("_")
}

fn sort_list(v: &[Option<String>]) -> String {
    v.iter().map(sort_text).collect::<Vec<_>>().join(",")
}

fn rule_options(p: &IlpProblem, r: &RuleSpec) -> String {
    let mut s = format!("vars={} net={} neg={}", r.num_var, r.network, r.use_negation);
    if !r.recursion {
        s.push_str(" recursion=false");
    }
    if let Some(body) = &r.body {
        let names: Vec<&str> = body.iter().map(|&b| p.signatures[b].name.as_str()).collect();
        s.push_str(&format!(" body={}", names.join(",")));
    }
    if r.var_sorts.iter().any(Option::is_some) {
        s.push_str(&format!(" vsorts={}", sort_list(&r.var_sorts)));
    }
    s
}

pub(super) fn serialize(p: &IlpProblem) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < p.constants.len() {
        let sort = &p.constants[i].sort;
        let mut j = i;
        while j < p.constants.len() && p.constants[j].sort == *sort {
            j += 1;
        }
        let names: Vec<&str> = p.constants[i..j].iter().map(|c| c.name.as_str()).collect();
        out.push_str(&format!("constants {{ {} }}", names.join(" ")));
        if let Some(s) = sort {
            out.push_str(&format!(" :{s}"));
        }
        out.push('\n');
        i = j;
    }
    for f in &p.functions {
        let entries: Vec<String> = f
            .table
            .iter()
            .enumerate()
            .filter_map(|(a, b)| {
                b.map(|b| format!("{} -> {}", p.constants[a].name, p.constants[b as usize].name))
            })
            .collect();
        out.push_str(&format!("function {} {{ {} }}\n", f.name, entries.join(" , ")));
    }
    for (pid, s) in p.signatures.iter().enumerate() {
        out.push_str(&format!("pred {}/{}", s.name, s.arity));
        match s.kind {
            PredKind::Extensional => {
                out.push_str(" extensional");
                if s.sorts.iter().any(Option::is_some) {
                    out.push_str(&format!(" sorts={}", sort_list(&s.sorts)));
                }
                if s.computed {
                    out.push_str(" computed");
                }
                out.push('\n');
            }
            PredKind::Intensional => {
                let mut rules = p.rules_of(pid).map(|(_, r)| r);
                let first = rules.next().expect("validated problem: intensional predicate has a rule");
                out.push_str(&format!(" intensional {}", rule_options(p, first)));
                if s.sorts.iter().any(Option::is_some) {
                    out.push_str(&format!(" sorts={}", sort_list(&s.sorts)));
                }
                if let Some(a) = s.amalgamate {
                    out.push_str(&format!(" amalgamate={}", a.keyword()));
                }
                if let Some(t) = s.tmax_override {
                    out.push_str(&format!(" tmax_override={t}"));
                }
                out.push('\n');
                for r in rules {
                    out.push_str(&format!("rule {} {}\n", s.name, rule_options(p, r)));
                }
            }
        }
    }
    for (kw, set) in [("fact", &p.background), ("pos", &p.positives), ("neg", &p.negatives)] {
        for a in set {
            out.push_str(&format!("{kw} {}.\n", p.display_ground(a)));
        }
    }
    out.push_str(&format!("param tmax={} amalgamate={}\n", p.t_max, p.amalgamate.keyword()));
    out
}
