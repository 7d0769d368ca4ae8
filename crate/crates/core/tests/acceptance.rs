//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line, followed by a summary line. With
//! `ACCEPTANCE_STRICT=1` the process exits non-zero if any criterion fails.
//! Criteria run one after another so the runtime limits are measured
//! without contention.

use diffilp::chain::{init_valuations, Chainer};
use diffilp::cli::{bundled_dataset, table_defaults};
use diffilp::continuous::{attach, empty_problem, AttachOptions, FeatureTable};
use diffilp::datalog::{clauses_from_formula, Clause, Evaluator};
use diffilp::dnl::{CompiledDnl, DnlFunction, Shape, Tape};
use diffilp::eval::{aupr, cross_validate_table, FoldPlan};
use diffilp::ground::{build_space, compile_index, SpaceOptions};
use diffilp::logic::{candidate_atoms, GroundAtom, IlpProblem, PredKind};
use diffilp::train::{extract_program, loss_and_grad, InputLayer, Session, TrainConfig};
use diffilp::{dnl, parse_problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::time::{Duration, Instant};

// tolerances and limits
const DNL_GRAD_TOL: f64 = 1e-4;
const CHAIN_GRAD_TOL: f64 = 1e-3;
const BOUNDARY_GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const CONVERGED_LOSS: f64 = 1e-3;
const LESSTHAN_MIN_SEEDS: usize = 9;
const MUL_MIN_SEEDS: usize = 7;
const SEEDS: u64 = 10;
const WINE_MIN_ACC: f64 = 0.93;
const SONAR_MIN_ACC: f64 = 0.78;
const AUPR_HAND: f64 = 0.8333;
const AUPR_HAND_TOL: f64 = 1e-4;
const PRUNE_DELTA: f64 = 1e-4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut out = f();
    let took = start.elapsed();
    if let Some(limit) = limit {
        if took > limit {
            out.pass = false;
            out.detail.push_str(&format!("; over the {}s limit", limit.as_secs()));
        }
    }
    let verdict = if out.pass { "PASS" } else { "FAIL" };
    println!("criterion {n} {name}: {verdict} ({:.1}s) {}", took.as_secs_f64(), out.detail);
    out.pass
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

// 1: binarized neurons equal their Boolean formulas

fn symbolic(shape: Shape, m: &[bool], x: &[bool]) -> bool {
    let w = x.len();
    let conj = |row: &[bool], x: &[bool]| row.iter().zip(x).all(|(&on, &v)| !on || v);
    let disj = |row: &[bool], x: &[bool]| row.iter().zip(x).any(|(&on, &v)| on && v);
    match shape {
        Shape::Conj => conj(m, x),
        Shape::Disj => disj(m, x),
        Shape::Dnf(n) => {
            let h: Vec<bool> = (0..n).map(|j| conj(&m[j * w..(j + 1) * w], x)).collect();
            disj(&m[n * w..], &h)
        }
        Shape::Cnf(n) => {
            let h: Vec<bool> = (0..n).map(|j| disj(&m[j * w..(j + 1) * w], x)).collect();
            conj(&m[n * w..], &h)
        }
    }
}

fn criterion_dnl_faithful() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shapes = [Shape::Conj, Shape::Disj, Shape::Dnf(4), Shape::Cnf(4)];
    let mut checked = 0usize;
    let mut wrong = 0usize;
    for shape in shapes {
        for width in 1..=10 {
            for _ in 0..4 {
                let m: Vec<bool> = (0..shape.num_weights(width)).map(|_| rng.random_bool(0.4)).collect();
                let f = DnlFunction::binary(shape, width, 1.0, &m).expect("layout");
                for bits in 0..(1u32 << width) {
                    let x: Vec<bool> = (0..width).map(|i| (bits >> i) & 1 == 1).collect();
                    let xf: Vec<f64> = x.iter().map(|&b| f64::from(u8::from(b))).collect();
                    let y = f.forward(&xf).expect("width");
                    let want = if symbolic(shape, &m, &x) { 1.0 } else { 0.0 };
                    checked += 1;
                    wrong += usize::from(y != want);
                }
            }
        }
        for _ in 0..10_000 {
            let width = rng.random_range(11..=64);
            let m: Vec<bool> = (0..shape.num_weights(width)).map(|_| rng.random_bool(0.2)).collect();
            let f = DnlFunction::binary(shape, width, 1.0, &m).expect("layout");
            let x: Vec<bool> = (0..width).map(|_| rng.random_bool(0.7)).collect();
            let xf: Vec<f64> = x.iter().map(|&b| f64::from(u8::from(b))).collect();
            let want = if symbolic(shape, &m, &x) { 1.0 } else { 0.0 };
            checked += 1;
            wrong += usize::from(f.forward(&xf).expect("width") != want);
        }
    }
    Outcome { pass: wrong == 0, detail: format!("{wrong} mismatches in {checked} evaluations") }
}

// 2: analytic gradients against central differences

fn dnl_gradients(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for shape in [Shape::Conj, Shape::Disj, Shape::Dnf(3), Shape::Cnf(3)] {
        for width in [1, 4, 9] {
            let mut f = DnlFunction::random(shape, width, 1.0, rng);
            for w in f.weights_mut() {
                *w = rng.random_range(-2.0..2.0);
            }
            let x: Vec<f64> = (0..width).map(|_| rng.random_range(0.05..0.95)).collect();
            let mut tape = Tape::default();
            f.forward_tape(&x, &mut tape).expect("width");
            let g = f.backward(&tape, 1.0).expect("tape");
            for k in 0..f.weights().len() {
                let mut p = f.clone();
                p.weights_mut()[k] += FD_STEP;
                let mut q = f.clone();
                q.weights_mut()[k] -= FD_STEP;
                let n = (p.forward(&x).unwrap() - q.forward(&x).unwrap()) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(g.weights[k], n));
            }
            for i in 0..width {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += FD_STEP;
                xm[i] -= FD_STEP;
                let n = (f.forward(&xp).unwrap() - f.forward(&xm).unwrap()) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(g.inputs[i], n));
            }
        }
    }
    worst
}

fn loss_gradients(rng: &mut ChaCha8Rng) -> f64 {
    let values: Vec<f64> = (0..30).map(|_| rng.random_range(0.02..0.98)).collect();
    let groups: Vec<Vec<(usize, bool)>> =
        vec![(0..12).map(|i| (i, i % 3 == 0)).collect(), vec![], (12..30).map(|i| (i, i % 2 == 0)).collect()];
    let mut g = vec![0.0; values.len()];
    loss_and_grad(&values, &groups, 1e-7, Some(&mut g));
    let mut worst: f64 = 0.0;
    for i in 0..values.len() {
        let (mut p, mut m) = (values.clone(), values.clone());
        p[i] += FD_STEP;
        m[i] -= FD_STEP;
        let n = (loss_and_grad(&p, &groups, 1e-7, None) - loss_and_grad(&m, &groups, 1e-7, None)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(g[i], n));
    }
    worst
}

/// `Σ c_i X⁽ᵗᵐᵃˣ⁾_i` and its gradient with respect to rule weights and
/// `X⁽⁰⁾`, compared with central differences.
fn chain_gradients(problem: &IlpProblem, rng: &mut ChaCha8Rng) -> f64 {
    let opts = SpaceOptions::default();
    let space = build_space(problem, &opts).expect("space");
    let index = compile_index(problem, &space, &opts).expect("index");
    let ch = Chainer::new(problem, &space, &index);
    let mut fns: Vec<DnlFunction> = problem
        .rules
        .iter()
        .zip(&index.rules)
        .map(|(r, ri)| DnlFunction::random(Shape::from(r.network), ri.width(), 1.0, rng))
        .collect();
    for f in &mut fns {
        for w in f.weights_mut() {
            *w = rng.random_range(-3.0..1.0);
        }
    }
    let mut init = init_valuations(problem, &space).expect("init");
    for v in &mut init.values {
        *v = 0.1 + 0.8 * *v * rng.random_range(0.5..1.0) + 0.05 * rng.random_range(0.0..1.0);
    }
    let c: Vec<f64> = (0..space.total).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |fns: &[DnlFunction], init: &diffilp::chain::ValuationState| -> f64 {
        let compiled: Vec<CompiledDnl> = fns.iter().map(DnlFunction::compile).collect();
        let t = ch.run(&compiled, init.clone(), problem.t_max, false).expect("run");
        t.last().values.iter().zip(&c).map(|(v, c)| v * c).sum()
    };
    let compiled: Vec<CompiledDnl> = fns.iter().map(DnlFunction::compile).collect();
    let traj = ch.run(&compiled, init.clone(), problem.t_max, true).expect("run");
    let g = ch.backward(&compiled, &traj, &c).expect("backward");
    let mut worst: f64 = 0.0;
    for r in 0..fns.len() {
        let n_w = fns[r].weights().len();
        for k in (0..n_w).step_by((n_w / 12).max(1)) {
            let mut p = fns.clone();
            p[r].weights_mut()[k] += FD_STEP;
            let mut m = fns.clone();
            m[r].weights_mut()[k] -= FD_STEP;
            let n = (objective(&p, &init) - objective(&m, &init)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.weights[r][k], n));
        }
    }
    for i in (0..space.total).step_by((space.total / 12).max(1)) {
        let (mut p, mut m) = (init.clone(), init.clone());
        p.values[i] += FD_STEP;
        m.values[i] -= FD_STEP;
        let n = (objective(&fns, &p) - objective(&fns, &m)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(g.init[i], n));
    }
    worst
}

fn boundary_gradients() -> f64 {
    let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 * 0.37).sin(), (i * i % 7) as f64]).collect();
    let labels = (0..12).map(|i| if i % 3 == 0 { "x".into() } else { "y".into() }).collect();
    let table = FeatureTable::new(vec!["f0".into(), "f1".into()], rows, labels).expect("table");
    let train: Vec<usize> = (0..12).collect();
    let opts = AttachOptions { k: 3, c: 4.0, terms: 2 };
    let (problem, mut layer) = attach(&empty_problem(), &table, &train, &opts).expect("attach");
    let session = Session::new(&problem, &SpaceOptions::default()).expect("session");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = TrainConfig::default();
    let mut fns = session.init_functions(&cfg, &mut rng);
    for f in &mut fns {
        for w in f.weights_mut() {
            *w = rng.random_range(-2.0..2.0);
        }
    }
    for p in layer.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    // direct derivative of each boundary output
    let mut worst: f64 = 0.0;
    for f in 0..2 {
        for &x in &[-1.2, 0.1, 0.8] {
            for o in 0..2 * opts.k {
                let mut g = vec![0.0; 2 * opts.k];
                g[o] = 1.0;
                let mut grad = vec![0.0; layer.set.params.len()];
                layer.set.backward(f, x, &g, &mut grad);
                for k in 0..grad.len() {
                    let mut p = layer.set.clone();
                    p.params[k] += FD_STEP;
                    let mut m = layer.set.clone();
                    m.params[k] -= FD_STEP;
                    let n = (p.forward(f, x).unwrap()[o] - m.forward(f, x).unwrap()[o]) / (2.0 * FD_STEP);
                    worst = worst.max(rel_err(grad[k], n));
                }
            }
        }
    }
    // through the grounding and the loss
    let compiled: Vec<CompiledDnl> = fns.iter().map(DnlFunction::compile).collect();
    let ch = session.chainer();
    let traj = ch.run(&compiled, session.initial_state(Some(&layer)), problem.t_max, true).expect("run");
    let groups = session.example_groups();
    let mut gx = vec![0.0; session.space.total];
    loss_and_grad(&traj.last().values, groups, cfg.eps_log, Some(&mut gx));
    let back = ch.backward(&compiled, &traj, &gx).expect("backward");
    let analytic = layer.backward(&session.space, &back.init);
    for k in 0..analytic.len() {
        let mut p = layer.clone();
        p.params_mut()[k] += FD_STEP;
        let mut m = layer.clone();
        m.params_mut()[k] -= FD_STEP;
        let n = (session.loss(&fns, Some(&p), cfg.eps_log).unwrap() - session.loss(&fns, Some(&m), cfg.eps_log).unwrap())
            / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[k], n));
    }
    worst
}

fn criterion_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dnl = dnl_gradients(&mut rng);
    let loss = loss_gradients(&mut rng);
    let mut chain: f64 = 0.0;
    let lt = parse_problem(include_str!("../examples/lessthan.dnl")).expect("parse");
    chain = chain.max(chain_gradients(&lt, &mut rng));
    for seed in 0..6 {
        let p = random_problem(&mut ChaCha8Rng::seed_from_u64(100 + seed));
        chain = chain.max(chain_gradients(&p, &mut rng));
    }
    let boundary = boundary_gradients();
    let pass = dnl < DNL_GRAD_TOL && loss < DNL_GRAD_TOL && chain < CHAIN_GRAD_TOL && boundary < BOUNDARY_GRAD_TOL;
    Outcome {
        pass,
        detail: format!(
            "max relative error: dnl {dnl:.1e}, loss {loss:.1e}, chain {chain:.1e}, boundary {boundary:.1e}"
        ),
    }
}

// 3: chaining equals Datalog evaluation

/// Random problem: 2–4 constants, up to 3 predicates of arity ≤ 2, one or
/// two of them intensional.
fn random_problem(rng: &mut ChaCha8Rng) -> IlpProblem {
    let n_const = rng.random_range(2..=4);
    let n_ext = rng.random_range(1..=2);
    let n_int = rng.random_range(1..=(3 - n_ext));
    let mut src = String::from("constants {");
    for c in 0..n_const {
        src.push_str(&format!(" c{c}"));
    }
    src.push_str(" }\n");
    let mut ext = Vec::new();
    for e in 0..n_ext {
        let arity = rng.random_range(1..=2);
        src.push_str(&format!("pred e{e}/{arity} extensional\n"));
        ext.push(arity);
    }
    let mut ints = Vec::new();
    for i in 0..n_int {
        let arity = rng.random_range(1..=2);
        let vars = arity + rng.random_range(0..=1);
        let net = ["conj", "dnf:2", "cnf:2"][rng.random_range(0..3)];
        let neg = rng.random_bool(0.3);
        src.push_str(&format!("pred p{i}/{arity} intensional vars={vars} net={net} neg={neg}\n"));
        ints.push(arity);
    }
    let tuples = |arity: usize| -> Vec<String> {
        let mut out = vec![String::new()];
        for _ in 0..arity {
            out = out.iter().flat_map(|p| (0..n_const).map(move |c| if p.is_empty() { format!("c{c}") } else { format!("{p},c{c}") })).collect();
        }
        out
    };
    for (e, &arity) in ext.iter().enumerate() {
        for t in tuples(arity) {
            if rng.random_bool(0.5) {
                src.push_str(&format!("fact e{e}({t}).\n"));
            }
        }
    }
    let t = tuples(ints[0]);
    src.push_str(&format!("pos p0({}).\n", t[rng.random_range(0..t.len())]));
    let am = ["or", "and", "replace"][rng.random_range(0..3)];
    src.push_str(&format!("param tmax={} amalgamate={am}\n", rng.random_range(1..=4)));
    parse_problem(&src).expect("generated problem parses")
}

fn criterion_chain_oracle() -> Outcome {
    let mut bad = Vec::new();
    let mut derived = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = random_problem(&mut rng);
        let opts = SpaceOptions::default();
        let space = build_space(&problem, &opts).expect("space");
        let index = compile_index(&problem, &space, &opts).expect("index");
        let fns: Vec<DnlFunction> = problem
            .rules
            .iter()
            .zip(&index.rules)
            .map(|(r, ri)| {
                let shape = Shape::from(r.network);
                let n = shape.num_weights(ri.width());
                let hidden = n - shape.hidden();
                let m: Vec<bool> = (0..n).map(|k| if k < hidden { rng.random_bool(0.12) } else { rng.random_bool(0.7) }).collect();
                DnlFunction::binary(shape, ri.width(), 1.0, &m).expect("layout")
            })
            .collect();
        let clauses: Vec<Clause> = fns
            .iter()
            .enumerate()
            .flat_map(|(r, f)| clauses_from_formula(&problem, r, &index.candidates[r], &f.extract_boolean(0.5)))
            .collect();
        let compiled: Vec<CompiledDnl> = fns.iter().map(DnlFunction::compile).collect();
        let ch = Chainer::new(&problem, &space, &index);
        let init = init_valuations(&problem, &space).expect("init");
        let traj = ch.run(&compiled, init, problem.t_max, true).expect("run");
        let ev = Evaluator::new(&problem);
        let mut interp = ev.initial();
        for t in 0..problem.t_max {
            interp = ev.step(&clauses, &interp, t);
            let state = &traj.states[t + 1];
            for (p, sig) in problem.signatures.iter().enumerate() {
                if sig.kind != PredKind::Intensional {
                    continue;
                }
                for pos in 0..space.len(p) {
                    let atom: GroundAtom = space.atom_at(p, pos);
                    let v = state.values[space.offset(p) + pos];
                    let want = if interp.contains(&atom) { 1.0 } else { 0.0 };
                    derived += usize::from(want == 1.0);
                    if v != want {
                        bad.push(format!("seed {seed} step {} {} = {v}", t + 1, problem.display_ground(&atom)));
                    }
                }
            }
        }
    }
    let detail = match bad.first() {
        None => format!("100 random programs agree at every step ({derived} true intensional atom-steps)"),
        Some(first) => format!("{} mismatches, first: {first}", bad.len()),
    };
    Outcome { pass: bad.is_empty(), detail }
}

// 4 and 5: learning tasks

fn run_seeds(
    problem: &IlpProblem,
    cfg: &TrainConfig,
    need: usize,
    per_seed_limit: Duration,
    check: impl Fn(&Session, &[DnlFunction]) -> bool,
) -> Outcome {
    let session = Session::new(problem, &SpaceOptions::default()).expect("session");
    let mut good = 0usize;
    let mut failed = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut ran = 0;
    for seed in 0..SEEDS {
        // stop once the verdict cannot change
        if good >= need || failed.len() as u64 > SEEDS - need as u64 {
            break;
        }
        ran += 1;
        let start = Instant::now();
        let model = session.train(&TrainConfig { seed, ..cfg.clone() }, None).expect("training");
        let took = start.elapsed();
        slowest = slowest.max(took);
        let mut fns = model.functions.clone();
        let ok = model.final_loss < CONVERGED_LOSS && {
            session.prune(&mut fns, None, cfg.eps_log, cfg.prune_delta).expect("prune");
            check(&session, &fns)
        };
        println!("    seed {seed}: loss {:.2e} after {} epochs, {:.1}s, {}", model.final_loss, model.epochs, took.as_secs_f64(), if ok { "solved" } else { "not solved" });
        if ok && took <= per_seed_limit {
            good += 1;
        } else {
            failed.push(seed);
        }
    }
    Outcome {
        pass: good >= need,
        detail: format!("{good} of {ran} seeds solved (need {need} of {SEEDS}); slowest seed {:.1}s", slowest.as_secs_f64()),
    }
}

fn criterion_lessthan() -> Outcome {
    let problem = parse_problem(include_str!("../examples/lessthan.dnl")).expect("parse");
    let cfg = TrainConfig { learning_rate: 0.05, ..Default::default() };
    run_seeds(&problem, &cfg, LESSTHAN_MIN_SEEDS, Duration::from_secs(60), |s, fns| {
        let clauses = extract_program(s.problem, &s.index, fns);
        let (pos, neg) = Evaluator::new(s.problem).score_examples(&clauses, s.problem.t_max);
        pos == s.problem.positives.len() && neg == s.problem.negatives.len()
    })
}

/// The two-clause multiplication program written out by hand.
fn reference_mul(problem: &IlpProblem) -> Vec<Clause> {
    let cands = candidate_atoms(&problem.rules[0], &problem.signatures, &problem.functions);
    let find = |s: &str| cands.atoms.iter().position(|a| problem.display_atom(a) == s).expect("candidate");
    let formula = dnl::BooleanFormula::Dnf(vec![
        vec![find("zero(B)"), find("zero(C)")],
        vec![find("mul(A,D,E)"), find("inc(D,B)"), find("add(E,A,C)")],
    ]);
    clauses_from_formula(problem, 0, &cands, &formula)
}

fn mul_atoms(problem: &IlpProblem, clauses: &[Clause]) -> HashSet<GroundAtom> {
    let mul = problem.pred_id("mul").expect("mul");
    Evaluator::new(problem).run(clauses, problem.t_max).into_iter().filter(|a| a.pred == mul).collect()
}

fn criterion_mul() -> Outcome {
    let problem = parse_problem(include_str!("../examples/mul.dnl")).expect("parse");
    let want = mul_atoms(&problem, &reference_mul(&problem));
    let cfg = diffilp::train::TrainConfig { ..mul_config() };
    run_seeds(&problem, &cfg, MUL_MIN_SEEDS, Duration::from_secs(600), |s, fns| {
        mul_atoms(s.problem, &extract_program(s.problem, &s.index, fns)) == want
    })
}

fn mul_config() -> TrainConfig {
    TrainConfig { learning_rate: 0.1, epochs: 1500, wide_init_mean: -3.5, ..Default::default() }
}

// 6: continuous features

fn criterion_tables() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, min) in [("wine", WINE_MIN_ACC), ("sonar", SONAR_MIN_ACC)] {
        let table = FeatureTable::from_path(&bundled_dataset(name).expect("bundled")).expect("table");
        let (lr, epochs, wide) = table_defaults(table.names.len());
        let cfg = TrainConfig { learning_rate: lr, epochs, wide_init_mean: wide, ..Default::default() };
        let r = cross_validate_table(name, &table, &FoldPlan::default(), &AttachOptions::default(), &cfg).expect("cv");
        pass &= r.mean_accuracy >= min;
        parts.push(format!("{name} accuracy {:.3} (need {min})", r.mean_accuracy));
    }
    Outcome { pass, detail: parts.join(", ") }
}

// 7: AUPR

/// Area from the definition: precision and recall recounted at every
/// distinct threshold.
fn brute_aupr(scores: &[(f64, bool)]) -> f64 {
    let mut thresholds: Vec<f64> = scores.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = scores.iter().filter(|s| s.1).count();
    let mut area = 0.0;
    let mut prev = 0.0;
    for t in thresholds {
        let tp = scores.iter().filter(|s| s.0 >= t && s.1).count();
        let all = scores.iter().filter(|s| s.0 >= t).count();
        let r = tp as f64 / n_pos as f64;
        area += (r - prev) * (tp as f64 / all as f64);
        prev = r;
    }
    area
}

fn criterion_aupr() -> Outcome {
    let hand = aupr(&[(0.9, true), (0.8, false), (0.7, true), (0.6, false)]).expect("aupr").aupr;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=200);
        let levels = rng.random_range(2..=30);
        let mut s: Vec<(f64, bool)> =
            (0..n).map(|_| (rng.random_range(0..levels) as f64 / levels as f64, rng.random_bool(0.3))).collect();
        s[0].1 = true;
        mismatches += usize::from(aupr(&s).expect("positives").aupr != brute_aupr(&s));
    }
    Outcome {
        pass: mismatches == 0 && (hand - AUPR_HAND).abs() <= AUPR_HAND_TOL,
        detail: format!("hand case {hand:.4}, {mismatches} mismatches in 1000 random sets"),
    }
}

// 8: pruning

fn criterion_pruning() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut problems = Vec::new();
    let mut worst_rise: f64 = f64::NEG_INFINITY;
    for case in 0..20 {
        let n = rng.random_range(5..=8);
        let q: Vec<bool> = loop {
            let q: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            if q.iter().any(|&b| b) && q.iter().filter(|&&b| b).count() + 1 < n {
                break q;
            }
        };
        // r strictly contains q; top holds everywhere
        let extra = (0..n).find(|&i| !q[i]).expect("room");
        let r: Vec<bool> = (0..n).map(|i| q[i] || i == extra || (rng.random_bool(0.3))).collect();
        let mut src = String::from("constants {");
        for c in 0..n {
            src.push_str(&format!(" k{c}"));
        }
        src.push_str(" }\npred q/1 extensional\npred r/1 extensional\npred top/1 extensional\n");
        src.push_str("pred p/1 intensional vars=1 net=conj neg=false recursion=false\n");
        for c in 0..n {
            if q[c] {
                src.push_str(&format!("fact q(k{c}).\npos p(k{c}).\n"));
            } else {
                src.push_str(&format!("neg p(k{c}).\n"));
            }
            if r[c] {
                src.push_str(&format!("fact r(k{c}).\n"));
            }
            src.push_str(&format!("fact top(k{c}).\n"));
        }
        src.push_str("param tmax=1\n");
        let problem = parse_problem(&src).expect("parse");
        let inject_r = case % 2 == 0 || rng.random_bool(0.5);
        let inject_top = case % 2 == 1 || rng.random_bool(0.5);
        problems.push((problem, inject_r, inject_top));
    }
    let mut missed = 0;
    let mut wrong = 0;
    for (problem, inject_r, inject_top) in &problems {
        let session = Session::new(problem, &SpaceOptions::default()).expect("session");
        let cands = &session.index.candidates[0];
        let pos = |s: &str| (0..cands.width()).find(|&i| problem.display_atom(cands.input(i).0) == s).expect("candidate");
        let (iq, ir, it) = (pos("q(A)"), pos("r(A)"), pos("top(A)"));
        let mut m = vec![false; cands.width()];
        m[iq] = true;
        m[ir] = *inject_r;
        m[it] = *inject_top;
        let mut fns = vec![DnlFunction::binary(Shape::Conj, cands.width(), 1.0, &m).expect("layout")];
        let before = session.loss(&fns, None, 1e-7).expect("loss");
        let removed = session.prune(&mut fns, None, 1e-7, PRUNE_DELTA).expect("prune");
        let after = session.loss(&fns, None, 1e-7).expect("loss");
        worst_rise = worst_rise.max(after - before);
        let mut injected: Vec<(usize, usize)> = Vec::new();
        if *inject_r {
            injected.push((0, ir));
        }
        if *inject_top {
            injected.push((0, it));
        }
        injected.sort_unstable();
        let mut got = removed.clone();
        got.sort_unstable();
        missed += injected.iter().filter(|k| !got.contains(k)).count();
        wrong += got.iter().filter(|k| !injected.contains(k)).count();
    }
    Outcome {
        pass: missed == 0 && wrong == 0 && worst_rise <= PRUNE_DELTA,
        detail: format!(
            "{} models: {missed} injected atoms kept, {wrong} needed atoms removed, largest loss change {worst_rise:.1e}",
            problems.len()
        ),
    }
}

fn main() {
    let filter: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let want = |n: usize| filter.is_none_or(|f| f == n);
    let mut all = true;
    if want(1) {
        all &= report(1, "dnl faithfulness", Some(Duration::from_secs(10)), criterion_dnl_faithful);
    }
    if want(2) {
        all &= report(2, "gradient suite", Some(Duration::from_secs(30)), criterion_gradients);
    }
    if want(3) {
        all &= report(3, "chaining oracle", Some(Duration::from_secs(60)), criterion_chain_oracle);
    }
    if want(4) {
        all &= report(4, "lessThan", None, criterion_lessthan);
    }
    if want(5) {
        all &= report(5, "multiplication", None, criterion_mul);
    }
    if want(6) {
        all &= report(6, "wine/sonar", Some(Duration::from_secs(15 * 60)), criterion_tables);
    }
    if want(7) {
        all &= report(7, "aupr", None, criterion_aupr);
    }
    if want(8) {
        all &= report(8, "pruning", None, criterion_pruning);
    }
    if want(9) {
        println!("criterion 9 relational benchmarks and sorting: SKIPPED (stretch goal; needs external IMDB/Mutagenesis files)");
    }
    println!("acceptance: {}", if all { "all criteria passed" } else { "some criteria FAILED" });
    if !all && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
