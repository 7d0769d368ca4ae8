//! Compares the OR, AND and REPLACE amalgamate functions on the same fixed
//! program: the transitive closure of an `edge/2` chain. OR and REPLACE
//! start from all-false and grow; AND starts from all-true and shrinks, so
//! after three steps it still holds the unsupported `path(d,d)`.
//!
//! Run with `cargo run --example amalgamate`.

use diffilp::dnl::{DnlFunction, Shape};
use diffilp::ground::SpaceOptions;
use diffilp::logic::AmalgamateKind;
use diffilp::train::Session;

const SRC: &str = "\
constants { a b c d }
pred edge/2 extensional
pred path/2 intensional vars=3 net=dnf:2 neg=false
fact edge(a,b).
fact edge(b,c).
fact edge(c,d).
pos path(a,d).
neg path(d,a).
param tmax=3
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for kind in [AmalgamateKind::Or, AmalgamateKind::And, AmalgamateKind::Replace] {
        let mut problem = diffilp::parse_problem(SRC)?;
        problem.amalgamate = kind;
        let session = Session::new(&problem, &SpaceOptions::default())?;
        let cands = &session.index.candidates[0];
        let pick = |name: &str| (0..cands.width()).map(|i| problem.display_atom(cands.input(i).0) == name).collect::<Vec<_>>();
        // path(A,B) ← edge(A,B)  ∨  path(A,B) ← path(A,C), edge(C,B)
        let t1 = pick("edge(A,B)");
        let t2: Vec<bool> = pick("path(A,C)").iter().zip(pick("edge(C,B)")).map(|(a, b)| *a || b).collect();
        let m: Vec<bool> = t1.into_iter().chain(t2).chain([true, true]).collect();
        let f = DnlFunction::binary(Shape::Dnf(2), cands.width(), 1.0, &m)?;
        let out = session.predict(&[f], None)?;
        let pid = problem.pred_id("path").expect("declared");
        let ps = &session.space.preds[pid];
        let holds: Vec<String> = (0..ps.len)
            .filter(|&i| out.values[ps.offset + i] > 0.5)
            .map(|i| problem.display_ground(&session.space.atom_at(pid, i)))
            .collect();
        println!("{:<8} {} atoms true: {}", kind.keyword(), holds.len(), holds.join(" "));
    }
    Ok(())
}
