//! Grounding report for the list-sorting task: list and element sorts,
//! the `H` (all but last) and `t` (last element) term functions and the
//! candidate atoms of the `sort/2` rule.
//!
//! Run with `cargo run --example sort_check`.

use diffilp::ground::{build_space, SpaceOptions, SubstitutionGrid};
use diffilp::logic::candidate_atoms;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = diffilp::parse_problem(include_str!("sort.dnl"))?;
    let lists = problem.constants_of_sort(Some("list")).len();
    let elems = problem.constants_of_sort(Some("elem")).len();
    println!("constants: {lists} lists (including nil), {elems} elements");
    let rule = &problem.rules[0];
    let cands = candidate_atoms(rule, &problem.signatures, &problem.functions);
    println!("candidate atoms of sort/2: {}", cands.num_atoms());
    let shown: Vec<String> = cands.atoms.iter().take(12).map(|a| problem.display_atom(a)).collect();
    println!("  first: {}", shown.join(", "));
    println!("substitutions per head atom: {}", SubstitutionGrid::new(&problem, rule).len());
    let space = build_space(&problem, &SpaceOptions::default())?;
    let pid = problem.pred_id("sort").expect("declared");
    let entries = space.len(pid) * SubstitutionGrid::new(&problem, rule).len() * cands.num_atoms();
    println!("ground atoms {}, gather index {:.1} MiB", space.total, (entries * 4) as f64 / (1 << 20) as f64);
    Ok(())
}
