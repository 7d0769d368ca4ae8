//! Learns `lt/2` over the constants 0..4 from `inc/2` facts, prunes the
//! result and checks it with the Datalog evaluator.
//!
//! Run with `cargo run --release --example lessthan`.

use diffilp::datalog::Evaluator;
use diffilp::ground::SpaceOptions;
use diffilp::train::{extract_program, Session, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let src = include_str!("lessthan.dnl");
    let problem = diffilp::parse_problem(src)?;
    let session = Session::new(&problem, &SpaceOptions::default())?;
    let cfg = TrainConfig { learning_rate: 0.05, seed: 1, ..Default::default() };
    let mut model = session.train(&cfg, None)?;
    println!("converged: {} after {} epochs (loss {:.2e})", model.converged, model.epochs, model.final_loss);
    let removed = session.prune(&mut model.functions, None, cfg.eps_log, cfg.prune_delta)?;
    println!("pruned {} memberships", removed.len());
    let clauses = extract_program(&problem, &session.index, &model.functions);
    for c in &clauses {
        println!("{}", c.display(&problem));
    }
    let (pos, neg) = Evaluator::new(&problem).score_examples(&clauses, problem.t_max);
    println!("entails {pos}/{} positives, rejects {neg}/{} negatives", problem.positives.len(), problem.negatives.len());
    Ok(())
}
