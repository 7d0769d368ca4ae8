//! Learns `mul/3` over 0..6 from `zero/1`, `inc/2` and `add/3` with a
//! four-term DNF and eight chaining steps.
//!
//! Run with `cargo run --release --example multiplication [seed]`.
//! One run takes several minutes on a single core.

use diffilp::datalog::Evaluator;
use diffilp::ground::SpaceOptions;
use diffilp::train::{extract_program, Session, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let problem = diffilp::parse_problem(include_str!("mul.dnl"))?;
    let session = Session::new(&problem, &SpaceOptions::default())?;
    let cfg = TrainConfig { learning_rate: 0.1, epochs: 1500, wide_init_mean: -3.5, seed, ..Default::default() };
    let mut model = session.train_with(&cfg, None, |r| {
        if r.epoch % 100 == 0 {
            eprintln!("epoch {:>5} loss {:.5} ({:.0}s)", r.epoch, r.loss, r.seconds);
        }
    })?;
    println!("converged: {} after {} epochs (loss {:.2e})", model.converged, model.epochs, model.final_loss);
    session.prune(&mut model.functions, None, cfg.eps_log, cfg.prune_delta)?;
    let clauses = extract_program(&problem, &session.index, &model.functions);
    for c in &clauses {
        println!("{}", c.display(&problem));
    }
    let (pos, neg) = Evaluator::new(&problem).score_examples(&clauses, problem.t_max);
    println!("entails {pos}/{} positives, rejects {neg}/{} negatives", problem.positives.len(), problem.negatives.len());
    Ok(())
}
