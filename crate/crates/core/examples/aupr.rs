//! Step-wise precision-recall area on a few small score sets.
//!
//! Run with `cargo run --example aupr`.

use diffilp::eval::aupr;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sets: [(&str, Vec<(f64, bool)>); 3] = [
        ("alternating", vec![(0.9, true), (0.8, false), (0.7, true), (0.6, false)]),
        ("separated", vec![(0.9, true), (0.7, true), (0.4, false), (0.1, false)]),
        ("constant", vec![(0.5, true), (0.5, false), (0.5, false), (0.5, false)]),
    ];
    for (name, scores) in sets {
        let curve = aupr(&scores)?;
        println!("{name}: aupr {:.4}", curve.aupr);
        for (r, p, t) in &curve.points {
            println!("  threshold {t:.2}  recall {r:.2}  precision {p:.3}");
        }
    }
    Ok(())
}
