//! Truth tables of the four neural logic shapes with binarized memberships.
//!
//! Run with `cargo run --example dnl_truth_tables`.

use diffilp::dnl::{DnlFunction, Shape};

fn main() {
    // inputs x0, x1, x2; x2 is switched off in every neuron
    let cases: [(Shape, Vec<bool>); 4] = [
        (Shape::Conj, vec![true, true, false]),
        (Shape::Disj, vec![true, true, false]),
        // hidden terms (x0 ∧ x1), (x1): output picks both
        (Shape::Dnf(2), vec![true, true, false, false, true, false, true, true]),
        // hidden clauses (x0 ∨ x2), (x1): output picks both
        (Shape::Cnf(2), vec![true, false, true, false, true, false, true, true]),
    ];
    for (shape, m) in cases {
        let f = DnlFunction::binary(shape, 3, 1.0, &m).expect("layout");
        println!("{shape:?}: {}", f.extract_boolean(0.5));
        println!("  x0 x1 x2 | out");
        for bits in 0..8u32 {
            let x: Vec<f64> = (0..3).map(|i| f64::from((bits >> i) & 1)).collect();
            let y = f.forward(&x).expect("width");
            println!("   {}  {}  {} |  {y}", x[0], x[1], x[2]);
        }
    }
    // fuzzy inputs follow the same algebra: and = xy, or = 1 - (1-x)(1-y)
    let and = DnlFunction::binary(Shape::Conj, 2, 1.0, &[true, true]).expect("layout");
    println!("and(0.8, 0.5) = {:.3}", and.forward(&[0.8, 0.5]).expect("width"));
}
