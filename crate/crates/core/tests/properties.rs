//! Property tests for invariants that hold for any input.

use diffilp::continuous::BoundarySet;
use diffilp::dnl::{DnlFunction, Shape};
use diffilp::eval::{aupr, complement, FoldPlan};
use diffilp::parse_problem;
use proptest::prelude::*;

fn shape() -> impl Strategy<Value = Shape> {
    prop_oneof![Just(Shape::Conj), Just(Shape::Disj), (1usize..4).prop_map(Shape::Dnf), (1usize..4).prop_map(Shape::Cnf)]
}

proptest! {
    #[test]
    fn dnl_output_is_a_truth_value(
        shape in shape(),
        width in 1usize..12,
        seed in any::<u64>(),
        xs in prop::collection::vec(0.0f64..=1.0, 12),
        scale in 0.1f64..20.0,
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut f = DnlFunction::random(shape, width, 1.0, &mut rng);
        for w in f.weights_mut() {
            *w *= scale;
        }
        let y = f.forward(&xs[..width]).unwrap();
        prop_assert!((0.0..=1.0).contains(&y));
    }

    #[test]
    fn boundary_outputs_are_monotone(
        lower in -3.0f64..3.0,
        upper in -3.0f64..3.0,
        c in 1.0f64..50.0,
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let mut set = BoundarySet::new(1, 1, c);
        set.params = vec![lower, upper];
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (ylo, yhi) = (set.forward(0, lo).unwrap(), set.forward(0, hi).unwrap());
        // gt rises with x, lt falls
        prop_assert!(ylo[0] <= yhi[0]);
        prop_assert!(ylo[1] >= yhi[1]);
        for y in ylo.iter().chain(&yhi) {
            prop_assert!((0.0..=1.0).contains(y));
        }
    }

    #[test]
    fn folds_partition_and_repeat(
        labels in prop::collection::vec(0usize..3, 10..80),
        k in 2usize..6,
        seed in any::<u64>(),
        stratified in any::<bool>(),
    ) {
        let plan = FoldPlan { k, seed, stratified };
        let folds = plan.assign(&labels).unwrap();
        prop_assert_eq!(&folds, &plan.assign(&labels).unwrap());
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for f in &folds {
            let sizes_ok = f.len() + 1 >= labels.len() / k && f.len() <= labels.len() / k + 1;
            prop_assert!(sizes_ok);
            let train = complement(labels.len(), f);
            prop_assert_eq!(train.len() + f.len(), labels.len());
        }
        if stratified {
            for c in 0..3 {
                let n_c = labels.iter().filter(|&&l| l == c).count();
                for f in &folds {
                    let in_fold = f.iter().filter(|&&i| labels[i] == c).count();
                    prop_assert!(in_fold + 1 >= n_c / k && in_fold <= n_c / k + 1);
                }
            }
        }
    }

    #[test]
    fn aupr_is_bounded_and_recall_rises(
        scores in prop::collection::vec((0u8..20, any::<bool>()), 1..100),
    ) {
        let mut s: Vec<(f64, bool)> = scores.iter().map(|&(v, l)| (f64::from(v) / 20.0, l)).collect();
        s[0].1 = true;
        let curve = aupr(&s).unwrap();
        prop_assert!((0.0..=1.0).contains(&curve.aupr));
        for w in curve.points.windows(2) {
            prop_assert!(w[0].0 <= w[1].0);
        }
        for p in &curve.points {
            prop_assert!((0.0..=1.0).contains(&p.0) && (0.0..=1.0).contains(&p.1));
        }
    }

    #[test]
    fn problem_source_round_trips(
        n_const in 1usize..6,
        arities in prop::collection::vec(1usize..3, 1..3),
        target_arity in 1usize..3,
        extra_vars in 0usize..2,
        facts in prop::collection::vec((0usize..3, 0usize..6, 0usize..6), 0..10),
        tmax in 1usize..6,
        neg in any::<bool>(),
        am in 0usize..3,
    ) {
        let mut src = String::from("constants {");
        for c in 0..n_const {
            src.push_str(&format!(" k{c}"));
        }
        src.push_str(" }\n");
        for (i, a) in arities.iter().enumerate() {
            src.push_str(&format!("pred b{i}/{a} extensional\n"));
        }
        let vars = target_arity + extra_vars;
        src.push_str(&format!("pred t/{target_arity} intensional vars={vars} net=dnf:2 neg={neg}\n"));
        for (p, x, y) in facts {
            let Some(&a) = arities.get(p) else { continue };
            let args: Vec<String> = [x, y][..a].iter().map(|c| format!("k{}", c % n_const)).collect();
            src.push_str(&format!("fact b{p}({}).\n", args.join(",")));
        }
        let head: Vec<&str> = vec!["k0"; target_arity];
        src.push_str(&format!("pos t({}).\n", head.join(",")));
        src.push_str(&format!("param tmax={tmax} amalgamate={}\n", ["or", "and", "replace"][am]));
        let p = parse_problem(&src).unwrap();
        let again = parse_problem(&p.to_source()).unwrap();
        prop_assert_eq!(p, again);
    }
}
