//! Five-fold cross-validation on the Wine table with six boundaries per
//! feature and direction.
//!
//! Run with `cargo run --release --example wine`.

use diffilp::cli::{bundled_dataset, table_defaults};
use diffilp::continuous::{AttachOptions, FeatureTable};
use diffilp::eval::{cross_validate_table, FoldPlan};
use diffilp::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = FeatureTable::from_path(&bundled_dataset("wine").expect("bundled"))?;
    println!("{} rows, {} features, classes {:?}", table.len(), table.names.len(), table.classes());
    let (lr, epochs, wide) = table_defaults(table.names.len());
    let cfg = TrainConfig { learning_rate: lr, epochs, wide_init_mean: wide, ..Default::default() };
    let report = cross_validate_table("wine", &table, &FoldPlan::default(), &AttachOptions::default(), &cfg)?;
    for (i, f) in report.folds.iter().enumerate() {
        println!("fold {i}: accuracy {:.3}  aupr {:.3}", f.accuracy, f.aupr);
    }
    println!("mean accuracy {:.3}", report.mean_accuracy);
    Ok(())
}
