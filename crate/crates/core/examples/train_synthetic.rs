//! Train the desk preset on the two-domain synthetic corpus and report
//! joint accuracy on each split.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [seed] [key=value ...]
//! ```

use dstqa::corpus::{generate_synthetic, SyntheticConfig};
use dstqa::evaluation::evaluate_model;
use dstqa::trainer::{train, TrainConfig};

fn main() -> dstqa::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let overrides: Vec<(String, String)> = std::env::args()
        .skip(2)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let (corpus, ontology) = generate_synthetic(&SyntheticConfig::two_domain(50).with_splits(20, 20), seed)?;
    let config = TrainConfig {
        seed,
        eval_train: true,
        target_train_joint: Some(0.95),
        ..TrainConfig::desk()
    }
    .with_overrides(&overrides)?;

    let outcome = train(&config, &corpus, &ontology)?;
    for r in &outcome.log {
        println!(
            "epoch {:3}  loss {:8.3}  train {:.3}  dev {:.3}",
            r.epoch,
            r.loss_v + r.loss_st + r.loss_span,
            r.train_joint.unwrap_or(f64::NAN),
            r.dev_joint.unwrap_or(f64::NAN),
        );
    }
    println!("best epoch {:?}", outcome.best_epoch);
    for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let (report, _) = evaluate_model(&outcome.model, split)?;
        println!("{name:5} joint {:.3}  slot {:.3}", report.joint, report.slot);
    }
    Ok(())
}
