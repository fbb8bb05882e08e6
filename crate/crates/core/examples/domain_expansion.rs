//! Compare training a held-out domain from scratch with fine-tuning a model
//! pre-trained on the other domains, on a small sample of target dialogues.
//!
//! ```text
//! cargo run --release --example domain_expansion -- [fraction] [seed]
//! ```

use dstqa::corpus::{generate_synthetic, SyntheticConfig};
use dstqa::evaluation::{domain_expansion_run, ExpansionMode};
use dstqa::trainer::TrainConfig;

fn main() -> dstqa::Result<()> {
    let mut args = std::env::args().skip(1);
    let fraction: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let (corpus, ontology) = generate_synthetic(&SyntheticConfig::two_domain(50).with_splits(20, 20), 0)?;
    let config = TrainConfig {
        seed,
        epochs: 100,
        patience: 30,
        ..TrainConfig::desk()
    };
    for mode in [ExpansionMode::Scratch, ExpansionMode::Finetune] {
        let run = domain_expansion_run(&corpus, &ontology, "hotel", fraction, mode, &config)?;
        println!(
            "{mode:?}: {} sampled dialogues, hotel joint {:.3}, slot {:.3}",
            run.sampled_ids.len(),
            run.report.joint,
            run.report.slot
        );
    }
    Ok(())
}
