//! Train on the synthetic corpus and print the full evaluation report,
//! then the report restricted to one domain.

use dstqa::corpus::{generate_synthetic, SyntheticConfig};
use dstqa::evaluation::{evaluate_model, per_domain_eval};
use dstqa::trainer::{train, TrainConfig};

fn main() -> dstqa::Result<()> {
    let (corpus, ontology) = generate_synthetic(&SyntheticConfig::two_domain(50).with_splits(20, 20), 0)?;
    let config = TrainConfig { epochs: 60, ..TrainConfig::desk() };
    let model = train(&config, &corpus, &ontology)?.model;
    let (report, _) = evaluate_model(&model, &corpus.test)?;
    println!("{}", report.to_json());
    let hotel = per_domain_eval(&corpus.test, &model, "hotel")?;
    println!("hotel only: joint {:.3} over {} turns", hotel.joint, hotel.turns);
    Ok(())
}
