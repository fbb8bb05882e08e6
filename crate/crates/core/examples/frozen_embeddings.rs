//! Use a frozen word table as the contextual provider. Only the character
//! encoder and the layers above it are trained.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dstqa::corpus::{generate_synthetic, SyntheticConfig};
use dstqa::encoding::ProviderKind;
use dstqa::evaluation::evaluate_model;
use dstqa::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (corpus, ontology) = generate_synthetic(&SyntheticConfig::two_domain(30).with_splits(10, 0), 0)?;
    let dim = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut table = String::new();
    for token in corpus.vocab.tokens() {
        let row: Vec<String> = (0..dim).map(|_| format!("{:.4}", rng.gen_range(-1.0..1.0))).collect();
        writeln!(table, "{token} {}", row.join(" ")).expect("string write");
    }
    let path = std::env::temp_dir().join("dstqa_frozen_example.txt");
    std::fs::write(&path, table)?;

    let config = TrainConfig {
        provider: ProviderKind::ContextualPretrained,
        embeddings: Some(path),
        word_dim: dim,
        epochs: 40,
        ..TrainConfig::desk()
    };
    let outcome = train(&config, &corpus, &ontology)?;
    let trainable = outcome.model.params.scalar_count();
    let (report, _) = evaluate_model(&outcome.model, &corpus.dev)?;
    println!("provider {:?}", outcome.model.encoder().provider_identity());
    println!("{trainable} trainable scalars; dev joint {:.3}", report.joint);
    Ok(())
}
