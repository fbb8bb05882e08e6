//! Train a small model and track a dialogue typed on stdin, one agent line
//! then one user line per turn (`:reset`, `:quit`).

use std::io::{self, BufReader};

use dstqa::cli::repl;
use dstqa::corpus::{generate_synthetic, SyntheticConfig};
use dstqa::trainer::{train, TrainConfig};

fn main() -> dstqa::Result<()> {
    let (corpus, ontology) = generate_synthetic(&SyntheticConfig::two_domain(50).with_splits(10, 0), 0)?;
    let config = TrainConfig { epochs: 60, ..TrainConfig::desk() };
    eprintln!("training...");
    let model = train(&config, &corpus, &ontology)?.model;
    let stdin = io::stdin();
    repl(&model, &mut BufReader::new(stdin.lock()), &mut io::stdout())
}
