//! Train briefly, then print the per-turn graph links and node attention
//! that the value questions used.

use dstqa::corpus::{generate_synthetic, SyntheticConfig};
use dstqa::model::Hooks;
use dstqa::trainer::{train, TrainConfig};

fn main() -> dstqa::Result<()> {
    let (corpus, ontology) = generate_synthetic(&SyntheticConfig::two_domain(30).with_splits(5, 0), 0)?;
    let config = TrainConfig { epochs: 30, ..TrainConfig::desk() };
    let model = train(&config, &corpus, &ontology)?.model;

    let dialogue = corpus.dev.iter().max_by_key(|d| d.turns.len()).expect("dev dialogue");
    let (examples, _) = model.prepare(dialogue);
    for (turn, out) in dialogue.turns.iter().zip(model.predict_examples(&examples, Hooks::default())?) {
        println!("user: {}", turn.user);
        if let Some(graph) = &out.graph {
            let dump = graph.dump(Some(&out.node_attention));
            println!("{}", serde_json::to_string_pretty(&dump).expect("dump serializes"));
        }
    }
    Ok(())
}
