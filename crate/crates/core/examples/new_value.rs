//! Extend a trained model's food question with a value absent from the
//! ontology and predict a turn that mentions it.
//!
//! ```text
//! cargo run --release --example new_value -- [seed] [value]
//! ```

use dstqa::corpus::{generate_synthetic, Dialogue, DialogueState, SyntheticConfig, Turn};
use dstqa::model::Hooks;
use dstqa::ontology::SlotKey;
use dstqa::reader::QuestionPrediction;
use dstqa::trainer::{train, TrainConfig};

fn main() -> dstqa::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let new_value = std::env::args().nth(2).unwrap_or_else(|| "vietnamese".into());
    let (corpus, ontology) = generate_synthetic(&SyntheticConfig::two_domain(50).with_splits(20, 0), 0)?;
    let config = TrainConfig { seed, ..TrainConfig::desk() };
    let mut model = train(&config, &corpus, &ontology)?.model;

    let key = SlotKey::new("restaurant", "food");
    let known = ontology.slot("restaurant", "food").map_or(0, |s| s.values.len());
    model.extend_values(&key, std::slice::from_ref(&new_value))?;

    let dialogue = Dialogue {
        id: "probe".into(),
        turns: vec![Turn {
            agent: String::new(),
            user: format!("i am looking for a restaurant . i would like {new_value} food"),
            state: DialogueState::new(),
        }],
    };
    let (examples, _) = model.prepare(&dialogue);
    let out = model.predict_examples(&examples, Hooks::default())?;
    let q = model.questions().iter().position(|q| q.key() == key).expect("food question");
    if let Some(QuestionPrediction::Value { value_probs, .. }) = &out[0].predictions[q] {
        println!("{} candidates, p({new_value}) = {:.3}", value_probs.len(), value_probs[known]);
    }
    println!("predicted food: {:?}", out[0].state.get(&key));
    Ok(())
}
