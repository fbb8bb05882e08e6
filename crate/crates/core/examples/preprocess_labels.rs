//! Turn a short dialogue into per-turn examples: cumulative context tokens,
//! roles, exact-match flags and labels.

use dstqa::corpus::{build_turn_examples, Dialogue, DialogueState, SyntheticConfig, Turn};
use dstqa::ontology::{build_questions, SlotKey};
use dstqa::text::RuleLemmatizer;

fn main() -> dstqa::Result<()> {
    let ontology = SyntheticConfig::two_domain(0).ontology()?;
    let questions = build_questions(&ontology);
    let mut first = DialogueState::new();
    first.set(SlotKey::new("restaurant", "food"), "thai");
    let mut second = first.clone();
    second.set(SlotKey::new("restaurant", "book time"), "19:15");
    let dialogue = Dialogue {
        id: "demo".into(),
        turns: vec![
            Turn {
                agent: String::new(),
                user: "i want thai food".into(),
                state: first,
            },
            Turn {
                agent: "what time should i book the table for ?".into(),
                user: "we will arrive at 19:15".into(),
                state: second,
            },
        ],
    };

    let (examples, report) = build_turn_examples(&dialogue, &questions, None, &RuleLemmatizer::default());
    for ex in &examples {
        println!("turn {}: {}", ex.turn_index, ex.tokens.join(" "));
        for (p, (q, label)) in questions.iter().zip(&ex.labels).enumerate() {
            let flagged: Vec<&str> = (0..ex.tokens.len())
                .filter(|&i| ex.exact_match[[i, 2 * p]] == 1)
                .map(|i| ex.tokens[i].as_str())
                .collect();
            println!("  {:22} label {:?}  matches {:?}", q.key().to_string(), label, flagged);
        }
    }
    println!("{report:?}");
    Ok(())
}
