//! Build the question set for the MultiWOZ ontology and list the value
//! relationships derived from it.

use dstqa::ontology::{build_questions, derive_relationships, Ontology, SlotMode};

fn main() {
    let ontology = Ontology::multiwoz();
    let questions = build_questions(&ontology);
    println!("{} questions over {} domains", questions.len(), ontology.domains().count());
    for q in &questions {
        let mode = match q.mode {
            SlotMode::Value => "value",
            SlotMode::Span => "span",
        };
        println!("  {:28} {mode:5} {:4} candidates", q.key().to_string(), q.candidate_count());
    }
    let rel = derive_relationships(&ontology);
    println!("same value set:");
    for (a, b) in &rel.same_values {
        println!("  {a} = {b}");
    }
    println!("strict subset:");
    for (a, b) in &rel.subset {
        println!("  {a} < {b}");
    }
}
