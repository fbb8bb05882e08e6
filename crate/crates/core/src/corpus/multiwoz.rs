//! Ingestion of the MultiWOZ 2.0 / 2.1 distribution files.
//!
//! Expects `data.json` plus the dev/test id lists (`valListFile.json` or
//! `.txt`, `testListFile.json` or `.txt`). Every other dialogue is training
//! data.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{check_dialogue, Corpus, Dialogue, DialogueState, Turn};
use crate::error::{read_to_string, Error, Result};
use crate::ontology::{Ontology, SlotKey};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub dialogues_total: usize,
    pub dialogues_kept: usize,
    pub dialogues_excluded_domain: usize,
    pub triples_kept: usize,
    pub triples_dropped_unknown_slot: usize,
    pub triples_dropped_unknown_value: usize,
    /// Dropped `domain-slot=value` strings with counts.
    pub dropped: BTreeMap<String, usize>,
}

impl IngestReport {
    pub(crate) fn record_unknown_slot(&mut self, key: &SlotKey) {
        self.triples_dropped_unknown_slot += 1;
        *self.dropped.entry(key.to_string()).or_default() += 1;
    }

    pub(crate) fn record_unknown_value(&mut self, key: &SlotKey, value: &str) {
        self.triples_dropped_unknown_value += 1;
        *self.dropped.entry(format!("{key}={value}")).or_default() += 1;
    }
}

fn slot_name(section: &str, raw: &str) -> Option<String> {
    let base = match raw {
        "pricerange" => "price range",
        "arriveBy" => "arrive by",
        "leaveAt" => "leave at",
        "booked" => return None,
        other => other,
    };
    Some(if section == "book" {
        format!("book {base}")
    } else {
        base.to_string()
    })
}

fn read_id_list(dir: &Path, stem: &str) -> Result<HashSet<String>> {
    for ext in ["json", "txt"] {
        let path = dir.join(format!("{stem}.{ext}"));
        if path.exists() {
            let text = read_to_string(&path)?;
            return Ok(text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect());
        }
    }
    Err(Error::io(
        dir.join(format!("{stem}.json")),
        std::io::Error::new(std::io::ErrorKind::NotFound, "id list not found"),
    ))
}

/// Belief state from one system turn's metadata, every domain included.
fn raw_state(metadata: &Value) -> Vec<(SlotKey, String)> {
    let mut out = Vec::new();
    let Some(domains) = metadata.as_object() else {
        return out;
    };
    for (domain, sections) in domains {
        for section in ["semi", "book"] {
            let Some(slots) = sections.get(section).and_then(Value::as_object) else {
                continue;
            };
            for (raw_slot, value) in slots {
                let Some(slot) = slot_name(section, raw_slot) else {
                    continue;
                };
                let Some(v) = value.as_str() else { continue };
                let canon = crate::text::canonical_value(v);
                if canon != crate::text::NOT_MENTIONED {
                    out.push((SlotKey::new(domain, slot), canon));
                }
            }
        }
    }
    out
}

fn convert_dialogue(id: &str, raw: &Value) -> Result<Dialogue> {
    let log = raw
        .get("log")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema {
            context: id.to_string(),
            message: "missing \"log\" array".into(),
        })?;
    let mut turns = Vec::new();
    let mut agent = String::new();
    for pair in log.chunks(2) {
        let user = pair[0].get("text").and_then(Value::as_str).unwrap_or("");
        let mut state = DialogueState::new();
        if let Some(sys) = pair.get(1) {
            for (k, v) in raw_state(sys.get("metadata").unwrap_or(&Value::Null)) {
                state.set(k, &v);
            }
        }
        turns.push(Turn {
            agent: std::mem::take(&mut agent),
            user: user.to_string(),
            state,
        });
        if let Some(sys) = pair.get(1) {
            agent = sys.get("text").and_then(Value::as_str).unwrap_or("").to_string();
        }
    }
    Ok(Dialogue {
        id: id.trim_end_matches(".json").to_string(),
        turns,
    })
}

/// Convert the raw distribution into a canonical corpus, dropping domains
/// outside the ontology (hospital, police) and dialogues that only touch them.
pub fn ingest_multiwoz(raw_dir: &Path, ontology: &Ontology) -> Result<(Corpus, IngestReport)> {
    let data_path = raw_dir.join("data.json");
    let data: Value = serde_json::from_str(&read_to_string(&data_path)?).map_err(|e| Error::Schema {
        context: data_path.display().to_string(),
        message: e.to_string(),
    })?;
    let dev_ids = read_id_list(raw_dir, "valListFile")?;
    let test_ids = read_id_list(raw_dir, "testListFile")?;
    let entries = data.as_object().ok_or_else(|| Error::Schema {
        context: data_path.display().to_string(),
        message: "expected an object keyed by dialogue id".into(),
    })?;

    let mut report = IngestReport::default();
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (id, raw) in entries {
        report.dialogues_total += 1;
        let dialogue = convert_dialogue(id, raw)?;
        let touches_known = dialogue.turns.iter().any(|t| {
            t.state.iter().any(|(k, _)| ontology.has_domain(&k.domain))
        });
        let touches_other = dialogue.turns.iter().any(|t| {
            t.state.iter().any(|(k, _)| !ontology.has_domain(&k.domain))
        });
        if touches_other && !touches_known {
            report.dialogues_excluded_domain += 1;
            continue;
        }
        let mut dialogue = dialogue;
        for turn in &mut dialogue.turns {
            turn.state.retain(|k| ontology.has_domain(&k.domain));
        }
        let dialogue = check_dialogue(dialogue, ontology, &mut report);
        report.dialogues_kept += 1;
        let key = if id.ends_with(".json") { id.clone() } else { format!("{id}.json") };
        if test_ids.contains(&key) || test_ids.contains(&dialogue.id) {
            test.push(dialogue);
        } else if dev_ids.contains(&key) || dev_ids.contains(&dialogue.id) {
            dev.push(dialogue);
        } else {
            train.push(dialogue);
        }
    }
    Ok((Corpus::new(train, dev, test, ontology), report))
}
