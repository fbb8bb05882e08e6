//! Dialogues, corpora and vocabularies.

mod labels;
mod multiwoz;
mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_string, Error, Result};
use crate::ontology::{Ontology, SlotKey, SlotMode};
use crate::text::{canonical_value, tokenize, NOT_MENTIONED};

pub use labels::{
    build_span_label, build_turn_examples, context_turn_range, exact_match_features,
    exact_match_features_for_ontology, PreprocessReport, QuestionLabel, Role, SpanLabel,
    SpanType, TurnExample,
};
pub use multiwoz::{ingest_multiwoz, IngestReport};
pub use synthetic::{generate_synthetic, SynthDomain, SynthSlot, SynthSlotKind, SyntheticConfig};

/// One `(domain, slot, value)` tuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateTriple {
    pub domain: String,
    pub slot: String,
    pub value: String,
}

/// A dialogue state: at most one value per `(domain, slot)` pair. Values are
/// stored canonicalized; "not mentioned" is represented by absence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct DialogueState(BTreeMap<SlotKey, String>);

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a value; "not mentioned" (in any spelling) removes the pair.
    pub fn set(&mut self, key: SlotKey, value: &str) {
        let v = canonical_value(value);
        if v == NOT_MENTIONED {
            self.0.remove(&key);
        } else {
            self.0.insert(key, v);
        }
    }

    pub fn get(&self, key: &SlotKey) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// Value for a pair with "not mentioned" for absent pairs.
    pub fn value_or_not_mentioned(&self, key: &SlotKey) -> &str {
        self.get(key).unwrap_or(NOT_MENTIONED)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SlotKey, &str)> {
        self.0.iter().map(|(k, v)| (k, v.as_str()))
    }

    pub fn triples(&self) -> Vec<StateTriple> {
        self.iter()
            .map(|(k, v)| StateTriple {
                domain: k.domain.clone(),
                slot: k.slot.clone(),
                value: v.to_string(),
            })
            .collect()
    }

    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a StateTriple>) -> Self {
        let mut s = Self::new();
        for t in triples {
            s.set(SlotKey::new(&t.domain, &t.slot), &t.value);
        }
        s
    }

    pub fn retain(&mut self, f: impl Fn(&SlotKey) -> bool) {
        self.0.retain(|k, _| f(k));
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(|k| k.domain.as_str())
    }
}

impl Serialize for DialogueState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.triples().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DialogueState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let triples = Vec::<StateTriple>::deserialize(d)?;
        Ok(Self::from_triples(&triples))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub agent: String,
    pub user: String,
    pub state: DialogueState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    #[serde(rename = "dialogue_id")]
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// Domains mentioned by any gold state in the dialogue.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.turns {
            for d in t.state.domains() {
                if !out.iter().any(|x| x == d) {
                    out.push(d.to_string());
                }
            }
        }
        out
    }

    pub fn mentions_domain(&self, domain: &str) -> bool {
        self.turns
            .iter()
            .any(|t| t.state.domains().any(|d| d == domain))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// Token vocabulary. Id 0 is the unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK_TOKEN: &str = "<unk>";

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self {
            tokens: vec![UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        v.index.insert(UNK_TOKEN.to_string(), 0);
        for special in ["not", "mentioned", "don't", "care"] {
            v.insert(special);
        }
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    fn insert(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    /// Vocabulary over the training dialogues plus every ontology element.
    pub fn build(train: &[Dialogue], ontology: &Ontology) -> Self {
        let mut all = Vec::new();
        for d in train {
            for t in &d.turns {
                all.extend(tokenize(&t.agent));
                all.extend(tokenize(&t.user));
            }
        }
        for q in crate::ontology::build_questions(ontology) {
            for e in q.elements() {
                all.extend(tokenize(&e));
            }
        }
        Self::from_tokens(all)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.tokens).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tokens: Vec<String> = serde_json::from_str(text).map_err(|e| Error::Schema {
            context: "vocabulary".into(),
            message: e.to_string(),
        })?;
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Validation("vocabulary must start with <unk>".into()));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self { tokens, index })
    }
}

/// A split corpus. The vocabulary is built from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
    pub vocab: Vocab,
}

impl Corpus {
    pub fn new(train: Vec<Dialogue>, dev: Vec<Dialogue>, test: Vec<Dialogue>, ontology: &Ontology) -> Self {
        let vocab = Vocab::build(&train, ontology);
        Self {
            train,
            dev,
            test,
            vocab,
        }
    }

    pub fn empty(ontology: &Ontology) -> Self {
        Self::new(Vec::new(), Vec::new(), Vec::new(), ontology)
    }

    pub fn split(&self, split: Split) -> &[Dialogue] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dialogues(&self) -> impl Iterator<Item = &Dialogue> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    /// Write `train.json`, `dev.json`, `test.json` and `vocab.json`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        for split in Split::ALL {
            let text = serde_json::to_string_pretty(self.split(split)).expect("corpus serializes");
            write_string(&dir.join(format!("{}.json", split.name())), &text)?;
        }
        write_string(&dir.join("vocab.json"), &self.vocab.to_json())
    }

    /// Load canonical split files, checking every triple against the ontology.
    pub fn load_dir(dir: &Path, ontology: &Ontology) -> Result<(Self, IngestReport)> {
        let mut report = IngestReport::default();
        let mut splits = Vec::new();
        for split in Split::ALL {
            let path = dir.join(format!("{}.json", split.name()));
            let dialogues = if path.exists() {
                load_dialogues(&path)?
            } else {
                Vec::new()
            };
            let checked = dialogues
                .into_iter()
                .map(|d| check_dialogue(d, ontology, &mut report))
                .collect::<Vec<_>>();
            splits.push(checked);
        }
        let test = splits.pop().unwrap_or_default();
        let dev = splits.pop().unwrap_or_default();
        let train = splits.pop().unwrap_or_default();
        Ok((Self::new(train, dev, test, ontology), report))
    }
}

pub fn load_dialogues(path: &Path) -> Result<Vec<Dialogue>> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::Schema {
        context: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Drop triples that reference unknown pairs or values outside a value-mode
/// slot's list, recording them in the report.
pub fn check_dialogue(mut dialogue: Dialogue, ontology: &Ontology, report: &mut IngestReport) -> Dialogue {
    for turn in &mut dialogue.turns {
        let mut kept = DialogueState::new();
        for (key, value) in turn.state.iter() {
            match ontology.slot(&key.domain, &key.slot) {
                None => report.record_unknown_slot(key),
                Some(spec) if spec.mode == SlotMode::Value => {
                    let known = value == crate::text::DONT_CARE
                        || spec
                            .values
                            .iter()
                            .any(|v| crate::text::normalize_value(v) == value);
                    if known {
                        kept.set(key.clone(), value);
                        report.triples_kept += 1;
                    } else {
                        report.record_unknown_value(key, value);
                    }
                }
                Some(_) => {
                    kept.set(key.clone(), value);
                    report.triples_kept += 1;
                }
            }
        }
        turn.state = kept;
    }
    dialogue
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_canonicalizes_special_values() {
        let mut s = DialogueState::new();
        s.set(SlotKey::new("hotel", "area"), "North");
        s.set(SlotKey::new("hotel", "stars"), "dontcare");
        s.set(SlotKey::new("hotel", "name"), "none");
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(&SlotKey::new("hotel", "area")), Some("north"));
        assert_eq!(s.get(&SlotKey::new("hotel", "stars")), Some("don't care"));
        assert_eq!(
            s.value_or_not_mentioned(&SlotKey::new("hotel", "name")),
            "not mentioned"
        );
    }

    #[test]
    fn canonical_dialogue_json_shape() {
        let text = r#"[{"dialogue_id": "d1", "turns": [
            {"agent": "", "user": "a cheap hotel", "state": [
                {"domain": "hotel", "slot": "price range", "value": "cheap"}]}]}]"#;
        let ds: Vec<Dialogue> = serde_json::from_str(text).unwrap();
        assert_eq!(ds[0].id, "d1");
        let back = serde_json::to_value(&ds).unwrap();
        assert_eq!(back[0]["turns"][0]["state"][0]["value"], "cheap");
    }

    #[test]
    fn vocab_reserves_unknown_and_specials() {
        let v = Vocab::from_tokens(["hello"]);
        assert_eq!(v.id(UNK_TOKEN), 0);
        assert_eq!(v.id("never-seen"), 0);
        assert!(v.contains("mentioned") && v.contains("care"));
        let back = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(back.id("hello"), v.id("hello"));
    }

    #[test]
    fn unknown_triples_are_dropped_and_reported() {
        let o = Ontology::from_json_str(
            r#"{"domains": {"hotel": {"area": {"mode": "value", "values": ["north"]}}}}"#,
            "t",
        )
        .unwrap();
        let mut state = DialogueState::new();
        state.set(SlotKey::new("hotel", "area"), "north");
        state.set(SlotKey::new("hotel", "stars"), "4");
        state.set(SlotKey::new("police", "name"), "x");
        let d = Dialogue {
            id: "x".into(),
            turns: vec![Turn {
                agent: String::new(),
                user: "north".into(),
                state,
            }],
        };
        let mut report = IngestReport::default();
        let d = check_dialogue(d, &o, &mut report);
        assert_eq!(d.turns[0].state.len(), 1);
        assert_eq!(report.triples_dropped_unknown_slot, 2);
    }
}
