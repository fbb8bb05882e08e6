//! Deterministic template-based dialogue generator for desk-scale runs.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Dialogue, DialogueState, Turn};
use crate::error::{Error, Result};
use crate::ontology::{Ontology, SlotKey, SlotMode, SlotSpec};
use crate::text::DONT_CARE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SynthSlotKind {
    Value { values: Vec<String> },
    /// Clock-time values answered by span prediction.
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSlot {
    pub name: String,
    #[serde(flatten)]
    pub kind: SynthSlotKind,
    /// User phrasings; `{v}` is replaced by the value.
    pub templates: Vec<String>,
    pub dontcare_templates: Vec<String>,
    /// Agent question asking for this slot.
    pub request: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDomain {
    pub name: String,
    /// Phrases naming the domain, e.g. "a restaurant".
    pub mentions: Vec<String>,
    pub slots: Vec<SynthSlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub domains: Vec<SynthDomain>,
    /// Training dialogues.
    pub dialogues: usize,
    #[serde(default)]
    pub dev_dialogues: usize,
    #[serde(default)]
    pub test_dialogues: usize,
    /// Probability that a dialogue covers two domains.
    pub multi_domain_prob: f64,
    pub dontcare_prob: f64,
    /// Probability of a chit-chat turn that informs nothing.
    pub null_turn_prob: f64,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn area_slot(domain: &str) -> SynthSlot {
    SynthSlot {
        name: "area".into(),
        kind: SynthSlotKind::Value {
            values: strings(&["centre", "north", "south", "east", "west"]),
        },
        templates: strings(&[
            "it should be in the {v}",
            "somewhere in the {v} please",
            "the {v} would be good",
            "i prefer the {v} of town",
        ]),
        dontcare_templates: strings(&["any area is fine", "i do not mind the area"]),
        request: format!("which area would you like the {domain} to be in ?"),
    }
}

impl SyntheticConfig {
    /// Two domains and four slots: restaurant (food, area, book time as a
    /// span slot) and hotel (area).
    pub fn two_domain(dialogues: usize) -> Self {
        let food = SynthSlot {
            name: "food".into(),
            kind: SynthSlotKind::Value {
                values: strings(&[
                    "british", "chinese", "french", "indian", "italian", "japanese", "korean",
                    "mexican", "spanish", "thai", "turkish", "lebanese",
                ]),
            },
            templates: strings(&[
                "i would like {v} food",
                "they should serve {v} food",
                "how about {v} food",
                "i am in the mood for {v}",
            ]),
            dontcare_templates: strings(&["i do not mind what food", "any kind of food is fine"]),
            request: "what type of food would you like ?".into(),
        };
        let time = SynthSlot {
            name: "book time".into(),
            kind: SynthSlotKind::Time,
            templates: strings(&[
                "book a table at {v}",
                "we will arrive at {v}",
                "make it for {v} please",
            ]),
            dontcare_templates: strings(&["the time does not matter"]),
            request: "what time should i book the table for ?".into(),
        };
        Self {
            domains: vec![
                SynthDomain {
                    name: "restaurant".into(),
                    mentions: strings(&["a restaurant", "somewhere to eat", "a place to dine"]),
                    slots: vec![food, area_slot("restaurant"), time],
                },
                SynthDomain {
                    name: "hotel".into(),
                    mentions: strings(&["a hotel", "a place to stay", "somewhere to sleep"]),
                    slots: vec![area_slot("hotel")],
                },
            ],
            dialogues,
            dev_dialogues: 0,
            test_dialogues: 0,
            multi_domain_prob: 0.4,
            dontcare_prob: 0.1,
            null_turn_prob: 0.1,
        }
    }

    pub fn with_splits(mut self, dev: usize, test: usize) -> Self {
        self.dev_dialogues = dev;
        self.test_dialogues = test;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Validation("synthetic config needs at least one domain".into()));
        }
        for d in &self.domains {
            if d.slots.is_empty() || d.mentions.is_empty() {
                return Err(Error::Validation(format!(
                    "synthetic domain {:?} needs slots and mentions",
                    d.name
                )));
            }
            for s in &d.slots {
                if s.templates.is_empty() || s.templates.iter().any(|t| !t.contains("{v}")) {
                    return Err(Error::Validation(format!(
                        "slot {}-{} templates must all contain {{v}}",
                        d.name, s.name
                    )));
                }
                if s.dontcare_templates.is_empty() {
                    return Err(Error::Validation(format!(
                        "slot {}-{} needs a don't-care template",
                        d.name, s.name
                    )));
                }
                if let SynthSlotKind::Value { values } = &s.kind {
                    if values.len() < 2 {
                        return Err(Error::Validation(format!(
                            "slot {}-{} needs at least two values",
                            d.name, s.name
                        )));
                    }
                }
            }
        }
        for p in [self.multi_domain_prob, self.dontcare_prob, self.null_turn_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn ontology(&self) -> Result<Ontology> {
        let mut domains = IndexMap::new();
        for d in &self.domains {
            let mut slots = IndexMap::new();
            for s in &d.slots {
                let spec = match &s.kind {
                    SynthSlotKind::Value { values } => SlotSpec {
                        mode: SlotMode::Value,
                        values: values.clone(),
                    },
                    SynthSlotKind::Time => SlotSpec {
                        mode: SlotMode::Span,
                        values: Vec::new(),
                    },
                };
                slots.insert(s.name.clone(), spec);
            }
            domains.insert(d.name.clone(), slots);
        }
        Ontology::new(domains)
    }
}

const CHITCHAT_USER: &[&str] = &["hello there", "thanks , that sounds good", "okay great"];
const CHITCHAT_AGENT: &[&str] = &["how can i help ?", "anything else ?", "sure ."];

fn random_time(rng: &mut ChaCha8Rng) -> String {
    let hour = rng.gen_range(8..22);
    let minute = [0, 15, 30, 45][rng.gen_range(0..4)];
    format!("{hour:02}:{minute:02}")
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &'a [String]) -> &'a str {
    &xs[rng.gen_range(0..xs.len())]
}

fn generate_dialogue(config: &SyntheticConfig, rng: &mut ChaCha8Rng, id: String) -> Dialogue {
    let mut domain_ids: Vec<usize> = (0..config.domains.len()).collect();
    domain_ids.shuffle(rng);
    let n_domains = if config.domains.len() > 1 && rng.gen_bool(config.multi_domain_prob) {
        2
    } else {
        1
    };
    let mut state = DialogueState::new();
    let mut turns = Vec::new();
    let mut agent = String::new();

    let mut push_turn = |agent: &mut String, user: String, state: &DialogueState, next_agent: String| {
        turns.push(Turn {
            agent: std::mem::take(agent),
            user,
            state: state.clone(),
        });
        *agent = next_agent;
    };

    for &di in domain_ids.iter().take(n_domains) {
        let domain = &config.domains[di];
        let mut slot_ids: Vec<usize> = (0..domain.slots.len()).collect();
        slot_ids.shuffle(rng);
        let n_slots = rng.gen_range(1..=slot_ids.len());
        let mention = pick(rng, &domain.mentions).to_string();
        let mut opener = format!("i am looking for {mention}");

        for (k, &si) in slot_ids.iter().take(n_slots).enumerate() {
            let slot = &domain.slots[si];
            let key = SlotKey::new(&domain.name, &slot.name);
            let dontcare = rng.gen_bool(config.dontcare_prob);
            let (phrase, value) = if dontcare {
                (pick(rng, &slot.dontcare_templates).to_string(), DONT_CARE.to_string())
            } else {
                let v = match &slot.kind {
                    SynthSlotKind::Value { values } => pick(rng, values).to_string(),
                    SynthSlotKind::Time => random_time(rng),
                };
                (pick(rng, &slot.templates).replace("{v}", &v), v)
            };
            state.set(key, &value);
            let user = if k == 0 {
                format!("{opener} . {phrase}")
            } else {
                phrase
            };
            opener.clear();
            let next = slot_ids
                .get(k + 1)
                .filter(|_| k + 1 < n_slots)
                .map(|&n| domain.slots[n].request.clone())
                .unwrap_or_else(|| "is there anything else ?".to_string());
            push_turn(&mut agent, user, &state, next);
            if rng.gen_bool(config.null_turn_prob) {
                let user = CHITCHAT_USER[rng.gen_range(0..CHITCHAT_USER.len())].to_string();
                let next = CHITCHAT_AGENT[rng.gen_range(0..CHITCHAT_AGENT.len())].to_string();
                push_turn(&mut agent, user, &state, next);
            }
        }
    }
    push_turn(&mut agent, "no , that is all . thank you".to_string(), &state, String::new());
    Dialogue { id, turns }
}

/// Generate a corpus and its ontology; identical seeds give identical output.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<(Corpus, Ontology)> {
    config.validate()?;
    let ontology = config.ontology()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |n: usize, prefix: &str| -> Vec<Dialogue> {
        (0..n)
            .map(|i| generate_dialogue(config, &mut rng, format!("syn-{seed}-{prefix}{i:04}")))
            .collect()
    };
    let train = make(config.dialogues, "tr");
    let dev = make(config.dev_dialogues, "dv");
    let test = make(config.test_dialogues, "te");
    Ok((Corpus::new(train, dev, test, &ontology), ontology))
}
