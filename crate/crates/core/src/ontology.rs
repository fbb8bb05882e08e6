//! Domain ontologies, question construction and static slot relationships.
//!
//! An ontology lists domains, their slots, and for each slot either a closed
//! value list (`value` mode) or nothing (`span` mode). A [`Question`] is the
//! set form the reader consumes: domain, slot, candidate values and the two
//! special answers.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_to_string, Error, Result};
use crate::text::{normalize_value, DONT_CARE, NOT_MENTIONED};

const MULTIWOZ_ONTOLOGY: &str = include_str!("../data/multiwoz_ontology.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotMode {
    Value,
    Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSpec {
    pub mode: SlotMode,
    pub values: Vec<String>,
}

/// `(domain, slot)` identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotKey {
    pub domain: String,
    pub slot: String,
}

impl SlotKey {
    pub fn new(domain: impl Into<String>, slot: impl Into<String>) -> Self {
        Self {
            domain: domain.into(),
            slot: slot.into(),
        }
    }
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.domain, self.slot)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ontology {
    domains: IndexMap<String, IndexMap<String, SlotSpec>>,
}

/// Map that rejects duplicate keys while keeping file order.
struct StrictMap<V>(Vec<(String, V)>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for StrictMap<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct StrictVisitor<V>(std::marker::PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for StrictVisitor<V> {
            type Value = StrictMap<V>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map with unique keys")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut seen = HashSet::new();
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, V>()? {
                    if !seen.insert(k.clone()) {
                        return Err(de::Error::custom(format!("duplicate key {k:?}")));
                    }
                    out.push((k, v));
                }
                Ok(StrictMap(out))
            }
        }

        deserializer.deserialize_map(StrictVisitor(std::marker::PhantomData))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlot {
    mode: SlotMode,
    #[serde(default)]
    values: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOntology {
    domains: StrictMap<StrictMap<RawSlot>>,
}

#[derive(Serialize)]
struct OutSlot<'a> {
    mode: SlotMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<&'a [String]>,
}

impl Ontology {
    /// Build and validate from explicit parts.
    pub fn new(domains: IndexMap<String, IndexMap<String, SlotSpec>>) -> Result<Self> {
        let mut domains = domains;
        for slots in domains.values_mut() {
            for spec in slots.values_mut() {
                if spec.mode == SlotMode::Span {
                    spec.values.clear();
                }
            }
        }
        let o = Self { domains };
        o.validate()?;
        Ok(o)
    }

    pub fn from_json_str(text: &str, context: &str) -> Result<Self> {
        let raw: RawOntology = serde_json::from_str(text).map_err(|e| Error::Schema {
            context: context.to_string(),
            message: e.to_string(),
        })?;
        let mut domains = IndexMap::new();
        for (d, slots) in raw.domains.0 {
            let mut map = IndexMap::new();
            for (s, raw) in slots.0 {
                let values = match raw.mode {
                    SlotMode::Value => raw.values.unwrap_or_default(),
                    SlotMode::Span => Vec::new(),
                };
                map.insert(
                    s,
                    SlotSpec {
                        mode: raw.mode,
                        values,
                    },
                );
            }
            domains.insert(d, map);
        }
        Self::new(domains)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_str(&read_to_string(path)?, &path.display().to_string())
    }

    /// The five-domain MultiWOZ ontology shipped with the crate (30 slots,
    /// 5 time slots in span mode).
    pub fn multiwoz() -> Self {
        Self::from_json_str(MULTIWOZ_ONTOLOGY, "multiwoz_ontology.json")
            .expect("bundled ontology is valid")
    }

    pub fn to_json(&self) -> String {
        let mut domains = IndexMap::new();
        for (d, slots) in &self.domains {
            let mut m = IndexMap::new();
            for (s, spec) in slots {
                m.insert(
                    s.as_str(),
                    OutSlot {
                        mode: spec.mode,
                        values: (spec.mode == SlotMode::Value).then_some(spec.values.as_slice()),
                    },
                );
            }
            domains.insert(d.as_str(), m);
        }
        let mut root = IndexMap::new();
        root.insert("domains", domains);
        serde_json::to_string_pretty(&root).expect("ontology serializes")
    }

    /// Stable content hash used to tie checkpoints to an ontology.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    fn validate(&self) -> Result<()> {
        for (d, slots) in &self.domains {
            if d.trim().is_empty() {
                return Err(Error::Validation("empty domain name".into()));
            }
            if slots.is_empty() {
                return Err(Error::Validation(format!("domain {d:?} has no slots")));
            }
            for (s, spec) in slots {
                if s.trim().is_empty() {
                    return Err(Error::Validation(format!("empty slot name in domain {d:?}")));
                }
                if spec.mode == SlotMode::Value {
                    if spec.values.is_empty() {
                        return Err(Error::Validation(format!(
                            "slot {d}-{s} is in value mode but has no values"
                        )));
                    }
                    check_unique_values(&format!("{d}-{s}"), &spec.values, &[])?;
                }
            }
        }
        Ok(())
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domains.keys().map(String::as_str)
    }

    pub fn has_domain(&self, domain: &str) -> bool {
        self.domains.contains_key(domain)
    }

    pub fn slot(&self, domain: &str, slot: &str) -> Option<&SlotSpec> {
        self.domains.get(domain)?.get(slot)
    }

    /// All `(domain, slot)` pairs in file order.
    pub fn pairs(&self) -> Vec<SlotKey> {
        self.domains
            .iter()
            .flat_map(|(d, slots)| slots.keys().map(move |s| SlotKey::new(d, s)))
            .collect()
    }

    pub fn pair_count(&self) -> usize {
        self.domains.values().map(|s| s.len()).sum()
    }

    pub fn span_slots(&self) -> Vec<SlotKey> {
        self.pairs()
            .into_iter()
            .filter(|k| self.slot(&k.domain, &k.slot).map(|s| s.mode) == Some(SlotMode::Span))
            .collect()
    }

    /// Switch the given span slots to value mode with the supplied value
    /// lists (the configuration without span prediction).
    pub fn with_span_slots_as_values(
        &self,
        values: &IndexMap<SlotKey, Vec<String>>,
    ) -> Result<Self> {
        let mut domains = self.domains.clone();
        for (d, slots) in domains.iter_mut() {
            for (s, spec) in slots.iter_mut() {
                if spec.mode == SlotMode::Span {
                    let key = SlotKey::new(d, s);
                    spec.mode = SlotMode::Value;
                    spec.values = values.get(&key).cloned().unwrap_or_default();
                }
            }
        }
        Self::new(domains)
    }

    /// Ontology restricted to the listed domains (file order kept).
    pub fn restrict_domains(&self, keep: &[&str]) -> Result<Self> {
        let domains = self
            .domains
            .iter()
            .filter(|(d, _)| keep.contains(&d.as_str()))
            .map(|(d, s)| (d.clone(), s.clone()))
            .collect();
        Self::new(domains)
    }

    /// Copy with extra values appended to one value-mode slot.
    pub fn with_extended_values(&self, key: &SlotKey, new_values: &[String]) -> Result<Self> {
        let spec = self
            .slot(&key.domain, &key.slot)
            .ok_or_else(|| Error::Validation(format!("unknown slot {key}")))?;
        if spec.mode != SlotMode::Value {
            return Err(Error::Mode(format!("cannot extend span-mode slot {key}")));
        }
        check_unique_values(&key.to_string(), new_values, &spec.values)?;
        let mut domains = self.domains.clone();
        domains[&key.domain][&key.slot]
            .values
            .extend(new_values.iter().cloned());
        Self::new(domains)
    }

    pub fn without_domain(&self, drop: &str) -> Result<Self> {
        let keep: Vec<&str> = self.domains().filter(|d| *d != drop).collect();
        self.restrict_domains(&keep)
    }
}

fn check_unique_values(context: &str, values: &[String], existing: &[String]) -> Result<()> {
    let mut seen: HashSet<String> = existing.iter().map(|v| normalize_value(v)).collect();
    seen.insert(NOT_MENTIONED.to_string());
    seen.insert(DONT_CARE.to_string());
    for v in values {
        let n = normalize_value(v);
        if n.is_empty() {
            return Err(Error::Validation(format!("empty value in {context}")));
        }
        if !seen.insert(n) {
            return Err(Error::Validation(format!(
                "duplicate or reserved value {v:?} in {context}"
            )));
        }
    }
    Ok(())
}

/// The set-form question for one `(domain, slot)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub domain: String,
    pub slot: String,
    pub mode: SlotMode,
    /// Ordinary values in ontology order; empty in span mode.
    pub values: Vec<String>,
}

impl Question {
    pub fn key(&self) -> SlotKey {
        SlotKey::new(&self.domain, &self.slot)
    }

    /// Candidate answers: the values followed by "not mentioned" and
    /// "don't care". Span questions carry only the two specials.
    pub fn candidates(&self) -> Vec<String> {
        let mut c: Vec<String> = self.values.iter().map(|v| normalize_value(v)).collect();
        c.push(NOT_MENTIONED.to_string());
        c.push(DONT_CARE.to_string());
        c
    }

    pub fn candidate_count(&self) -> usize {
        self.values.len() + 2
    }

    pub fn not_mentioned_index(&self) -> usize {
        self.values.len()
    }

    pub fn dont_care_index(&self) -> usize {
        self.values.len() + 1
    }

    /// Index of a (canonicalized) answer among the candidates.
    pub fn candidate_index(&self, value: &str) -> Option<usize> {
        let n = normalize_value(value);
        self.candidates().iter().position(|c| *c == n)
    }

    pub fn elements(&self) -> Vec<String> {
        let mut e = vec![self.domain.clone(), self.slot.clone()];
        e.extend(self.candidates());
        e
    }
}

/// One question per `(domain, slot)` pair, in ontology order.
pub fn build_questions(ontology: &Ontology) -> Vec<Question> {
    ontology
        .domains
        .iter()
        .flat_map(|(d, slots)| {
            slots.iter().map(move |(s, spec)| Question {
                domain: d.clone(),
                slot: s.clone(),
                mode: spec.mode,
                values: spec.values.clone(),
            })
        })
        .collect()
}

/// Insert new values before the two special answers.
pub fn extend_question(question: &Question, new_values: &[String]) -> Result<Question> {
    if question.mode != SlotMode::Value {
        return Err(Error::Mode(format!(
            "cannot extend span-mode question {}",
            question.key()
        )));
    }
    check_unique_values(&question.key().to_string(), new_values, &question.values)?;
    let mut q = question.clone();
    q.values.extend(new_values.iter().cloned());
    Ok(q)
}

/// Slot relationships derivable from the ontology alone.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationshipSet {
    /// Unordered pairs with identical value sets, stored with the earlier
    /// pair (in ontology order) first.
    pub same_values: BTreeSet<(SlotKey, SlotKey)>,
    /// Ordered pairs whose first value set is a strict subset of the second.
    pub subset: BTreeSet<(SlotKey, SlotKey)>,
}

impl RelationshipSet {
    pub fn has_same_values(&self, a: &SlotKey, b: &SlotKey) -> bool {
        self.same_values.contains(&(a.clone(), b.clone()))
            || self.same_values.contains(&(b.clone(), a.clone()))
    }

    pub fn is_subset(&self, a: &SlotKey, b: &SlotKey) -> bool {
        self.subset.contains(&(a.clone(), b.clone()))
    }
}

pub fn derive_relationships(ontology: &Ontology) -> RelationshipSet {
    let sets: Vec<(SlotKey, BTreeSet<String>)> = ontology
        .pairs()
        .into_iter()
        .filter_map(|k| {
            let spec = ontology.slot(&k.domain, &k.slot)?;
            (spec.mode == SlotMode::Value)
                .then(|| (k, spec.values.iter().map(|v| normalize_value(v)).collect()))
        })
        .collect();
    let mut rel = RelationshipSet::default();
    for (i, (ka, va)) in sets.iter().enumerate() {
        for (j, (kb, vb)) in sets.iter().enumerate() {
            if i == j {
                continue;
            }
            if va == vb {
                if i < j {
                    rel.same_values.insert((ka.clone(), kb.clone()));
                }
            } else if va.is_subset(vb) {
                rel.subset.insert((ka.clone(), kb.clone()));
            }
        }
    }
    rel
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Ontology {
        Ontology::from_json_str(
            r#"{"domains": {
                "restaurant": {
                    "price range": {"mode": "value", "values": ["cheap", "moderate", "expensive"]},
                    "book day": {"mode": "value", "values": ["monday", "tuesday"]},
                    "name": {"mode": "value", "values": ["nandos", "prezzo"]}
                },
                "hotel": {
                    "book day": {"mode": "value", "values": ["Tuesday", "monday"]}
                },
                "taxi": {
                    "destination": {"mode": "value", "values": ["nandos", "prezzo", "cambridge"]},
                    "leave at": {"mode": "span"}
                }
            }}"#,
            "test",
        )
        .unwrap()
    }

    #[test]
    fn minimal_ontology() {
        let o = Ontology::from_json_str(
            r#"{"domains": {"d": {"s": {"mode": "value", "values": ["a"]}}}}"#,
            "t",
        )
        .unwrap();
        let qs = build_questions(&o);
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].values.len(), 1);
        assert_eq!(qs[0].candidate_count(), 3);
    }

    #[test]
    fn duplicate_slot_is_rejected() {
        let err = Ontology::from_json_str(
            r#"{"domains": {"hotel": {
                "name": {"mode": "value", "values": ["a"]},
                "name": {"mode": "value", "values": ["b"]}
            }}}"#,
            "dup.json",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate key \"name\""), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn empty_value_list_names_the_slot() {
        let err = Ontology::from_json_str(
            r#"{"domains": {"hotel": {"stars": {"mode": "value", "values": []}}}}"#,
            "t",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("hotel-stars")));
    }

    #[test]
    fn duplicate_values_after_normalization_are_rejected() {
        let err = Ontology::from_json_str(
            r#"{"domains": {"h": {"a": {"mode": "value", "values": ["North", " north"]}}}}"#,
            "t",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn multiwoz_shape() {
        let o = Ontology::multiwoz();
        assert_eq!(o.domains().count(), 5);
        assert_eq!(o.pair_count(), 30);
        let spans = o.span_slots();
        assert_eq!(spans.len(), 5);
        assert!(spans.contains(&SlotKey::new("restaurant", "book time")));
        assert!(spans.contains(&SlotKey::new("train", "leave at")));
    }

    #[test]
    fn questions_follow_construction_rules() {
        let o = small();
        let qs = build_questions(&o);
        assert_eq!(qs.len(), 6);
        assert_eq!(
            qs[0].elements(),
            vec![
                "restaurant",
                "price range",
                "cheap",
                "moderate",
                "expensive",
                "not mentioned",
                "don't care"
            ]
        );
        let leave = qs.iter().find(|q| q.slot == "leave at").unwrap();
        assert_eq!(
            leave.elements(),
            vec!["taxi", "leave at", "not mentioned", "don't care"]
        );
        assert!(build_questions(&Ontology::default()).is_empty());
    }

    #[test]
    fn extension_inserts_before_specials() {
        let q = build_questions(&small()).remove(0);
        let e = extend_question(&q, &["free".to_string()]).unwrap();
        assert_eq!(
            e.candidates(),
            vec!["cheap", "moderate", "expensive", "free", "not mentioned", "don't care"]
        );
        assert_eq!(extend_question(&q, &[]).unwrap(), q);
        assert!(matches!(
            extend_question(&q, &["Cheap".to_string()]),
            Err(Error::Validation(_))
        ));
        let span = build_questions(&small()).pop().unwrap();
        assert!(matches!(
            extend_question(&span, &["x".to_string()]),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn relationships() {
        let o = small();
        let rel = derive_relationships(&o);
        let rbd = SlotKey::new("restaurant", "book day");
        let hbd = SlotKey::new("hotel", "book day");
        let rn = SlotKey::new("restaurant", "name");
        let td = SlotKey::new("taxi", "destination");
        let rp = SlotKey::new("restaurant", "price range");
        assert!(rel.has_same_values(&rbd, &hbd));
        assert!(rel.has_same_values(&hbd, &rbd));
        assert!(rel.is_subset(&rn, &td));
        assert!(!rel.is_subset(&td, &rn));
        assert!(!rel.has_same_values(&rp, &rn) && !rel.is_subset(&rp, &rn));
        assert!(!rel.is_subset(&rbd, &hbd));
    }

    #[test]
    fn multiwoz_relationships_match_known_examples() {
        let o = Ontology::multiwoz();
        let rel = derive_relationships(&o);
        assert!(rel.has_same_values(
            &SlotKey::new("restaurant", "book day"),
            &SlotKey::new("hotel", "book day")
        ));
        for src in [("restaurant", "name"), ("hotel", "name"), ("attraction", "name")] {
            assert!(rel.is_subset(
                &SlotKey::new(src.0, src.1),
                &SlotKey::new("taxi", "destination")
            ));
        }
    }

    #[test]
    fn json_round_trip_preserves_order_and_hash() {
        let o = small();
        let back = Ontology::from_json_str(&o.to_json(), "rt").unwrap();
        assert_eq!(back, o);
        assert_eq!(back.hash(), o.hash());
    }
}
