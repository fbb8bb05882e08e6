//! Per-turn training examples: context tokens, role tags, exact-match
//! features and per-question labels.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dialogue, DialogueState};
use crate::ontology::{build_questions, Ontology, Question, SlotMode};
use crate::text::{canonical_value, tokenize, Lemmatizer, DONT_CARE, NOT_MENTIONED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Agent,
    User,
}

impl Role {
    pub fn index(self) -> usize {
        match self {
            Role::Agent => 0,
            Role::User => 1,
        }
    }
}

/// Answer type of a span-mode question, in classifier output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpanType {
    NotMentioned = 0,
    DontCare = 1,
    Span = 2,
}

impl SpanType {
    pub const ALL: [SpanType; 3] = [SpanType::NotMentioned, SpanType::DontCare, SpanType::Span];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpanLabel {
    NotMentioned,
    DontCare,
    /// A span answer; indices are absent when the value was not found in the
    /// context (such questions only contribute to the type loss).
    Span(Option<(usize, usize)>),
}

impl SpanLabel {
    pub fn span_type(self) -> SpanType {
        match self {
            SpanLabel::NotMentioned => SpanType::NotMentioned,
            SpanLabel::DontCare => SpanType::DontCare,
            SpanLabel::Span(_) => SpanType::Span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuestionLabel {
    /// Index into the question's candidate list.
    Value(usize),
    Span(SpanLabel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnExample {
    pub turn_index: usize,
    pub tokens: Vec<String>,
    pub roles: Vec<Role>,
    /// `tokens.len() x 2P` binary matrix; columns `2p` and `2p+1` hold the
    /// original-form and lemmatized-form matches for question `p`.
    pub exact_match: Array2<u8>,
    pub labels: Vec<QuestionLabel>,
    pub gold_state: DialogueState,
}

/// Counts collected while building labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub turns: usize,
    pub span_labels: usize,
    pub span_label_misses: usize,
    pub value_label_misses: usize,
}

impl PreprocessReport {
    pub fn merge(&mut self, other: &PreprocessReport) {
        self.turns += other.turns;
        self.span_labels += other.span_labels;
        self.span_label_misses += other.span_label_misses;
        self.value_label_misses += other.value_label_misses;
    }
}

/// Start positions of every occurrence of `needle` in `hay`.
fn occurrences(hay: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| hay[i..i + needle.len()] == *needle)
        .collect()
}

/// Token indices of the last occurrence of `value` in `tokens`.
pub fn build_span_label(tokens: &[String], value: &str) -> Option<(usize, usize)> {
    let needle = tokenize(value);
    occurrences(tokens, &needle)
        .last()
        .map(|&start| (start, start + needle.len() - 1))
}

/// Binary features marking tokens inside an occurrence of any value of each
/// question, in original and lemmatized form.
pub fn exact_match_features(
    tokens: &[String],
    questions: &[Question],
    lemmatizer: &dyn Lemmatizer,
) -> Array2<u8> {
    let lemmas = lemmatizer.lemmatize(tokens);
    let mut feats = Array2::zeros((tokens.len(), 2 * questions.len()));
    let mut first_pos: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut first_lemma_pos: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, (t, l)) in tokens.iter().zip(&lemmas).enumerate() {
        first_pos.entry(t.as_str()).or_default().push(i);
        first_lemma_pos.entry(l.as_str()).or_default().push(i);
    }
    let mark = |feats: &mut Array2<u8>,
                hay: &[String],
                index: &HashMap<&str, Vec<usize>>,
                needle: &[String],
                col: usize| {
        let Some(first) = needle.first() else { return };
        let Some(starts) = index.get(first.as_str()) else { return };
        for &s in starts {
            if s + needle.len() <= hay.len() && hay[s..s + needle.len()] == *needle {
                for i in s..s + needle.len() {
                    feats[[i, col]] = 1;
                }
            }
        }
    };
    for (p, q) in questions.iter().enumerate() {
        if q.mode != SlotMode::Value {
            continue;
        }
        for v in &q.values {
            let vt = tokenize(v);
            mark(&mut feats, tokens, &first_pos, &vt, 2 * p);
            let vl = lemmatizer.lemmatize(&vt);
            mark(&mut feats, &lemmas, &first_lemma_pos, &vl, 2 * p + 1);
        }
    }
    feats
}

pub fn exact_match_features_for_ontology(
    tokens: &[String],
    ontology: &Ontology,
    lemmatizer: &dyn Lemmatizer,
) -> Array2<u8> {
    exact_match_features(tokens, &build_questions(ontology), lemmatizer)
}

/// Turns included in the context of turn `t` given an optional window.
pub fn context_turn_range(t: usize, context_window: Option<usize>) -> std::ops::Range<usize> {
    let start = match context_window {
        Some(w) if w > 0 => (t + 1).saturating_sub(w),
        _ => 0,
    };
    start..t + 1
}

fn label_for(question: &Question, state: &DialogueState, tokens: &[String], report: &mut PreprocessReport) -> QuestionLabel {
    let value = canonical_value(state.value_or_not_mentioned(&question.key()));
    match question.mode {
        SlotMode::Value => match question.candidate_index(&value) {
            Some(i) => QuestionLabel::Value(i),
            None => {
                report.value_label_misses += 1;
                QuestionLabel::Value(question.not_mentioned_index())
            }
        },
        SlotMode::Span => QuestionLabel::Span(if value == NOT_MENTIONED {
            SpanLabel::NotMentioned
        } else if value == DONT_CARE {
            SpanLabel::DontCare
        } else {
            report.span_labels += 1;
            let found = build_span_label(tokens, &value);
            if found.is_none() {
                report.span_label_misses += 1;
            }
            SpanLabel::Span(found)
        }),
    }
}

/// One example per turn with the cumulative (or windowed) context.
pub fn build_turn_examples(
    dialogue: &Dialogue,
    questions: &[Question],
    context_window: Option<usize>,
    lemmatizer: &dyn Lemmatizer,
) -> (Vec<TurnExample>, PreprocessReport) {
    let mut report = PreprocessReport::default();
    let per_turn: Vec<(Vec<String>, Vec<String>)> = dialogue
        .turns
        .iter()
        .map(|t| (tokenize(&t.agent), tokenize(&t.user)))
        .collect();
    let mut out = Vec::with_capacity(dialogue.turns.len());
    for (t, turn) in dialogue.turns.iter().enumerate() {
        let mut tokens = Vec::new();
        let mut roles = Vec::new();
        for (agent, user) in &per_turn[context_turn_range(t, context_window)] {
            tokens.extend(agent.iter().cloned());
            roles.extend(std::iter::repeat_n(Role::Agent, agent.len()));
            tokens.extend(user.iter().cloned());
            roles.extend(std::iter::repeat_n(Role::User, user.len()));
        }
        let exact_match = exact_match_features(&tokens, questions, lemmatizer);
        let labels = questions
            .iter()
            .map(|q| label_for(q, &turn.state, &tokens, &mut report))
            .collect();
        report.turns += 1;
        out.push(TurnExample {
            turn_index: t,
            tokens,
            roles,
            exact_match,
            labels,
            gold_state: turn.state.clone(),
        });
    }
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Turn;
    use crate::ontology::SlotKey;
    use crate::text::RuleLemmatizer;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn ontology() -> Ontology {
        Ontology::from_json_str(
            r#"{"domains": {
                "restaurant": {
                    "price range": {"mode": "value", "values": ["cheap", "moderately priced"]},
                    "book time": {"mode": "span"}
                }
            }}"#,
            "t",
        )
        .unwrap()
    }

    #[test]
    fn span_label_uses_last_occurrence() {
        let t = toks("leave at 08:15 and arrive by 08:15");
        // brute-force oracle: the maximal index whose token equals the value
        let expected = t.iter().rposition(|x| x == "08:15").unwrap();
        assert_eq!(expected, 6);
        assert_eq!(build_span_label(&t, "08:15"), Some((6, 6)));
        assert_eq!(build_span_label(&t, "09:00"), None);
        let t = toks("a taxi to palo alto please");
        assert_eq!(build_span_label(&t, "Palo Alto"), Some((3, 4)));
    }

    #[test]
    fn exact_match_marks_value_occurrences() {
        let o = ontology();
        let l = RuleLemmatizer::default();
        let f = exact_match_features_for_ontology(&toks("cheap food"), &o, &l);
        assert_eq!(f.dim(), (2, 4));
        assert_eq!(f[[0, 0]], 1);
        assert_eq!(f[[1, 0]], 0);
        // span question columns are zero
        assert!(f.column(2).iter().chain(f.column(3).iter()).all(|&x| x == 0));

        let f = exact_match_features_for_ontology(&toks("something moderate price please"), &o, &l);
        assert_eq!(f.column(0).to_vec(), vec![0, 0, 0, 0]);
        assert_eq!(f.column(1).to_vec(), vec![0, 1, 1, 0]);
    }

    fn dialogue() -> Dialogue {
        let mut s1 = DialogueState::new();
        s1.set(SlotKey::new("restaurant", "price range"), "cheap");
        let mut s2 = s1.clone();
        s2.set(SlotKey::new("restaurant", "book time"), "18:30");
        let mut s3 = s2.clone();
        s3.set(SlotKey::new("restaurant", "book time"), "dontcare");
        Dialogue {
            id: "d".into(),
            turns: vec![
                Turn { agent: "".into(), user: "a cheap place".into(), state: s1 },
                Turn { agent: "what time ?".into(), user: "at 18:30".into(), state: s2 },
                Turn { agent: "booked at 19:00".into(), user: "any time is fine".into(), state: s3 },
            ],
        }
    }

    #[test]
    fn examples_grow_and_carry_labels() {
        let o = ontology();
        let qs = build_questions(&o);
        let (ex, report) = build_turn_examples(&dialogue(), &qs, None, &RuleLemmatizer::default());
        assert_eq!(ex.len(), 3);
        assert!(ex.windows(2).all(|w| w[0].tokens.len() <= w[1].tokens.len()));
        assert_eq!(ex[0].tokens, toks("a cheap place"));
        assert!(ex[0].roles.iter().all(|r| *r == Role::User));
        assert_eq!(ex[0].labels[0], QuestionLabel::Value(0));
        assert_eq!(ex[0].labels[1], QuestionLabel::Span(SpanLabel::NotMentioned));
        assert_eq!(ex[1].labels[1], QuestionLabel::Span(SpanLabel::Span(Some((7, 7)))));
        assert_eq!(ex[2].labels[1], QuestionLabel::Span(SpanLabel::DontCare));
        assert_eq!(report.span_labels, 1);
        assert_eq!(report.span_label_misses, 0);
        for e in &ex {
            assert_eq!(e.roles.len(), e.tokens.len());
            assert_eq!(e.exact_match.nrows(), e.tokens.len());
        }
    }

    #[test]
    fn context_window_limits_turns() {
        let o = ontology();
        let qs = build_questions(&o);
        let (ex, _) = build_turn_examples(&dialogue(), &qs, Some(1), &RuleLemmatizer::default());
        assert_eq!(ex[2].tokens, toks("booked at 19:00 any time is fine"));
        assert_eq!(ex[1].roles.iter().filter(|r| **r == Role::Agent).count(), 3);
    }

    #[test]
    fn missing_span_value_is_recorded() {
        let o = ontology();
        let qs = build_questions(&o);
        let mut d = dialogue();
        d.turns[1].user = "sometime in the evening".into();
        let (ex, report) = build_turn_examples(&d, &qs, None, &RuleLemmatizer::default());
        assert_eq!(ex[1].labels[1], QuestionLabel::Span(SpanLabel::Span(None)));
        assert_eq!(report.span_label_misses, 1);
    }
}
