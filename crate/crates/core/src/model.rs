//! The full tracker: parameter registry and the per-dialogue forward pass
//! with the turn-by-turn graph schedule.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_rows, Gradients, ParamSet, Tape, Tensor, Var};
use crate::corpus::{
    build_turn_examples, Dialogue, DialogueState, PreprocessReport, QuestionLabel, Role, SpanLabel, TurnExample,
    Vocab, UNK_TOKEN,
};
use crate::encoding::{ContextualEmbedder, EmbeddingConfig, Encoder, QuestionEmbedding};
use crate::error::{Error, Result};
use crate::graph::{gate_fuse_var, graph_embedding_var, node_embeddings_var, DialogueGraph, GraphParams, Propagation};
use crate::ontology::{build_questions, Ontology, Question, SlotKey, SlotMode};
use crate::reader::{
    bidirectional_attention_var, check_label, span_heads_var, state_from_predictions, value_logits_var,
    value_summary_var, LossBreakdown, QuestionPrediction, ReaderParams, DEFAULT_MAX_SPAN_LEN,
};
use crate::text::RuleLemmatizer;
use crate::trainer::word_dropout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding: EmbeddingConfig,
    pub graph: bool,
    pub propagation: Propagation,
    pub max_span_len: usize,
    /// Number of most recent turns in the context; `None` keeps all.
    pub context_window: Option<usize>,
}

impl ModelConfig {
    pub fn new(embedding: EmbeddingConfig) -> Self {
        Self {
            embedding,
            graph: true,
            propagation: Propagation::Sum,
            max_span_len: DEFAULT_MAX_SPAN_LEN,
            context_window: None,
        }
    }
}

/// Counts of graph operations, for auditing the schedule.
#[derive(Debug, Default)]
pub struct Counters {
    pub turns: AtomicUsize,
    pub graph_updates: AtomicUsize,
    pub node_embeddings: AtomicUsize,
    pub graph_attention: AtomicUsize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub turns: usize,
    pub graph_updates: usize,
    pub node_embeddings: usize,
    pub graph_attention: usize,
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            turns: self.turns.load(Ordering::Relaxed),
            graph_updates: self.graph_updates.load(Ordering::Relaxed),
            node_embeddings: self.node_embeddings.load(Ordering::Relaxed),
            graph_attention: self.graph_attention.load(Ordering::Relaxed),
        }
    }

    fn bump(c: &AtomicUsize) {
        c.fetch_add(1, Ordering::Relaxed);
    }
}

/// Training-time stochasticity.
pub struct Noise<'r> {
    pub dropout: f64,
    pub word_dropout: f64,
    pub rng: &'r mut ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Hooks {
    /// Replace the fusion gate by the constant 0.
    pub force_gate_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutput {
    /// Aligned with the model's questions; `None` for masked questions.
    pub predictions: Vec<Option<QuestionPrediction>>,
    pub state: DialogueState,
    /// Graph the turn was computed with (absent when the graph is off).
    pub graph: Option<DialogueGraph>,
    /// Node attention per value question, keyed by `domain-slot`.
    pub node_attention: BTreeMap<String, Vec<f64>>,
    pub loss: LossBreakdown,
}

pub struct DialogueRun {
    pub turns: Vec<TurnOutput>,
    /// Scalar loss node when labels were used.
    pub loss: Option<Var>,
    pub breakdown: LossBreakdown,
}

pub struct Model {
    pub config: ModelConfig,
    ontology: Ontology,
    questions: Vec<Question>,
    pub params: ParamSet,
    encoder: Encoder,
    reader: ReaderParams,
    graph: GraphParams,
    lemmatizer: RuleLemmatizer,
    /// Questions that are predicted and trained; others are masked out.
    active: Vec<bool>,
    pub counters: Counters,
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn((rows, cols), |_| if rng.gen_bool(p) { 0.0 } else { keep })
}

/// Empty contexts get one unknown user token so every encoder input has rows.
fn non_empty(ex: &TurnExample) -> Cow<'_, TurnExample> {
    if !ex.tokens.is_empty() {
        return Cow::Borrowed(ex);
    }
    let mut e = ex.clone();
    e.tokens = vec![UNK_TOKEN.to_string()];
    e.roles = vec![Role::User];
    e.exact_match = Array2::zeros((1, ex.exact_match.ncols()));
    Cow::Owned(e)
}

/// Whether every example's context is a prefix of the last one with the same
/// per-token inputs, so the forward GRU can be shared across turns.
fn is_prefix_chain(examples: &[Cow<'_, TurnExample>]) -> bool {
    let Some(last) = examples.last() else { return false };
    examples.iter().all(|ex| {
        let n = ex.tokens.len();
        n <= last.tokens.len()
            && ex.tokens[..] == last.tokens[..n]
            && ex.roles[..] == last.roles[..n]
            && ex.exact_match == last.exact_match.slice(ndarray::s![..n, ..])
    })
}

/// State from the predictions of active questions.
pub fn assemble_state(questions: &[Question], predictions: &[Option<QuestionPrediction>]) -> DialogueState {
    let (qs, ps): (Vec<Question>, Vec<QuestionPrediction>) = questions
        .iter()
        .zip(predictions)
        .filter_map(|(q, p)| p.clone().map(|p| (q.clone(), p)))
        .unzip();
    state_from_predictions(&qs, &ps)
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Option<Var> {
    let mut it = vars.iter().copied();
    let first = it.next()?;
    Some(it.fold(first, |acc, v| tape.add(acc, v)))
}

fn probs(tape: &Tape, logits: Var) -> Vec<f64> {
    softmax_rows(tape.value(logits)).row(0).to_vec()
}

impl Model {
    /// Allocate a freshly initialized model. Without `contextual` the word
    /// embeddings are a trainable table.
    pub fn new(
        config: ModelConfig,
        ontology: Ontology,
        vocab: Vocab,
        contextual: Option<Arc<dyn ContextualEmbedder>>,
        seed: u64,
    ) -> Result<Self> {
        if config.max_span_len == 0 {
            return Err(Error::Config("max span length must be positive".into()));
        }
        if let Propagation::Gated { slot_weight } = config.propagation {
            if !(0.0..=1.0).contains(&slot_weight) {
                return Err(Error::Config(format!("slot_weight {slot_weight} outside [0, 1]")));
            }
        }
        let questions = build_questions(&ontology);
        if questions.is_empty() {
            return Err(Error::Validation("ontology has no slots".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Encoder::new(
            config.embedding.clone(),
            2 * questions.len(),
            vocab,
            contextual,
            &mut params,
            &mut rng,
        )?;
        let d = config.embedding.token_dim();
        let reader = ReaderParams::new(&mut params, d, &mut rng);
        let propagation = if config.graph { config.propagation } else { Propagation::Sum };
        let graph = GraphParams::new(&mut params, propagation, d, &mut rng);
        Ok(Self {
            config,
            ontology,
            params,
            encoder,
            reader,
            graph,
            lemmatizer: RuleLemmatizer::default(),
            active: vec![true; questions.len()],
            questions,
            counters: Counters::default(),
        })
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    /// Restrict prediction and training to the listed domains (`None`
    /// activates every question).
    pub fn set_active_domains(&mut self, domains: Option<&[String]>) -> Result<()> {
        if let Some(ds) = domains {
            for d in ds {
                if !self.ontology.has_domain(d) {
                    return Err(Error::UnknownDomain(d.clone()));
                }
            }
        }
        self.active = self
            .questions
            .iter()
            .map(|q| domains.is_none_or(|ds| ds.contains(&q.domain)))
            .collect();
        Ok(())
    }

    /// Active domains, or `None` when every question is active.
    pub fn active_domains(&self) -> Option<Vec<String>> {
        if self.active.iter().all(|a| *a) {
            return None;
        }
        let mut ds: Vec<String> = self
            .questions
            .iter()
            .zip(&self.active)
            .filter(|(_, a)| **a)
            .map(|(q, _)| q.domain.clone())
            .collect();
        ds.dedup();
        Some(ds)
    }

    pub fn is_active(&self, question: usize) -> bool {
        self.active[question]
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn reader_params(&self) -> &ReaderParams {
        &self.reader
    }

    pub fn graph_params(&self) -> &GraphParams {
        &self.graph
    }

    pub fn vocab(&self) -> &Vocab {
        &self.encoder.vocab
    }

    /// Add unseen values to one value-mode question. Value embeddings come
    /// from the shared word/character layers, so no parameters change.
    pub fn extend_values(&mut self, key: &SlotKey, values: &[String]) -> Result<()> {
        let active = self.active_domains();
        self.ontology = self.ontology.with_extended_values(key, values)?;
        self.questions = build_questions(&self.ontology);
        self.set_active_domains(active.as_deref())
    }

    /// Turn examples for a dialogue against the current questions.
    pub fn prepare(&self, dialogue: &Dialogue) -> (Vec<TurnExample>, PreprocessReport) {
        build_turn_examples(dialogue, &self.questions, self.config.context_window, &self.lemmatizer)
    }

    fn encode_turns(
        &self,
        tape: &mut Tape,
        examples: &[Cow<'_, TurnExample>],
        noise: &mut Option<&mut Noise<'_>>,
    ) -> Result<Vec<Var>> {
        let in_dim = self.encoder.gru_input_dim();
        let inputs = |tape: &mut Tape, ex: &TurnExample, noise: &mut Option<&mut Noise<'_>>| -> Result<Var> {
            let (tokens, mask) = match noise.as_deref_mut() {
                Some(n) => {
                    let tokens = word_dropout(&ex.tokens, n.word_dropout, n.rng);
                    let mask = (n.dropout > 0.0).then(|| dropout_mask(n.rng, ex.tokens.len(), in_dim, n.dropout));
                    (Cow::Owned(tokens), mask)
                }
                None => (Cow::Borrowed(&ex.tokens), None),
            };
            let w_c = self.encoder.embed_context(tape, &tokens);
            self.encoder.gru_input(tape, w_c, &ex.roles, &ex.exact_match, mask.as_ref())
        };
        if self.config.context_window.is_none() && is_prefix_chain(examples) {
            let last = examples.last().expect("non-empty");
            let full = inputs(tape, last, noise)?;
            let fwd = self.encoder.run_gru(tape, full, false);
            let total = last.tokens.len();
            let mut out = Vec::with_capacity(examples.len());
            for ex in examples {
                let n = ex.tokens.len();
                let (input, fwd_t) = if n == total {
                    (full, fwd)
                } else {
                    let rows: Vec<usize> = (0..n).collect();
                    (tape.select_rows(full, rows.clone()), tape.select_rows(fwd, rows))
                };
                let bwd = self.encoder.run_gru(tape, input, true);
                out.push(tape.concat_cols(&[fwd_t, bwd]));
            }
            Ok(out)
        } else {
            examples
                .iter()
                .map(|ex| {
                    let input = inputs(tape, ex, noise)?;
                    let fwd = self.encoder.run_gru(tape, input, false);
                    let bwd = self.encoder.run_gru(tape, input, true);
                    Ok(tape.concat_cols(&[fwd, bwd]))
                })
                .collect()
        }
    }

    /// Forward pass over a whole dialogue in turn order. Each turn's graph is
    /// built from the previous turn's predicted state (never from labels).
    /// With `with_loss`, label cross-entropies are summed into one node.
    pub fn run_dialogue(
        &self,
        tape: &mut Tape,
        examples: &[TurnExample],
        mut noise: Option<&mut Noise<'_>>,
        hooks: Hooks,
        with_loss: bool,
    ) -> Result<DialogueRun> {
        let mut runs = Vec::with_capacity(examples.len());
        if examples.is_empty() {
            return Ok(DialogueRun {
                turns: runs,
                loss: None,
                breakdown: LossBreakdown::default(),
            });
        }
        let examples: Vec<Cow<'_, TurnExample>> = examples.iter().map(non_empty).collect();
        let qs = &self.questions;
        for ex in &examples {
            if ex.labels.len() != qs.len() && with_loss {
                return Err(Error::Label(format!(
                    "{} labels for {} questions",
                    ex.labels.len(),
                    qs.len()
                )));
            }
        }
        let mut cache: HashMap<String, Var> = HashMap::new();
        let q_embs: Vec<QuestionEmbedding> = qs
            .iter()
            .map(|q| self.encoder.embed_question(tape, q, &mut cache))
            .collect();
        let encodings = self.encode_turns(tape, &examples, &mut noise)?;

        let att_bidir = tape.param(self.reader.att_bidir);
        let att_value = tape.param(self.reader.att_value);
        let att_graph = tape.param(self.reader.att_graph);
        let bil_value = tape.param(self.reader.bil_value);

        let mut graph = DialogueGraph::new(qs);
        let (mut value_terms, mut type_terms, mut span_terms) = (Vec::new(), Vec::new(), Vec::new());
        let mut total = LossBreakdown::default();

        for (ex, &ctx) in examples.iter().zip(&encodings) {
            Counters::bump(&self.counters.turns);
            let g_nodes = if self.config.graph {
                Counters::bump(&self.counters.node_embeddings);
                let encoder = &self.encoder;
                let mut span_value = |t: &mut Tape, s: &str| -> Var {
                    if let Some(v) = cache.get(s) {
                        return *v;
                    }
                    let v = encoder.embed_element(t, s);
                    cache.insert(s.to_string(), v);
                    v
                };
                Some(node_embeddings_var(tape, &graph, qs, &q_embs, &self.graph, &mut span_value)?)
            } else {
                None
            };
            let mut preds = Vec::with_capacity(qs.len());
            let mut node_attention = BTreeMap::new();
            let mut turn_loss = LossBreakdown::default();
            for (i, (q, qe)) in qs.iter().zip(&q_embs).enumerate() {
                if !self.active[i] {
                    preds.push(None);
                    continue;
                }
                let label = if with_loss {
                    let l = &ex.labels[i];
                    check_label(q, l, ex.tokens.len())?;
                    Some(*l)
                } else {
                    None
                };
                match q.mode {
                    SlotMode::Value => {
                        let bi = bidirectional_attention_var(tape, ctx, qe.question, att_bidir)?;
                        let (_, u) = value_summary_var(tape, bi.ctx_attn, qe.domain_slot, att_value)?;
                        let summary = match g_nodes {
                            Some(g) => {
                                Counters::bump(&self.counters.graph_attention);
                                let (node_weights, z) = graph_embedding_var(tape, g, u, att_graph)?;
                                node_attention.insert(q.key().to_string(), tape.value(node_weights).row(0).to_vec());
                                gate_fuse_var(tape, u, z, hooks.force_gate_zero)?.1
                            }
                            None => u,
                        };
                        let logits = value_logits_var(tape, bi.cand_attn, summary, bil_value)?;
                        preds.push(Some(QuestionPrediction::from_value_probs(probs(tape, logits))));
                        if let Some(QuestionLabel::Value(target)) = label {
                            let ce = tape.cross_entropy(logits, target);
                            turn_loss.value += tape.value(ce)[[0, 0]];
                            value_terms.push(ce);
                        }
                    }
                    SlotMode::Span => {
                        let h = span_heads_var(tape, ctx, qe.domain_slot, &self.reader)?;
                        preds.push(Some(QuestionPrediction::from_span_probs(
                            probs(tape, h.type_logits),
                            probs(tape, h.start_logits),
                            probs(tape, h.end_logits),
                            &ex.tokens,
                            self.config.max_span_len,
                        )));
                        if let Some(QuestionLabel::Span(s)) = label {
                            let ce = tape.cross_entropy(h.type_logits, s.span_type().index());
                            turn_loss.span_type += tape.value(ce)[[0, 0]];
                            type_terms.push(ce);
                            if let SpanLabel::Span(Some((a, b))) = s {
                                let cs = tape.cross_entropy(h.start_logits, a);
                                let ce = tape.cross_entropy(h.end_logits, b);
                                turn_loss.span += tape.value(cs)[[0, 0]] + tape.value(ce)[[0, 0]];
                                span_terms.push(cs);
                                span_terms.push(ce);
                            }
                        }
                    }
                }
            }
            turn_loss.total = turn_loss.value + turn_loss.span_type + turn_loss.span;
            total.add(&turn_loss);
            let state = assemble_state(qs, &preds);
            let used = self.config.graph.then(|| graph.clone());
            if self.config.graph {
                Counters::bump(&self.counters.graph_updates);
                graph.update(qs, &state);
            }
            runs.push(TurnOutput {
                predictions: preds,
                state,
                graph: used,
                node_attention,
                loss: turn_loss,
            });
        }
        let loss = if with_loss {
            let mut parts = Vec::new();
            parts.extend(sum_vars(tape, &value_terms));
            parts.extend(sum_vars(tape, &type_terms));
            parts.extend(sum_vars(tape, &span_terms));
            sum_vars(tape, &parts)
        } else {
            None
        };
        Ok(DialogueRun {
            turns: runs,
            loss,
            breakdown: total,
        })
    }

    /// Gradient-free prediction over prepared examples.
    pub fn predict_examples(&self, examples: &[TurnExample], hooks: Hooks) -> Result<Vec<TurnOutput>> {
        let mut tape = Tape::new(&self.params);
        Ok(self.run_dialogue(&mut tape, examples, None, hooks, false)?.turns)
    }

    /// Per-turn cumulative states for a raw dialogue.
    pub fn predict_dialogue(&self, dialogue: &Dialogue) -> Result<Vec<DialogueState>> {
        let (examples, _) = self.prepare(dialogue);
        Ok(self
            .predict_examples(&examples, Hooks::default())?
            .into_iter()
            .map(|t| t.state)
            .collect())
    }

    /// Loss and parameter gradients for one dialogue.
    pub fn loss_and_gradients(
        &self,
        examples: &[TurnExample],
        noise: Option<&mut Noise<'_>>,
        hooks: Hooks,
        grads: &mut Gradients,
    ) -> Result<(LossBreakdown, Vec<TurnOutput>)> {
        let mut tape = Tape::new(&self.params);
        let run = self.run_dialogue(&mut tape, examples, noise, hooks, true)?;
        if let Some(loss) = run.loss {
            if run.breakdown.is_finite() {
                tape.backward(loss, grads);
            }
        }
        Ok((run.breakdown, run.turns))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticConfig};

    pub(crate) fn tiny(graph: bool, propagation: Propagation) -> (Model, Vec<Dialogue>) {
        let cfg = SyntheticConfig::two_domain(3);
        let (corpus, ontology) = generate_synthetic(&cfg, 11).unwrap();
        let mut mc = ModelConfig::new(EmbeddingConfig::desk(4, 4, 3));
        mc.graph = graph;
        mc.propagation = propagation;
        let model = Model::new(mc, ontology, corpus.vocab.clone(), None, 5).unwrap();
        (model, corpus.train)
    }

    #[test]
    fn predictions_are_distributions_and_states_follow() {
        let (model, dialogues) = tiny(true, Propagation::Sum);
        let (examples, _) = model.prepare(&dialogues[0]);
        let out = model.predict_examples(&examples, Hooks::default()).unwrap();
        assert_eq!(out.len(), dialogues[0].turns.len());
        for t in &out {
            for p in t.predictions.iter().flatten() {
                for d in p.distributions() {
                    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
            assert_eq!(t.state, assemble_state(model.questions(), &t.predictions));
        }
    }

    #[test]
    fn graph_schedule_uses_previous_prediction() {
        let (model, dialogues) = tiny(true, Propagation::Sum);
        let (examples, _) = model.prepare(&dialogues[0]);
        let out = model.predict_examples(&examples, Hooks::default()).unwrap();
        assert_eq!(out[0].graph.as_ref().unwrap(), &DialogueGraph::new(model.questions()));
        for t in 1..out.len() {
            let expected = crate::graph::update_graph(model.questions(), &out[t - 1].state);
            assert_eq!(out[t].graph.as_ref().unwrap(), &expected);
        }
    }

    #[test]
    fn graph_off_never_touches_graph_ops() {
        let (model, dialogues) = tiny(false, Propagation::Sum);
        let (examples, _) = model.prepare(&dialogues[0]);
        let mut grads = Gradients::for_params(&model.params);
        model.loss_and_gradients(&examples, None, Hooks::default(), &mut grads).unwrap();
        model.predict_examples(&examples, Hooks::default()).unwrap();
        let c = model.counters.snapshot();
        assert_eq!((c.graph_updates, c.node_embeddings, c.graph_attention), (0, 0, 0));
        assert!(c.turns > 0);
    }

    #[test]
    fn forced_zero_gate_matches_graph_free_model() {
        let (on, dialogues) = tiny(true, Propagation::Sum);
        let (off, _) = tiny(false, Propagation::Sum);
        assert_eq!(on.params.len(), off.params.len());
        let (examples, _) = on.prepare(&dialogues[1]);
        let hooks = Hooks { force_gate_zero: true };
        let a = on.predict_examples(&examples, hooks).unwrap();
        let b = off.predict_examples(&examples, Hooks::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.predictions.iter().flatten().zip(y.predictions.iter().flatten()) {
                for (u, v) in p.distributions().iter().zip(q.distributions()) {
                    assert!(u.iter().zip(v).all(|(s, t)| (s - t).abs() <= 1e-12));
                }
            }
        }
        let mut g1 = Gradients::for_params(&on.params);
        let mut g2 = Gradients::for_params(&off.params);
        let (l1, _) = on.loss_and_gradients(&examples, None, hooks, &mut g1).unwrap();
        let (l2, _) = off.loss_and_gradients(&examples, None, Hooks::default(), &mut g2).unwrap();
        assert!((l1.total - l2.total).abs() < 1e-9);
    }

    #[test]
    fn prefix_sharing_matches_per_turn_encoding() {
        let (mut model, dialogues) = tiny(true, Propagation::Sum);
        let (examples, _) = model.prepare(&dialogues[2]);
        let shared = model.predict_examples(&examples, Hooks::default()).unwrap();
        // a window larger than the dialogue gives the same contexts without sharing
        model.config.context_window = Some(100);
        let (examples, _) = model.prepare(&dialogues[2]);
        let separate = model.predict_examples(&examples, Hooks::default()).unwrap();
        for (x, y) in shared.iter().zip(&separate) {
            for (p, q) in x.predictions.iter().flatten().zip(y.predictions.iter().flatten()) {
                for (u, v) in p.distributions().iter().zip(q.distributions()) {
                    assert!(u.iter().zip(v).all(|(s, t)| (s - t).abs() <= 1e-10));
                }
            }
        }
    }

    #[test]
    fn empty_dialogue_and_empty_context() {
        let (model, _) = tiny(true, Propagation::Sum);
        let empty = Dialogue {
            id: "e".into(),
            turns: vec![],
        };
        assert!(model.predict_dialogue(&empty).unwrap().is_empty());
        let silent = Dialogue {
            id: "s".into(),
            turns: vec![crate::corpus::Turn {
                agent: String::new(),
                user: String::new(),
                state: DialogueState::new(),
            }],
        };
        assert_eq!(model.predict_dialogue(&silent).unwrap().len(), 1);
    }

    #[test]
    fn gated_propagation_adds_theta4() {
        let (sum, _) = tiny(true, Propagation::Sum);
        let (gated, dialogues) = tiny(true, Propagation::Gated { slot_weight: 0.5 });
        assert_eq!(gated.params.len(), sum.params.len() + 1);
        let (examples, _) = gated.prepare(&dialogues[0]);
        assert!(gated.predict_examples(&examples, Hooks::default()).is_ok());
    }

    #[test]
    fn masked_questions_are_skipped() {
        let (mut model, dialogues) = tiny(true, Propagation::Sum);
        model.set_active_domains(Some(&["hotel".to_string()])).unwrap();
        let (examples, _) = model.prepare(&dialogues[0]);
        let out = model.predict_examples(&examples, Hooks::default()).unwrap();
        for t in &out {
            for (q, p) in model.questions().iter().zip(&t.predictions) {
                assert_eq!(p.is_some(), q.domain == "hotel");
            }
            assert!(t.state.iter().all(|(k, _)| k.domain == "hotel"));
        }
        assert_eq!(model.active_domains(), Some(vec!["hotel".to_string()]));
        assert!(model.set_active_domains(Some(&["zoo".to_string()])).is_err());
    }
}
