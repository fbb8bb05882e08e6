//! Dynamic knowledge graph over (domain, slot) nodes whose value links follow
//! the model's own predictions, plus graph attention and the fusion gate.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::corpus::DialogueState;
use crate::encoding::QuestionEmbedding;
use crate::error::{Error, Result};
use crate::ontology::{Question, SlotKey, SlotMode};
use crate::reader::att_var;
use crate::text::{normalize_value, DONT_CARE, NOT_MENTIONED};

/// How a linked value node's embedding reaches its (domain, slot) node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Propagation {
    /// `domain_emb + slot_emb + value_emb[v]`.
    #[default]
    Sum,
    /// `slot_weight (domain_emb + slot_emb) + (1 - slot_weight) sigmoid(value_emb[v] node_proj^T)`.
    Gated { slot_weight: f64 },
}

/// Value node linked to one (domain, slot) node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeLink {
    NotMentioned,
    /// A candidate value (or "don't care"), or a decoded span string.
    Value(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueGraph {
    pairs: Vec<SlotKey>,
    links: Vec<NodeLink>,
}

impl DialogueGraph {
    /// Every pair linked to the special "not mentioned" node.
    pub fn new(questions: &[Question]) -> Self {
        Self {
            pairs: questions.iter().map(Question::key).collect(),
            links: vec![NodeLink::NotMentioned; questions.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[SlotKey] {
        &self.pairs
    }

    pub fn links(&self) -> &[NodeLink] {
        &self.links
    }

    pub fn link(&self, key: &SlotKey) -> Option<&NodeLink> {
        self.pairs.iter().position(|k| k == key).map(|i| &self.links[i])
    }

    /// Relink every pair from a predicted state. Value-mode pairs link only to
    /// their candidates; span-mode pairs link to the predicted string.
    pub fn update(&mut self, questions: &[Question], predicted: &DialogueState) {
        for (i, q) in questions.iter().enumerate() {
            let value = normalize_value(predicted.value_or_not_mentioned(&q.key()));
            self.links[i] = if value == NOT_MENTIONED {
                NodeLink::NotMentioned
            } else {
                match q.mode {
                    SlotMode::Value if q.candidate_index(&value).is_none() => NodeLink::NotMentioned,
                    _ => NodeLink::Value(value),
                }
            };
        }
    }

    pub fn dump(&self, attention: Option<&BTreeMap<String, Vec<f64>>>) -> GraphDump {
        GraphDump {
            links: self
                .pairs
                .iter()
                .zip(&self.links)
                .map(|(k, l)| {
                    let v = match l {
                        NodeLink::NotMentioned => NOT_MENTIONED.to_string(),
                        NodeLink::Value(v) => v.clone(),
                    };
                    (k.to_string(), v)
                })
                .collect(),
            attention: attention.cloned().unwrap_or_default(),
        }
    }
}

/// Debug view of a graph: links per pair and node attention per question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub links: BTreeMap<String, String>,
    pub attention: BTreeMap<String, Vec<f64>>,
}

/// Functional form of [`DialogueGraph::update`] starting from a fresh graph.
pub fn update_graph(questions: &[Question], predicted: &DialogueState) -> DialogueGraph {
    let mut g = DialogueGraph::new(questions);
    g.update(questions, predicted);
    g
}

#[derive(Debug, Clone, Copy)]
pub struct GraphParams {
    pub propagation: Propagation,
    /// Present only for gated propagation.
    pub node_proj: Option<ParamId>,
}

impl GraphParams {
    pub fn new(params: &mut ParamSet, propagation: Propagation, d: usize, rng: &mut impl rand::Rng) -> Self {
        let node_proj = match propagation {
            Propagation::Sum => None,
            Propagation::Gated { .. } => Some(params.add("graph.node_proj", crate::encoding::fan_in(rng, d, d, d))),
        };
        Self { propagation, node_proj }
    }
}

/// Embedding of the value node linked to question `q`. `span_value` embeds a
/// free-form span string.
fn value_node(
    tape: &mut Tape,
    q: &Question,
    emb: &QuestionEmbedding,
    link: &NodeLink,
    span_value: &mut dyn FnMut(&mut Tape, &str) -> Var,
) -> Var {
    let row = match link {
        NodeLink::NotMentioned => q.not_mentioned_index(),
        NodeLink::Value(v) if v == DONT_CARE => q.dont_care_index(),
        NodeLink::Value(v) => match q.candidate_index(v) {
            Some(i) => i,
            None => return span_value(tape, v),
        },
    };
    tape.row(emb.values, row)
}

/// `G`, one row per (domain, slot) node.
pub fn node_embeddings_var(
    tape: &mut Tape,
    graph: &DialogueGraph,
    questions: &[Question],
    embeddings: &[QuestionEmbedding],
    params: &GraphParams,
    span_value: &mut dyn FnMut(&mut Tape, &str) -> Var,
) -> Result<Var> {
    if graph.len() != questions.len() || embeddings.len() != questions.len() {
        return Err(Error::shape(format!(
            "graph has {} nodes, {} questions, {} embeddings",
            graph.len(),
            questions.len(),
            embeddings.len()
        )));
    }
    let mut value_rows = Vec::with_capacity(questions.len());
    let mut ds_rows = Vec::with_capacity(questions.len());
    for ((q, emb), link) in questions.iter().zip(embeddings).zip(graph.links()) {
        value_rows.push(value_node(tape, q, emb, link, span_value));
        ds_rows.push(emb.domain_slot);
    }
    let values = tape.concat_rows(&value_rows);
    let ds = tape.concat_rows(&ds_rows);
    Ok(match (params.propagation, params.node_proj) {
        (Propagation::Gated { slot_weight }, Some(node_proj)) => {
            let t4 = tape.param(node_proj);
            let t4t = tape.transpose(t4);
            let proj = tape.matmul(values, t4t);
            let squashed = tape.sigmoid(proj);
            let a = tape.scale(ds, slot_weight);
            let b = tape.scale(squashed, 1.0 - slot_weight);
            tape.add(a, b)
        }
        (Propagation::Gated { .. }, None) => {
            return Err(Error::Config("gated propagation requires node_proj".into()))
        }
        (Propagation::Sum, _) => tape.add(ds, values),
    })
}

/// `node_weights = att(G, u, att_graph)` and `z = node_weights G`.
pub fn graph_embedding_var(tape: &mut Tape, g: Var, u: Var, att_graph: Var) -> Result<(Var, Var)> {
    let weights = att_var(tape, g, u, att_graph)?;
    let z = tape.matmul(weights, g);
    Ok((weights, z))
}

/// `gate = sigmoid(u + z)`, fused `= (1 - gate) u + gate z`. With
/// `force_zero` the gate is the constant 0 and the output is exactly `u`.
pub fn gate_fuse_var(tape: &mut Tape, u: Var, z: Var, force_zero: bool) -> Result<(Var, Var)> {
    if tape.shape(u) != tape.shape(z) {
        return Err(Error::shape(format!(
            "gate inputs differ: {:?} vs {:?}",
            tape.shape(u),
            tape.shape(z)
        )));
    }
    let gate = if force_zero {
        tape.constant(Tensor::zeros(tape.shape(u)))
    } else {
        let s = tape.add(u, z);
        tape.sigmoid(s)
    };
    let diff = tape.sub(z, u);
    let gd = tape.mul(gate, diff);
    Ok((gate, tape.add(u, gd)))
}

fn row(v: &Array1<f64>) -> Tensor {
    v.clone().insert_axis(Axis(0))
}

/// Node embeddings on plain arrays. `domain_slot[i]` is `domain_emb + slot_emb` and
/// `linked[i]` the linked value embedding for node `i`.
pub fn node_embeddings(
    domain_slot: &Array2<f64>,
    linked: &Array2<f64>,
    propagation: Propagation,
    node_proj: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    if domain_slot.dim() != linked.dim() {
        return Err(Error::shape("node inputs differ in shape"));
    }
    Ok(match propagation {
        Propagation::Sum => domain_slot + linked,
        Propagation::Gated { slot_weight } => {
            let t4 = node_proj.ok_or_else(|| Error::Config("gated propagation requires node_proj".into()))?;
            let proj = linked.dot(&t4.t()).mapv(|x| 1.0 / (1.0 + (-x).exp()));
            domain_slot * slot_weight + proj * (1.0 - slot_weight)
        }
    })
}

/// `(node_weights, z)` on plain arrays.
pub fn graph_embedding(g: &Array2<f64>, u: &Array1<f64>, att_graph: &Array1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    let params = ParamSet::new();
    let mut t = Tape::new(&params);
    let (gv, uv, bv) = (t.constant(g.clone()), t.constant(row(u)), t.constant(row(att_graph)));
    let (a, z) = graph_embedding_var(&mut t, gv, uv, bv)?;
    Ok((t.value(a).row(0).to_owned(), t.value(z).row(0).to_owned()))
}

/// `(gate, fused)` on plain arrays.
pub fn gate_fuse(u: &Array1<f64>, z: &Array1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    let params = ParamSet::new();
    let mut t = Tape::new(&params);
    let (uv, zv) = (t.constant(row(u)), t.constant(row(z)));
    let (g, f) = gate_fuse_var(&mut t, uv, zv, false)?;
    Ok((t.value(g).row(0).to_owned(), t.value(f).row(0).to_owned()))
}
