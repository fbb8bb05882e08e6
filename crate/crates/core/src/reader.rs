//! Question-answering core: attention and bilinear primitives,
//! bidirectional question/context attention, value scoring, span-type and
//! span-boundary heads, decoding and the loss.
//!
//! Probability vectors are `1 x m` rows. The `*_var` functions build graph
//! nodes on a [`Tape`]; the plain functions evaluate the same code on
//! constants and return values.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::corpus::{DialogueState, QuestionLabel, SpanLabel, SpanType};
use crate::encoding::fan_in;
use crate::error::{Error, Result};
use crate::ontology::{Question, SlotMode};
use crate::text::{normalize_value, DONT_CARE, NOT_MENTIONED};

/// Default upper bound on decoded span length in tokens.
pub const DEFAULT_MAX_SPAN_LEN: usize = 10;

#[derive(Debug, Clone, Copy)]
pub struct ReaderParams {
    /// Shared by both directions of the bidirectional attention.
    pub att_bidir: ParamId,
    pub att_value: ParamId,
    pub att_span: ParamId,
    pub att_graph: ParamId,
    pub bil_value: ParamId,
    pub bil_start: ParamId,
    pub bil_end: ParamId,
    /// `3 x d`.
    pub type_proj: ParamId,
    pub start_proj: ParamId,
    pub end_proj: ParamId,
}

impl ReaderParams {
    pub fn new(params: &mut ParamSet, d: usize, rng: &mut impl Rng) -> Self {
        let mut weights = |params: &mut ParamSet, name: &str| params.add(name, fan_in(rng, 1, 3 * d, 3 * d));
        let att_bidir = weights(params, "reader.att_bidir");
        let att_value = weights(params, "reader.att_value");
        let att_span = weights(params, "reader.att_span");
        let att_graph = weights(params, "reader.att_graph");
        let mut square = |params: &mut ParamSet, name: &str| params.add(name, fan_in(rng, d, d, d));
        let bil_value = square(params, "reader.bil_value");
        let bil_start = square(params, "reader.bil_start");
        let bil_end = square(params, "reader.bil_end");
        let start_proj = square(params, "reader.start_proj");
        let end_proj = square(params, "reader.end_proj");
        let type_proj = params.add("reader.type_proj", fan_in(rng, 3, d, d));
        Self {
            att_bidir,
            att_value,
            att_span,
            att_graph,
            bil_value,
            bil_start,
            bil_end,
            type_proj,
            start_proj,
            end_proj,
        }
    }
}

fn expect_row(tape: &Tape, v: Var, width: usize, what: &str) -> Result<()> {
    let shape = tape.shape(v);
    if shape != (1, width) {
        return Err(Error::shape(format!("{what}: expected 1 x {width}, got {shape:?}")));
    }
    Ok(())
}

fn expect_cols(tape: &Tape, v: Var, width: usize, what: &str) -> Result<usize> {
    let (rows, cols) = tape.shape(v);
    if cols != width || rows == 0 {
        return Err(Error::shape(format!(
            "{what}: expected non-empty m x {width}, got {rows} x {cols}"
        )));
    }
    Ok(rows)
}

fn split_weights(tape: &mut Tape, weights: Var, n: usize) -> (Var, Var, Var) {
    (
        tape.slice_cols(weights, 0, n),
        tape.slice_cols(weights, n, 2 * n),
        tape.slice_cols(weights, 2 * n, 3 * n),
    )
}

/// Attention scores `score_i = [K_i ; q ; K_i * q] . weights` as a `1 x m` row.
pub fn att_scores_var(tape: &mut Tape, k: Var, q: Var, weights: Var) -> Result<Var> {
    let n = tape.shape(k).1;
    expect_cols(tape, k, n, "att keys")?;
    expect_row(tape, q, n, "att query")?;
    expect_row(tape, weights, 3 * n, "att weights")?;
    let (b_key, b_query, b_prod) = split_weights(tape, weights, n);
    // K_i . b_key + K_i . (q * b_prod) = K_i . (b_key + q * b_prod)
    let qb = tape.mul(q, b_prod);
    let w = tape.add(b_key, qb);
    let wt = tape.transpose(w);
    let per_row = tape.matmul(k, wt);
    let per_row = tape.transpose(per_row);
    let qt = tape.transpose(b_query);
    let shared = tape.matmul(q, qt);
    Ok(tape.add(per_row, shared))
}

/// `Att_beta(K, q)`: softmax of [`att_scores_var`].
pub fn att_var(tape: &mut Tape, k: Var, q: Var, weights: Var) -> Result<Var> {
    let s = att_scores_var(tape, k, q, weights)?;
    Ok(tape.softmax_rows(s))
}

/// `out_i = X_i M y` as a `1 x m` row.
pub fn bilinear_var(tape: &mut Tape, x: Var, y: Var, mat: Var) -> Result<Var> {
    let n = tape.shape(x).1;
    expect_cols(tape, x, n, "bilinear X")?;
    expect_row(tape, y, n, "bilinear y")?;
    if tape.shape(mat) != (n, n) {
        return Err(Error::shape(format!(
            "bilinear matrix: expected {n} x {n}, got {:?}",
            tape.shape(mat)
        )));
    }
    let yt = tape.transpose(y);
    let py = tape.matmul(mat, yt);
    let out = tape.matmul(x, py);
    Ok(tape.transpose(out))
}

#[derive(Debug, Clone, Copy)]
pub struct BiAttention {
    /// `L_c x d`.
    pub ctx_attn: Var,
    /// `L_v x d`.
    pub cand_attn: Var,
    /// Row `i` is `att(cands, ctx[i])`; `L_c x L_v`.
    pub cand_weights: Var,
    /// Row `j` is `att(ctx, cands[j])`; `L_v x L_c`.
    pub ctx_weights: Var,
}

/// Attention in both directions with a shared `att_bidir`; all rows at once.
pub fn bidirectional_attention_var(tape: &mut Tape, ctx: Var, cands: Var, att_bidir: Var) -> Result<BiAttention> {
    let n = tape.shape(ctx).1;
    expect_cols(tape, ctx, n, "ctx")?;
    expect_cols(tape, cands, n, "cands")?;
    expect_row(tape, att_bidir, 3 * n, "att_bidir")?;
    let (b_key, b_query, b_prod) = split_weights(tape, att_bidir, n);
    // trilinear term shared by both directions: (ctx * b_prod) cands^T
    let scaled = tape.mul(ctx, b_prod);
    let wqt = tape.transpose(cands);
    let cross = tape.matmul(scaled, wqt);
    let b_key_t = tape.transpose(b_key);
    let b_query_t = tape.transpose(b_query);
    let wq_key = tape.matmul(cands, b_key_t);
    let wq_query = tape.matmul(cands, b_query_t);
    let ec_key = tape.matmul(ctx, b_key_t);
    let ec_query = tape.matmul(ctx, b_query_t);

    // context -> question: keys cands, queries ctx rows
    let wq_key_row = tape.transpose(wq_key);
    let s = tape.add(cross, wq_key_row);
    let s = tape.add(s, ec_query);
    let cand_weights = tape.softmax_rows(s);
    let b_qd = tape.matmul(cand_weights, cands);
    let ctx_attn = tape.add(ctx, b_qd);

    // question -> context: keys ctx, queries cands rows
    let cross_t = tape.transpose(cross);
    let ec_key_row = tape.transpose(ec_key);
    let t = tape.add(cross_t, ec_key_row);
    let t = tape.add(t, wq_query);
    let ctx_weights = tape.softmax_rows(t);
    let b_cd = tape.matmul(ctx_weights, ctx);
    let cand_attn = tape.add(cands, b_cd);
    Ok(BiAttention {
        ctx_attn,
        cand_attn,
        cand_weights,
        ctx_weights,
    })
}

/// `summary_weights = att(ctx_attn, domain_emb + slot_emb, att_value)` and the summary `u = summary_weights ctx_attn`.
pub fn value_summary_var(tape: &mut Tape, ctx_attn: Var, domain_slot: Var, att_value: Var) -> Result<(Var, Var)> {
    let summary_weights = att_var(tape, ctx_attn, domain_slot, att_value)?;
    let u = tape.matmul(summary_weights, ctx_attn);
    Ok((summary_weights, u))
}

/// Value logits `bilinear(cand_attn, summary, bil_value)`; `summary` is `u` or the
/// graph-fused vector.
pub fn value_logits_var(tape: &mut Tape, cand_attn: Var, summary: Var, bil_value: Var) -> Result<Var> {
    bilinear_var(tape, cand_attn, summary, bil_value)
}

#[derive(Debug, Clone, Copy)]
pub struct SpanHeads {
    pub span_weights: Var,
    /// `domain_emb + slot_emb + span_weights ctx`.
    pub c: Var,
    /// `1 x 3` in [`SpanType`] order.
    pub type_logits: Var,
    pub start_logits: Var,
    pub end_logits: Var,
}

pub fn span_heads_var(tape: &mut Tape, ctx: Var, domain_slot: Var, p: &ReaderParams) -> Result<SpanHeads> {
    let n = tape.shape(ctx).1;
    let att_span = tape.param(p.att_span);
    let span_weights = att_var(tape, ctx, domain_slot, att_span)?;
    let pooled = tape.matmul(span_weights, ctx);
    let c = tape.add(domain_slot, pooled);
    let type_proj = tape.param(p.type_proj);
    if tape.shape(type_proj) != (3, n) {
        return Err(Error::shape(format!("type_proj: expected 3 x {n}, got {:?}", tape.shape(type_proj))));
    }
    let type_proj_t = tape.transpose(type_proj);
    let type_logits = tape.matmul(c, type_proj_t);
    let start_proj = tape.param(p.start_proj);
    let end_proj = tape.param(p.end_proj);
    let h = tape.matmul(ctx, start_proj);
    let start_feat = tape.relu(h);
    let h3 = tape.matmul(h, end_proj);
    let end_feat = tape.relu(h3);
    let bil_start = tape.param(p.bil_start);
    let bil_end = tape.param(p.bil_end);
    let start_logits = bilinear_var(tape, start_feat, c, bil_start)?;
    let end_logits = bilinear_var(tape, end_feat, c, bil_end)?;
    Ok(SpanHeads {
        span_weights,
        c,
        type_logits,
        start_logits,
        end_logits,
    })
}

// ---------------------------------------------------------------------------
// Value-level API

fn row(v: &Array1<f64>) -> Tensor {
    v.clone().insert_axis(Axis(0))
}

fn unrow(t: &Tensor) -> Array1<f64> {
    t.row(0).to_owned()
}

fn with_tape<T>(f: impl FnOnce(&mut Tape) -> Result<T>) -> Result<T> {
    let params = ParamSet::new();
    let mut tape = Tape::new(&params);
    f(&mut tape)
}

/// `Att_beta(K, q)` on plain arrays.
pub fn att(k: &Array2<f64>, q: &Array1<f64>, weights: &Array1<f64>) -> Result<Array1<f64>> {
    with_tape(|t| {
        let (k, q, b) = (t.constant(k.clone()), t.constant(row(q)), t.constant(row(weights)));
        let a = att_var(t, k, q, b)?;
        Ok(unrow(t.value(a)))
    })
}

/// `BiLinear_Phi(X, y)` on plain arrays.
pub fn bilinear(x: &Array2<f64>, y: &Array1<f64>, mat: &Array2<f64>) -> Result<Array1<f64>> {
    with_tape(|t| {
        let (x, y, p) = (t.constant(x.clone()), t.constant(row(y)), t.constant(mat.clone()));
        let o = bilinear_var(t, x, y, p)?;
        Ok(unrow(t.value(o)))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiAttentionOutput {
    pub ctx_attn: Array2<f64>,
    pub cand_attn: Array2<f64>,
    pub cand_weights: Array2<f64>,
    pub ctx_weights: Array2<f64>,
}

pub fn bidirectional_attention(
    ctx: &Array2<f64>,
    cands: &Array2<f64>,
    att_bidir: &Array1<f64>,
) -> Result<BiAttentionOutput> {
    with_tape(|t| {
        let (e, w, b) = (t.constant(ctx.clone()), t.constant(cands.clone()), t.constant(row(att_bidir)));
        let o = bidirectional_attention_var(t, e, w, b)?;
        Ok(BiAttentionOutput {
            ctx_attn: t.value(o.ctx_attn).clone(),
            cand_attn: t.value(o.cand_attn).clone(),
            cand_weights: t.value(o.cand_weights).clone(),
            ctx_weights: t.value(o.ctx_weights).clone(),
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueScores {
    pub summary_weights: Array1<f64>,
    pub summary: Array1<f64>,
    pub value_probs: Array1<f64>,
}

/// Value distribution. `fused_summary`, when given, replaces `u` in the
/// bilinear score.
pub fn value_scores(
    ctx_attn: &Array2<f64>,
    cand_attn: &Array2<f64>,
    domain_emb: &Array1<f64>,
    slot_emb: &Array1<f64>,
    att_value: &Array1<f64>,
    bil_value: &Array2<f64>,
    fused_summary: Option<&Array1<f64>>,
) -> Result<ValueScores> {
    if domain_emb.len() != slot_emb.len() {
        return Err(Error::shape("domain_emb and slot_emb lengths differ"));
    }
    with_tape(|t| {
        let bc = t.constant(ctx_attn.clone());
        let bq = t.constant(cand_attn.clone());
        let ds = t.constant(row(&(domain_emb + slot_emb)));
        let b2 = t.constant(row(att_value));
        let p1 = t.constant(bil_value.clone());
        let (summary_weights, u) = value_summary_var(t, bc, ds, b2)?;
        let summary = match fused_summary {
            Some(f) => t.constant(row(f)),
            None => u,
        };
        let logits = value_logits_var(t, bq, summary, p1)?;
        let p = t.softmax_rows(logits);
        Ok(ValueScores {
            summary_weights: unrow(t.value(summary_weights)),
            summary: unrow(t.value(u)),
            value_probs: unrow(t.value(p)),
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanScores {
    pub span_weights: Array1<f64>,
    pub type_probs: Array1<f64>,
    pub start_probs: Array1<f64>,
    pub end_probs: Array1<f64>,
}

/// Span type and boundary distributions for one span-mode question.
#[allow(clippy::too_many_arguments)]
pub fn span_scores(
    ctx: &Array2<f64>,
    domain_emb: &Array1<f64>,
    slot_emb: &Array1<f64>,
    att_span: &Array1<f64>,
    type_proj: &Array2<f64>,
    start_proj: &Array2<f64>,
    end_proj: &Array2<f64>,
    bil_start: &Array2<f64>,
    bil_end: &Array2<f64>,
) -> Result<SpanScores> {
    if domain_emb.len() != slot_emb.len() {
        return Err(Error::shape("domain_emb and slot_emb lengths differ"));
    }
    let d = domain_emb.len();
    for (m, name) in [(start_proj, "start_proj"), (end_proj, "end_proj")] {
        if m.dim() != (d, d) {
            return Err(Error::shape(format!("{name}: expected {d} x {d}, got {:?}", m.dim())));
        }
    }
    let mut params = ParamSet::new();
    let p = ReaderParams {
        att_bidir: params.add("b1", Tensor::zeros((1, 3 * d))),
        att_value: params.add("b2", Tensor::zeros((1, 3 * d))),
        att_span: params.add("b3", row(att_span)),
        att_graph: params.add("b4", Tensor::zeros((1, 3 * d))),
        bil_value: params.add("p1", Tensor::zeros((d, d))),
        bil_start: params.add("p2", bil_start.clone()),
        bil_end: params.add("p3", bil_end.clone()),
        type_proj: params.add("t1", type_proj.clone()),
        start_proj: params.add("t2", start_proj.clone()),
        end_proj: params.add("t3", end_proj.clone()),
    };
    let mut t = Tape::new(&params);
    let e = t.constant(ctx.clone());
    let ds = t.constant(row(&(domain_emb + slot_emb)));
    let h = span_heads_var(&mut t, e, ds, &p)?;
    let type_probs = t.softmax_rows(h.type_logits);
    let start_probs = t.softmax_rows(h.start_logits);
    let end_probs = t.softmax_rows(h.end_logits);
    Ok(SpanScores {
        span_weights: unrow(t.value(h.span_weights)),
        type_probs: unrow(t.value(type_probs)),
        start_probs: unrow(t.value(start_probs)),
        end_probs: unrow(t.value(end_probs)),
    })
}

/// Span-type distribution only.
pub fn span_type(
    ctx: &Array2<f64>,
    domain_emb: &Array1<f64>,
    slot_emb: &Array1<f64>,
    att_span: &Array1<f64>,
    type_proj: &Array2<f64>,
) -> Result<Array1<f64>> {
    let d = domain_emb.len();
    let eye = Array2::eye(d);
    Ok(span_scores(ctx, domain_emb, slot_emb, att_span, type_proj, &eye, &eye, &eye, &eye)?.type_probs)
}

/// Start and end distributions only.
#[allow(clippy::too_many_arguments)]
pub fn span_bounds(
    ctx: &Array2<f64>,
    domain_emb: &Array1<f64>,
    slot_emb: &Array1<f64>,
    att_span: &Array1<f64>,
    start_proj: &Array2<f64>,
    end_proj: &Array2<f64>,
    bil_start: &Array2<f64>,
    bil_end: &Array2<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let type_proj = Array2::zeros((3, domain_emb.len()));
    let s = span_scores(ctx, domain_emb, slot_emb, att_span, &type_proj, start_proj, end_proj, bil_start, bil_end)?;
    Ok((s.start_probs, s.end_probs))
}

// ---------------------------------------------------------------------------
// Decoding and loss

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub score: f64,
}

/// Best `(i, j)` with `i <= j <= i + max_len - 1` by `start_probs[i] * end_probs[j]`.
/// Returns `None` for empty input.
pub fn decode_span(start_probs: &[f64], end_probs: &[f64], tokens: &[String], max_len: usize) -> Option<DecodedSpan> {
    let n = start_probs.len().min(end_probs.len()).min(tokens.len());
    let max_len = max_len.max(1);
    let mut best: Option<(usize, usize, f64)> = None;
    for (i, &s) in start_probs[..n].iter().enumerate() {
        for (j, &e) in end_probs.iter().enumerate().take(n.min(i + max_len)).skip(i) {
            let score = s * e;
            if best.is_none_or(|(_, _, b)| score > b) {
                best = Some((i, j, score));
            }
        }
    }
    best.map(|(start, end, score)| DecodedSpan {
        start,
        end,
        text: tokens[start..=end].join(" "),
        score,
    })
}

/// Output of one question at one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum QuestionPrediction {
    Value {
        value_probs: Vec<f64>,
        answer: usize,
    },
    Span {
        type_probs: Vec<f64>,
        start_probs: Vec<f64>,
        end_probs: Vec<f64>,
        span_type: SpanType,
        span: Option<DecodedSpan>,
    },
}

impl QuestionPrediction {
    pub fn from_value_probs(value_probs: Vec<f64>) -> Self {
        let answer = argmax(&value_probs);
        QuestionPrediction::Value { value_probs, answer }
    }

    pub fn from_span_probs(type_probs: Vec<f64>, start_probs: Vec<f64>, end_probs: Vec<f64>, tokens: &[String], max_len: usize) -> Self {
        let span_type = SpanType::from_index(argmax(&type_probs));
        let span = if span_type == SpanType::Span {
            decode_span(&start_probs, &end_probs, tokens, max_len)
        } else {
            None
        };
        QuestionPrediction::Span {
            type_probs,
            start_probs,
            end_probs,
            span_type,
            span,
        }
    }

    /// Answer string; `"not mentioned"` when nothing is predicted.
    pub fn answer(&self, question: &Question) -> String {
        match self {
            QuestionPrediction::Value { answer, .. } => question.candidates()[*answer].clone(),
            QuestionPrediction::Span { span_type, span, .. } => match (span_type, span) {
                (SpanType::DontCare, _) => DONT_CARE.to_string(),
                (SpanType::Span, Some(s)) => normalize_value(&s.text),
                _ => NOT_MENTIONED.to_string(),
            },
        }
    }

    /// All probability vectors carried by this prediction.
    pub fn distributions(&self) -> Vec<&[f64]> {
        match self {
            QuestionPrediction::Value { value_probs, .. } => vec![value_probs],
            QuestionPrediction::Span { type_probs, start_probs, end_probs, .. } => vec![type_probs, start_probs, end_probs],
        }
    }
}

/// Dialogue state from per-question answers; "not mentioned" is omitted.
pub fn state_from_predictions(questions: &[Question], predictions: &[QuestionPrediction]) -> DialogueState {
    let mut state = DialogueState::new();
    for (q, p) in questions.iter().zip(predictions) {
        state.set(q.key(), &p.answer(q));
    }
    state
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub value: f64,
    pub span_type: f64,
    pub span: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.value += other.value;
        self.span_type += other.span_type;
        self.span += other.span;
        self.total += other.total;
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

fn nll(p: &[f64], target: usize, what: &str) -> Result<f64> {
    let v = p
        .get(target)
        .ok_or_else(|| Error::Label(format!("{what} label {target} out of range for {} entries", p.len())))?;
    Ok(-v.ln())
}

/// Summed cross-entropy of predictions against labels, split into the value,
/// span-type and span-boundary terms.
pub fn compute_loss(predictions: &[QuestionPrediction], labels: &[QuestionLabel]) -> Result<LossBreakdown> {
    if predictions.len() != labels.len() {
        return Err(Error::Label(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut out = LossBreakdown::default();
    for (p, l) in predictions.iter().zip(labels) {
        match (p, l) {
            (QuestionPrediction::Value { value_probs, .. }, QuestionLabel::Value(i)) => {
                out.value += nll(value_probs, *i, "value")?;
            }
            (QuestionPrediction::Span { type_probs, start_probs, end_probs, .. }, QuestionLabel::Span(s)) => {
                out.span_type += nll(type_probs, s.span_type().index(), "span type")?;
                if let SpanLabel::Span(Some((a, b))) = s {
                    out.span += nll(start_probs, *a, "span start")? + nll(end_probs, *b, "span end")?;
                }
            }
            _ => return Err(Error::Label("label mode does not match prediction mode".into())),
        }
    }
    out.total = out.value + out.span_type + out.span;
    Ok(out)
}

/// Question modes must agree with labels; used before building loss nodes.
pub fn check_label(question: &Question, label: &QuestionLabel, context_len: usize) -> Result<()> {
    match (question.mode, label) {
        (SlotMode::Value, QuestionLabel::Value(i)) if *i < question.candidate_count() => Ok(()),
        (SlotMode::Span, QuestionLabel::Span(SpanLabel::Span(Some((a, b))))) if a <= b && *b < context_len => Ok(()),
        (SlotMode::Span, QuestionLabel::Span(SpanLabel::Span(Some(_)))) => Err(Error::Label(format!(
            "span label outside {context_len}-token context for {}",
            question.key()
        ))),
        (SlotMode::Span, QuestionLabel::Span(_)) => Ok(()),
        _ => Err(Error::Label(format!("invalid label {label:?} for {}", question.key()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0))
    }

    fn softmax(xs: &[f64]) -> Vec<f64> {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    fn att_oracle(k: &Array2<f64>, q: &Array1<f64>, weights: &Array1<f64>) -> Vec<f64> {
        let n = q.len();
        let scores: Vec<f64> = (0..k.nrows())
            .map(|i| {
                let mut s = 0.0;
                for c in 0..n {
                    s += k[[i, c]] * weights[c] + q[c] * weights[n + c] + k[[i, c]] * q[c] * weights[2 * n + c];
                }
                s
            })
            .collect();
        softmax(&scores)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn att_examples() {
        let k = array![[1.0, 0.0], [0.0, 1.0]];
        let q = array![1.0, 0.0];
        let weights = array![1.0, 1.0, 0.0, 0.0, 2.0, 2.0];
        let a = att(&k, &q, &weights).unwrap();
        assert!((a[0] - 0.8808).abs() < 1e-4 && (a[1] - 0.1192).abs() < 1e-4);
        let z = att(&Array2::ones((4, 2)), &q, &Array1::zeros(6)).unwrap();
        assert!(z.iter().all(|x| (x - 0.25).abs() < 1e-12));
        assert_eq!(att(&array![[3.0, 4.0]], &q, &weights).unwrap(), array![1.0]);
        assert!(matches!(att(&k, &array![1.0], &weights), Err(Error::Shape(_))));
    }

    #[test]
    fn att_and_bilinear_match_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (m, n) = (rng.gen_range(1..8), rng.gen_range(1..8));
            let k = rand_mat(&mut rng, m, n);
            let q = rand_vec(&mut rng, n);
            let weights = rand_vec(&mut rng, 3 * n);
            assert!(close(att(&k, &q, &weights).unwrap().as_slice().unwrap(), &att_oracle(&k, &q, &weights), 1e-9));
            let mat = rand_mat(&mut rng, n, n);
            let got = bilinear(&k, &q, &mat).unwrap();
            for i in 0..m {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += k[[i, a]] * mat[[a, b]] * q[b];
                    }
                }
                assert!((got[i] - s).abs() < 1e-9);
            }
        }
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(bilinear(&x, &array![1.0, 1.0], &Array2::eye(2)).unwrap(), array![3.0, 7.0]);
        assert_eq!(bilinear(&x, &array![0.0, 0.0], &Array2::eye(2)).unwrap(), array![0.0, 0.0]);
    }

    #[test]
    fn bidirectional_attention_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = rand_mat(&mut rng, 3, 2);
        let w = array![[0.5, -1.0]];
        let out = bidirectional_attention(&e, &w, &rand_vec(&mut rng, 6)).unwrap();
        for i in 0..3 {
            for c in 0..2 {
                assert!((out.ctx_attn[[i, c]] - e[[i, c]] - w[[0, c]]).abs() < 1e-12);
            }
        }
        let w = rand_mat(&mut rng, 4, 2);
        let out = bidirectional_attention(&e, &w, &Array1::zeros(6)).unwrap();
        let mean = w.mean_axis(Axis(0)).unwrap();
        for i in 0..3 {
            for c in 0..2 {
                assert!((out.ctx_attn[[i, c]] - e[[i, c]] - mean[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bidirectional_attention_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let (lc, lv, n) = (rng.gen_range(1..7), rng.gen_range(1..6), rng.gen_range(1..6));
            let e = rand_mat(&mut rng, lc, n);
            let w = rand_mat(&mut rng, lv, n);
            let weights = rand_vec(&mut rng, 3 * n);
            let out = bidirectional_attention(&e, &w, &weights).unwrap();
            for i in 0..lc {
                let a = att_oracle(&w, &e.row(i).to_owned(), &weights);
                for c in 0..n {
                    let s: f64 = (0..lv).map(|j| a[j] * w[[j, c]]).sum();
                    assert!((out.ctx_attn[[i, c]] - e[[i, c]] - s).abs() < 1e-9);
                }
            }
            for j in 0..lv {
                let a = att_oracle(&e, &w.row(j).to_owned(), &weights);
                for c in 0..n {
                    let s: f64 = (0..lc).map(|i| a[i] * e[[i, c]]).sum();
                    assert!((out.cand_attn[[j, c]] - w[[j, c]] - s).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn value_scores_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 3;
        let bc = rand_mat(&mut rng, 5, n);
        let bq = rand_mat(&mut rng, 4, n);
        let (wd, ws) = (rand_vec(&mut rng, n), rand_vec(&mut rng, n));
        let weights = rand_vec(&mut rng, 3 * n);
        let mat = rand_mat(&mut rng, n, n);
        let s = value_scores(&bc, &bq, &wd, &ws, &weights, &mat, None).unwrap();
        assert_eq!(s.value_probs.len(), 4);
        assert!((s.value_probs.sum() - 1.0).abs() < 1e-12);
        let a = att_oracle(&bc, &(&wd + &ws), &weights);
        let u: Vec<f64> = (0..n).map(|c| (0..5).map(|i| a[i] * bc[[i, c]]).sum()).collect();
        let logits: Vec<f64> = (0..4)
            .map(|j| {
                let mut s = 0.0;
                for x in 0..n {
                    for y in 0..n {
                        s += bq[[j, x]] * mat[[x, y]] * u[y];
                    }
                }
                s
            })
            .collect();
        assert!(close(s.value_probs.as_slice().unwrap(), &softmax(&logits), 1e-9));
        let zero = value_scores(&bc, &bq, &wd, &ws, &weights, &Array2::zeros((n, n)), None).unwrap();
        assert!(zero.value_probs.iter().all(|p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn span_heads_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 3;
        let e = rand_mat(&mut rng, 1, n);
        let (wd, ws) = (rand_vec(&mut rng, n), rand_vec(&mut rng, n));
        let b3 = rand_vec(&mut rng, 3 * n);
        let type_probs = span_type(&e, &wd, &ws, &b3, &Array2::zeros((3, n))).unwrap();
        assert!(type_probs.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
        let (t2, t3) = (rand_mat(&mut rng, n, n), rand_mat(&mut rng, n, n));
        let (ss, se) = span_bounds(&e, &wd, &ws, &b3, &t2, &t3, &t2, &t3).unwrap();
        assert_eq!((ss.to_vec(), se.to_vec()), (vec![1.0], vec![1.0]));
        let e = rand_mat(&mut rng, 4, n);
        let (ss, se) = span_bounds(&e, &wd, &ws, &b3, &t2, &t3, &Array2::zeros((n, n)), &Array2::zeros((n, n))).unwrap();
        assert!(ss.iter().chain(se.iter()).all(|p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn decode_span_examples() {
        let t: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let s = decode_span(&[1.0, 0.0], &[0.0, 1.0], &t, 10).unwrap();
        assert_eq!((s.start, s.end, s.text.as_str()), (0, 1, "a b"));
        let s = decode_span(&[0.6, 0.4], &[0.9, 0.1], &t, 10).unwrap();
        assert_eq!((s.start, s.end), (0, 0));
        assert!((s.score - 0.54).abs() < 1e-12);
        let s = decode_span(&[0.5, 0.5], &[0.5, 0.5], &t, 10).unwrap();
        assert_eq!((s.start, s.end), (0, 0));
        let s = decode_span(&[1.0, 0.0], &[0.0, 1.0], &t, 1).unwrap();
        assert_eq!((s.start, s.end), (0, 0));
        assert!(decode_span(&[], &[], &[], 10).is_none());
    }

    #[test]
    fn loss_examples() {
        let preds = vec![
            QuestionPrediction::from_value_probs(vec![0.0, 1.0, 0.0]),
            QuestionPrediction::Span {
                type_probs: vec![0.0, 0.0, 1.0],
                start_probs: vec![1.0, 0.0],
                end_probs: vec![0.0, 1.0],
                span_type: SpanType::Span,
                span: None,
            },
        ];
        let labels = vec![QuestionLabel::Value(1), QuestionLabel::Span(SpanLabel::Span(Some((0, 1))))];
        assert_eq!(compute_loss(&preds, &labels).unwrap().total, 0.0);
        let uniform = vec![QuestionPrediction::from_value_probs(vec![0.25; 4])];
        let l = compute_loss(&uniform, &[QuestionLabel::Value(3)]).unwrap();
        assert!((l.value - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(
            compute_loss(&uniform, &[QuestionLabel::Value(9)]),
            Err(Error::Label(_))
        ));
        // missing span indices: type term only
        let l = compute_loss(&preds[1..], &[QuestionLabel::Span(SpanLabel::Span(None))]).unwrap();
        assert_eq!((l.span_type, l.span), (0.0, 0.0));
    }

    #[test]
    fn state_assembly() {
        let qv = Question {
            domain: "restaurant".into(),
            slot: "price range".into(),
            mode: SlotMode::Value,
            values: vec!["cheap".into(), "expensive".into()],
        };
        let qs = Question {
            domain: "restaurant".into(),
            slot: "book time".into(),
            mode: SlotMode::Span,
            values: vec![],
        };
        let toks: Vec<String> = vec!["at".into(), "18:30".into()];
        let questions = vec![qv, qs];
        let nm = vec![
            QuestionPrediction::from_value_probs(vec![0.1, 0.1, 0.7, 0.1]),
            QuestionPrediction::from_span_probs(vec![0.8, 0.1, 0.1], vec![0.5, 0.5], vec![0.5, 0.5], &toks, 10),
        ];
        assert!(state_from_predictions(&questions, &nm).is_empty());
        let p = vec![
            QuestionPrediction::from_value_probs(vec![0.9, 0.05, 0.03, 0.02]),
            QuestionPrediction::from_span_probs(vec![0.1, 0.8, 0.1], vec![0.1, 0.9], vec![0.1, 0.9], &toks, 10),
        ];
        let s = state_from_predictions(&questions, &p);
        assert_eq!(s.get(&questions[0].key()), Some("cheap"));
        assert_eq!(s.get(&questions[1].key()), Some(DONT_CARE));
        if let QuestionPrediction::Span { span, .. } = &p[1] {
            assert!(span.is_none());
        }
        let p = QuestionPrediction::from_span_probs(vec![0.1, 0.1, 0.8], vec![0.1, 0.9], vec![0.1, 0.9], &toks, 10);
        assert_eq!(p.answer(&questions[1]), "18:30");
    }
}
