//! Loop oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use dstqa::corpus::{generate_synthetic, Corpus, SyntheticConfig};
use dstqa::encoding::EmbeddingConfig;
use dstqa::graph::Propagation;
use dstqa::model::{Model, ModelConfig};
use dstqa::ontology::Ontology;

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Attention over the rows of `k`: `[k_i; q; k_i * q] . weights`, normalized.
pub fn att(k: &Array2<f64>, q: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = q.len();
    let mut scores = Vec::with_capacity(k.nrows());
    for i in 0..k.nrows() {
        let mut s = 0.0;
        for j in 0..n {
            s += k[[i, j]] * weights[j];
            s += q[j] * weights[n + j];
            s += k[[i, j]] * q[j] * weights[2 * n + j];
        }
        scores.push(s);
    }
    softmax(&scores)
}

/// `out_i = sum_jk x_ij m_jk y_k`.
pub fn bilinear(x: &Array2<f64>, y: &[f64], mat: &Array2<f64>) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let mut s = 0.0;
            for j in 0..x.ncols() {
                for k in 0..y.len() {
                    s += x[[i, j]] * mat[[j, k]] * y[k];
                }
            }
            s
        })
        .collect()
}

/// Weighted sum of rows.
pub fn combine(weights: &[f64], rows: &Array2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; rows.ncols()];
    for (w, r) in weights.iter().zip(rows.rows()) {
        for (o, x) in out.iter_mut().zip(r.iter()) {
            *o += w * x;
        }
    }
    out
}

pub struct BiAtt {
    pub ctx_attn: Array2<f64>,
    pub cand_attn: Array2<f64>,
    pub cand_weights: Vec<Vec<f64>>,
    pub ctx_weights: Vec<Vec<f64>>,
}

pub fn bidirectional(ctx: &Array2<f64>, cands: &Array2<f64>, att_bidir: &[f64]) -> BiAtt {
    let cand_weights: Vec<Vec<f64>> = (0..ctx.nrows())
        .map(|i| att(cands, &ctx.row(i).to_vec(), att_bidir))
        .collect();
    let ctx_weights: Vec<Vec<f64>> = (0..cands.nrows())
        .map(|j| att(ctx, &cands.row(j).to_vec(), att_bidir))
        .collect();
    let mut ctx_attn = ctx.clone();
    for i in 0..ctx.nrows() {
        for (d, x) in combine(&cand_weights[i], cands).into_iter().enumerate() {
            ctx_attn[[i, d]] += x;
        }
    }
    let mut cand_attn = cands.clone();
    for j in 0..cands.nrows() {
        for (d, x) in combine(&ctx_weights[j], ctx).into_iter().enumerate() {
            cand_attn[[j, d]] += x;
        }
    }
    BiAtt {
        ctx_attn,
        cand_attn,
        cand_weights,
        ctx_weights,
    }
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `(summary_weights, u, value_probs)`.
pub fn value_scores(
    ctx_attn: &Array2<f64>,
    cand_attn: &Array2<f64>,
    ds: &[f64],
    att_value: &[f64],
    bil_value: &Array2<f64>,
    fused: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let summary_weights = att(ctx_attn, ds, att_value);
    let u = combine(&summary_weights, ctx_attn);
    let s = fused.map(<[f64]>::to_vec).unwrap_or_else(|| u.clone());
    let p = softmax(&bilinear(cand_attn, &s, bil_value));
    (summary_weights, u, p)
}

/// `(span_weights, c)` with `c = ds + ctx^T span_weights`.
pub fn span_summary(ctx: &Array2<f64>, ds: &[f64], att_span: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let span_weights = att(ctx, ds, att_span);
    let c = add(ds, &combine(&span_weights, ctx));
    (span_weights, c)
}

pub fn span_type(ctx: &Array2<f64>, ds: &[f64], att_span: &[f64], type_proj: &Array2<f64>) -> Vec<f64> {
    let (_, c) = span_summary(ctx, ds, att_span);
    let logits: Vec<f64> = (0..type_proj.nrows())
        .map(|r| (0..c.len()).map(|d| type_proj[[r, d]] * c[d]).sum())
        .collect();
    softmax(&logits)
}

fn relu_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                s += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn span_bounds(
    ctx: &Array2<f64>,
    ds: &[f64],
    att_span: &[f64],
    start_proj: &Array2<f64>,
    end_proj: &Array2<f64>,
    bil_start: &Array2<f64>,
    bil_end: &Array2<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let (_, c) = span_summary(ctx, ds, att_span);
    let pre = relu_matmul(ctx, start_proj);
    let h2 = pre.mapv(|x| x.max(0.0));
    let h3 = relu_matmul(&pre, end_proj).mapv(|x| x.max(0.0));
    (softmax(&bilinear(&h2, &c, bil_start)), softmax(&bilinear(&h3, &c, bil_end)))
}

/// `(node_weights, z)`.
pub fn graph_embedding(g: &Array2<f64>, u: &[f64], att_graph: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a = att(g, u, att_graph);
    let z = combine(&a, g);
    (a, z)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs_diff2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "shape mismatch");
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-scale..scale))
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.gen_range(-scale..scale))
}

/// The standard synthetic corpus: 50 training dialogues, 20 dev, 20 test.
pub fn synthetic(seed: u64) -> (Corpus, Ontology) {
    generate_synthetic(&SyntheticConfig::two_domain(50).with_splits(20, 20), seed).unwrap()
}

/// A model of token width 8 over a small synthetic corpus.
pub fn small_model(graph: bool, propagation: Propagation, seed: u64) -> (Model, Corpus) {
    let (corpus, ontology) = generate_synthetic(&SyntheticConfig::two_domain(6), 3).unwrap();
    let mut mc = ModelConfig::new(EmbeddingConfig::desk(4, 4, 3));
    mc.graph = graph;
    mc.propagation = propagation;
    let model = Model::new(mc, ontology, corpus.vocab.clone(), None, seed).unwrap();
    (model, corpus)
}
