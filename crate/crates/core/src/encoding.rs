//! Word embedding layer and context encoder.
//!
//! Each token is embedded as `[word-level embedding ; character CNN]`. The
//! context encoder is a one-layer bidirectional GRU over
//! `[features ; role embedding ; exact-match features]` whose concatenated
//! forward/backward states together have the token width `d`.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::corpus::{Role, Vocab};
use crate::error::{Error, Result};
use crate::ontology::Question;
use crate::text::tokenize;

/// Source of word-level embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// Frozen embeddings from a [`ContextualEmbedder`].
    ContextualPretrained,
    /// Trainable lookup table.
    StaticTrainable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub provider: ProviderKind,
    /// Width of the word-level embedding.
    pub word_dim: usize,
    /// Width of the character CNN output (number of filters).
    pub char_dim: usize,
    pub char_embedding_dim: usize,
    pub kernel_width: usize,
    pub role_dim: usize,
}

impl EmbeddingConfig {
    /// 512-wide frozen contextual embeddings plus 100 character filters.
    pub fn contextual() -> Self {
        Self {
            provider: ProviderKind::ContextualPretrained,
            word_dim: 512,
            char_dim: 100,
            char_embedding_dim: 16,
            kernel_width: 5,
            role_dim: 128,
        }
    }

    /// 300-wide trainable embeddings plus 100 character filters.
    pub fn static_glove() -> Self {
        Self {
            provider: ProviderKind::StaticTrainable,
            word_dim: 300,
            ..Self::contextual()
        }
    }

    /// Small dimensions for tests and synthetic runs.
    pub fn desk(word_dim: usize, char_dim: usize, role_dim: usize) -> Self {
        Self {
            provider: ProviderKind::StaticTrainable,
            word_dim,
            char_dim,
            char_embedding_dim: 8,
            kernel_width: 3,
            role_dim,
        }
    }

    /// The width `d` of every token and question element embedding.
    pub fn token_dim(&self) -> usize {
        self.word_dim + self.char_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.char_dim == 0 || self.char_embedding_dim == 0 {
            return Err(Error::Config("embedding dimensions must be positive".into()));
        }
        if self.kernel_width == 0 {
            return Err(Error::Config("kernel width must be positive".into()));
        }
        if !self.token_dim().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "token width {} must be even so each GRU direction has half of it",
                self.token_dim()
            )));
        }
        Ok(())
    }
}

/// Pretrained word-level embedding adapter: token list in, `L x dim` out.
pub trait ContextualEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    /// Recorded in checkpoint manifests.
    fn identity(&self) -> String;
    fn embed(&self, tokens: &[String]) -> Tensor;
}

/// Frozen per-token lookup table read from a whitespace-separated text file
/// (`token v1 v2 ...` per line). Unknown tokens map to zeros.
#[derive(Debug, Clone)]
pub struct FrozenTableEmbedder {
    name: String,
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl FrozenTableEmbedder {
    pub fn from_text(name: &str, text: &str) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
            let values = values.map_err(|e| Error::Schema {
                context: format!("{name}:{}", n + 1),
                message: e.to_string(),
            })?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Schema {
                        context: format!("{name}:{}", n + 1),
                        message: format!("expected {d} values, found {}", values.len()),
                    })
                }
                _ => {}
            }
            table.insert(token.to_string(), values);
        }
        let dim = dim.ok_or_else(|| Error::Schema {
            context: name.to_string(),
            message: "no vectors".into(),
        })?;
        Ok(Self {
            name: name.to_string(),
            dim,
            table,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&path.display().to_string(), &crate::error::read_to_string(path)?)
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.table.get(token).map(Vec::as_slice)
    }
}

impl ContextualEmbedder for FrozenTableEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> String {
        format!("frozen-table:{}:{}", self.name, self.dim)
    }

    fn embed(&self, tokens: &[String]) -> Tensor {
        let mut out = Tensor::zeros((tokens.len(), self.dim));
        for (i, t) in tokens.iter().enumerate() {
            if let Some(v) = self.table.get(t) {
                out.row_mut(i).assign(&ndarray::ArrayView1::from(v.as_slice()));
            }
        }
        out
    }
}

/// Character inventory; id 0 is the unknown character.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
}

impl CharVocab {
    pub fn from_vocab(vocab: &Vocab) -> Self {
        let mut chars: Vec<char> = vocab
            .tokens()
            .iter()
            .skip(1)
            .flat_map(|t| t.chars())
            .collect();
        chars.sort_unstable();
        chars.dedup();
        Self { chars }
    }

    pub fn id(&self, c: char) -> usize {
        self.chars.binary_search(&c).map(|i| i + 1).unwrap_or(0)
    }

    /// Number of embedding rows (including the unknown row).
    pub fn rows(&self) -> usize {
        self.chars.len() + 1
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Fan-in scaled uniform initialization.
pub(crate) fn fan_in(rng: &mut impl Rng, rows: usize, cols: usize, fan: usize) -> Tensor {
    uniform(rng, rows, cols, 1.0 / (fan as f64).sqrt())
}

#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub bh: ParamId,
}

impl GruParams {
    fn new(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: params.add(format!("{prefix}.w"), fan_in(rng, input, 3 * hidden, input)),
            u: params.add(format!("{prefix}.u"), fan_in(rng, hidden, 3 * hidden, hidden)),
            b: params.add(format!("{prefix}.b"), Tensor::zeros((1, 3 * hidden))),
            bh: params.add(format!("{prefix}.bh"), Tensor::zeros((1, 3 * hidden))),
        }
    }
}

/// Word-level embedding source bound to parameters.
#[derive(Clone)]
pub enum WordEmbeddings {
    Static(ParamId),
    Contextual(Arc<dyn ContextualEmbedder>),
}

impl std::fmt::Debug for WordEmbeddings {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WordEmbeddings::Static(id) => write!(f, "Static({id:?})"),
            WordEmbeddings::Contextual(e) => write!(f, "Contextual({})", e.identity()),
        }
    }
}

/// Embedding layer and biGRU encoder parameters.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EmbeddingConfig,
    pub exact_match_width: usize,
    pub vocab: Vocab,
    pub chars: CharVocab,
    pub words: WordEmbeddings,
    pub char_emb: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub role_emb: ParamId,
    pub forward_gru: GruParams,
    pub backward_gru: GruParams,
}

/// Domain, slot and value embeddings of one question.
#[derive(Debug, Clone, Copy)]
pub struct QuestionEmbedding {
    pub domain: Var,
    pub slot: Var,
    /// `domain_emb + slot_emb`.
    pub domain_slot: Var,
    /// `L_v x d` candidate value embeddings (specials last).
    pub values: Var,
    /// `cands[j] = domain_emb + slot_emb + values[j]`.
    pub question: Var,
}

impl Encoder {
    /// Allocate encoder parameters. Pass `contextual` to use frozen
    /// pretrained embeddings; otherwise a trainable table is created.
    pub fn new(
        config: EmbeddingConfig,
        exact_match_width: usize,
        vocab: Vocab,
        contextual: Option<Arc<dyn ContextualEmbedder>>,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let chars = CharVocab::from_vocab(&vocab);
        let words = match (config.provider, contextual) {
            (ProviderKind::ContextualPretrained, Some(e)) => {
                if e.dim() != config.word_dim {
                    return Err(Error::Config(format!(
                        "contextual embedder width {} does not match word_dim {}",
                        e.dim(),
                        config.word_dim
                    )));
                }
                WordEmbeddings::Contextual(e)
            }
            _ => WordEmbeddings::Static(params.add(
                "embed.words",
                fan_in(rng, vocab.len(), config.word_dim, config.word_dim),
            )),
        };
        let ce = config.char_embedding_dim;
        let char_emb = params.add("embed.chars", fan_in(rng, chars.rows(), ce, ce));
        let conv_in = config.kernel_width * ce;
        let conv_w = params.add("embed.conv_w", fan_in(rng, conv_in, config.char_dim, conv_in));
        let conv_b = params.add("embed.conv_b", Tensor::zeros((1, config.char_dim)));
        let role_emb = params.add("encode.roles", fan_in(rng, 2, config.role_dim, config.role_dim));
        let d = config.token_dim();
        let input = d + config.role_dim + exact_match_width;
        let forward_gru = GruParams::new(params, "encode.gru_fwd", input, d / 2, rng);
        let backward_gru = GruParams::new(params, "encode.gru_bwd", input, d / 2, rng);
        Ok(Self {
            config,
            exact_match_width,
            vocab,
            chars,
            words,
            char_emb,
            conv_w,
            conv_b,
            role_emb,
            forward_gru,
            backward_gru,
        })
    }

    pub fn token_dim(&self) -> usize {
        self.config.token_dim()
    }

    pub fn provider_identity(&self) -> String {
        match &self.words {
            WordEmbeddings::Static(_) => "static-trainable".to_string(),
            WordEmbeddings::Contextual(e) => e.identity(),
        }
    }

    /// Character CNN: convolution over character embeddings with "same"
    /// zero padding, then max-over-time pooling. Output `L x D_char`.
    pub fn char_cnn(&self, tape: &mut Tape, tokens: &[String]) -> Var {
        let mut unique: Vec<&str> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mapping: Vec<usize> = tokens
            .iter()
            .map(|t| {
                *index.entry(t.as_str()).or_insert_with(|| {
                    unique.push(t.as_str());
                    unique.len() - 1
                })
            })
            .collect();
        let k = self.config.kernel_width;
        let left = (k - 1) / 2;
        let right = k - 1 - left;
        let mut rows: Vec<Option<usize>> = Vec::new();
        let mut segments = Vec::with_capacity(unique.len());
        for tok in &unique {
            let start = rows.len();
            let n = tok.chars().count().max(1);
            rows.extend(std::iter::repeat_n(None, left));
            if tok.is_empty() {
                rows.push(None);
            } else {
                rows.extend(tok.chars().map(|c| Some(self.chars.id(c))));
            }
            rows.extend(std::iter::repeat_n(None, right));
            segments.push((start, start + n));
        }
        let chars = tape.gather(self.char_emb, rows);
        let windows = tape.unfold(chars, k);
        let w = tape.param(self.conv_w);
        let conv = tape.matmul(windows, w);
        let pooled = tape.segment_max(conv, &segments);
        let b = tape.param(self.conv_b);
        let pooled = tape.add(pooled, b);
        if mapping.iter().enumerate().all(|(i, &m)| i == m) && mapping.len() == unique.len() {
            pooled
        } else {
            tape.select_rows(pooled, mapping)
        }
    }

    fn word_level(&self, tape: &mut Tape, tokens: &[String]) -> Var {
        match &self.words {
            WordEmbeddings::Static(id) => {
                let rows = tokens.iter().map(|t| Some(self.vocab.id(t))).collect();
                tape.gather(*id, rows)
            }
            WordEmbeddings::Contextual(e) => tape.constant(e.embed(tokens)),
        }
    }

    /// `features`: `[word-level ; char CNN]` per token, `L x d`.
    pub fn embed_context(&self, tape: &mut Tape, tokens: &[String]) -> Var {
        let words = self.word_level(tape, tokens);
        let chars = self.char_cnn(tape, tokens);
        tape.concat_cols(&[words, chars])
    }

    /// Mean of the token embeddings of one question element.
    pub fn embed_element(&self, tape: &mut Tape, element: &str) -> Var {
        let mut tokens = tokenize(element);
        if tokens.is_empty() {
            tokens.push(crate::corpus::UNK_TOKEN.to_string());
        }
        let e = self.embed_context(tape, &tokens);
        if tokens.len() == 1 {
            e
        } else {
            tape.mean_rows(e)
        }
    }

    /// Domain, slot and candidate-value embeddings; each element is embedded
    /// as its own sentence. `cache` memoizes elements shared across questions.
    pub fn embed_question(
        &self,
        tape: &mut Tape,
        question: &Question,
        cache: &mut HashMap<String, Var>,
    ) -> QuestionEmbedding {
        let mut element = |tape: &mut Tape, e: &str| -> Var {
            if let Some(v) = cache.get(e) {
                return *v;
            }
            let v = self.embed_element(tape, e);
            cache.insert(e.to_string(), v);
            v
        };
        let domain = element(tape, &question.domain);
        let slot = element(tape, &question.slot);
        let rows: Vec<Var> = question
            .candidates()
            .iter()
            .map(|c| element(tape, c))
            .collect();
        let values = tape.concat_rows(&rows);
        let domain_slot = tape.add(domain, slot);
        let question = tape.add(values, domain_slot);
        QuestionEmbedding {
            domain,
            slot,
            domain_slot,
            values,
            question,
        }
    }

    /// One GRU direction over the rows of `inputs`; states in input order.
    pub fn run_gru(&self, tape: &mut Tape, inputs: Var, reverse: bool) -> Var {
        let p = if reverse { &self.backward_gru } else { &self.forward_gru };
        let len = tape.shape(inputs).0;
        let h_dim = self.token_dim() / 2;
        let w = tape.param(p.w);
        let u = tape.param(p.u);
        let b = tape.param(p.b);
        let bh = tape.param(p.bh);
        let xw = tape.matmul(inputs, w);
        let xw = tape.add(xw, b);
        let mut h = tape.constant(Tensor::zeros((1, h_dim)));
        let mut states = vec![h; len];
        let order: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for t in order {
            let x = tape.row(xw, t);
            let hu = tape.matmul(h, u);
            let hu = tape.add(hu, bh);
            let x_zr = tape.slice_cols(x, 0, 2 * h_dim);
            let h_zr = tape.slice_cols(hu, 0, 2 * h_dim);
            let zr = tape.add(x_zr, h_zr);
            let zr = tape.sigmoid(zr);
            let z = tape.slice_cols(zr, 0, h_dim);
            let r = tape.slice_cols(zr, h_dim, 2 * h_dim);
            let x_n = tape.slice_cols(x, 2 * h_dim, 3 * h_dim);
            let h_n = tape.slice_cols(hu, 2 * h_dim, 3 * h_dim);
            let rh = tape.mul(r, h_n);
            let n = tape.add(x_n, rh);
            let n = tape.tanh(n);
            // h' = (1 - z) * n + z * h = n + z * (h - n)
            let diff = tape.sub(h, n);
            let zd = tape.mul(z, diff);
            h = tape.add(n, zd);
            states[t] = h;
        }
        tape.concat_rows(&states)
    }

    /// GRU input rows `[features ; role ; exact-match]`. `dropout_mask`, when
    /// given, multiplies the input elementwise (already scaled).
    pub fn gru_input(
        &self,
        tape: &mut Tape,
        w_c: Var,
        roles: &[Role],
        exact_match: &Array2<u8>,
        dropout_mask: Option<&Tensor>,
    ) -> Result<Var> {
        let (len, width) = tape.shape(w_c);
        if width != self.token_dim() {
            return Err(Error::shape(format!(
                "features width {width} != token width {}",
                self.token_dim()
            )));
        }
        if roles.len() != len || exact_match.nrows() != len {
            return Err(Error::shape(format!(
                "{len} tokens but {} roles and {} exact-match rows",
                roles.len(),
                exact_match.nrows()
            )));
        }
        if exact_match.ncols() != self.exact_match_width {
            return Err(Error::shape(format!(
                "exact-match width {} != {}",
                exact_match.ncols(),
                self.exact_match_width
            )));
        }
        let role_rows = roles.iter().map(|r| Some(r.index())).collect();
        let role = tape.gather(self.role_emb, role_rows);
        let em = tape.constant(exact_match.mapv(f64::from));
        let input = tape.concat_cols(&[w_c, role, em]);
        Ok(match dropout_mask {
            Some(mask) => {
                if mask.dim() != tape.shape(input) {
                    return Err(Error::shape("dropout mask does not match GRU input"));
                }
                let m = tape.constant(mask.clone());
                tape.mul(input, m)
            }
            None => input,
        })
    }

    /// biGRU encoding `ctx` (`L x d`).
    pub fn encode_context(
        &self,
        tape: &mut Tape,
        w_c: Var,
        roles: &[Role],
        exact_match: &Array2<u8>,
        dropout_mask: Option<&Tensor>,
    ) -> Result<Var> {
        let input = self.gru_input(tape, w_c, roles, exact_match, dropout_mask)?;
        let fwd = self.run_gru(tape, input, false);
        let bwd = self.run_gru(tape, input, true);
        Ok(tape.concat_cols(&[fwd, bwd]))
    }

    /// Width of the GRU input.
    pub fn gru_input_dim(&self) -> usize {
        self.token_dim() + self.config.role_dim + self.exact_match_width
    }
}
