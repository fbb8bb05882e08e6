//! Training loop, optimizer, configuration and checkpoints.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Gradients, ParamSet, Tensor};
use crate::corpus::{Corpus, Dialogue, PreprocessReport, TurnExample, Vocab, UNK_TOKEN};
use crate::encoding::{ContextualEmbedder, EmbeddingConfig, FrozenTableEmbedder, ProviderKind};
use crate::error::{read_to_string, write_string, Error, Result};
use crate::evaluation::{evaluate_model, EvalReport};
use crate::graph::Propagation;
use crate::model::{Hooks, Model, ModelConfig, Noise};
use crate::ontology::{Ontology, SlotKey, SlotMode};
use crate::reader::{LossBreakdown, DEFAULT_MAX_SPAN_LEN};
use crate::text::normalize_value;

/// Replace each token by the unknown token with probability `p`.
pub fn word_dropout(tokens: &[String], p: f64, rng: &mut impl Rng) -> Vec<String> {
    if p <= 0.0 {
        return tokens.to_vec();
    }
    tokens
        .iter()
        .map(|t| {
            if rng.gen_bool(p.min(1.0)) {
                UNK_TOKEN.to_string()
            } else {
                t.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanMode {
    /// Span slots answered by span prediction.
    Span,
    /// Span slots turned into value questions over training-set values.
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationKind {
    Sum,
    Gated,
}

/// Flat training configuration; every key can be overridden from the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub word_dropout: f64,
    pub role_dim: usize,
    pub provider: ProviderKind,
    /// Frozen embedding table for the contextual provider.
    pub embeddings: Option<PathBuf>,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_embedding_dim: usize,
    pub kernel_width: usize,
    pub graph: bool,
    pub propagation: PropagationKind,
    pub slot_weight: f64,
    pub span_mode: SpanMode,
    /// Turns of context; 0 keeps the whole dialogue.
    pub context_window: usize,
    pub max_span_len: usize,
    pub epochs: usize,
    /// Dialogues per optimizer step.
    pub batch_size: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Stop once training-set joint accuracy reaches this value.
    pub target_train_joint: Option<f64>,
    /// Evaluate training-set accuracy after each epoch.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            dropout: 0.5,
            word_dropout: 0.1,
            role_dim: 128,
            provider: ProviderKind::StaticTrainable,
            embeddings: None,
            word_dim: 300,
            char_dim: 100,
            char_embedding_dim: 16,
            kernel_width: 5,
            graph: true,
            propagation: PropagationKind::Sum,
            slot_weight: 0.5,
            span_mode: SpanMode::Span,
            context_window: 0,
            max_span_len: DEFAULT_MAX_SPAN_LEN,
            epochs: 100,
            batch_size: 16,
            patience: 10,
            seed: 0,
            grad_clip: 5.0,
            target_train_joint: None,
            eval_train: false,
        }
    }
}

impl TrainConfig {
    /// Small dimensions for the synthetic corpus on one CPU.
    pub fn desk() -> Self {
        Self {
            learning_rate: 0.02,
            dropout: 0.3,
            word_dropout: 0.05,
            role_dim: 8,
            word_dim: 24,
            char_dim: 16,
            char_embedding_dim: 8,
            kernel_width: 3,
            epochs: 200,
            batch_size: 4,
            patience: 200,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str, context: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("{context}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `key=value` overrides using the config file's own syntax.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        for (k, v) in overrides {
            let key = k.replace('-', "_");
            let value = match v.parse::<toml::Value>() {
                Ok(parsed) if !matches!(parsed, toml::Value::String(_)) => parsed,
                _ => toml::from_str::<toml::Table>(&format!("v = {v}"))
                    .ok()
                    .and_then(|mut t| t.remove("v"))
                    .unwrap_or_else(|| toml::Value::String(v.clone())),
            };
            table.insert(key, value);
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("dropout", self.dropout), ("word_dropout", self.word_dropout), ("slot_weight", self.slot_weight)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.dropout >= 1.0 {
            return Err(Error::Config("dropout must be below 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_span_len", self.max_span_len),
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.embedding().validate()
    }

    pub fn embedding(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            provider: self.provider,
            word_dim: self.word_dim,
            char_dim: self.char_dim,
            char_embedding_dim: self.char_embedding_dim,
            kernel_width: self.kernel_width,
            role_dim: self.role_dim,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embedding: self.embedding(),
            graph: self.graph,
            propagation: match self.propagation {
                PropagationKind::Sum => Propagation::Sum,
                PropagationKind::Gated => Propagation::Gated { slot_weight: self.slot_weight },
            },
            max_span_len: self.max_span_len,
            context_window: (self.context_window > 0).then_some(self.context_window),
        }
    }

    /// The frozen embedder named by the config, if any.
    pub fn contextual_embedder(&self) -> Result<Option<Arc<dyn ContextualEmbedder>>> {
        match (self.provider, &self.embeddings) {
            (ProviderKind::ContextualPretrained, Some(path)) => {
                Ok(Some(Arc::new(FrozenTableEmbedder::load(path)?) as Arc<dyn ContextualEmbedder>))
            }
            _ => Ok(None),
        }
    }
}

/// Ontology seen by the model: span slots become value slots over the values
/// observed in training when span prediction is off.
pub fn model_ontology(config: &TrainConfig, ontology: &Ontology, train: &[Dialogue]) -> Result<Ontology> {
    if config.span_mode == SpanMode::Span || ontology.span_slots().is_empty() {
        return Ok(ontology.clone());
    }
    let mut values: IndexMap<SlotKey, Vec<String>> = IndexMap::new();
    for key in ontology.span_slots() {
        let mut seen: Vec<String> = Vec::new();
        for d in train {
            for t in &d.turns {
                if let Some(v) = t.state.get(&key) {
                    let v = normalize_value(v);
                    if v != crate::text::DONT_CARE && !seen.contains(&v) {
                        seen.push(v);
                    }
                }
            }
        }
        if seen.is_empty() {
            return Err(Error::Config(format!(
                "span slot {key} has no training values; cannot use span_mode = value"
            )));
        }
        values.insert(key, seen);
    }
    ontology.with_span_slots_as_values(&values)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub att_bidir: f64,
    pub att_value: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(lr: f64, params: &ParamSet) -> Self {
        Self {
            lr,
            att_bidir: 0.9,
            att_value: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![None; params.len()],
            v: vec![None; params.len()],
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.att_bidir.powi(self.step);
        let c2 = 1.0 - self.att_value.powi(self.step);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(g.dim()));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(g.dim()));
            let (b1, b2, lr, eps) = (self.att_bidir, self.att_value, self.lr, self.eps);
            ndarray::Zip::from(&mut *m).and(&mut *v).and(g).and(params.get_mut(id)).for_each(|m, v, &g, p| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// One training-log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_v: f64,
    pub loss_st: f64,
    pub loss_span: f64,
    pub dev_joint: Option<f64>,
    pub dev_slot: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_joint: Option<f64>,
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_dev: Option<EvalReport>,
    pub preprocess: PreprocessReport,
}

/// Examples for every dialogue against the model's questions.
pub fn prepare_all(model: &Model, dialogues: &[Dialogue]) -> (Vec<Vec<TurnExample>>, PreprocessReport) {
    let mut report = PreprocessReport::default();
    let examples = dialogues
        .iter()
        .map(|d| {
            let (ex, r) = model.prepare(d);
            report.merge(&r);
            ex
        })
        .collect();
    (examples, report)
}

/// Build a model for a corpus (vocabulary from its training split).
pub fn init_model(config: &TrainConfig, corpus: &Corpus, ontology: &Ontology) -> Result<Model> {
    config.validate()?;
    let ontology = model_ontology(config, ontology, &corpus.train)?;
    Model::new(
        config.model_config(),
        ontology,
        corpus.vocab.clone(),
        config.contextual_embedder()?,
        config.seed,
    )
}

/// Train a fresh model; the best dev checkpoint is retained.
pub fn train(config: &TrainConfig, corpus: &Corpus, ontology: &Ontology) -> Result<TrainOutcome> {
    let model = init_model(config, corpus, ontology)?;
    train_model(model, config, &corpus.train, &corpus.dev, None)
}

fn clip(grads: &mut Gradients, max_norm: f64) {
    if max_norm > 0.0 {
        let n = grads.norm();
        if n > max_norm {
            grads.scale(max_norm / n);
        }
    }
}

/// Optimize an existing model on `train`, selecting by dev joint accuracy.
/// Each epoch appends one JSON line to `log_path` when given.
pub fn train_model(
    mut model: Model,
    config: &TrainConfig,
    train: &[Dialogue],
    dev: &[Dialogue],
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySample("no training dialogues".into()));
    }
    let (examples, preprocess) = prepare_all(&model, train);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0001);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0002);
    let mut adam = Adam::new(config.learning_rate, &model.params);
    let mut log_file = match log_path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            Some(std::fs::File::create(p).map_err(|e| Error::io(p, e))?)
        }
        None => None,
    };
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamSet, EvalReport)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        let started = std::time::Instant::now();
        order.shuffle(&mut order_rng);
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::for_params(&model.params);
            let mut batch_loss = LossBreakdown::default();
            for &i in batch {
                let mut noise = Noise {
                    dropout: config.dropout,
                    word_dropout: config.word_dropout,
                    rng: &mut noise_rng,
                };
                let (loss, _) = model.loss_and_gradients(&examples[i], Some(&mut noise), Hooks::default(), &mut grads)?;
                if !loss.is_finite() {
                    let ids: Vec<&str> = batch.iter().map(|&j| train[j].id.as_str()).collect();
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("non-finite loss {loss:?} on dialogue {} in batch {ids:?}", train[i].id),
                    });
                }
                batch_loss.add(&loss);
            }
            if !grads.all_finite() {
                let ids: Vec<&str> = batch.iter().map(|&j| train[j].id.as_str()).collect();
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite gradient in batch {ids:?} (loss {batch_loss:?})"),
                });
            }
            clip(&mut grads, config.grad_clip);
            adam.step(&mut model.params, &grads);
            epoch_loss.add(&batch_loss);
        }

        let dev_report = if dev.is_empty() {
            None
        } else {
            Some(evaluate_model(&model, dev)?.0)
        };
        let train_joint = if config.eval_train || config.target_train_joint.is_some() {
            Some(evaluate_model(&model, train)?.0.joint)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            loss_v: epoch_loss.value,
            loss_st: epoch_loss.span_type,
            loss_span: epoch_loss.span,
            dev_joint: dev_report.as_ref().map(|r| r.joint),
            dev_slot: dev_report.as_ref().map(|r| r.slot),
            train_joint,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(f, "{line}").map_err(|e| Error::io(log_path.unwrap(), e))?;
        }
        log.push(record);

        if let Some(report) = dev_report {
            if best.as_ref().is_none_or(|(b, ..)| report.joint > *b) {
                best = Some((report.joint, epoch, model.params.clone(), report));
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        if since_best >= config.patience.max(1) {
            break;
        }
        if let (Some(target), Some(j)) = (config.target_train_joint, train_joint) {
            if j >= target {
                break;
            }
        }
    }
    let (best_epoch, best_dev) = match best {
        Some((_, epoch, params, report)) => {
            model.params = params;
            (Some(epoch), Some(report))
        }
        None => (None, None),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_dev,
        preprocess,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub train_config: TrainConfig,
    pub model_config: ModelConfig,
    pub ontology_hash: String,
    pub ontology_file: String,
    pub vocab_file: String,
    pub provider: String,
    pub params_file: String,
    pub params_sha256: String,
    pub params: Vec<ParamEntry>,
    pub active_domains: Option<Vec<String>>,
    pub metrics: BTreeMap<String, f64>,
}

fn params_blob(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.scalar_count() * 8);
    for id in params.ids() {
        for v in params.get(id).iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `manifest.json`, `params.bin`, `vocab.json` and `ontology.json`.
pub fn save_checkpoint(
    model: &Model,
    config: &TrainConfig,
    metrics: &BTreeMap<String, f64>,
    dir: &Path,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob = params_blob(&model.params);
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT,
        train_config: config.clone(),
        model_config: model.config.clone(),
        ontology_hash: model.ontology().hash(),
        ontology_file: "ontology.json".into(),
        vocab_file: "vocab.json".into(),
        provider: model.encoder().provider_identity(),
        params_file: "params.bin".into(),
        params_sha256: sha256_hex(&blob),
        params: model
            .params
            .ids()
            .map(|id| {
                let (rows, cols) = model.params.get(id).dim();
                ParamEntry {
                    name: model.params.name(id).to_string(),
                    rows,
                    cols,
                }
            })
            .collect(),
        active_domains: model.active_domains(),
        metrics: metrics.clone(),
    };
    let path = dir.join(&manifest.params_file);
    std::fs::write(&path, &blob).map_err(|e| Error::io(&path, e))?;
    write_string(&dir.join(&manifest.vocab_file), &model.vocab().to_json())?;
    write_string(&dir.join(&manifest.ontology_file), &model.ontology().to_json())?;
    write_string(
        &dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

fn checkpoint_error(dir: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint(format!("{}: {}", dir.display(), msg.into()))
}

/// Load a checkpoint, verifying the parameter hash and layout.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&read_to_string(&dir.join("manifest.json"))?)
        .map_err(|e| checkpoint_error(dir, e.to_string()))?;
    if manifest.format_version != CHECKPOINT_FORMAT {
        return Err(checkpoint_error(dir, format!("unsupported format {}", manifest.format_version)));
    }
    let ontology = Ontology::load(dir.join(&manifest.ontology_file))?;
    if ontology.hash() != manifest.ontology_hash {
        return Err(Error::OntologyMismatch {
            expected: manifest.ontology_hash.clone(),
            actual: ontology.hash(),
        });
    }
    let vocab = Vocab::from_json(&read_to_string(&dir.join(&manifest.vocab_file))?)?;
    let path = dir.join(&manifest.params_file);
    let blob = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if sha256_hex(&blob) != manifest.params_sha256 {
        return Err(checkpoint_error(dir, "parameter blob does not match manifest hash"));
    }
    let contextual = manifest.train_config.contextual_embedder()?;
    let mut model = Model::new(manifest.model_config.clone(), ontology, vocab, contextual, 0)?;
    if model.encoder().provider_identity() != manifest.provider {
        return Err(checkpoint_error(
            dir,
            format!(
                "embedding provider {} differs from recorded {}",
                model.encoder().provider_identity(),
                manifest.provider
            ),
        ));
    }
    let ids: Vec<_> = model.params.ids().collect();
    if ids.len() != manifest.params.len() {
        return Err(checkpoint_error(dir, "parameter count differs"));
    }
    let mut offset = 0;
    for (id, entry) in ids.into_iter().zip(&manifest.params) {
        let shape = model.params.get(id).dim();
        if model.params.name(id) != entry.name || shape != (entry.rows, entry.cols) {
            return Err(checkpoint_error(dir, format!("parameter {} layout differs", entry.name)));
        }
        let n = entry.rows * entry.cols * 8;
        let bytes = blob
            .get(offset..offset + n)
            .ok_or_else(|| checkpoint_error(dir, "parameter blob too short"))?;
        for (slot, chunk) in model.params.get_mut(id).iter_mut().zip(bytes.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        offset += n;
    }
    if offset != blob.len() {
        return Err(checkpoint_error(dir, "parameter blob too long"));
    }
    model.set_active_domains(manifest.active_domains.as_deref())?;
    Ok((model, manifest))
}

/// Load and refuse when the checkpoint was trained for another ontology.
pub fn load_checkpoint_for(dir: &Path, ontology: &Ontology) -> Result<(Model, Manifest)> {
    let (model, manifest) = load_checkpoint(dir)?;
    let expected = model_ontology(&manifest.train_config, ontology, &[]).unwrap_or_else(|_| ontology.clone());
    if expected.hash() != manifest.ontology_hash && ontology.hash() != manifest.ontology_hash {
        return Err(Error::OntologyMismatch {
            expected: manifest.ontology_hash.clone(),
            actual: ontology.hash(),
        });
    }
    Ok((model, manifest))
}

/// Sequential per-turn states for a dialogue using a loaded model.
pub fn predict_dialogue(model: &Model, dialogue: &Dialogue) -> Result<Vec<crate::corpus::DialogueState>> {
    model.predict_dialogue(dialogue)
}

/// True when the model predicts some span-mode slot.
pub fn uses_span_prediction(model: &Model) -> bool {
    model.questions().iter().any(|q| q.mode == SlotMode::Span)
}
