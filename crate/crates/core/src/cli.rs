//! Command-line entry points.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{
    build_turn_examples, generate_synthetic, ingest_multiwoz, load_dialogues, Corpus, Dialogue, DialogueState,
    PreprocessReport, SyntheticConfig, Turn,
};
use crate::error::{read_to_string, write_string, Error};
use crate::evaluation::{domain_expansion_run, per_domain_eval, score, EvalReport, ExpansionMode};
use crate::model::Model;
use crate::ontology::{build_questions, Ontology};
use crate::text::RuleLemmatizer;
use crate::trainer::{
    init_model, load_checkpoint, load_checkpoint_for, save_checkpoint, train_model, Manifest, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "dstqa", version, about = "Dialogue state tracking as question answering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a raw MultiWOZ directory into canonical corpus files.
    Preprocess(PreprocessArgs),
    /// Write a deterministic synthetic corpus and its ontology.
    GenSynthetic(GenSyntheticArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint (or a predictions file) against gold states.
    Evaluate(EvaluateArgs),
    /// Run the domain-expansion protocol for one target domain.
    ExpandDomain(ExpandArgs),
    /// Predict per-turn states from a file or interactively.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Synthetic corpus description (JSON); defaults to the two-domain preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-size defaults.
    Full,
    /// Small dimensions for the synthetic corpus.
    Desk,
}

/// One flag per config key; set flags override the config file.
#[derive(Debug, Default, Args)]
pub struct ConfigFlags {
    /// Config file (TOML) with training keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base values used for keys absent from the config file.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub dropout: Option<String>,
    #[arg(long)]
    pub word_dropout: Option<String>,
    #[arg(long)]
    pub role_dim: Option<String>,
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub embeddings: Option<String>,
    #[arg(long)]
    pub word_dim: Option<String>,
    #[arg(long)]
    pub char_dim: Option<String>,
    #[arg(long)]
    pub char_embedding_dim: Option<String>,
    #[arg(long)]
    pub kernel_width: Option<String>,
    #[arg(long, value_enum)]
    pub graph: Option<OnOff>,
    #[arg(long)]
    pub propagation: Option<String>,
    #[arg(long)]
    pub slot_weight: Option<String>,
    #[arg(long, value_parser = ["span", "value"])]
    pub span_mode: Option<String>,
    #[arg(long)]
    pub context_window: Option<String>,
    #[arg(long)]
    pub max_span_len: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub grad_clip: Option<String>,
    #[arg(long)]
    pub target_train_joint: Option<String>,
    #[arg(long)]
    pub eval_train: Option<String>,
}

impl ConfigFlags {
    fn overrides(&self) -> Vec<(String, String)> {
        let quoted = |s: &String| format!("{s:?}");
        let pairs: [(&str, Option<String>); 23] = [
            ("learning_rate", self.learning_rate.clone()),
            ("dropout", self.dropout.clone()),
            ("word_dropout", self.word_dropout.clone()),
            ("role_dim", self.role_dim.clone()),
            ("provider", self.provider.as_ref().map(quoted)),
            ("embeddings", self.embeddings.as_ref().map(quoted)),
            ("word_dim", self.word_dim.clone()),
            ("char_dim", self.char_dim.clone()),
            ("char_embedding_dim", self.char_embedding_dim.clone()),
            ("kernel_width", self.kernel_width.clone()),
            ("graph", self.graph.map(|g| (g == OnOff::On).to_string())),
            ("propagation", self.propagation.as_ref().map(quoted)),
            ("slot_weight", self.slot_weight.clone()),
            ("span_mode", self.span_mode.as_ref().map(quoted)),
            ("context_window", self.context_window.clone()),
            ("max_span_len", self.max_span_len.clone()),
            ("epochs", self.epochs.clone()),
            ("batch_size", self.batch_size.clone()),
            ("patience", self.patience.clone()),
            ("seed", self.seed.clone()),
            ("grad_clip", self.grad_clip.clone()),
            ("target_train_joint", self.target_train_joint.clone()),
            ("eval_train", self.eval_train.clone()),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
            .collect()
    }

    /// Preset, then config file, then flags.
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let base = match self.preset {
            Some(Preset::Desk) => TrainConfig::desk(),
            _ => TrainConfig::default(),
        };
        let base = match &self.config {
            Some(path) => {
                let text = read_to_string(path)?;
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                let pairs: Vec<(String, String)> = table.into_iter().map(|(k, v)| (k, v.to_string())).collect();
                base.with_overrides(&pairs).map_err(usage)?
            }
            None => base,
        };
        base.with_overrides(&self.overrides()).map_err(usage)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory with train.json and dev.json.
    #[arg(long)]
    pub input: PathBuf,
    /// Ontology file; defaults to `<input>/ontology.json`.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Predicted states as written by `predict`, scored instead of a checkpoint.
    #[arg(long, requires = "ontology")]
    pub predictions: Option<PathBuf>,
    /// Dialogue file, or a corpus directory (its test split is used).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub domain: Option<String>,
    /// Override the checkpoint's context window (turns; 0 keeps all).
    #[arg(long)]
    pub context_window: Option<usize>,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Scratch,
    Finetune,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub domain: String,
    #[arg(long)]
    pub fraction: f64,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigFlags,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["input", "interactive"])))]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub interactive: bool,
    /// Refuse the checkpoint unless it was trained for this ontology.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub context_window: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

/// Per-dialogue predicted states, the batch output of `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialoguePrediction {
    pub dialogue_id: String,
    pub states: Vec<DialogueState>,
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes") + "\n"
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(p) => write_string(p, text)?,
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(())
}

fn config_metadata(config: &TrainConfig) -> Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    v["graph"] = json!(if config.graph { "on" } else { "off" });
    v
}

fn default_ontology(input: &Path, explicit: Option<&PathBuf>) -> Result<Ontology, CliError> {
    let path = explicit.cloned().unwrap_or_else(|| input.join("ontology.json"));
    if !path.exists() && explicit.is_none() {
        return Err(CliError::Usage(format!(
            "no --ontology given and {} does not exist",
            path.display()
        )));
    }
    Ok(Ontology::load(&path)?)
}

fn load_eval_dialogues(input: &Path) -> Result<Vec<Dialogue>, CliError> {
    if input.is_dir() {
        Ok(load_dialogues(&input.join("test.json"))?)
    } else {
        Ok(load_dialogues(input)?)
    }
}

fn run_preprocess(args: &PreprocessArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let ontology = Ontology::load(&args.ontology)?;
    let (corpus, ingest) = ingest_multiwoz(&args.raw, &ontology)?;
    if corpus.is_empty() {
        return Err(Error::Validation(format!("no dialogues ingested from {}", args.raw.display())).into());
    }
    let questions = build_questions(&ontology);
    let lemmatizer = RuleLemmatizer::default();
    let mut labels = PreprocessReport::default();
    for d in corpus.dialogues() {
        labels.merge(&build_turn_examples(d, &questions, None, &lemmatizer).1);
    }
    corpus.save_dir(&args.out)?;
    write_string(&args.out.join("ontology.json"), &ontology.to_json())?;
    let report = json!({
        "ingest": ingest,
        "labels": labels,
        "splits": {"train": corpus.train.len(), "dev": corpus.dev.len(), "test": corpus.test.len()},
    });
    write_string(&args.out.join("report.json"), &to_json(&report))?;
    writeln!(
        stdout,
        "{} dialogues kept, {} span labels, {} span label misses",
        ingest.dialogues_kept, labels.span_labels, labels.span_label_misses
    )
    .map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

fn run_gen_synthetic(args: &GenSyntheticArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = match &args.config {
        Some(p) => serde_json::from_str(&read_to_string(p)?).map_err(|e| Error::Schema {
            context: p.display().to_string(),
            message: e.to_string(),
        })?,
        None => SyntheticConfig::two_domain(50).with_splits(20, 20),
    };
    let (corpus, ontology) = generate_synthetic(&config, args.seed)?;
    corpus.save_dir(&args.out)?;
    write_string(&args.out.join("ontology.json"), &ontology.to_json())?;
    writeln!(
        stdout,
        "wrote {} train, {} dev, {} test dialogues to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        args.out.display()
    )
    .map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

fn run_train(args: &TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let ontology = default_ontology(&args.input, args.ontology.as_ref())?;
    let (corpus, _) = Corpus::load_dir(&args.input, &ontology)?;
    let model = init_model(&config, &corpus, &ontology)?;
    let log_path = args.out.join("train_log.jsonl");
    let outcome = train_model(model, &config, &corpus.train, &corpus.dev, Some(&log_path))?;
    let mut metrics = BTreeMap::new();
    if let Some(r) = &outcome.best_dev {
        metrics.insert("dev_joint".to_string(), r.joint);
        metrics.insert("dev_slot".to_string(), r.slot);
    }
    metrics.insert("epochs_run".to_string(), outcome.log.len() as f64);
    save_checkpoint(&outcome.model, &config, &metrics, &args.out)?;
    std::fs::write(args.out.join("config.toml"), config.to_toml()).map_err(|e| Error::io(&args.out, e))?;
    writeln!(
        stdout,
        "trained {} epochs; best epoch {:?}; dev joint {}",
        outcome.log.len(),
        outcome.best_epoch,
        outcome.best_dev.as_ref().map_or("n/a".into(), |r| format!("{:.4}", r.joint))
    )
    .map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

fn checkpoint_model(
    checkpoint: &Path,
    ontology: Option<&PathBuf>,
    context_window: Option<usize>,
) -> Result<(Model, Manifest), CliError> {
    let (mut model, manifest) = match ontology {
        Some(p) => load_checkpoint_for(checkpoint, &Ontology::load(p)?)?,
        None => load_checkpoint(checkpoint)?,
    };
    if let Some(w) = context_window {
        model.config.context_window = (w > 0).then_some(w);
    }
    Ok((model, manifest))
}

fn run_evaluate(args: &EvaluateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let dialogues = load_eval_dialogues(&args.input)?;
    let mut report: EvalReport = if let Some(pred_path) = &args.predictions {
        let ontology = Ontology::load(args.ontology.as_ref().expect("clap requires ontology"))?;
        let preds: Vec<DialoguePrediction> =
            serde_json::from_str(&read_to_string(pred_path)?).map_err(|e| Error::Schema {
                context: pred_path.display().to_string(),
                message: e.to_string(),
            })?;
        let by_id: BTreeMap<&str, &DialoguePrediction> = preds.iter().map(|p| (p.dialogue_id.as_str(), p)).collect();
        let predicted = dialogues
            .iter()
            .map(|d| {
                by_id
                    .get(d.id.as_str())
                    .map(|p| p.states.clone())
                    .ok_or_else(|| Error::Alignment(format!("no prediction for dialogue {}", d.id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut report = match &args.domain {
            Some(domain) => {
                let keep: Vec<usize> = (0..dialogues.len()).filter(|&i| dialogues[i].mentions_domain(domain)).collect();
                let dom = ontology.restrict_domains(&[domain.as_str()]).map_err(|_| Error::UnknownDomain(domain.clone()))?;
                let restrict = |s: &DialogueState| {
                    let mut s = s.clone();
                    s.retain(|k| &k.domain == domain);
                    s
                };
                let gold: Vec<Dialogue> = keep
                    .iter()
                    .map(|&i| {
                        let mut d = dialogues[i].clone();
                        d.turns.iter_mut().for_each(|t| t.state = restrict(&t.state));
                        d
                    })
                    .collect();
                let pred: Vec<Vec<DialogueState>> =
                    keep.iter().map(|&i| predicted[i].iter().map(restrict).collect()).collect();
                score(&pred, &gold, &dom)?
            }
            None => score(&predicted, &dialogues, &ontology)?,
        };
        report.metadata.insert("source".into(), json!("predictions"));
        report
    } else {
        let checkpoint = args.checkpoint.as_ref().expect("clap requires checkpoint");
        let (model, manifest) = checkpoint_model(checkpoint, args.ontology.as_ref(), args.context_window)?;
        let mut report = match &args.domain {
            Some(domain) => per_domain_eval(&dialogues, &model, domain)?,
            None => crate::evaluation::evaluate_model(&model, &dialogues)?.0,
        };
        let mut config = config_metadata(&manifest.train_config);
        config["context_window"] = json!(model.config.context_window.unwrap_or(0));
        report.metadata.insert("config".into(), config);
        report.metadata.insert("graph".into(), json!(if model.config.graph { "on" } else { "off" }));
        report.metadata.insert("checkpoint".into(), json!(checkpoint.display().to_string()));
        report.metadata.insert("ontology_hash".into(), json!(manifest.ontology_hash));
        report
    };
    if let Some(d) = &args.domain {
        report.metadata.insert("domain".into(), json!(d));
    }
    emit(args.out.as_deref(), &report.to_json(), stdout)
}

fn run_expand(args: &ExpandArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let ontology = default_ontology(&args.input, args.ontology.as_ref())?;
    let (corpus, _) = Corpus::load_dir(&args.input, &ontology)?;
    let mode = match args.mode {
        ModeArg::Scratch => ExpansionMode::Scratch,
        ModeArg::Finetune => ExpansionMode::Finetune,
    };
    let mut result = domain_expansion_run(&corpus, &ontology, &args.domain, args.fraction, mode, &config)?;
    result
        .report
        .metadata
        .insert("sampled_ids".into(), json!(result.sampled_ids));
    result.report.metadata.insert("config".into(), config_metadata(&config));
    emit(args.out.as_deref(), &to_json(&result), stdout)
}

/// Interactive prediction: alternating agent and user lines; the state is
/// printed after each user line. `:reset` starts a new dialogue, `:quit`
/// ends the session.
pub fn repl(model: &Model, input: &mut dyn BufRead, output: &mut dyn Write) -> crate::Result<()> {
    let io = |e| Error::io("<stdio>", e);
    let mut dialogue = Dialogue {
        id: "interactive".into(),
        turns: Vec::new(),
    };
    let mut agent: Option<String> = None;
    let mut line = String::new();
    loop {
        let prompt = if agent.is_none() { "agent> " } else { "user> " };
        write!(output, "{prompt}").map_err(io)?;
        output.flush().map_err(io)?;
        line.clear();
        if input.read_line(&mut line).map_err(io)? == 0 {
            writeln!(output).map_err(io)?;
            return Ok(());
        }
        let text = line.trim_end_matches(['\n', '\r']);
        match text.trim() {
            ":quit" => return Ok(()),
            ":reset" => {
                dialogue.turns.clear();
                agent = None;
                writeln!(output, "(reset)").map_err(io)?;
                continue;
            }
            _ => {}
        }
        match agent.take() {
            None => agent = Some(text.to_string()),
            Some(a) => {
                dialogue.turns.push(Turn {
                    agent: a,
                    user: text.to_string(),
                    state: DialogueState::new(),
                });
                let states = model.predict_dialogue(&dialogue)?;
                let state = states.last().cloned().unwrap_or_default();
                writeln!(output, "{}", serde_json::to_string(&state).expect("state serializes")).map_err(io)?;
            }
        }
    }
}

fn run_predict(
    args: &PredictArgs,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let (model, _) = checkpoint_model(&args.checkpoint, args.ontology.as_ref(), args.context_window)?;
    if args.interactive {
        return Ok(repl(&model, stdin, stdout)?);
    }
    let input = args.input.as_ref().expect("clap requires a source");
    let dialogues = load_dialogues(input)?;
    let out: Vec<DialoguePrediction> = dialogues
        .iter()
        .map(|d| {
            Ok(DialoguePrediction {
                dialogue_id: d.id.clone(),
                states: model.predict_dialogue(d)?,
            })
        })
        .collect::<crate::Result<_>>()?;
    emit(args.out.as_deref(), &to_json(&out), stdout)
}

/// Run one parsed command.
pub fn execute(cli: &Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Preprocess(a) => run_preprocess(a, stdout),
        Command::GenSynthetic(a) => run_gen_synthetic(a, stdout),
        Command::Train(a) => run_train(a, stdout),
        Command::Evaluate(a) => run_evaluate(a, stdout),
        Command::ExpandDomain(a) => run_expand(a, stdout),
        Command::Predict(a) => run_predict(a, stdin, stdout),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(stderr, "{}", e.render());
            return code;
        }
    };
    match execute(&cli, stdin, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
