//! Single binary wiring the whole pipeline: data generation, dictionary
//! building, training, evaluation, ablation, prediction, explanation and
//! gradient checking.
//!
//! Exit codes: 0 success, 1 failed check or assertion, 2 configuration
//! error, 3 data error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rain_core::corpus::{self, Corpus, Split};
use rain_core::intentdict::IntentionDictionary;
use rain_core::rain::{gradient_check_suite, Checkpoint, RainError};
use rain_core::trainer::{self, TrainError, TrainTask};

use config::{load_config, RunConfig};

#[derive(Parser)]
#[command(name = "rain", version, about = "Joint intention and emotion modeling for dialogues")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration file
    #[arg(long)]
    config: PathBuf,
    /// Override a config value by dotted path, e.g. --set train.epochs=3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dialogue corpus and its splits file
    GenData(Common),
    /// Build the intention dictionary from the train split
    BuildDict(Common),
    /// Train a model; writes the checkpoint and the per-epoch CSV
    Train {
        #[command(flatten)]
        common: Common,
        /// Task for single-task configs (multi_task=false): intention|emotion
        #[arg(long)]
        task: Option<String>,
    },
    /// Evaluate a checkpoint on one split; prints a JSON metrics report
    Eval {
        #[command(flatten)]
        common: Common,
        /// Split to evaluate: train|dev|test
        #[arg(long, default_value = "test")]
        split: String,
        /// Checkpoint file; defaults to <output>/rain.ckpt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train all ablation variants and write the contribution table
    Ablate(Common),
    /// Predict labels and head distributions for unlabeled dialogues
    Predict {
        #[command(flatten)]
        common: Common,
        /// Input JSONL of dialogues (labels optional)
        #[arg(long)]
        input: PathBuf,
        /// Output JSONL; defaults to <output>/predictions.jsonl
        #[arg(long)]
        output: Option<PathBuf>,
        /// Checkpoint file; defaults to <output>/rain.ckpt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Emit template explanations of the emotion predictions
    Explain {
        #[command(flatten)]
        common: Common,
        /// Input JSONL of dialogues
        #[arg(long)]
        input: PathBuf,
        /// Output text file; prints to stdout when omitted
        #[arg(long)]
        output: Option<PathBuf>,
        /// Checkpoint file; defaults to <output>/rain.ckpt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Verify analytic gradients against central differences
    Gradcheck(Common),
}

enum Failure {
    Config(String),
    Data(String),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Check(m) => m,
        }
    }
}

impl From<corpus::CorpusError> for Failure {
    fn from(e: corpus::CorpusError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<rain_core::intentdict::DictError> for Failure {
    fn from(e: rain_core::intentdict::DictError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<rain_core::rain::CheckpointError> for Failure {
    fn from(e: rain_core::rain::CheckpointError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<RainError> for Failure {
    fn from(e: RainError) -> Self {
        match e {
            RainError::Config(_) => Failure::Config(e.to_string()),
            RainError::MissingLabel { .. } => Failure::Data(e.to_string()),
            RainError::Diff(_) => Failure::Check(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Failure::Config(e.to_string()),
            TrainError::EmptySplit(_) | TrainError::MissingGold { .. } | TrainError::Io { .. } => {
                Failure::Data(e.to_string())
            }
            TrainError::NonFiniteLoss { .. } | TrainError::Diff(_) => {
                Failure::Check(e.to_string())
            }
            TrainError::Rain(inner) => inner.into(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData(common) => gen_data(&load(&common)?),
        Command::BuildDict(common) => build_dict(&load(&common)?),
        Command::Train { common, task } => train(&load(&common)?, task.as_deref()),
        Command::Eval {
            common,
            split,
            checkpoint,
        } => eval(&load(&common)?, &split, checkpoint.as_deref()),
        Command::Ablate(common) => ablate(&load(&common)?),
        Command::Predict {
            common,
            input,
            output,
            checkpoint,
        } => predict(&load(&common)?, &input, output.as_deref(), checkpoint.as_deref()),
        Command::Explain {
            common,
            input,
            output,
            checkpoint,
        } => explain(&load(&common)?, &input, output.as_deref(), checkpoint.as_deref()),
        Command::Gradcheck(common) => gradcheck(&load(&common)?),
    }
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    load_config(&common.config, &common.set).map_err(Failure::Config)
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Failure::Data(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    Ok(())
}

fn load_corpus(config: &RunConfig) -> Result<Corpus, Failure> {
    Ok(Corpus::load(&config.data.jsonl, &config.data.splits)?)
}

/// Loads the dictionary file, or rebuilds it from the corpus when absent.
fn load_dict(config: &RunConfig, corpus: &Corpus) -> Result<IntentionDictionary, Failure> {
    let path = config.dict_path();
    if path.exists() {
        Ok(IntentionDictionary::load(&path)?)
    } else {
        log::info!(
            "dictionary {} not found; building it from the train split",
            path.display()
        );
        Ok(IntentionDictionary::build(corpus, config.dict.min_count))
    }
}

fn gen_data(config: &RunConfig) -> Result<(), Failure> {
    let corpus = corpus::gen_synthetic(
        config.data.synthetic.seed,
        config.data.synthetic.n_dialogues,
    );
    ensure_parent(&config.data.jsonl)?;
    ensure_parent(&config.data.splits)?;
    corpus.save(&config.data.jsonl, &config.data.splits)?;
    println!(
        "wrote {} dialogues ({} train / {} dev / {} test) to {}",
        corpus.dialogues.len(),
        corpus.splits.train.len(),
        corpus.splits.dev.len(),
        corpus.splits.test.len(),
        config.data.jsonl.display()
    );
    Ok(())
}

fn build_dict(config: &RunConfig) -> Result<(), Failure> {
    let corpus = load_corpus(config)?;
    let dict = IntentionDictionary::build(&corpus, config.dict.min_count);
    let path = config.dict_path();
    ensure_parent(&path)?;
    dict.save(&path)?;
    println!("wrote {} phrases to {}", dict.len(), path.display());
    Ok(())
}

fn train(config: &RunConfig, task: Option<&str>) -> Result<(), Failure> {
    let corpus = load_corpus(config)?;
    let dict = load_dict(config, &corpus)?;
    let rain_config = config.model.to_rain_config(corpus.vocabulary.len());
    let task = match (rain_config.flags.multi_task, task) {
        (true, None) => TrainTask::Joint,
        (true, Some(other)) => {
            return Err(Failure::Config(format!(
                "--task {other} conflicts with multi_task=true"
            )))
        }
        (false, Some("intention")) => TrainTask::IntentionOnly,
        (false, Some("emotion")) => TrainTask::EmotionOnly,
        (false, Some(other)) => {
            return Err(Failure::Config(format!(
                "--task must be intention or emotion, got {other}"
            )))
        }
        (false, None) => {
            return Err(Failure::Config(
                "multi_task=false needs --task intention|emotion".into(),
            ))
        }
    };
    let ckpt_path = config.checkpoint_path();
    let csv_path = config.epoch_csv_path();
    ensure_parent(&ckpt_path)?;
    let outcome = trainer::train(
        &corpus,
        &dict,
        &rain_config,
        &config.train,
        task,
        Some(&csv_path),
    )?;
    outcome.checkpoint.save(&ckpt_path)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "trained {} epochs; best epoch {} (dev intention F1 {:.4}, emotion F1 {:.4})",
        outcome.history.len(),
        outcome.best_epoch,
        best.dev_intention_f1,
        best.dev_emotion_f1
    );
    println!("checkpoint: {}", ckpt_path.display());
    println!("epoch curve: {}", csv_path.display());
    Ok(())
}

fn eval(config: &RunConfig, split: &str, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let split = Split::from_name(split)
        .ok_or_else(|| Failure::Config(format!("unknown split {split:?}")))?;
    let corpus = load_corpus(config)?;
    let dict = load_dict(config, &corpus)?;
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.checkpoint_path());
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let (model, vocab) = ckpt.into_model()?;
    if vocab != corpus.vocabulary {
        return Err(Failure::Data(
            "checkpoint vocabulary does not match the corpus; was it trained on this data?".into(),
        ));
    }
    let report = trainer::evaluate(&model, &dict, &corpus, split)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

fn ablate(config: &RunConfig) -> Result<(), Failure> {
    let corpus = load_corpus(config)?;
    let dict = load_dict(config, &corpus)?;
    let rain_config = config.model.to_rain_config(corpus.vocabulary.len());
    let table = trainer::ablate(&corpus, &dict, &rain_config, &config.train)?;
    let path = config.ablation_csv_path();
    ensure_parent(&path)?;
    table.write_csv(&path)?;
    print!("{}", table.to_csv());
    println!("wrote {}", path.display());
    Ok(())
}

fn load_checkpoint_model(
    config: &RunConfig,
    checkpoint: Option<&Path>,
) -> Result<(rain_core::rain::RainModel<f32>, rain_core::corpus::Vocabulary), Failure> {
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.checkpoint_path());
    let ckpt = Checkpoint::load(&ckpt_path)?;
    Ok(ckpt.into_model()?)
}

/// Dictionary for inference-time priors: the configured file if present,
/// otherwise empty (the prior degrades to the zero vector).
fn inference_dict(config: &RunConfig) -> Result<IntentionDictionary, Failure> {
    let path = config.dict_path();
    if path.exists() {
        Ok(IntentionDictionary::load(&path)?)
    } else {
        if config.model.use_dict {
            log::warn!(
                "dictionary {} not found; predictions run with a zero prior",
                path.display()
            );
        }
        Ok(IntentionDictionary::new())
    }
}

fn predict(
    config: &RunConfig,
    input: &Path,
    output: Option<&Path>,
    checkpoint: Option<&Path>,
) -> Result<(), Failure> {
    let (model, vocab) = load_checkpoint_model(config, checkpoint)?;
    let dict = inference_dict(config)?;
    let mut dialogues = corpus::load_jsonl(input)?;
    for d in &mut dialogues {
        for u in &mut d.utterances {
            u.tokens = corpus::tokenize(&u.text, &vocab);
        }
    }
    let out_path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output.join("predictions.jsonl"));
    ensure_parent(&out_path)?;
    let mut lines = String::new();
    for d in &dialogues {
        let acts = model.dialogue_forward(d, &dict, &vocab)?;
        let utterances: Vec<serde_json::Value> = d
            .utterances
            .iter()
            .zip(&acts)
            .map(|(u, a)| {
                let mut obj = serde_json::json!({
                    "speaker": u.speaker,
                    "text": u.text,
                    "intention": a.predicted_intention().name(),
                    "emotion": a.predicted_emotion().name(),
                    "p_intention": a.intention_probs,
                    "p_emotion": a.emotion_probs,
                });
                if let Some(kws) = &u.keywords {
                    obj["keywords"] = serde_json::json!(kws);
                }
                obj
            })
            .collect();
        let line = serde_json::json!({ "id": d.id, "utterances": utterances });
        lines.push_str(&serde_json::to_string(&line).expect("line serializes"));
        lines.push('\n');
    }
    std::fs::write(&out_path, lines)
        .map_err(|e| Failure::Data(format!("cannot write {}: {e}", out_path.display())))?;
    println!("wrote predictions for {} dialogues to {}", dialogues.len(), out_path.display());
    Ok(())
}

fn explain(
    config: &RunConfig,
    input: &Path,
    output: Option<&Path>,
    checkpoint: Option<&Path>,
) -> Result<(), Failure> {
    let (model, vocab) = load_checkpoint_model(config, checkpoint)?;
    let dict = inference_dict(config)?;
    let mut dialogues = corpus::load_jsonl(input)?;
    for d in &mut dialogues {
        for u in &mut d.utterances {
            u.tokens = corpus::tokenize(&u.text, &vocab);
        }
    }
    let mut text = String::new();
    for d in &dialogues {
        let acts = model.dialogue_forward(d, &dict, &vocab)?;
        text.push_str(&format!("# {}\n", d.id));
        for line in trainer::explain(d, &acts) {
            text.push_str(&line);
            text.push('\n');
        }
    }
    match output {
        Some(path) => {
            ensure_parent(path)?;
            std::fs::write(path, text)
                .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))?;
            println!("wrote explanations to {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn gradcheck(config: &RunConfig) -> Result<(), Failure> {
    const THRESHOLD: f64 = 1e-4;
    let report = gradient_check_suite(
        config.model.hidden_dim,
        config.model.embed_dim,
        config.model.intention_encoder,
        config.train.seed,
        1e-4,
        200,
    )?;
    println!(
        "max relative error: {:.3e} at {}[{}] over {} entries",
        report.max_rel_err, report.worst_param, report.worst_index, report.entries_checked
    );
    if report.max_rel_err < THRESHOLD {
        println!("gradcheck passed (threshold {THRESHOLD:.0e})");
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradcheck failed: {:.3e} >= {THRESHOLD:.0e}",
            report.max_rel_err
        )))
    }
}
