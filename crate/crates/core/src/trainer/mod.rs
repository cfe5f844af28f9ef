//! Optimization loop, grid search, evaluation, the ablation runner and the
//! explanation emitter.

mod ablate;
mod explain;
mod metrics;

pub use ablate::{ablate, AblationRow, AblationTable};
pub use explain::explain;
pub use metrics::{compute_task_metrics, evaluate, ClassMetrics, MetricsReport, TaskMetrics};

use std::fs;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Split};
use crate::diffcore::{DiffError, ParameterStore, Tape};
use crate::intentdict::IntentionDictionary;
use crate::rain::{Checkpoint, RainConfig, RainError, RainModel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Rain(#[from] RainError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("train config: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("dialogue {dialogue:?}, turn {turn}: missing gold label")]
    MissingGold { dialogue: String, turn: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which loss is optimized. Joint training requires `multi_task` in the
/// model flags; the single-task variants train two separate models.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainTask {
    Joint,
    IntentionOnly,
    EmotionOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Candidate lists for the hyperparameter grid. The defaults are sized for
/// from-scratch desk-scale encoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub epochs: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            learning_rates: vec![1e-3, 3e-3],
            batch_sizes: vec![16, 32],
            epochs: vec![3, 12],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 16,
            epochs: 8,
            seed: 42,
            adam: AdamConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate < 0.0 {
            return Err(TrainError::Config("learning_rate must be >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config(
                "batch_size and epochs must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(TrainError::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_intention_f1: f64,
    pub dev_emotion_f1: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn write_epoch_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        write_epoch_csv(&self.history, path)
    }
}

pub fn write_epoch_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<(), TrainError> {
    let path = path.as_ref();
    let mut out = String::from("epoch,train_loss,dev_intention_f1,dev_emotion_f1\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.epoch, r.train_loss, r.dev_intention_f1, r.dev_emotion_f1
        ));
    }
    fs::write(path, out).map_err(|e| TrainError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
    config: AdamConfig,
    learning_rate: f64,
}

impl Adam {
    fn new(store: &ParameterStore<f32>, config: AdamConfig, learning_rate: f64) -> Self {
        let sizes: Vec<usize> = store.iter().map(|(_, p)| p.value().len()).collect();
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            config,
            learning_rate,
        }
    }

    fn step(&mut self, store: &mut ParameterStore<f32>) {
        self.step += 1;
        let b1 = self.config.beta1 as f32;
        let b2 = self.config.beta2 as f32;
        let eps = self.config.eps as f32;
        let lr = self.learning_rate as f32;
        let bias1 = 1.0 - b1.powi(self.step as i32);
        let bias2 = 1.0 - b2.powi(self.step as i32);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (pi, id) in ids.into_iter().enumerate() {
            let (value, grad) = store.get_mut(id).value_and_grad();
            for ((x, &g), (m, v)) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(self.m[pi].iter_mut().zip(self.v[pi].iter_mut()))
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

fn selection_metric(task: TrainTask, report: &MetricsReport) -> f64 {
    match task {
        TrainTask::Joint => (report.intention.macro_f1 + report.emotion.macro_f1) / 2.0,
        TrainTask::IntentionOnly => report.intention.macro_f1,
        TrainTask::EmotionOnly => report.emotion.macro_f1,
    }
}

/// Trains one model: seeded shuffles, Adam on the task loss, one dev
/// evaluation per epoch, and an epoch-curve CSV when a path is given.
/// Returns the checkpoint of the best dev epoch.
pub fn train(
    corpus: &Corpus,
    dict: &IntentionDictionary,
    rain_config: &RainConfig,
    train_config: &TrainConfig,
    task: TrainTask,
    epoch_csv: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    train_config.validate()?;
    rain_config.validate()?;
    match (rain_config.flags.multi_task, task) {
        (true, TrainTask::Joint) => {}
        (false, TrainTask::IntentionOnly) | (false, TrainTask::EmotionOnly) => {}
        (true, other) => {
            return Err(TrainError::Config(format!(
                "multi_task config requires joint training, got {other:?}"
            )))
        }
        (false, TrainTask::Joint) => {
            return Err(TrainError::Config(
                "single-task config cannot train jointly; pick a task".into(),
            ))
        }
    }
    let train_dialogues = corpus.split_dialogues(Split::Train);
    if train_dialogues.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if corpus.split_dialogues(Split::Dev).is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }
    for d in &train_dialogues {
        for (i, u) in d.utterances.iter().enumerate() {
            if u.intention.is_none() || u.emotion.is_none() {
                return Err(TrainError::MissingGold {
                    dialogue: d.id.clone(),
                    turn: i,
                });
            }
        }
    }

    let mut model = RainModel::<f32>::new(*rain_config, train_config.seed)?;
    let mut adam = Adam::new(
        model.store(),
        train_config.adam,
        train_config.learning_rate,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    shuffle_rng.set_stream(1);

    let n = train_dialogues.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(train_config.epochs);
    let mut best: Option<(f64, usize, ParameterStore<f32>)> = None;

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss_sum = 0.0f64;
        for (batch_idx, chunk) in order.chunks(train_config.batch_size).enumerate() {
            model.store_mut().zero_grads();
            let mut tape = Tape::new();
            let mut lm_terms = Vec::with_capacity(chunk.len());
            let mut le_terms = Vec::with_capacity(chunk.len());
            for &di in chunk {
                let d = train_dialogues[di];
                let (lm, le) =
                    model.dialogue_loss_graph(&mut tape, d, dict, &corpus.vocabulary)?;
                lm_terms.push(lm);
                le_terms.push(le);
            }
            let k = chunk.len() as f64;
            let lm_sum = tape.sum_stack(&lm_terms)?;
            let le_sum = tape.sum_stack(&le_terms)?;
            let loss = match task {
                TrainTask::Joint => {
                    let lm = tape.scale(lm_sum, rain_config.lambda_intention / k)?;
                    let le = tape.scale(le_sum, rain_config.lambda_emotion / k)?;
                    tape.add(lm, le)?
                }
                TrainTask::IntentionOnly => tape.scale(lm_sum, 1.0 / k)?,
                TrainTask::EmotionOnly => tape.scale(le_sum, 1.0 / k)?,
            };
            let loss_value = tape.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss_sum += loss_value * k;
            tape.backward(loss, model.store_mut())?;
            adam.step(model.store_mut());
        }
        let train_loss = epoch_loss_sum / n as f64;
        let report = evaluate(&model, dict, corpus, Split::Dev)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            dev_intention_f1: report.intention.macro_f1,
            dev_emotion_f1: report.emotion.macro_f1,
        };
        history.push(record);
        let metric = selection_metric(task, &report);
        let improved = best.as_ref().is_none_or(|(b, _, _)| metric > *b);
        if improved {
            best = Some((metric, epoch, model.store().clone()));
        }
    }

    let (_, best_epoch, best_store) = best.expect("at least one epoch ran");
    if let Some(path) = epoch_csv {
        write_epoch_csv(&history, path)?;
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: *rain_config,
            vocab: corpus.vocabulary.clone(),
            store: best_store,
        },
        history,
        best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dev_metric: f64,
}

/// Full sweep over the grid lists with a shared seed. Returns the winning
/// outcome (highest dev selection metric; earlier grid point wins ties) and
/// one row per grid point.
pub fn grid_search(
    corpus: &Corpus,
    dict: &IntentionDictionary,
    rain_config: &RainConfig,
    base: &TrainConfig,
    task: TrainTask,
) -> Result<(TrainConfig, TrainOutcome, Vec<GridRow>), TrainError> {
    let mut rows = Vec::new();
    let mut best: Option<(f64, TrainConfig, TrainOutcome)> = None;
    for &lr in &base.grid.learning_rates {
        for &batch in &base.grid.batch_sizes {
            for &epochs in &base.grid.epochs {
                let cfg = TrainConfig {
                    learning_rate: lr,
                    batch_size: batch,
                    epochs,
                    ..base.clone()
                };
                let outcome = train(corpus, dict, rain_config, &cfg, task, None)?;
                let record = &outcome.history[outcome.best_epoch - 1];
                let metric = match task {
                    TrainTask::Joint => (record.dev_intention_f1 + record.dev_emotion_f1) / 2.0,
                    TrainTask::IntentionOnly => record.dev_intention_f1,
                    TrainTask::EmotionOnly => record.dev_emotion_f1,
                };
                rows.push(GridRow {
                    learning_rate: lr,
                    batch_size: batch,
                    epochs,
                    dev_metric: metric,
                });
                if best.as_ref().is_none_or(|(b, _, _)| metric > *b) {
                    best = Some((metric, cfg, outcome));
                }
            }
        }
    }
    let (_, cfg, outcome) = best.ok_or_else(|| TrainError::Config("empty grid".into()))?;
    Ok((cfg, outcome, rows))
}

/// Trains the encoder-only baseline jointly on both heads with equal
/// weights. Used for history-free reference points.
pub fn train_baseline(
    corpus: &Corpus,
    encoder: crate::encoders::EncoderConfig,
    train_config: &TrainConfig,
) -> Result<crate::encoders::BaselineModel<f32>, TrainError> {
    use crate::encoders::BaselineModel;
    train_config.validate()?;
    let train_dialogues = corpus.split_dialogues(Split::Train);
    if train_dialogues.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let mut model = BaselineModel::<f32>::new(encoder, train_config.seed)?;
    let mut adam = Adam::new(
        model.store(),
        train_config.adam,
        train_config.learning_rate,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    shuffle_rng.set_stream(1);
    let n = train_dialogues.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch_idx, chunk) in order.chunks(train_config.batch_size).enumerate() {
            model.store_mut().zero_grads();
            let mut tape = Tape::new();
            let mut terms = Vec::new();
            for &di in chunk {
                let d = train_dialogues[di];
                for (i, u) in d.utterances.iter().enumerate() {
                    let gm = u.intention.ok_or(TrainError::MissingGold {
                        dialogue: d.id.clone(),
                        turn: i,
                    })?;
                    let ge = u.emotion.ok_or(TrainError::MissingGold {
                        dialogue: d.id.clone(),
                        turn: i,
                    })?;
                    let (li, le) = model.utterance_logits(&mut tape, &u.tokens)?;
                    let (_, lm) = tape.softmax_xent(li, gm.index())?;
                    let (_, lx) = tape.softmax_xent(le, ge.index())?;
                    terms.push(lm);
                    terms.push(lx);
                }
            }
            let sum = tape.sum_stack(&terms)?;
            let loss = tape.scale(sum, 0.5 / chunk.len() as f64)?;
            if !tape.value(loss).data()[0].is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            tape.backward(loss, model.store_mut())?;
            adam.step(model.store_mut());
        }
    }
    Ok(model)
}

/// Argmax emotion predictions of a trained baseline over one split,
/// parallel to the gold labels.
pub fn baseline_emotion_predictions(
    model: &crate::encoders::BaselineModel<f32>,
    corpus: &Corpus,
    split: Split,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let mut golds = Vec::new();
    let mut preds = Vec::new();
    for d in corpus.split_dialogues(split) {
        let logits = model.dialogue_forward(d)?;
        for (i, (u, (_, le))) in d.utterances.iter().zip(&logits).enumerate() {
            let ge = u.emotion.ok_or(TrainError::MissingGold {
                dialogue: d.id.clone(),
                turn: i,
            })?;
            golds.push(ge.index());
            preds.push(crate::rain::argmax(le));
        }
    }
    Ok((golds, preds))
}
