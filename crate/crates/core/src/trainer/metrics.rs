//! Macro-averaged precision/recall/F1 with per-class breakdown and
//! confusion matrices. Macro averages run over the classes with nonzero gold
//! support, so tiny splits that lack a class do not drag the mean down.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmotionLabel, IntentionLabel, Split};
use crate::intentdict::IntentionDictionary;
use crate::rain::RainModel;

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// confusion[gold][predicted]
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub intention: TaskMetrics,
    pub emotion: TaskMetrics,
}

/// Per-class counting over (gold, predicted) index pairs.
pub fn compute_task_metrics(golds: &[usize], preds: &[usize], labels: &[&str]) -> TaskMetrics {
    assert_eq!(golds.len(), preds.len());
    let n = labels.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for (&g, &p) in golds.iter().zip(preds) {
        confusion[g][p] += 1;
    }
    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let tp = confusion[c][c];
        let fp: usize = (0..n).filter(|&g| g != c).map(|g| confusion[g][c]).sum();
        let fn_: usize = (0..n).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
        let support = tp + fn_;
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            label: labels[c].to_string(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let supported: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
    let k = supported.len().max(1) as f64;
    TaskMetrics {
        macro_precision: supported.iter().map(|c| c.precision).sum::<f64>() / k,
        macro_recall: supported.iter().map(|c| c.recall).sum::<f64>() / k,
        macro_f1: supported.iter().map(|c| c.f1).sum::<f64>() / k,
        per_class,
        confusion,
    }
}

/// Runs the model over one corpus split and scores argmax predictions
/// against the gold labels.
pub fn evaluate(
    model: &RainModel<f32>,
    dict: &IntentionDictionary,
    corpus: &Corpus,
    split: Split,
) -> Result<MetricsReport, TrainError> {
    let dialogues = corpus.split_dialogues(split);
    if dialogues.is_empty() {
        return Err(TrainError::EmptySplit(split.name()));
    }
    let mut gold_m = Vec::new();
    let mut pred_m = Vec::new();
    let mut gold_e = Vec::new();
    let mut pred_e = Vec::new();
    for d in dialogues {
        let acts = model.dialogue_forward(d, dict, &corpus.vocabulary)?;
        for (i, (u, a)) in d.utterances.iter().zip(&acts).enumerate() {
            let gm = u.intention.ok_or(TrainError::MissingGold {
                dialogue: d.id.clone(),
                turn: i,
            })?;
            let ge = u.emotion.ok_or(TrainError::MissingGold {
                dialogue: d.id.clone(),
                turn: i,
            })?;
            gold_m.push(gm.index());
            pred_m.push(a.predicted_intention().index());
            gold_e.push(ge.index());
            pred_e.push(a.predicted_emotion().index());
        }
    }
    let intention_labels: Vec<&str> = IntentionLabel::ALL.iter().map(|l| l.name()).collect();
    let emotion_labels: Vec<&str> = EmotionLabel::ALL.iter().map(|l| l.name()).collect();
    Ok(MetricsReport {
        intention: compute_task_metrics(&gold_m, &pred_m, &intention_labels),
        emotion: compute_task_metrics(&gold_e, &pred_e, &emotion_labels),
    })
}
