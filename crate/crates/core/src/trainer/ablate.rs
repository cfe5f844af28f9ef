//! Component-contribution ablation: the flag-free base, each single
//! component on its own, and the full model, all trained with a shared seed
//! and scored on the test split.

use std::path::Path;

use crate::corpus::{Corpus, Split};
use crate::intentdict::IntentionDictionary;
use crate::rain::{AblationFlags, RainConfig};

use super::{evaluate, train, TrainConfig, TrainError, TrainTask};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    /// None where the component cannot affect the intention branch.
    pub intention_f1: Option<f64>,
    pub intention_delta: Option<f64>,
    pub emotion_f1: f64,
    pub emotion_delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,intention_f1,intention_delta,emotion_f1,emotion_delta\n");
        let cell = |v: Option<f64>| match v {
            Some(v) => format!("{v:.4}"),
            None => "-".to_string(),
        };
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4}\n",
                r.variant,
                cell(r.intention_f1),
                cell(r.intention_delta),
                r.emotion_f1,
                r.emotion_delta
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

fn with_flags(config: &RainConfig, flags: AblationFlags) -> RainConfig {
    RainConfig {
        flags,
        ..*config
    }
}

/// Test-split macro-F1 of both tasks for one flag setting. Single-task
/// settings train two separate models (or one, when the intention branch is
/// untouched by the component).
fn variant_scores(
    corpus: &Corpus,
    dict: &IntentionDictionary,
    config: &RainConfig,
    train_config: &TrainConfig,
    flags: AblationFlags,
    intention_applicable: bool,
) -> Result<(Option<f64>, f64), TrainError> {
    let cfg = with_flags(config, flags);
    if flags.multi_task {
        let outcome = train(corpus, dict, &cfg, train_config, TrainTask::Joint, None)?;
        let (model, _) = outcome.checkpoint.into_model()?;
        let report = evaluate(&model, dict, corpus, Split::Test)?;
        Ok((
            intention_applicable.then_some(report.intention.macro_f1),
            report.emotion.macro_f1,
        ))
    } else {
        let emotion = {
            let outcome = train(corpus, dict, &cfg, train_config, TrainTask::EmotionOnly, None)?;
            let (model, _) = outcome.checkpoint.into_model()?;
            evaluate(&model, dict, corpus, Split::Test)?.emotion.macro_f1
        };
        let intention = if intention_applicable {
            let outcome = train(
                corpus,
                dict,
                &cfg,
                train_config,
                TrainTask::IntentionOnly,
                None,
            )?;
            let (model, _) = outcome.checkpoint.into_model()?;
            Some(evaluate(&model, dict, corpus, Split::Test)?.intention.macro_f1)
        } else {
            None
        };
        Ok((intention, emotion))
    }
}

/// Trains six variants with a shared seed and reports macro-F1 plus the
/// delta against the base row. The fusion row leaves the intention column
/// empty: the fusion kernel sits entirely on the emotion branch.
pub fn ablate(
    corpus: &Corpus,
    dict: &IntentionDictionary,
    config: &RainConfig,
    train_config: &TrainConfig,
) -> Result<AblationTable, TrainError> {
    let off = AblationFlags::none();
    let variants: [(&str, AblationFlags, bool); 6] = [
        ("base", off, true),
        (
            "+intention_dictionary",
            AblationFlags { use_dict: true, ..off },
            true,
        ),
        (
            "+fusion",
            AblationFlags { use_fusion: true, ..off },
            false,
        ),
        (
            "+history",
            AblationFlags { use_history: true, ..off },
            true,
        ),
        (
            "+multi_task",
            AblationFlags { multi_task: true, ..off },
            true,
        ),
        ("full", AblationFlags::default(), true),
    ];

    let mut rows = Vec::with_capacity(variants.len());
    let mut base_scores: Option<(f64, f64)> = None;
    for (name, flags, intention_applicable) in variants {
        let (intention_f1, emotion_f1) = variant_scores(
            corpus,
            dict,
            config,
            train_config,
            flags,
            intention_applicable,
        )?;
        let (base_m, base_e) = match base_scores {
            Some(b) => b,
            None => {
                let b = (intention_f1.expect("base reports intention"), emotion_f1);
                base_scores = Some(b);
                b
            }
        };
        rows.push(AblationRow {
            variant: name.to_string(),
            intention_f1,
            intention_delta: intention_f1.map(|f| f - base_m),
            emotion_f1,
            emotion_delta: emotion_f1 - base_e,
        });
    }
    Ok(AblationTable { rows })
}
