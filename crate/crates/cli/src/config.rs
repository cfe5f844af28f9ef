//! The JSON run configuration. Unknown keys are rejected; every field has a
//! documented default, so a run is fully determined by the config file plus
//! its seeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rain_core::encoders::{EncoderConfig, EncoderKind};
use rain_core::rain::{AblationFlags, RainConfig};
use rain_core::trainer::TrainConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub dict: DictSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSection::default(),
            dict: DictSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub jsonl: PathBuf,
    pub splits: PathBuf,
    pub synthetic: SyntheticSection,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            jsonl: PathBuf::from("data/dialogues.jsonl"),
            splits: PathBuf::from("data/splits.json"),
            synthetic: SyntheticSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub seed: u64,
    pub n_dialogues: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            seed: 7,
            n_dialogues: 700,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictSection {
    pub min_count: u64,
    /// Dictionary file; defaults to <output>/dict.json when omitted.
    pub path: Option<PathBuf>,
}

impl Default for DictSection {
    fn default() -> Self {
        DictSection {
            min_count: 2,
            path: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub lambda_intention: f64,
    pub lambda_emotion: f64,
    pub intention_encoder: EncoderKind,
    pub emotion_encoder: EncoderKind,
    pub use_dict: bool,
    pub use_history: bool,
    pub use_fusion: bool,
    pub multi_task: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: 32,
            embed_dim: 16,
            lambda_intention: 0.5,
            lambda_emotion: 0.5,
            intention_encoder: EncoderKind::Meanpool,
            emotion_encoder: EncoderKind::Meanpool,
            use_dict: true,
            use_history: true,
            use_fusion: true,
            multi_task: true,
        }
    }
}

impl ModelSection {
    /// The vocabulary size is data-dependent, so it is injected here rather
    /// than read from the file.
    pub fn to_rain_config(&self, vocab_size: usize) -> RainConfig {
        let encoder = |kind| EncoderConfig {
            kind,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            vocab_size,
        };
        RainConfig {
            hidden_dim: self.hidden_dim,
            lambda_intention: self.lambda_intention,
            lambda_emotion: self.lambda_emotion,
            intention_encoder: encoder(self.intention_encoder),
            emotion_encoder: encoder(self.emotion_encoder),
            flags: AblationFlags {
                use_dict: self.use_dict,
                use_history: self.use_history,
                use_fusion: self.use_fusion,
                multi_task: self.multi_task,
            },
        }
    }
}

impl RunConfig {
    pub fn dict_path(&self) -> PathBuf {
        self.dict
            .path
            .clone()
            .unwrap_or_else(|| self.output.join("dict.json"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output.join("rain.ckpt")
    }

    pub fn epoch_csv_path(&self) -> PathBuf {
        self.output.join("epochs.csv")
    }

    pub fn ablation_csv_path(&self) -> PathBuf {
        self.output.join("ablation.csv")
    }
}

/// Loads the config file and applies `--set key=value` overrides by dotted
/// path (e.g. `train.epochs=3`). Values parse as JSON first, falling back to
/// a plain string.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("config is not valid JSON: {e}"))?;
    for item in overrides {
        apply_override(&mut value, item)?;
    }
    serde_json::from_value(value).map_err(|e| format!("invalid config: {e}"))
}

fn apply_override(root: &mut serde_json::Value, item: &str) -> Result<(), String> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| format!("--set expects KEY=VALUE, got {item:?}"))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cursor.is_object() {
            return Err(format!("--set {key}: {part:?} is not an object"));
        }
        let map = cursor.as_object_mut().unwrap();
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(format!("--set {key}: empty key"))
}
