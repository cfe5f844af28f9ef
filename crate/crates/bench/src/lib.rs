//! Shared fixtures for the pipeline benchmarks.

use rain_core::corpus::{gen_synthetic, Corpus};
use rain_core::encoders::{EncoderConfig, EncoderKind};
use rain_core::intentdict::IntentionDictionary;
use rain_core::rain::{AblationFlags, RainConfig, RainModel};

pub struct BenchSetup {
    pub corpus: Corpus,
    pub dict: IntentionDictionary,
    pub model: RainModel<f32>,
}

pub fn setup(hidden_dim: usize, n_dialogues: usize) -> BenchSetup {
    let corpus = gen_synthetic(7, n_dialogues);
    let dict = IntentionDictionary::build(&corpus, 2);
    let enc = EncoderConfig {
        kind: EncoderKind::Meanpool,
        embed_dim: 16,
        hidden_dim,
        vocab_size: corpus.vocabulary.len(),
    };
    let config = RainConfig {
        hidden_dim,
        lambda_intention: 0.5,
        lambda_emotion: 0.5,
        intention_encoder: enc,
        emotion_encoder: enc,
        flags: AblationFlags::default(),
    };
    let model = RainModel::new(config, 42).expect("valid config");
    BenchSetup {
        corpus,
        dict,
        model,
    }
}
