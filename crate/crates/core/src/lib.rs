//! Joint intention recognition and emotion prediction for multi-turn
//! dialogues.
//!
//! The model couples two per-utterance encoders with a keyword-derived
//! intention prior, an LSTM over the running intention representations, a
//! matching-style fusion layer and two softmax heads trained jointly. The
//! numeric core is a small reverse-mode tape whose gradients are verified by
//! central differences, so every layer here is checkable end to end.

pub mod corpus;
pub mod diffcore;
pub mod encoders;
pub mod intentdict;
pub mod rain;
pub mod trainer;

pub use corpus::{
    gen_synthetic, Corpus, CorpusError, Dialogue, EmotionLabel, IntentionLabel, Split, Splits,
    Utterance, Vocabulary,
};
pub use diffcore::{
    DiffError, GradCheckReport, ParamId, ParamTensor, ParameterStore, Shape, Tape, Tensor,
};
pub use intentdict::{DictError, IntentionDictionary};
pub use rain::{AblationFlags, Checkpoint, RainConfig, RainModel, TurnActivations};
pub use trainer::{
    evaluate, MetricsReport, TaskMetrics, TrainConfig, TrainError, TrainOutcome,
};
