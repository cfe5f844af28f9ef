//! Pluggable utterance encoders mapping token ids to a sentence vector in
//! R^h, plus the encoder-only baseline model (one encoder, two affine heads,
//! no prior, no history, no fusion).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, EmotionLabel, IntentionLabel};
use crate::diffcore::{
    gru_cell, Activation, DiffError, GruParams, Init, NodeId, ParamId, ParameterStore, Real,
    Shape, Tape, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Meanpool,
    Gru,
    GruAttn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err("encoder dims must be >= 1".into());
        }
        if self.vocab_size < 2 {
            return Err("vocab_size must cover the reserved pad/unk ids".into());
        }
        Ok(())
    }
}

enum KindParams {
    Meanpool {
        w: ParamId,
        b: ParamId,
    },
    Gru {
        gru: GruParams,
    },
    GruAttn {
        gru: GruParams,
        query: ParamId,
        w: ParamId,
        b: ParamId,
    },
}

/// One encoder instance; the intention side and the emotion side always get
/// independent instances with separate parameters.
pub struct EncoderParams {
    config: EncoderConfig,
    table: ParamId,
    kind: KindParams,
}

impl EncoderParams {
    pub fn register<F: Real, R: Rng>(
        store: &mut ParameterStore<F>,
        rng: &mut R,
        prefix: &str,
        config: EncoderConfig,
    ) -> Result<Self, DiffError> {
        let table = store.register(
            &format!("{prefix}.embed"),
            Shape::Matrix {
                rows: config.vocab_size,
                cols: config.embed_dim,
            },
            Init::Glorot {
                fan_in: config.vocab_size,
                fan_out: config.embed_dim,
            },
            rng,
        )?;
        let kind = match config.kind {
            EncoderKind::Meanpool => KindParams::Meanpool {
                w: store.register(
                    &format!("{prefix}.w"),
                    Shape::Matrix {
                        rows: config.embed_dim,
                        cols: config.hidden_dim,
                    },
                    Init::Glorot {
                        fan_in: config.embed_dim,
                        fan_out: config.hidden_dim,
                    },
                    rng,
                )?,
                b: store.register(
                    &format!("{prefix}.b"),
                    Shape::Vector(config.hidden_dim),
                    Init::Zeros,
                    rng,
                )?,
            },
            EncoderKind::Gru => KindParams::Gru {
                gru: GruParams::register(
                    store,
                    rng,
                    &format!("{prefix}.gru"),
                    config.embed_dim,
                    config.hidden_dim,
                )?,
            },
            EncoderKind::GruAttn => KindParams::GruAttn {
                gru: GruParams::register(
                    store,
                    rng,
                    &format!("{prefix}.gru"),
                    config.embed_dim,
                    config.hidden_dim,
                )?,
                query: store.register(
                    &format!("{prefix}.attn_query"),
                    Shape::Vector(config.hidden_dim),
                    Init::Glorot {
                        fan_in: config.hidden_dim,
                        fan_out: 1,
                    },
                    rng,
                )?,
                w: store.register(
                    &format!("{prefix}.w"),
                    Shape::Matrix {
                        rows: config.hidden_dim,
                        cols: config.hidden_dim,
                    },
                    Init::Glorot {
                        fan_in: config.hidden_dim,
                        fan_out: config.hidden_dim,
                    },
                    rng,
                )?,
                b: store.register(
                    &format!("{prefix}.b"),
                    Shape::Vector(config.hidden_dim),
                    Init::Zeros,
                    rng,
                )?,
            },
        };
        Ok(EncoderParams {
            config,
            table,
            kind,
        })
    }

    /// Re-binds parameter ids by name, for stores rebuilt from a checkpoint.
    pub fn resolve<F: Real>(
        store: &ParameterStore<F>,
        prefix: &str,
        config: EncoderConfig,
    ) -> Result<Self, DiffError> {
        let need = |name: String| -> Result<ParamId, DiffError> {
            store
                .id_of(&name)
                .ok_or(DiffError::UnknownParam(name))
        };
        let table = need(format!("{prefix}.embed"))?;
        let resolve_gru = || -> Result<GruParams, DiffError> {
            let mut wx = [table; 3];
            let mut wh = [table; 3];
            let mut b = [table; 3];
            for (k, gate) in ["z", "r", "n"].iter().enumerate() {
                wx[k] = need(format!("{prefix}.gru.wx_{gate}"))?;
                wh[k] = need(format!("{prefix}.gru.wh_{gate}"))?;
                b[k] = need(format!("{prefix}.gru.b_{gate}"))?;
            }
            Ok(GruParams { wx, wh, b })
        };
        let kind = match config.kind {
            EncoderKind::Meanpool => KindParams::Meanpool {
                w: need(format!("{prefix}.w"))?,
                b: need(format!("{prefix}.b"))?,
            },
            EncoderKind::Gru => KindParams::Gru { gru: resolve_gru()? },
            EncoderKind::GruAttn => KindParams::GruAttn {
                gru: resolve_gru()?,
                query: need(format!("{prefix}.attn_query"))?,
                w: need(format!("{prefix}.w"))?,
                b: need(format!("{prefix}.b"))?,
            },
        };
        Ok(EncoderParams {
            config,
            table,
            kind,
        })
    }

    pub fn config(&self) -> EncoderConfig {
        self.config
    }

    /// Sentence vector in R^hidden for one utterance. An empty utterance
    /// encodes to the zero vector.
    pub fn encode<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParameterStore<F>,
        tokens: &[u32],
    ) -> Result<NodeId, DiffError> {
        if tokens.is_empty() {
            return tape.constant(Tensor::zeros(Shape::Vector(self.config.hidden_dim)));
        }
        let table = tape.param(store, self.table)?;
        let rows: Vec<NodeId> = tokens
            .iter()
            .map(|&t| tape.embed_row(table, t as usize))
            .collect::<Result<_, _>>()?;
        match &self.kind {
            KindParams::Meanpool { w, b } => {
                let pooled = tape.mean_stack(&rows)?;
                let wn = tape.param(store, *w)?;
                let bn = tape.param(store, *b)?;
                let lin = tape.affine(pooled, wn, bn)?;
                tape.activation(Activation::Tanh, lin)
            }
            KindParams::Gru { gru } => {
                let mut h = tape.constant(Tensor::zeros(Shape::Vector(self.config.hidden_dim)))?;
                for &row in &rows {
                    h = gru_cell(tape, store, gru, row, h)?;
                }
                Ok(h)
            }
            KindParams::GruAttn { gru, query, w, b } => {
                let mut h = tape.constant(Tensor::zeros(Shape::Vector(self.config.hidden_dim)))?;
                let mut states = Vec::with_capacity(rows.len());
                for &row in &rows {
                    h = gru_cell(tape, store, gru, row, h)?;
                    states.push(h);
                }
                let q = tape.param(store, *query)?;
                let scale = 1.0 / (self.config.hidden_dim as f64).sqrt();
                let logits: Vec<NodeId> = states
                    .iter()
                    .map(|&s| {
                        let d = tape.dot(q, s)?;
                        tape.scale(d, scale)
                    })
                    .collect::<Result<_, _>>()?;
                let stacked = tape.concat(&logits)?;
                let weights = tape.softmax(stacked)?;
                let pooled = tape.weighted_sum(weights, &states)?;
                let wn = tape.param(store, *w)?;
                let bn = tape.param(store, *b)?;
                tape.affine(pooled, wn, bn)
            }
        }
    }
}

/// Per-utterance (intention, emotion) logit vectors.
pub type HeadLogits = (Vec<f64>, Vec<f64>);

/// Encoder-plus-heads model used as the comparison baseline: the encoder
/// output feeds two independent affine heads directly.
pub struct BaselineModel<F: Real> {
    store: ParameterStore<F>,
    encoder: EncoderParams,
    head_intention_w: ParamId,
    head_intention_b: ParamId,
    head_emotion_w: ParamId,
    head_emotion_b: ParamId,
}

impl<F: Real> BaselineModel<F> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, DiffError> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let encoder = EncoderParams::register(&mut store, &mut rng, "encoder", config)?;
        let h = config.hidden_dim;
        let head_intention_w = store.register(
            "intention_head.w",
            Shape::Matrix {
                rows: h,
                cols: IntentionLabel::COUNT,
            },
            Init::Glorot {
                fan_in: h,
                fan_out: IntentionLabel::COUNT,
            },
            &mut rng,
        )?;
        let head_intention_b = store.register(
            "intention_head.b",
            Shape::Vector(IntentionLabel::COUNT),
            Init::Zeros,
            &mut rng,
        )?;
        let head_emotion_w = store.register(
            "emotion_head.w",
            Shape::Matrix {
                rows: h,
                cols: EmotionLabel::COUNT,
            },
            Init::Glorot {
                fan_in: h,
                fan_out: EmotionLabel::COUNT,
            },
            &mut rng,
        )?;
        let head_emotion_b = store.register(
            "emotion_head.b",
            Shape::Vector(EmotionLabel::COUNT),
            Init::Zeros,
            &mut rng,
        )?;
        Ok(BaselineModel {
            store,
            encoder,
            head_intention_w,
            head_intention_b,
            head_emotion_w,
            head_emotion_b,
        })
    }

    pub fn store(&self) -> &ParameterStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore<F> {
        &mut self.store
    }

    /// Logit nodes for one utterance.
    pub fn utterance_logits(
        &self,
        tape: &mut Tape<F>,
        tokens: &[u32],
    ) -> Result<(NodeId, NodeId), DiffError> {
        let encoded = self.encoder.encode(tape, &self.store, tokens)?;
        let wi = tape.param(&self.store, self.head_intention_w)?;
        let bi = tape.param(&self.store, self.head_intention_b)?;
        let we = tape.param(&self.store, self.head_emotion_w)?;
        let be = tape.param(&self.store, self.head_emotion_b)?;
        let li = tape.affine(encoded, wi, bi)?;
        let le = tape.affine(encoded, we, be)?;
        Ok((li, le))
    }

    /// Per-utterance (intention logits, emotion logits) for a dialogue.
    pub fn dialogue_forward(&self, dialogue: &Dialogue) -> Result<Vec<HeadLogits>, DiffError> {
        let mut tape = Tape::new();
        let mut out = Vec::with_capacity(dialogue.utterances.len());
        for u in &dialogue.utterances {
            let (li, le) = self.utterance_logits(&mut tape, &u.tokens)?;
            out.push((
                tape.value(li).to_f64_vec(),
                tape.value(le).to_f64_vec(),
            ));
        }
        Ok(out)
    }
}
