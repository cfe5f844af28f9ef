//! The joint model: a dictionary prior mixed into the intention branch, an
//! LSTM over the running intention vectors, a matching-style fusion of the
//! intention vector with that history, and two softmax heads.

mod checkpoint;

pub use checkpoint::{Checkpoint, CheckpointError};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dialogue, EmotionLabel, IntentionLabel, Vocabulary};
use crate::diffcore::{
    lstm_cell, Activation, DiffError, Init, LstmParams, NodeId, ParamId, ParameterStore, Real,
    Shape, Tape, Tensor,
};
use crate::encoders::{EncoderConfig, EncoderParams};
use crate::intentdict::IntentionDictionary;

#[derive(Debug, Error)]
pub enum RainError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("config: {0}")]
    Config(String),
    #[error("dialogue {dialogue:?}, turn {turn}: missing gold {what} label")]
    MissingLabel {
        dialogue: String,
        turn: usize,
        what: &'static str,
    },
}

/// Component switches for ablations. Disabled pieces are replaced by their
/// additive-neutral stand-ins: a zero prior, a zero history vector, or an
/// identity bypass of the fusion kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_dict: bool,
    pub use_history: bool,
    pub use_fusion: bool,
    pub multi_task: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_dict: true,
            use_history: true,
            use_fusion: true,
            multi_task: true,
        }
    }
}

impl AblationFlags {
    pub fn none() -> Self {
        AblationFlags {
            use_dict: false,
            use_history: false,
            use_fusion: false,
            multi_task: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainConfig {
    pub hidden_dim: usize,
    /// Weight of the intention loss in the joint objective.
    pub lambda_intention: f64,
    /// Weight of the emotion loss in the joint objective.
    pub lambda_emotion: f64,
    pub intention_encoder: EncoderConfig,
    pub emotion_encoder: EncoderConfig,
    #[serde(default)]
    pub flags: AblationFlags,
}

impl RainConfig {
    pub fn intention_classes(&self) -> usize {
        IntentionLabel::COUNT
    }

    pub fn emotion_classes(&self) -> usize {
        EmotionLabel::COUNT
    }

    pub fn validate(&self) -> Result<(), RainError> {
        if self.hidden_dim == 0 {
            return Err(RainError::Config("hidden_dim must be >= 1".into()));
        }
        if self.lambda_intention < 0.0 || self.lambda_emotion < 0.0 {
            return Err(RainError::Config("loss weights must be >= 0".into()));
        }
        for (side, enc) in [
            ("intention", &self.intention_encoder),
            ("emotion", &self.emotion_encoder),
        ] {
            enc.validate()
                .map_err(|e| RainError::Config(format!("{side} encoder: {e}")))?;
            if enc.hidden_dim != self.hidden_dim {
                return Err(RainError::Config(format!(
                    "{side} encoder hidden_dim {} must equal model hidden_dim {}",
                    enc.hidden_dim, self.hidden_dim
                )));
            }
        }
        Ok(())
    }
}

struct RainParamIds {
    enc_intention: EncoderParams,
    enc_emotion: EncoderParams,
    prior_combine_w: ParamId,
    intent_mlp_w1: ParamId,
    intent_mlp_b1: ParamId,
    intent_mlp_w2: ParamId,
    intent_mlp_b2: ParamId,
    history: LstmParams,
    fuse_w: ParamId,
    fuse_b: ParamId,
    emotion_combine_w: ParamId,
    emotion_combine_b: ParamId,
    intention_head_w: ParamId,
    intention_head_b: ParamId,
    emotion_head_w: ParamId,
    emotion_head_b: ParamId,
}

/// LSTM carry for one dialogue. Reset to zeros at the start of every
/// dialogue and advanced once per utterance in chronological order.
pub struct DialogueState {
    h: NodeId,
    c: NodeId,
    pub turn: usize,
}

/// Per-turn values captured during a forward pass, as plain vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnActivations {
    pub intention_encoding: Vec<f64>,
    pub emotion_encoding: Vec<f64>,
    pub prior: Vec<f64>,
    pub intention_vector: Vec<f64>,
    pub history: Vec<f64>,
    pub fused: Vec<f64>,
    pub emotion_vector: Vec<f64>,
    pub intention_probs: Vec<f64>,
    pub emotion_probs: Vec<f64>,
}

impl TurnActivations {
    pub fn predicted_intention(&self) -> IntentionLabel {
        IntentionLabel::from_index(argmax(&self.intention_probs)).unwrap()
    }

    pub fn predicted_emotion(&self) -> EmotionLabel {
        EmotionLabel::from_index(argmax(&self.emotion_probs)).unwrap()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) struct TurnNodes {
    pub s: NodeId,
    pub g: NodeId,
    pub prior: NodeId,
    pub s_tilde: NodeId,
    pub h: NodeId,
    pub f: NodeId,
    pub g_tilde: NodeId,
    pub intention_logits: NodeId,
    pub emotion_logits: NodeId,
}

pub struct RainModel<F: Real> {
    config: RainConfig,
    store: ParameterStore<F>,
    ids: RainParamIds,
}

impl<F: Real> RainModel<F> {
    /// Registers the full parameter set. Ablation flags never change the
    /// parameter set (or the RNG stream), only the forward data flow, so
    /// variants with a shared seed start from identical values.
    pub fn new(config: RainConfig, seed: u64) -> Result<Self, RainError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let h = config.hidden_dim;
        let ls = config.intention_classes();
        let le = config.emotion_classes();

        let enc_intention = EncoderParams::register(
            &mut store,
            &mut rng,
            "intention_encoder",
            config.intention_encoder,
        )?;
        let enc_emotion =
            EncoderParams::register(&mut store, &mut rng, "emotion_encoder", config.emotion_encoder)?;
        let glorot = |fan_in: usize, fan_out: usize| Init::Glorot { fan_in, fan_out };
        let prior_combine_w = store.register(
            "prior_combine.w",
            Shape::Matrix { rows: h, cols: ls },
            glorot(h, ls),
            &mut rng,
        )?;
        let intent_mlp_w1 = store.register(
            "intent_mlp.w1",
            Shape::Matrix { rows: ls, cols: h },
            glorot(ls, h),
            &mut rng,
        )?;
        let intent_mlp_b1 =
            store.register("intent_mlp.b1", Shape::Vector(h), Init::Zeros, &mut rng)?;
        let intent_mlp_w2 = store.register(
            "intent_mlp.w2",
            Shape::Matrix { rows: h, cols: h },
            glorot(h, h),
            &mut rng,
        )?;
        let intent_mlp_b2 =
            store.register("intent_mlp.b2", Shape::Vector(h), Init::Zeros, &mut rng)?;
        let history = LstmParams::register(&mut store, &mut rng, "history", h, h)?;
        let fuse_w = store.register(
            "fuse.w",
            Shape::Matrix { rows: 4 * h, cols: h },
            glorot(4 * h, h),
            &mut rng,
        )?;
        let fuse_b = store.register("fuse.b", Shape::Vector(h), Init::Zeros, &mut rng)?;
        let emotion_combine_w = store.register(
            "emotion_combine.w",
            Shape::Matrix { rows: 2 * h, cols: h },
            glorot(2 * h, h),
            &mut rng,
        )?;
        let emotion_combine_b =
            store.register("emotion_combine.b", Shape::Vector(h), Init::Zeros, &mut rng)?;
        let intention_head_w = store.register(
            "intention_head.w",
            Shape::Matrix { rows: h, cols: ls },
            glorot(h, ls),
            &mut rng,
        )?;
        let intention_head_b =
            store.register("intention_head.b", Shape::Vector(ls), Init::Zeros, &mut rng)?;
        let emotion_head_w = store.register(
            "emotion_head.w",
            Shape::Matrix { rows: h, cols: le },
            glorot(h, le),
            &mut rng,
        )?;
        let emotion_head_b =
            store.register("emotion_head.b", Shape::Vector(le), Init::Zeros, &mut rng)?;

        Ok(RainModel {
            config,
            store,
            ids: RainParamIds {
                enc_intention,
                enc_emotion,
                prior_combine_w,
                intent_mlp_w1,
                intent_mlp_b1,
                intent_mlp_w2,
                intent_mlp_b2,
                history,
                fuse_w,
                fuse_b,
                emotion_combine_w,
                emotion_combine_b,
                intention_head_w,
                intention_head_b,
                emotion_head_w,
                emotion_head_b,
            },
        })
    }

    /// Rebuilds a model around an existing parameter store (e.g. one read
    /// back from a checkpoint), re-binding ids by name.
    pub fn from_parts(config: RainConfig, store: ParameterStore<F>) -> Result<Self, RainError> {
        config.validate()?;
        let need = |name: &str| -> Result<ParamId, DiffError> {
            store
                .id_of(name)
                .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
        };
        let mut lstm = LstmParams {
            wx: [need("history.wx_i")?; 4],
            wh: [need("history.wh_i")?; 4],
            b: [need("history.b_i")?; 4],
        };
        for (k, gate) in ["i", "f", "g", "o"].iter().enumerate() {
            lstm.wx[k] = need(&format!("history.wx_{gate}"))?;
            lstm.wh[k] = need(&format!("history.wh_{gate}"))?;
            lstm.b[k] = need(&format!("history.b_{gate}"))?;
        }
        let ids = RainParamIds {
            enc_intention: EncoderParams::resolve(
                &store,
                "intention_encoder",
                config.intention_encoder,
            )?,
            enc_emotion: EncoderParams::resolve(&store, "emotion_encoder", config.emotion_encoder)?,
            prior_combine_w: need("prior_combine.w")?,
            intent_mlp_w1: need("intent_mlp.w1")?,
            intent_mlp_b1: need("intent_mlp.b1")?,
            intent_mlp_w2: need("intent_mlp.w2")?,
            intent_mlp_b2: need("intent_mlp.b2")?,
            history: lstm,
            fuse_w: need("fuse.w")?,
            fuse_b: need("fuse.b")?,
            emotion_combine_w: need("emotion_combine.w")?,
            emotion_combine_b: need("emotion_combine.b")?,
            intention_head_w: need("intention_head.w")?,
            intention_head_b: need("intention_head.b")?,
            emotion_head_w: need("emotion_head.w")?,
            emotion_head_b: need("emotion_head.b")?,
        };
        Ok(RainModel { config, store, ids })
    }

    pub fn config(&self) -> &RainConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore<F> {
        &mut self.store
    }

    /// s~ = MLP(ReLU(W^T s + p)); the prior enters as a constant, so no
    /// gradient flows into the dictionary.
    pub fn intention_forward(
        &self,
        tape: &mut Tape<F>,
        s: NodeId,
        prior: &[f64],
    ) -> Result<NodeId, RainError> {
        let w = tape.param(&self.store, self.ids.prior_combine_w)?;
        let neural = tape.matvec(s, w)?;
        let p = tape.constant(Tensor::from_f64(Shape::Vector(prior.len()), prior))?;
        let mixed = tape.add(neural, p)?;
        let z = tape.activation(Activation::Relu, mixed)?;
        let w1 = tape.param(&self.store, self.ids.intent_mlp_w1)?;
        let b1 = tape.param(&self.store, self.ids.intent_mlp_b1)?;
        let hidden = tape.affine(z, w1, b1)?;
        let hidden = tape.activation(Activation::Relu, hidden)?;
        let w2 = tape.param(&self.store, self.ids.intent_mlp_w2)?;
        let b2 = tape.param(&self.store, self.ids.intent_mlp_b2)?;
        Ok(tape.affine(hidden, w2, b2)?)
    }

    /// Fresh zero LSTM state for one dialogue.
    pub fn start_state(&self, tape: &mut Tape<F>) -> Result<DialogueState, RainError> {
        let h = tape.constant(Tensor::zeros(Shape::Vector(self.config.hidden_dim)))?;
        let c = tape.constant(Tensor::zeros(Shape::Vector(self.config.hidden_dim)))?;
        Ok(DialogueState { h, c, turn: 0 })
    }

    /// One LSTM step over the intention vector; the state is never carried
    /// across dialogues.
    pub fn history_step(
        &self,
        tape: &mut Tape<F>,
        s_tilde: NodeId,
        state: &mut DialogueState,
    ) -> Result<NodeId, RainError> {
        let (h, c) = lstm_cell(tape, &self.store, &self.ids.history, s_tilde, state.h, state.c)?;
        state.h = h;
        state.c = c;
        state.turn += 1;
        Ok(h)
    }

    /// f = tanh(W^T [s~; h; s~*h; s~-h] + b), the matching-style fusion.
    pub fn fuse(&self, tape: &mut Tape<F>, s_tilde: NodeId, h: NodeId) -> Result<NodeId, RainError> {
        let prod = tape.mul(s_tilde, h)?;
        let diff = tape.sub(s_tilde, h)?;
        let cat = tape.concat(&[s_tilde, h, prod, diff])?;
        let w = tape.param(&self.store, self.ids.fuse_w)?;
        let b = tape.param(&self.store, self.ids.fuse_b)?;
        let lin = tape.affine(cat, w, b)?;
        Ok(tape.activation(Activation::Tanh, lin)?)
    }

    /// g~ = ReLU(W^T [f; g] + b).
    pub fn emotion_forward(
        &self,
        tape: &mut Tape<F>,
        f: NodeId,
        g: NodeId,
    ) -> Result<NodeId, RainError> {
        let cat = tape.concat(&[f, g])?;
        let w = tape.param(&self.store, self.ids.emotion_combine_w)?;
        let b = tape.param(&self.store, self.ids.emotion_combine_b)?;
        let lin = tape.affine(cat, w, b)?;
        Ok(tape.activation(Activation::Relu, lin)?)
    }

    /// Logits of the two prediction heads.
    pub fn heads(
        &self,
        tape: &mut Tape<F>,
        s_tilde: NodeId,
        g_tilde: NodeId,
    ) -> Result<(NodeId, NodeId), RainError> {
        let wm = tape.param(&self.store, self.ids.intention_head_w)?;
        let bm = tape.param(&self.store, self.ids.intention_head_b)?;
        let we = tape.param(&self.store, self.ids.emotion_head_w)?;
        let be = tape.param(&self.store, self.ids.emotion_head_b)?;
        let lm = tape.affine(s_tilde, wm, bm)?;
        let le = tape.affine(g_tilde, we, be)?;
        Ok((lm, le))
    }

    pub(crate) fn forward_graph(
        &self,
        tape: &mut Tape<F>,
        dialogue: &Dialogue,
        dict: &IntentionDictionary,
        vocab: &Vocabulary,
    ) -> Result<Vec<TurnNodes>, RainError> {
        let flags = self.config.flags;
        let mut state = self.start_state(tape)?;
        let zero_history = tape.constant(Tensor::zeros(Shape::Vector(self.config.hidden_dim)))?;
        let mut turns = Vec::with_capacity(dialogue.utterances.len());
        for u in &dialogue.utterances {
            let s = self.ids.enc_intention.encode(tape, &self.store, &u.tokens)?;
            let g = self.ids.enc_emotion.encode(tape, &self.store, &u.tokens)?;
            let prior = if flags.use_dict {
                dict.lookup(&u.tokens, vocab)
            } else {
                [0.0; IntentionLabel::COUNT]
            };
            let prior_node = tape.constant(Tensor::from_f64(
                Shape::Vector(IntentionLabel::COUNT),
                &prior,
            ))?;
            let s_tilde = self.intention_forward(tape, s, &prior)?;
            let h = if flags.use_history {
                self.history_step(tape, s_tilde, &mut state)?
            } else {
                zero_history
            };
            let f = if flags.use_fusion {
                self.fuse(tape, s_tilde, h)?
            } else {
                s_tilde
            };
            let g_tilde = self.emotion_forward(tape, f, g)?;
            let (intention_logits, emotion_logits) = self.heads(tape, s_tilde, g_tilde)?;
            turns.push(TurnNodes {
                s,
                g,
                prior: prior_node,
                s_tilde,
                h,
                f,
                g_tilde,
                intention_logits,
                emotion_logits,
            });
        }
        Ok(turns)
    }

    /// Runs one dialogue and captures every intermediate per turn.
    pub fn dialogue_forward(
        &self,
        dialogue: &Dialogue,
        dict: &IntentionDictionary,
        vocab: &Vocabulary,
    ) -> Result<Vec<TurnActivations>, RainError> {
        let mut tape = Tape::new();
        let turns = self.forward_graph(&mut tape, dialogue, dict, vocab)?;
        Ok(turns
            .into_iter()
            .map(|t| {
                let take = |n: NodeId| tape.value(n).to_f64_vec();
                TurnActivations {
                    intention_encoding: take(t.s),
                    emotion_encoding: take(t.g),
                    prior: take(t.prior),
                    intention_vector: take(t.s_tilde),
                    history: take(t.h),
                    fused: take(t.f),
                    emotion_vector: take(t.g_tilde),
                    intention_probs: softmax_f64(&take(t.intention_logits)),
                    emotion_probs: softmax_f64(&take(t.emotion_logits)),
                }
            })
            .collect())
    }

    /// Builds the summed cross-entropy loss nodes of one dialogue: the
    /// intention term and the emotion term, each summed over the turns.
    pub fn dialogue_loss_graph(
        &self,
        tape: &mut Tape<F>,
        dialogue: &Dialogue,
        dict: &IntentionDictionary,
        vocab: &Vocabulary,
    ) -> Result<(NodeId, NodeId), RainError> {
        let turns = self.forward_graph(tape, dialogue, dict, vocab)?;
        let mut intention_terms = Vec::with_capacity(turns.len());
        let mut emotion_terms = Vec::with_capacity(turns.len());
        for (i, (t, u)) in turns.iter().zip(&dialogue.utterances).enumerate() {
            let gold_m = u.intention.ok_or_else(|| RainError::MissingLabel {
                dialogue: dialogue.id.clone(),
                turn: i,
                what: "intention",
            })?;
            let gold_e = u.emotion.ok_or_else(|| RainError::MissingLabel {
                dialogue: dialogue.id.clone(),
                turn: i,
                what: "emotion",
            })?;
            let (_, lm) = tape.softmax_xent(t.intention_logits, gold_m.index())?;
            let (_, le) = tape.softmax_xent(t.emotion_logits, gold_e.index())?;
            intention_terms.push(lm);
            emotion_terms.push(le);
        }
        let lm = tape.sum_stack(&intention_terms)?;
        let le = tape.sum_stack(&emotion_terms)?;
        Ok((lm, le))
    }
}

pub(crate) fn softmax_f64(logits: &[f64]) -> Vec<f64> {
    crate::diffcore::softmax_stable(logits)
}

/// Fixed probe corpus for end-to-end gradient checking: three dialogues of
/// three turns over exactly 48 distinct words (a 50-token vocabulary with
/// pad/unk) and a two-phrase dictionary. The check runs on the first two
/// dialogues; the third only pads the vocabulary and the phrase counts.
pub fn gradcheck_probe() -> (crate::corpus::Corpus, IntentionDictionary) {
    use crate::corpus::{Corpus, Splits, Utterance};
    let words: Vec<String> = (0..48).map(|i| format!("w{i:02}")).collect();
    let text = |ids: &[usize]| {
        ids.iter()
            .map(|&i| words[i].clone())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let utt = |ids: &[usize], m: IntentionLabel, e: EmotionLabel, kw: Option<&str>| Utterance {
        speaker: "A".into(),
        text: text(ids),
        tokens: Vec::new(),
        intention: Some(m),
        emotion: Some(e),
        keywords: kw.map(|k| vec![k.to_string()]),
    };
    let d0 = Dialogue {
        id: "g0".into(),
        utterances: vec![
            utt(
                &[0, 1, 2, 3],
                IntentionLabel::Request,
                EmotionLabel::Neutral,
                Some("w00 w01"),
            ),
            utt(&[4, 5, 6], IntentionLabel::Accept, EmotionLabel::Neutral, Some("w04")),
            utt(&[7, 8], IntentionLabel::Inform, EmotionLabel::Happy, None),
        ],
    };
    let d1 = Dialogue {
        id: "g1".into(),
        utterances: vec![
            utt(
                &[9, 10, 0, 1],
                IntentionLabel::Request,
                EmotionLabel::Neutral,
                Some("w00 w01"),
            ),
            utt(&[11, 12], IntentionLabel::Reject, EmotionLabel::Neutral, None),
            utt(&[13, 14, 15], IntentionLabel::Question, EmotionLabel::Sadness, None),
        ],
    };
    let d2 = Dialogue {
        id: "g2".into(),
        utterances: vec![
            utt(
                &[0, 1, 16],
                IntentionLabel::Request,
                EmotionLabel::Neutral,
                Some("w00 w01"),
            ),
            utt(&[4, 17], IntentionLabel::Accept, EmotionLabel::Neutral, Some("w04")),
            utt(
                &(18..48).collect::<Vec<usize>>(),
                IntentionLabel::Inform,
                EmotionLabel::Content,
                None,
            ),
        ],
    };
    let splits = Splits {
        train: vec!["g0".into(), "g1".into(), "g2".into()],
        dev: vec![],
        test: vec![],
    };
    let corpus = Corpus::assemble(vec![d0, d1, d2], splits).expect("probe is well-formed");
    debug_assert_eq!(corpus.vocabulary.len(), 50);
    let dict = IntentionDictionary::build(&corpus, 2);
    (corpus, dict)
}

/// Central-difference verification of the full model on the probe corpus:
/// two dialogues of three utterances, all components enabled, 64-bit
/// arithmetic. Large parameters are checked on a seeded sample of
/// `sample_cap` entries.
pub fn gradient_check_suite(
    hidden_dim: usize,
    embed_dim: usize,
    encoder_kind: crate::encoders::EncoderKind,
    seed: u64,
    eps: f64,
    sample_cap: usize,
) -> Result<crate::diffcore::GradCheckReport, RainError> {
    use crate::diffcore::grad_check;
    let (corpus, dict) = gradcheck_probe();
    let enc = EncoderConfig {
        kind: encoder_kind,
        embed_dim,
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
    let dialogues: Vec<Dialogue> = corpus.dialogues[..2].to_vec();
    let vocab = corpus.vocabulary.clone();
    let lambda_m = config.lambda_intention;
    let lambda_e = config.lambda_emotion;

    let mut store = RainModel::<f64>::new(config, seed)?.store().clone();
    // Nudge every entry (biases included) off its init value so no ReLU
    // pre-activation sits exactly on the kink, where central differences
    // straddle the non-differentiable point and disagree with the
    // (one-sided) analytic slope.
    {
        use rand::Rng;
        let mut nudge = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1e995);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            for v in store.get_mut(id).value_mut().data_mut() {
                *v += nudge.gen_range(-0.05..0.05);
            }
        }
    }
    let report = grad_check(&mut store, eps, sample_cap, seed ^ 0x9e3779b9, |store| {
        store.zero_grads();
        let view = RainModel::from_parts(config, store.clone())
            .expect("probe store resolves");
        let mut tape = Tape::new();
        let mut lm_terms = Vec::new();
        let mut le_terms = Vec::new();
        for d in &dialogues {
            let (lm, le) = view
                .dialogue_loss_graph(&mut tape, d, &dict, &vocab)
                .map_err(|e| match e {
                    RainError::Diff(d) => d,
                    other => panic!("probe dialogues are fully labeled: {other}"),
                })?;
            lm_terms.push(lm);
            le_terms.push(le);
        }
        let lm = tape.sum_stack(&lm_terms)?;
        let le = tape.sum_stack(&le_terms)?;
        let k = dialogues.len() as f64;
        let lm = tape.scale(lm, lambda_m / k)?;
        let le = tape.scale(le, lambda_e / k)?;
        let loss = tape.add(lm, le)?;
        let value = tape.value(loss).data()[0];
        tape.backward(loss, store)?;
        Ok(value)
    })?;
    Ok(report)
}

/// Plain-arithmetic batch loss from captured activations: per-task sums over
/// each dialogue's turns averaged over the dialogues of the batch, and the
/// lambda-weighted joint value.
pub fn batch_loss_from_activations(
    config: &RainConfig,
    batch: &[(&Dialogue, &[TurnActivations])],
) -> Result<(f64, f64, f64), RainError> {
    let k = batch.len();
    if k == 0 {
        return Err(RainError::Config("empty batch".into()));
    }
    let mut lm = 0.0;
    let mut le = 0.0;
    for (dialogue, acts) in batch {
        for (i, (u, a)) in dialogue.utterances.iter().zip(acts.iter()).enumerate() {
            let gold_m = u.intention.ok_or_else(|| RainError::MissingLabel {
                dialogue: dialogue.id.clone(),
                turn: i,
                what: "intention",
            })?;
            let gold_e = u.emotion.ok_or_else(|| RainError::MissingLabel {
                dialogue: dialogue.id.clone(),
                turn: i,
                what: "emotion",
            })?;
            lm -= a.intention_probs[gold_m.index()].ln();
            le -= a.emotion_probs[gold_e.index()].ln();
        }
    }
    lm /= k as f64;
    le /= k as f64;
    let joint = config.lambda_intention * lm + config.lambda_emotion * le;
    Ok((lm, le, joint))
}
