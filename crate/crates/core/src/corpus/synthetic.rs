//! Seeded synthetic dialogue generator.
//!
//! Every utterance embeds exactly one keyword phrase that determines its
//! intention. Emotions follow [`rule_emotion`]: a turn is emotional only when
//! the same speaker raised a request/suggest/command within the previous
//! three turns and the other speaker answered it, so the emotion of a turn is
//! not decidable from that turn's text alone. History-free models are capped
//! well below history-aware ones by construction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Dialogue, EmotionLabel, IntentionLabel, Splits, Utterance};

const FILLERS: &[&str] = &[
    "well", "so", "um", "oh", "anyway", "really", "honestly", "then", "today", "friend", "okay",
    "right", "just", "please",
];

const ARTICLES: &[&str] = &["the", "a", "that", "this", "some"];

const TOPICS: &[&str] = &[
    "burger", "coffee", "tea", "ticket", "book", "map", "chair", "phone", "song", "movie", "cake",
    "bike", "garden", "letter", "window", "picture", "lamp", "shoes", "hat", "clock",
];

/// Keyword pools. Each phrase contains at least one word that occurs in no
/// other intention's pool and in no filler, so intentions are recoverable
/// from the current utterance alone.
pub fn keyword_pool(intention: IntentionLabel) -> &'static [&'static str] {
    match intention {
        IntentionLabel::Request => &["would like", "ask for", "can i get"],
        IntentionLabel::Suggest => &["how about", "why not", "maybe try"],
        IntentionLabel::Command => &["do it now", "you must", "hurry up"],
        IntentionLabel::Accept => &["sounds good", "of course", "sure thing"],
        IntentionLabel::Reject => &["no way", "afraid not", "i refuse"],
        IntentionLabel::Question => &["what is", "where is", "how much"],
        IntentionLabel::Inform => &["for your information", "i heard", "turns out"],
    }
}

/// The generative emotion rule, applied to the (speaker, intention) sequence
/// of a dialogue prefix ending just before turn `t`:
///
/// - positive iff a request/suggest/command by the speaker of turn `t` within
///   the previous 3 turns was answered by the other speaker before `t`
///   (happy for an accept, content for an inform);
/// - negative iff the most recent such answer was a reject (sadness when the
///   raised intention was a request, disgust otherwise);
/// - neutral otherwise.
pub fn rule_emotion(turns: &[(&str, IntentionLabel)], t: usize) -> EmotionLabel {
    let speaker = turns[t].0;
    let lo = t.saturating_sub(3);
    // (response index, initiator index); the most recent response decides
    let mut best: Option<(usize, usize)> = None;
    for j in lo..t {
        let (s_j, int_j) = turns[j];
        if s_j != speaker
            || !matches!(
                int_j,
                IntentionLabel::Request | IntentionLabel::Suggest | IntentionLabel::Command
            )
        {
            continue;
        }
        for (k, &(s_k, int_k)) in turns.iter().enumerate().take(t).skip(j + 1) {
            if s_k != speaker
                && matches!(
                    int_k,
                    IntentionLabel::Accept | IntentionLabel::Inform | IntentionLabel::Reject
                )
            {
                let cand = (k, j);
                best = Some(best.map_or(cand, |b| b.max(cand)));
            }
        }
    }
    match best {
        None => EmotionLabel::Neutral,
        Some((k, j)) => match turns[k].1 {
            IntentionLabel::Accept => EmotionLabel::Happy,
            IntentionLabel::Inform => EmotionLabel::Content,
            IntentionLabel::Reject => {
                if turns[j].1 == IntentionLabel::Request {
                    EmotionLabel::Sadness
                } else {
                    EmotionLabel::Disgust
                }
            }
            _ => unreachable!("responses are accept/inform/reject"),
        },
    }
}

fn compose_text<R: Rng>(rng: &mut R, intention: IntentionLabel) -> (String, String) {
    let keyword = *keyword_pool(intention).choose(rng).unwrap();
    let mut words: Vec<&str> = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        words.push(FILLERS.choose(rng).unwrap());
    }
    words.extend(keyword.split_whitespace());
    if rng.gen_bool(0.8) {
        words.push(ARTICLES.choose(rng).unwrap());
        words.push(TOPICS.choose(rng).unwrap());
    }
    if rng.gen_bool(0.4) {
        words.push(FILLERS.choose(rng).unwrap());
    }
    let punct = match intention {
        IntentionLabel::Question => "?",
        IntentionLabel::Command => "!",
        _ => ".",
    };
    let mut text = words.join(" ");
    if let Some(first) = text.get(0..1) {
        let upper = first.to_uppercase();
        text.replace_range(0..1, &upper);
    }
    if rng.gen_bool(0.5) {
        text.push(' ');
    }
    text.push_str(punct);
    (text, keyword.to_string())
}

fn draw_initiator<R: Rng>(rng: &mut R) -> IntentionLabel {
    match rng.gen_range(0..10) {
        0..=3 => IntentionLabel::Request,
        4..=6 => IntentionLabel::Suggest,
        _ => IntentionLabel::Command,
    }
}

fn draw_response<R: Rng>(rng: &mut R) -> IntentionLabel {
    match rng.gen_range(0..100) {
        0..=34 => IntentionLabel::Accept,
        35..=64 => IntentionLabel::Inform,
        _ => IntentionLabel::Reject,
    }
}

fn draw_followup<R: Rng>(rng: &mut R) -> IntentionLabel {
    if rng.gen_bool(0.5) {
        IntentionLabel::Inform
    } else {
        IntentionLabel::Question
    }
}

fn gen_dialogue<R: Rng>(rng: &mut R, id: String) -> Dialogue {
    let speakers = ["A", "B"];
    let start = rng.gen_range(0..2);
    let n_segments = rng.gen_range(2..=4);

    let mut intentions: Vec<IntentionLabel> = Vec::new();
    for _ in 0..n_segments {
        if rng.gen_bool(0.7) {
            intentions.push(draw_initiator(rng));
            intentions.push(draw_response(rng));
            intentions.push(draw_followup(rng));
        } else {
            intentions.push(IntentionLabel::Question);
            intentions.push(IntentionLabel::Inform);
        }
    }

    let turns: Vec<(&str, IntentionLabel)> = intentions
        .iter()
        .enumerate()
        .map(|(i, &intention)| (speakers[(start + i) % 2], intention))
        .collect();

    let utterances = turns
        .iter()
        .enumerate()
        .map(|(i, &(speaker, intention))| {
            let (text, keyword) = compose_text(rng, intention);
            Utterance {
                speaker: speaker.to_string(),
                text,
                tokens: Vec::new(),
                intention: Some(intention),
                emotion: Some(rule_emotion(&turns, i)),
                keywords: Some(vec![keyword]),
            }
        })
        .collect();

    Dialogue { id, utterances }
}

/// Deterministic corpus of `n_dialogues` dialogues split 5:1:1 into
/// train/dev/test by position.
pub fn gen_synthetic(seed: u64, n_dialogues: usize) -> Corpus {
    assert!(n_dialogues >= 1, "need at least one dialogue");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dialogues: Vec<Dialogue> = (0..n_dialogues)
        .map(|i| gen_dialogue(&mut rng, format!("d{i:05}")))
        .collect();

    let n_train = n_dialogues * 5 / 7;
    let n_dev = n_dialogues / 7;
    let ids: Vec<String> = dialogues.iter().map(|d| d.id.clone()).collect();
    let splits = Splits {
        train: ids[..n_train].to_vec(),
        dev: ids[n_train..n_train + n_dev].to_vec(),
        test: ids[n_train + n_dev..].to_vec(),
    };
    Corpus::assemble(dialogues, splits).expect("synthetic corpus is well-formed")
}
