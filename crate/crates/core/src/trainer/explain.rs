//! Template explanations of emotion predictions from the model's own
//! intention predictions.

use crate::corpus::{Dialogue, IntentionLabel};
use crate::rain::TurnActivations;

fn raises_intention(label: IntentionLabel) -> bool {
    matches!(
        label,
        IntentionLabel::Request | IntentionLabel::Suggest | IntentionLabel::Command
    )
}

fn answers_intention(label: IntentionLabel) -> bool {
    matches!(label, IntentionLabel::Accept | IntentionLabel::Inform)
}

/// One line per turn: "Emotion of <speaker> is <emotion> because his
/// intention is <satisfied|not yet satisfied|none pending>".
///
/// A speaker's intention counts as satisfied when any of their earlier
/// predicted request/suggest/command turns was followed, before the current
/// turn, by another speaker's predicted accept or inform. A pending raise
/// without such an answer (a reject does not answer it) reads "not yet
/// satisfied"; no prior raise reads "none pending".
pub fn explain(dialogue: &Dialogue, activations: &[TurnActivations]) -> Vec<String> {
    let predicted: Vec<IntentionLabel> = activations
        .iter()
        .map(|a| a.predicted_intention())
        .collect();
    dialogue
        .utterances
        .iter()
        .zip(activations)
        .enumerate()
        .map(|(t, (u, a))| {
            let mut any_raised = false;
            let mut satisfied = false;
            for j in 0..t {
                if dialogue.utterances[j].speaker != u.speaker || !raises_intention(predicted[j]) {
                    continue;
                }
                any_raised = true;
                for (k, uk) in dialogue.utterances.iter().enumerate().take(t).skip(j + 1) {
                    if uk.speaker != u.speaker && answers_intention(predicted[k]) {
                        satisfied = true;
                    }
                }
            }
            let status = if satisfied {
                "satisfied"
            } else if any_raised {
                "not yet satisfied"
            } else {
                "none pending"
            };
            format!(
                "Emotion of {} is {} because his intention is {}",
                u.speaker,
                a.predicted_emotion().name(),
                status
            )
        })
        .collect()
}
