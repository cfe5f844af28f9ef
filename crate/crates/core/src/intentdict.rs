//! The intention dictionary: annotated feature phrases mapped to normalized
//! frequency distributions over the seven intentions. Built by counting, for
//! each annotated phrase, the training utterances containing it per gold
//! intention, then normalizing each count row.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, IntentionLabel, Split};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DictError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dictionary file: {0}")]
    Malformed(String),
    #[error("unsupported dictionary version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("dictionary entry {phrase:?}: {message}")]
    Validation { phrase: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictEntry {
    pub counts: [u64; IntentionLabel::COUNT],
    pub p: [f64; IntentionLabel::COUNT],
}

/// Immutable after build; lookups are read-only.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntentionDictionary {
    entries: BTreeMap<String, DictEntry>,
}

#[derive(Serialize, Deserialize)]
struct DictFile {
    version: u32,
    labels: Vec<String>,
    entries: BTreeMap<String, DictEntry>,
}

fn normalize(counts: &[u64; IntentionLabel::COUNT]) -> [f64; IntentionLabel::COUNT] {
    let total: u64 = counts.iter().sum();
    let mut p = [0.0; IntentionLabel::COUNT];
    if total > 0 {
        for (pi, &c) in p.iter_mut().zip(counts) {
            *pi = c as f64 / total as f64;
        }
    }
    p
}

impl IntentionDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, phrase: &str) -> Option<&DictEntry> {
        self.entries.get(phrase)
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Builds the dictionary from the train split. Phrases with a total
    /// count below `min_count` are dropped.
    pub fn build(corpus: &Corpus, min_count: u64) -> Self {
        // collect the annotated phrases of the train split
        let mut phrases: BTreeSet<String> = BTreeSet::new();
        let train = corpus.split_dialogues(Split::Train);
        for d in &train {
            for u in &d.utterances {
                if let Some(kws) = &u.keywords {
                    for kw in kws {
                        phrases.insert(kw.clone());
                    }
                }
            }
        }
        if phrases.is_empty() {
            log::warn!(
                "no keyword annotations in the train split; dictionary is empty and the prior degrades to all-zero"
            );
            return Self::default();
        }

        // index the n-grams (n <= 3) of every labeled train utterance once,
        // then count utterances containing each phrase per gold intention
        let mut counts: BTreeMap<String, [u64; IntentionLabel::COUNT]> = BTreeMap::new();
        for d in &train {
            for u in &d.utterances {
                let gold = match u.intention {
                    Some(g) => g,
                    None => continue,
                };
                let words = crate::corpus::tokenize_words(&u.text);
                let mut grams: HashSet<String> = HashSet::new();
                for n in 1..=3.min(words.len()) {
                    for w in words.windows(n) {
                        grams.insert(w.join(" "));
                    }
                }
                for phrase in &phrases {
                    if grams.contains(phrase.as_str()) {
                        counts.entry(phrase.clone()).or_insert([0; IntentionLabel::COUNT])
                            [gold.index()] += 1;
                    }
                }
            }
        }

        let entries = counts
            .into_iter()
            .filter(|(_, c)| c.iter().sum::<u64>() >= min_count)
            .map(|(phrase, c)| {
                (
                    phrase,
                    DictEntry {
                        counts: c,
                        p: normalize(&c),
                    },
                )
            })
            .collect();
        IntentionDictionary { entries }
    }

    /// Scans lowercase tokens for entry phrases with greedy longest-match,
    /// left to right, non-overlapping. Returns the arithmetic mean of the
    /// matched distributions, or the all-zero vector when nothing matches.
    pub fn lookup_words(&self, tokens: &[String]) -> [f64; IntentionLabel::COUNT] {
        let mut acc = [0.0; IntentionLabel::COUNT];
        let mut matched = 0usize;
        let mut i = 0;
        while i < tokens.len() {
            let mut advanced = false;
            for n in (1..=3.min(tokens.len() - i)).rev() {
                let gram = tokens[i..i + n].join(" ");
                if let Some(entry) = self.entries.get(&gram) {
                    for (a, p) in acc.iter_mut().zip(&entry.p) {
                        *a += p;
                    }
                    matched += 1;
                    i += n;
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                i += 1;
            }
        }
        if matched > 0 {
            for a in &mut acc {
                *a /= matched as f64;
            }
        }
        acc
    }

    /// [`Self::lookup_words`] over token ids, resolved through the corpus
    /// vocabulary.
    pub fn lookup(
        &self,
        tokens: &[u32],
        vocab: &crate::corpus::Vocabulary,
    ) -> [f64; IntentionLabel::COUNT] {
        let words: Vec<String> = tokens
            .iter()
            .filter_map(|&t| vocab.token(t).map(str::to_string))
            .collect();
        self.lookup_words(&words)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DictError> {
        let path = path.as_ref();
        let file = DictFile {
            version: FORMAT_VERSION,
            labels: IntentionLabel::ALL.iter().map(|l| l.name().to_string()).collect(),
            entries: self.entries.clone(),
        };
        let text = serde_json::to_string_pretty(&file).expect("dictionary serializes");
        fs::write(path, text).map_err(|e| DictError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DictError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DictError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let file: DictFile =
            serde_json::from_str(&text).map_err(|e| DictError::Malformed(e.to_string()))?;
        if file.version != FORMAT_VERSION {
            return Err(DictError::Version(file.version));
        }
        let expected: Vec<String> = IntentionLabel::ALL
            .iter()
            .map(|l| l.name().to_string())
            .collect();
        if file.labels != expected {
            return Err(DictError::Malformed(format!(
                "label set {:?} does not match {:?}",
                file.labels, expected
            )));
        }
        for (phrase, entry) in &file.entries {
            if phrase.trim().is_empty() {
                return Err(DictError::Validation {
                    phrase: phrase.clone(),
                    message: "phrase is empty".into(),
                });
            }
            let sum: f64 = entry.p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(DictError::Validation {
                    phrase: phrase.clone(),
                    message: format!("probabilities sum to {sum}, expected 1"),
                });
            }
            if entry.p.iter().any(|&p| p < 0.0) {
                return Err(DictError::Validation {
                    phrase: phrase.clone(),
                    message: "negative probability".into(),
                });
            }
            let renorm = normalize(&entry.counts);
            if entry
                .p
                .iter()
                .zip(&renorm)
                .any(|(a, b)| (a - b).abs() > 1e-9)
            {
                return Err(DictError::Validation {
                    phrase: phrase.clone(),
                    message: "probabilities do not match normalized counts".into(),
                });
            }
        }
        Ok(IntentionDictionary {
            entries: file.entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dialogue, Splits, Utterance};

    /// True when `phrase` occurs as a contiguous run of tokens in `tokens`.
    fn contains_phrase(tokens: &[String], phrase: &[&str]) -> bool {
        if phrase.is_empty() || tokens.len() < phrase.len() {
            return false;
        }
        tokens
            .windows(phrase.len())
            .any(|w| w.iter().map(|s| s.as_str()).eq(phrase.iter().copied()))
    }

    fn utterance(text: &str, intention: IntentionLabel, keywords: &[&str]) -> Utterance {
        Utterance {
            speaker: "A".into(),
            text: text.into(),
            tokens: Vec::new(),
            intention: Some(intention),
            emotion: None,
            keywords: if keywords.is_empty() {
                None
            } else {
                Some(keywords.iter().map(|s| s.to_string()).collect())
            },
        }
    }

    fn corpus_of(utterances: Vec<Utterance>) -> Corpus {
        let dialogues = vec![Dialogue {
            id: "d0".into(),
            utterances,
        }];
        let splits = Splits {
            train: vec!["d0".into()],
            dev: vec![],
            test: vec![],
        };
        Corpus::assemble(dialogues, splits).unwrap()
    }

    #[test]
    fn worked_count_example() {
        // "would like" in 3 request utterances and 1 question utterance
        let corpus = corpus_of(vec![
            utterance("I would like tea", IntentionLabel::Request, &["would like"]),
            utterance("we would like a map", IntentionLabel::Request, &[]),
            utterance("oh I would like that", IntentionLabel::Request, &[]),
            utterance("would like what ?", IntentionLabel::Question, &[]),
        ]);
        let dict = IntentionDictionary::build(&corpus, 2);
        let entry = dict.entry("would like").unwrap();
        assert_eq!(entry.counts, [3, 0, 0, 0, 0, 1, 0]);
        assert_eq!(entry.p, [0.75, 0.0, 0.0, 0.0, 0.0, 0.25, 0.0]);
    }

    #[test]
    fn single_label_phrase_is_one_hot() {
        let corpus = corpus_of(vec![
            utterance("no way friend", IntentionLabel::Reject, &["no way"]),
            utterance("well no way", IntentionLabel::Reject, &[]),
        ]);
        let dict = IntentionDictionary::build(&corpus, 2);
        let entry = dict.entry("no way").unwrap();
        assert_eq!(entry.p[IntentionLabel::Reject.index()], 1.0);
        assert_eq!(entry.p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn phrase_below_min_count_is_dropped() {
        let corpus = corpus_of(vec![utterance(
            "hurry up",
            IntentionLabel::Command,
            &["hurry up"],
        )]);
        let dict = IntentionDictionary::build(&corpus, 2);
        assert!(dict.entry("hurry up").is_none());
        let keep = IntentionDictionary::build(&corpus, 1);
        assert!(keep.entry("hurry up").is_some());
    }

    #[test]
    fn empty_keyword_set_gives_empty_dictionary() {
        let corpus = corpus_of(vec![utterance("hello there", IntentionLabel::Inform, &[])]);
        let dict = IntentionDictionary::build(&corpus, 2);
        assert!(dict.is_empty());
        assert_eq!(dict.lookup_words(&["hello".into()]), [0.0; 7]);
    }

    fn toy_dict() -> IntentionDictionary {
        let corpus = corpus_of(vec![
            utterance("I would like tea", IntentionLabel::Request, &["would like"]),
            utterance("would like more", IntentionLabel::Request, &[]),
            utterance("i heard news", IntentionLabel::Inform, &["i heard", "like"]),
            utterance("we heard it, i heard", IntentionLabel::Inform, &[]),
            utterance("like that", IntentionLabel::Question, &[]),
            utterance("so like , yes", IntentionLabel::Question, &[]),
        ]);
        IntentionDictionary::build(&corpus, 2)
    }

    #[test]
    fn lookup_zero_when_nothing_matches() {
        let dict = toy_dict();
        let p = dict.lookup_words(&["nothing".into(), "here".into()]);
        assert_eq!(p, [0.0; 7]);
    }

    #[test]
    fn lookup_averages_matches() {
        // "would like" is pure request; "i heard" is pure inform
        let dict = toy_dict();
        let tokens: Vec<String> = ["would", "like", "and", "i", "heard"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let p = dict.lookup_words(&tokens);
        assert!((p[IntentionLabel::Request.index()] - 0.5).abs() < 1e-12);
        assert!((p[IntentionLabel::Inform.index()] - 0.5).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn longest_match_wins_and_consumes_tokens() {
        // both "would like" and "like" are entries; at the same position only
        // the longer one fires and "like" cannot match inside it again
        let dict = toy_dict();
        assert!(dict.entry("like").is_some());
        let tokens: Vec<String> = ["would", "like"].iter().map(|s| s.to_string()).collect();
        let p = dict.lookup_words(&tokens);
        let want = dict.entry("would like").unwrap().p;
        assert_eq!(p, want);
    }

    #[test]
    fn save_load_round_trip() {
        let dict = toy_dict();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.json");
        dict.save(&path).unwrap();
        let loaded = IntentionDictionary::load(&path).unwrap();
        assert_eq!(dict, loaded);

        let empty = IntentionDictionary::new();
        empty.save(&path).unwrap();
        assert_eq!(IntentionDictionary::load(&path).unwrap(), empty);
    }

    #[test]
    fn load_rejects_bad_probability_sum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.json");
        std::fs::write(
            &path,
            r#"{"version":1,"labels":["request","suggest","command","accept","reject","question","inform"],
                "entries":{"would like":{"counts":[3,0,0,0,0,1,0],"p":[0.65,0,0,0,0,0.25,0]}}}"#,
        )
        .unwrap();
        let err = IntentionDictionary::load(&path).unwrap_err();
        assert!(matches!(err, DictError::Validation { .. }), "{err}");
    }

    #[test]
    fn load_rejects_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.json");
        std::fs::write(
            &path,
            r#"{"version":9,"labels":["request","suggest","command","accept","reject","question","inform"],"entries":{}}"#,
        )
        .unwrap();
        assert!(matches!(
            IntentionDictionary::load(&path).unwrap_err(),
            DictError::Version(9)
        ));
    }

    #[test]
    fn monotonicity_adding_support_never_decreases_count() {
        let base = vec![
            utterance("I would like tea", IntentionLabel::Request, &["would like"]),
            utterance("would like more", IntentionLabel::Request, &[]),
        ];
        let corpus = corpus_of(base.clone());
        let before = IntentionDictionary::build(&corpus, 1)
            .entry("would like")
            .unwrap()
            .counts[IntentionLabel::Request.index()];
        let mut more = base;
        more.push(utterance(
            "truly would like it",
            IntentionLabel::Request,
            &[],
        ));
        let corpus = corpus_of(more);
        let after = IntentionDictionary::build(&corpus, 1)
            .entry("would like")
            .unwrap()
            .counts[IntentionLabel::Request.index()];
        assert!(after >= before);
        assert_eq!(after, before + 1);
    }

    #[test]
    fn contains_phrase_matches_on_token_boundaries() {
        let tokens: Vec<String> = ["a", "would", "like", "b"].iter().map(|s| s.to_string()).collect();
        assert!(contains_phrase(&tokens, &["would", "like"]));
        assert!(!contains_phrase(&tokens, &["would", "b"]));
        assert!(!contains_phrase(&tokens, &[]));
    }
}
