//! Dialogue data model: label sets, tokenization, vocabulary, JSONL
//! ingestion and the seeded synthetic generator.

mod synthetic;

pub use synthetic::{gen_synthetic, rule_emotion};

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The seven intention classes, in index order 0..6.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntentionLabel {
    Request,
    Suggest,
    Command,
    Accept,
    Reject,
    Question,
    Inform,
}

/// The six emotion classes, in index order 0..5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Happy,
    Neutral,
    Sadness,
    Anger,
    Content,
    Disgust,
}

impl IntentionLabel {
    pub const COUNT: usize = 7;
    pub const ALL: [IntentionLabel; 7] = [
        IntentionLabel::Request,
        IntentionLabel::Suggest,
        IntentionLabel::Command,
        IntentionLabel::Accept,
        IntentionLabel::Reject,
        IntentionLabel::Question,
        IntentionLabel::Inform,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).unwrap()
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            IntentionLabel::Request => "request",
            IntentionLabel::Suggest => "suggest",
            IntentionLabel::Command => "command",
            IntentionLabel::Accept => "accept",
            IntentionLabel::Reject => "reject",
            IntentionLabel::Question => "question",
            IntentionLabel::Inform => "inform",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.name() == name)
    }
}

impl EmotionLabel {
    pub const COUNT: usize = 6;
    pub const ALL: [EmotionLabel; 6] = [
        EmotionLabel::Happy,
        EmotionLabel::Neutral,
        EmotionLabel::Sadness,
        EmotionLabel::Anger,
        EmotionLabel::Content,
        EmotionLabel::Disgust,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).unwrap()
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Happy => "happy",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Content => "content",
            EmotionLabel::Disgust => "disgust",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.name() == name)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown label {value:?}")]
    UnknownLabel { line: usize, value: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("splits file: {0}")]
    Splits(String),
}

/// One speaker turn. `tokens` is filled against the corpus vocabulary when
/// the corpus is assembled; labels are optional on inference inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    #[serde(skip)]
    pub tokens: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub intention: Option<IntentionLabel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub emotion: Option<EmotionLabel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub keywords: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Token ids 0 and 1 are reserved for padding and unknown tokens; lookup of
/// an out-of-vocabulary token returns UNK.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;

    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        v.push("<pad>");
        v.push("<unk>");
        v
    }

    fn push(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn build<'a>(tokens: impl Iterator<Item = &'a str>) -> Self {
        let mut v = Vocabulary::new();
        for t in tokens {
            v.push(t);
        }
        v
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved tokens are always present
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, ids }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

/// Lowercases, splits on whitespace and peels trailing ASCII punctuation off
/// each piece into tokens of its own ("tea?" -> ["tea", "?"]).
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let piece = piece.to_lowercase();
        let mut trailing: Vec<char> = Vec::new();
        let mut rest = piece.as_str();
        while let Some(c) = rest.chars().last() {
            if c.is_ascii_punctuation() && rest.chars().count() > 1 {
                trailing.push(c);
                rest = &rest[..rest.len() - c.len_utf8()];
            } else {
                break;
            }
        }
        out.push(rest.to_string());
        out.extend(trailing.into_iter().rev().map(String::from));
    }
    out
}

/// Token ids for a text; unknown tokens map to [`Vocabulary::UNK`].
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    tokenize_words(text).iter().map(|t| vocab.id(t)).collect()
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub splits: Splits,
    pub vocabulary: Vocabulary,
}

impl Corpus {
    /// Validates split coverage, builds the vocabulary from the train split
    /// only and tokenizes every utterance against it.
    pub fn assemble(dialogues: Vec<Dialogue>, splits: Splits) -> Result<Corpus, CorpusError> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for split in [Split::Train, Split::Dev, Split::Test] {
            for id in splits.ids(split) {
                if let Some(other) = seen.insert(id, split) {
                    return Err(CorpusError::Splits(format!(
                        "dialogue {id:?} assigned to both {} and {}",
                        other.name(),
                        split.name()
                    )));
                }
            }
        }
        for d in &dialogues {
            if !seen.contains_key(d.id.as_str()) {
                return Err(CorpusError::Splits(format!(
                    "dialogue {:?} missing from the splits file",
                    d.id
                )));
            }
        }
        let by_id: HashMap<&str, usize> = dialogues
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.as_str(), i))
            .collect();
        for id in seen.keys() {
            if !by_id.contains_key(id) {
                return Err(CorpusError::Splits(format!(
                    "splits file names unknown dialogue {id:?}"
                )));
            }
        }

        let mut train_tokens: Vec<String> = Vec::new();
        for id in &splits.train {
            let d = &dialogues[by_id[id.as_str()]];
            for u in &d.utterances {
                train_tokens.extend(tokenize_words(&u.text));
            }
        }
        let vocabulary = Vocabulary::build(train_tokens.iter().map(|s| s.as_str()));

        let mut dialogues = dialogues;
        for d in &mut dialogues {
            for u in &mut d.utterances {
                u.tokens = tokenize(&u.text, &vocabulary);
            }
        }
        Ok(Corpus {
            dialogues,
            splits,
            vocabulary,
        })
    }

    pub fn load(
        data_path: impl AsRef<Path>,
        splits_path: impl AsRef<Path>,
    ) -> Result<Corpus, CorpusError> {
        let dialogues = load_jsonl(&data_path)?;
        let splits = load_splits(&splits_path)?;
        Corpus::assemble(dialogues, splits)
    }

    pub fn save(
        &self,
        data_path: impl AsRef<Path>,
        splits_path: impl AsRef<Path>,
    ) -> Result<(), CorpusError> {
        save_jsonl(&self.dialogues, &data_path)?;
        save_splits(&self.splits, &splits_path)
    }

    pub fn dialogue(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.id == id)
    }

    pub fn split_dialogues(&self, split: Split) -> Vec<&Dialogue> {
        self.splits
            .ids(split)
            .iter()
            .filter_map(|id| self.dialogue(id))
            .collect()
    }

    pub fn utterance_count(&self, split: Split) -> usize {
        self.split_dialogues(split)
            .iter()
            .map(|d| d.utterances.len())
            .sum()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads one dialogue object per line. Labels are parsed against the fixed
/// label sets; malformed lines and unknown labels report the line number.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Dialogue>, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut dialogues = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        let dialogue = parse_dialogue(raw, lineno)?;
        dialogues.push(dialogue);
    }
    Ok(dialogues)
}

fn parse_dialogue(raw: serde_json::Value, line: usize) -> Result<Dialogue, CorpusError> {
    let obj = raw.as_object().ok_or_else(|| CorpusError::Parse {
        line,
        message: "expected a JSON object".into(),
    })?;
    let id = obj
        .get("id")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CorpusError::Parse {
            line,
            message: "missing string field \"id\"".into(),
        })?
        .to_string();
    let utts = obj
        .get("utterances")
        .and_then(|v| v.as_array())
        .ok_or_else(|| CorpusError::Parse {
            line,
            message: "missing array field \"utterances\"".into(),
        })?;
    if utts.is_empty() {
        return Err(CorpusError::Invalid {
            line,
            message: format!("dialogue {id:?} has no utterances"),
        });
    }
    let mut utterances = Vec::with_capacity(utts.len());
    for u in utts {
        utterances.push(parse_utterance(u, line)?);
    }
    Ok(Dialogue { id, utterances })
}

fn parse_utterance(raw: &serde_json::Value, line: usize) -> Result<Utterance, CorpusError> {
    let obj = raw.as_object().ok_or_else(|| CorpusError::Parse {
        line,
        message: "utterance must be a JSON object".into(),
    })?;
    let field_str = |name: &str| -> Result<String, CorpusError> {
        obj.get(name)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| CorpusError::Parse {
                line,
                message: format!("missing string field {name:?}"),
            })
    };
    let speaker = field_str("speaker")?;
    let text = field_str("text")?;
    if text.trim().is_empty() {
        return Err(CorpusError::Invalid {
            line,
            message: "utterance text is empty".into(),
        });
    }
    let intention = match obj.get("intention").and_then(|v| v.as_str()) {
        Some(s) => Some(IntentionLabel::from_name(s).ok_or_else(|| CorpusError::UnknownLabel {
            line,
            value: s.to_string(),
        })?),
        None => None,
    };
    let emotion = match obj.get("emotion").and_then(|v| v.as_str()) {
        Some(s) => Some(EmotionLabel::from_name(s).ok_or_else(|| CorpusError::UnknownLabel {
            line,
            value: s.to_string(),
        })?),
        None => None,
    };
    let keywords = match obj.get("keywords") {
        Some(serde_json::Value::Array(items)) => {
            let mut phrases = Vec::with_capacity(items.len());
            for item in items {
                let phrase = item.as_str().ok_or_else(|| CorpusError::Parse {
                    line,
                    message: "keywords must be strings".into(),
                })?;
                validate_keyword(phrase, line)?;
                phrases.push(phrase.to_string());
            }
            Some(phrases)
        }
        Some(_) => {
            return Err(CorpusError::Parse {
                line,
                message: "keywords must be an array".into(),
            })
        }
        None => None,
    };
    Ok(Utterance {
        speaker,
        text,
        tokens: Vec::new(),
        intention,
        emotion,
        keywords,
    })
}

fn validate_keyword(phrase: &str, line: usize) -> Result<(), CorpusError> {
    let words: Vec<&str> = phrase.split_whitespace().collect();
    if words.is_empty() || words.len() > 3 {
        return Err(CorpusError::Invalid {
            line,
            message: format!("keyword {phrase:?} must have 1-3 tokens"),
        });
    }
    if phrase != phrase.to_lowercase() {
        return Err(CorpusError::Invalid {
            line,
            message: format!("keyword {phrase:?} must be lowercase"),
        });
    }
    Ok(())
}

pub fn save_jsonl(dialogues: &[Dialogue], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = fs::File::create(path).map_err(|e| io_err(path, e))?;
    for d in dialogues {
        let line = serde_json::to_string(d).expect("dialogue serializes");
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn load_splits(path: impl AsRef<Path>) -> Result<Splits, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CorpusError::Splits(e.to_string()))
}

pub fn save_splits(splits: &Splits, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(splits).expect("splits serialize");
    fs::write(path, text).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_indices_are_stable() {
        assert_eq!(IntentionLabel::Request.index(), 0);
        assert_eq!(IntentionLabel::Inform.index(), 6);
        assert_eq!(EmotionLabel::Happy.index(), 0);
        assert_eq!(EmotionLabel::Disgust.index(), 5);
        for l in IntentionLabel::ALL {
            assert_eq!(IntentionLabel::from_index(l.index()), Some(l));
            assert_eq!(IntentionLabel::from_name(l.name()), Some(l));
        }
        for l in EmotionLabel::ALL {
            assert_eq!(EmotionLabel::from_index(l.index()), Some(l));
            assert_eq!(EmotionLabel::from_name(l.name()), Some(l));
        }
        assert_eq!(IntentionLabel::from_index(7), None);
        assert_eq!(EmotionLabel::from_index(6), None);
    }

    #[test]
    fn tokenizer_matches_stated_rule() {
        assert_eq!(
            tokenize_words("Would LIKE tea ?"),
            vec!["would", "like", "tea", "?"]
        );
        assert_eq!(
            tokenize_words("Coca-Cola, please"),
            vec!["coca-cola", ",", "please"]
        );
        assert_eq!(tokenize_words(""), Vec::<String>::new());
        assert_eq!(tokenize_words("tea?!"), vec!["tea", "?", "!"]);
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let vocab = Vocabulary::build(["hello", "world"].into_iter());
        assert_eq!(vocab.id("hello"), 2);
        assert_eq!(vocab.id("unseen"), Vocabulary::UNK);
        assert_eq!(tokenize("unseen hello", &vocab), vec![1, 2]);
    }

    #[test]
    fn vocabulary_is_bijective_over_tokens() {
        let vocab = Vocabulary::build(["a", "b", "a", "c"].into_iter());
        assert_eq!(vocab.len(), 5); // pad, unk, a, b, c
        for id in 0..vocab.len() as u32 {
            let t = vocab.token(id).unwrap();
            assert_eq!(vocab.id(t), id);
        }
    }

    fn sample_jsonl() -> &'static str {
        concat!(
            r#"{"id":"d0001","utterances":[{"speaker":"A","text":"I would like a burger","intention":"request","emotion":"neutral","keywords":["would like"]},"#,
            r#"{"speaker":"B","text":"Sure thing","intention":"accept","emotion":"neutral"}]}"#,
            "\n",
            r#"{"id":"d0002","utterances":[{"speaker":"A","text":"What is that ?","intention":"question","emotion":"neutral"}]}"#,
            "\n"
        )
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_jsonl_parses_labels_by_index() {
        let f = write_temp(sample_jsonl());
        let dialogues = load_jsonl(f.path()).unwrap();
        assert_eq!(dialogues.len(), 2);
        let first = &dialogues[0].utterances[0];
        assert_eq!(first.intention, Some(IntentionLabel::Request));
        assert_eq!(first.intention.unwrap().index(), 0);
        assert_eq!(first.keywords.as_deref(), Some(&["would like".to_string()][..]));
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let f = write_temp("");
        let dialogues = load_jsonl(f.path()).unwrap();
        assert!(dialogues.is_empty());
        let corpus = Corpus::assemble(dialogues, Splits::default()).unwrap();
        assert_eq!(corpus.dialogues.len(), 0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_temp("{\"id\":\"d1\",\"utterances\":[{\"speaker\":\"A\",\"text\":\"hi\"}]}\nnot json\n");
        let err = load_jsonl(f.path()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_label_is_named() {
        let f = write_temp(
            r#"{"id":"d1","utterances":[{"speaker":"A","text":"hi","intention":"greet"}]}"#,
        );
        let err = load_jsonl(f.path()).unwrap_err();
        match err {
            CorpusError::UnknownLabel { value, .. } => assert_eq!(value, "greet"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn vocabulary_comes_from_train_split_only() {
        let f = write_temp(sample_jsonl());
        let dialogues = load_jsonl(f.path()).unwrap();
        let splits = Splits {
            train: vec!["d0001".into()],
            dev: vec![],
            test: vec!["d0002".into()],
        };
        let corpus = Corpus::assemble(dialogues, splits).unwrap();
        // "what" never occurs in train, so it maps to UNK in the test split
        let test_d = corpus.dialogue("d0002").unwrap();
        assert_eq!(test_d.utterances[0].tokens[0], Vocabulary::UNK);
        // train tokens are in-vocabulary
        let train_d = corpus.dialogue("d0001").unwrap();
        assert!(train_d.utterances[0].tokens.iter().all(|&t| t != Vocabulary::UNK));
    }

    #[test]
    fn splits_must_cover_and_not_overlap() {
        let f = write_temp(sample_jsonl());
        let dialogues = load_jsonl(f.path()).unwrap();
        let overlap = Splits {
            train: vec!["d0001".into(), "d0002".into()],
            dev: vec!["d0002".into()],
            test: vec![],
        };
        assert!(Corpus::assemble(dialogues.clone(), overlap).is_err());
        let missing = Splits {
            train: vec!["d0001".into()],
            dev: vec![],
            test: vec![],
        };
        assert!(Corpus::assemble(dialogues, missing).is_err());
    }

    #[test]
    fn corpus_round_trips_through_files() {
        let corpus = gen_synthetic(9, 12);
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data.jsonl");
        let splits = dir.path().join("splits.json");
        corpus.save(&data, &splits).unwrap();
        let reloaded = Corpus::load(&data, &splits).unwrap();
        assert_eq!(corpus.dialogues, reloaded.dialogues);
        assert_eq!(corpus.splits, reloaded.splits);
        assert_eq!(corpus.vocabulary, reloaded.vocabulary);
    }
}
