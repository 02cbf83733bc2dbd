//! Caption normalisation, vocabulary construction and the per-token loss
//! weights.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EOS: &str = "<eos>";

/// Number of caption columns in the dataset CSV layout.
pub const CAPTIONS_PER_CLIP: usize = 5;

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}").expect("valid regex"))
}

/// Lower-cases, strips punctuation, splits on whitespace and appends `<eos>`.
pub fn normalize_caption(raw: &str) -> Result<Vec<String>> {
    let lowered = raw.to_lowercase();
    let stripped = punctuation().replace_all(&lowered, "");
    let mut tokens: Vec<String> = stripped.split_whitespace().map(str::to_owned).collect();
    if tokens.is_empty() {
        return Err(Error::InvalidCaption(raw.to_string()));
    }
    tokens.push(EOS.to_string());
    Ok(tokens)
}

/// Caption tokens without the trailing `<eos>`, as used for metric references.
pub fn caption_words(raw: &str) -> Result<Vec<String>> {
    let mut tokens = normalize_caption(raw)?;
    tokens.pop();
    Ok(tokens)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    frequency: Vec<u64>,
    index: HashMap<String, usize>,
    eos: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabEntry {
    token: String,
    frequency: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    tokens: Vec<VocabEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
}

impl Vocabulary {
    /// Builds the vocabulary from raw development captions. Tokens are sorted
    /// lexicographically (byte order) and frequencies include the appended
    /// `<eos>`.
    pub fn build<S: AsRef<str>>(captions: &[S]) -> Result<Self> {
        if captions.is_empty() {
            return Err(Error::Contract("cannot build a vocabulary from no captions".into()));
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for caption in captions {
            for token in normalize_caption(caption.as_ref())? {
                *counts.entry(token).or_default() += 1;
            }
        }
        let (tokens, frequency) = counts.into_iter().unzip();
        Self::from_parts(tokens, frequency)
    }

    fn from_parts(tokens: Vec<String>, frequency: Vec<u64>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate token `{t}`")));
            }
        }
        if let Some(i) = frequency.iter().position(|&f| f == 0) {
            return Err(Error::format(
                "vocabulary",
                format!("token `{}` has zero frequency", tokens[i]),
            ));
        }
        let eos = *index
            .get(EOS)
            .ok_or_else(|| Error::format("vocabulary", "missing <eos>"))?;
        Ok(Vocabulary {
            tokens,
            frequency,
            index,
            eos,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos_index(&self) -> usize {
        self.eos
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn frequency(&self, index: usize) -> u64 {
        self.frequency[index]
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequency
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<TokenSequence> {
        let indices = tokens
            .iter()
            .map(|t| {
                self.index_of(t.as_ref())
                    .ok_or_else(|| Error::OutOfVocabulary(t.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        TokenSequence::new(indices, self.eos)
    }

    /// Token strings for `indices`; panics on an out-of-range index.
    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Surface words of a decoded sequence, with `<eos>` removed.
    pub fn words(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .filter(|&&i| i != self.eos)
            .map(|&i| self.tokens[i].clone())
            .collect()
    }

    pub fn to_json(&self, weights: Option<&WeightTable>) -> Result<String> {
        let file = VocabFile {
            tokens: self
                .tokens
                .iter()
                .zip(&self.frequency)
                .map(|(t, &f)| VocabEntry {
                    token: t.clone(),
                    frequency: f,
                })
                .collect(),
            beta: weights.map(|w| w.beta),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses a vocabulary file, returning the stored `beta` if present.
    pub fn from_json(text: &str) -> Result<(Self, Option<f64>)> {
        let file: VocabFile = serde_json::from_str(text)?;
        let (tokens, frequency) = file.tokens.into_iter().map(|e| (e.token, e.frequency)).unzip();
        Ok((Self::from_parts(tokens, frequency)?, file.beta))
    }

    pub fn save(&self, path: impl AsRef<Path>, weights: Option<&WeightTable>) -> Result<()> {
        std::fs::write(path, self.to_json(weights)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<f64>)> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Vocabulary indices terminated by the end-of-sequence index.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(indices: Vec<usize>, eos: usize) -> Result<Self> {
        match indices.last() {
            Some(&last) if last == eos => Ok(TokenSequence(indices)),
            _ => Err(Error::Contract(format!(
                "token sequence {indices:?} does not end with <eos> ({eos})"
            ))),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-token loss weights `max(beta, min_freq / freq)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable {
    pub phi: Vec<f64>,
    pub beta: f64,
}

impl WeightTable {
    pub fn from_vocab(vocab: &Vocabulary, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!("beta must be in (0, 1], got {beta}")));
        }
        let min = *vocab.frequencies().iter().min().expect("non-empty vocabulary") as f64;
        let phi = vocab
            .frequencies()
            .iter()
            .map(|&f| (min / f as f64).max(beta))
            .collect();
        Ok(WeightTable { phi, beta })
    }

    /// All weights equal to one.
    pub fn uniform(size: usize) -> Self {
        WeightTable {
            phi: vec![1.0; size],
            beta: 1.0,
        }
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.phi[index]
    }
}

pub fn token_weights(vocab: &Vocabulary, beta: f64) -> Result<WeightTable> {
    WeightTable::from_vocab(vocab, beta)
}

/// One row of the captions CSV: a clip and its reference captions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionRecord {
    pub file_name: String,
    pub captions: Vec<String>,
}

/// Reads `file_name,caption_1,...,caption_5`.
pub fn read_captions_csv(path: impl AsRef<Path>) -> Result<Vec<CaptionRecord>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected: Vec<String> = std::iter::once("file_name".to_string())
        .chain((1..=CAPTIONS_PER_CLIP).map(|i| format!("caption_{i}")))
        .collect();
    if headers.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(Error::format(
            "captions",
            format!("expected header `{}`, got `{}`", expected.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let file_name = row.get(0).unwrap_or_default().to_string();
        let captions = row
            .iter()
            .skip(1)
            .filter(|c| !c.trim().is_empty())
            .map(str::to_owned)
            .collect();
        records.push(CaptionRecord {
            file_name,
            captions,
        });
    }
    Ok(records)
}
