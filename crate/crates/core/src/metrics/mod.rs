//! Corpus-level captioning metrics: BLEU, ROUGE-L, CIDEr-D and the SPIDEr
//! combiner. METEOR and SPICE are only read from externally computed scores.

mod bleu;
mod cider;
mod rouge;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{caption_words, CaptionRecord};

pub use bleu::{bleu, bleu_all, modified_precision, BleuStats};
pub use cider::{cider_d, cider_d_per_item, CIDER_SIGMA};
pub use rouge::{lcs_length, rouge_l, rouge_l_item, ROUGE_BETA};

/// One candidate caption and its references, as normalized token lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvaluationItem {
    pub item_id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvaluationItem {
    /// An empty candidate is allowed (it scores zero); references must be
    /// present and non-empty.
    pub fn new(item_id: impl Into<String>, candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        let item_id = item_id.into();
        if references.is_empty() || references.iter().any(Vec::is_empty) {
            return Err(Error::Contract(format!("item `{item_id}` needs non-empty references")));
        }
        Ok(EvaluationItem {
            item_id,
            candidate,
            references,
        })
    }

    /// Splits whitespace-separated strings, for tests and small tools.
    pub fn from_strs(item_id: &str, candidate: &str, references: &[&str]) -> Result<Self> {
        let split = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
        Self::new(item_id, split(candidate), references.iter().map(|r| split(r)).collect())
    }
}

/// Contiguous n-grams of `tokens` of length `n`.
pub(crate) fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = &[String]> {
    tokens.windows(n)
}

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in ngrams(tokens, n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Equal-weight mean of CIDEr and SPICE.
pub fn spider(cider: f64, spice: f64) -> Result<f64> {
    if !(cider >= 0.0 && spice >= 0.0) {
        return Err(Error::Contract(format!(
            "SPIDEr needs non-negative inputs, got CIDEr {cider} and SPICE {spice}"
        )));
    }
    Ok((cider + spice) / 2.0)
}

/// Scores computed by external tools, read from a JSON sidecar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalScores {
    #[serde(default)]
    pub meteor: Option<f64>,
    #[serde(default)]
    pub spice: Option<f64>,
}

impl ExternalScores {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub meteor: Option<f64>,
    pub cider: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spider: Option<f64>,
}

impl MetricsReport {
    pub fn compute(items: &[EvaluationItem], external: ExternalScores) -> Result<Self> {
        let [bleu_1, bleu_2, bleu_3, bleu_4] = bleu_all(items);
        let cider = cider_d(items)?;
        let spider = external.spice.map(|s| spider(cider, s)).transpose()?;
        Ok(MetricsReport {
            bleu_1,
            bleu_2,
            bleu_3,
            bleu_4,
            rouge_l: rouge_l(items),
            meteor: external.meteor,
            cider,
            spice: external.spice,
            spider,
        })
    }

    pub fn rows(&self) -> [(&'static str, Option<f64>); 9] {
        [
            ("BLEU_1", Some(self.bleu_1)),
            ("BLEU_2", Some(self.bleu_2)),
            ("BLEU_3", Some(self.bleu_3)),
            ("BLEU_4", Some(self.bleu_4)),
            ("ROUGE_L", Some(self.rouge_l)),
            ("METEOR", self.meteor),
            ("CIDEr", Some(self.cider)),
            ("SPICE", self.spice),
            ("SPIDEr", self.spider),
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Two-column table at three decimals; absent external scores print `-`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("Metric   Score\n");
        for (name, value) in self.rows() {
            match value {
                Some(v) => writeln!(out, "{name:<8} {v:.3}"),
                None => writeln!(out, "{name:<8} -"),
            }
            .expect("write to string");
        }
        out
    }
}

/// Tokenizes a predicted caption the same way as references; an empty or
/// all-punctuation prediction gives an empty candidate.
pub fn candidate_words(raw: &str) -> Vec<String> {
    caption_words(raw).unwrap_or_default()
}

/// Pairs predictions with reference captions by file name. Every prediction
/// needs references.
pub fn build_items(predictions: &[(String, String)], references: &[CaptionRecord]) -> Result<Vec<EvaluationItem>> {
    let refs: HashMap<&str, &CaptionRecord> = references.iter().map(|r| (r.file_name.as_str(), r)).collect();
    let missing: Vec<&str> = predictions
        .iter()
        .map(|(f, _)| f.as_str())
        .filter(|f| !refs.contains_key(f))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Contract(format!("no references for: {}", missing.join(", "))));
    }
    predictions
        .iter()
        .map(|(file, caption)| {
            let record = refs[file.as_str()];
            let references = record
                .captions
                .iter()
                .map(|c| caption_words(c))
                .collect::<Result<Vec<_>>>()?;
            EvaluationItem::new(file.clone(), candidate_words(caption), references)
        })
        .collect()
}
