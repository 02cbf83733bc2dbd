use std::collections::{HashMap, HashSet};

use super::{ngram_counts, EvaluationItem};
use crate::error::{Error, Result};

pub const CIDER_SIGMA: f64 = 6.0;
const MAX_N: usize = 4;

type Vector<'a> = HashMap<&'a [String], f64>;

struct Tfidf<'a> {
    vecs: [Vector<'a>; MAX_N],
    norms: [f64; MAX_N],
    len: usize,
}

fn tfidf<'a>(tokens: &'a [String], df: &HashMap<&[String], usize>, log_docs: f64) -> Tfidf<'a> {
    let mut vecs: [Vector<'a>; MAX_N] = Default::default();
    let mut norms = [0.0; MAX_N];
    for n in 1..=MAX_N {
        for (g, tf) in ngram_counts(tokens, n) {
            let d = (df.get(g).copied().unwrap_or(0) as f64).max(1.0).ln();
            let w = tf as f64 * (log_docs - d);
            norms[n - 1] += w * w;
            vecs[n - 1].insert(g, w);
        }
        norms[n - 1] = norms[n - 1].sqrt();
    }
    Tfidf {
        vecs,
        norms,
        len: tokens.len(),
    }
}

/// Per-order similarity with clipped candidate weights and the Gaussian
/// length penalty.
fn similarity(cand: &Tfidf, reference: &Tfidf) -> [f64; MAX_N] {
    let delta = cand.len as f64 - reference.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; MAX_N];
    for (n, slot) in out.iter_mut().enumerate() {
        let mut dot = 0.0;
        for (g, &w) in &cand.vecs[n] {
            if let Some(&rw) = reference.vecs[n].get(g) {
                dot += w.min(rw) * rw;
            }
        }
        if cand.norms[n] != 0.0 && reference.norms[n] != 0.0 {
            dot /= cand.norms[n] * reference.norms[n];
        }
        *slot = dot * penalty;
    }
    out
}

/// CIDEr-D of every item. Document frequencies come from the reference sets,
/// so the corpus needs at least two items.
pub fn cider_d_per_item(items: &[EvaluationItem]) -> Result<Vec<f64>> {
    if items.len() < 2 {
        return Err(Error::InsufficientCorpus(items.len()));
    }
    let mut df: HashMap<&[String], usize> = HashMap::new();
    for item in items {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in &item.references {
            for n in 1..=MAX_N {
                seen.extend(r.windows(n));
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_docs = (items.len() as f64).ln();
    Ok(items
        .iter()
        .map(|item| {
            let cand = tfidf(&item.candidate, &df, log_docs);
            let mut per_order = [0.0; MAX_N];
            for r in &item.references {
                let sim = similarity(&cand, &tfidf(r, &df, log_docs));
                for (acc, s) in per_order.iter_mut().zip(sim) {
                    *acc += s;
                }
            }
            let mean_over_orders = per_order.iter().sum::<f64>() / MAX_N as f64;
            10.0 * mean_over_orders / item.references.len() as f64
        })
        .collect())
}

pub fn cider_d(items: &[EvaluationItem]) -> Result<f64> {
    let scores = cider_d_per_item(items)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
