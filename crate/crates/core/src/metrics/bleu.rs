use super::{ngram_counts, EvaluationItem};

/// Pooled clipped matches and candidate n-gram totals for one order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: usize,
    pub total: usize,
}

/// Clipped n-gram matches of one candidate against its references.
fn item_stats(item: &EvaluationItem, n: usize) -> BleuStats {
    let cand = ngram_counts(&item.candidate, n);
    let mut max_ref = std::collections::HashMap::new();
    for r in &item.references {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matches = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    BleuStats {
        matches,
        total: cand.values().sum(),
    }
}

/// Corpus-level modified precision of order `n`.
pub fn modified_precision(items: &[EvaluationItem], n: usize) -> BleuStats {
    items.iter().fold(BleuStats::default(), |acc, it| {
        let s = item_stats(it, n);
        BleuStats {
            matches: acc.matches + s.matches,
            total: acc.total + s.total,
        }
    })
}

/// Reference length closest to `c`, ties to the shorter one.
fn closest_ref_len(item: &EvaluationItem) -> usize {
    let c = item.candidate.len();
    item.references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn brevity_penalty(items: &[EvaluationItem]) -> f64 {
    let c: usize = items.iter().map(|i| i.candidate.len()).sum();
    let r: usize = items.iter().map(closest_ref_len).sum();
    if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    }
}

/// Corpus BLEU with uniform weights over orders `1..=n`, no smoothing: any
/// zero precision gives a score of 0. `n` must be in `1..=4`.
pub fn bleu(items: &[EvaluationItem], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order {n} outside 1..=4");
    let mut log_sum = 0.0;
    for k in 1..=n {
        let s = modified_precision(items, k);
        if s.matches == 0 {
            return 0.0;
        }
        log_sum += (s.matches as f64 / s.total as f64).ln();
    }
    brevity_penalty(items) * (log_sum / n as f64).exp()
}

pub fn bleu_all(items: &[EvaluationItem]) -> [f64; 4] {
    [1, 2, 3, 4].map(|n| bleu(items, n))
}
