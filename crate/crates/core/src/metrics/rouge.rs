use super::EvaluationItem;

pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure of one item. Precision and recall are each maximised
/// over the references before combining, as the usual caption tooling does.
pub fn rouge_l_item(item: &EvaluationItem) -> f64 {
    if item.candidate.is_empty() {
        return 0.0;
    }
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for reference in &item.references {
        let lcs = lcs_length(&item.candidate, reference) as f64;
        p = p.max(lcs / item.candidate.len() as f64);
        r = r.max(lcs / reference.len() as f64);
    }
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean item score; 0 for an empty corpus.
pub fn rouge_l(items: &[EvaluationItem]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().map(rouge_l_item).sum::<f64>() / items.len() as f64
}
