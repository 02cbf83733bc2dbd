//! Brute-force metric oracles keyed by joined strings, written without
//! reference to the library implementations.

use std::collections::{BTreeMap, BTreeSet};

use audiocap_core::metrics::EvaluationItem;
use audiocap_core::numcore::rng;
use rand::Rng;

pub fn grams(tokens: &[String], n: usize) -> Vec<String> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].join(" ")).collect()
}

pub fn count(list: &[String], g: &str) -> usize {
    list.iter().filter(|x| *x == g).count()
}

pub fn oracle_bleu(items: &[EvaluationItem], n: usize) -> f64 {
    let mut product = 1.0;
    for k in 1..=n {
        let (mut num, mut den) = (0usize, 0usize);
        for it in items {
            let cg = grams(&it.candidate, k);
            den += cg.len();
            let distinct: BTreeSet<&String> = cg.iter().collect();
            for g in distinct {
                let best = it.references.iter().map(|r| count(&grams(r, k), g)).max().unwrap();
                num += count(&cg, g).min(best);
            }
        }
        if num == 0 {
            return 0.0;
        }
        product *= num as f64 / den as f64;
    }
    let c: usize = items.iter().map(|i| i.candidate.len()).sum();
    let mut r = 0usize;
    for it in items {
        let mut lens: Vec<usize> = it.references.iter().map(|x| x.len()).collect();
        let cl = it.candidate.len() as i64;
        lens.sort_by_key(|&l| ((l as i64 - cl).abs(), l));
        r += lens[0];
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * product.powf(1.0 / n as f64)
}

pub fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|o| o == *s))
}

pub fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn oracle_rouge(items: &[EvaluationItem]) -> f64 {
    let mut total = 0.0;
    for it in items {
        let c = it.candidate.len() as f64;
        let p = it.references.iter().map(|r| oracle_lcs(&it.candidate, r) as f64 / c).fold(0.0, f64::max);
        let rec = it.references.iter().map(|r| oracle_lcs(&it.candidate, r) as f64 / r.len() as f64).fold(0.0, f64::max);
        if c > 0.0 && p > 0.0 && rec > 0.0 {
            total += (1.0 + 1.44) * p * rec / (rec + 1.44 * p);
        }
    }
    total / items.len() as f64
}

pub fn oracle_cider(items: &[EvaluationItem]) -> f64 {
    let docs = items.len() as f64;
    let df = |g: &str, n: usize| {
        items
            .iter()
            .filter(|it| it.references.iter().any(|r| grams(r, n).iter().any(|x| x == g)))
            .count() as f64
    };
    let vector = |tokens: &[String], n: usize| -> BTreeMap<String, f64> {
        let gs = grams(tokens, n);
        gs.iter()
            .map(|g| (g.clone(), count(&gs, g) as f64 * (docs.ln() - df(g, n).max(1.0).ln())))
            .collect()
    };
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let mut total = 0.0;
    for it in items {
        let mut score = 0.0;
        for r in &it.references {
            let d = it.candidate.len() as f64 - r.len() as f64;
            let pen = (-d * d / 72.0).exp();
            for n in 1..=4 {
                let vc = vector(&it.candidate, n);
                let vr = vector(r, n);
                let mut dot: f64 = vc.iter().map(|(g, w)| vr.get(g).map_or(0.0, |rw| w.min(*rw) * rw)).sum();
                let (nc, nr) = (norm(&vc), norm(&vr));
                if nc != 0.0 && nr != 0.0 {
                    dot /= nc * nr;
                }
                score += dot * pen / 4.0;
            }
        }
        total += 10.0 * score / it.references.len() as f64;
    }
    total / docs
}

pub fn random_corpus(seed: u64, allow_empty: bool) -> Vec<EvaluationItem> {
    let mut r = rng::seeded(seed);
    let words = ["a", "b", "c", "d", "e"];
    let vocab = 2 + (seed % 4) as usize;
    let sentence = |r: &mut rng::Rng, min: usize| -> Vec<String> {
        let len = r.random_range(min..=8);
        (0..len).map(|_| words[r.random_range(0..vocab)].to_string()).collect()
    };
    let n_items = r.random_range(2..=6);
    (0..n_items)
        .map(|i| {
            let refs = (0..r.random_range(1..=5)).map(|_| sentence(&mut r, 1)).collect();
            let cand = sentence(&mut r, if allow_empty { 0 } else { 1 });
            EvaluationItem::new(format!("item{i}"), cand, refs).unwrap()
        })
        .collect()
}

