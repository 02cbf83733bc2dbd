mod support;

use audiocap_core::metrics::{bleu, cider_d, lcs_length, modified_precision, rouge_l, EvaluationItem};
use audiocap_core::numcore::rng;
use rand::seq::SliceRandom;
use support::oracles::*;

fn item(c: &str, refs: &[&str]) -> EvaluationItem {
    EvaluationItem::from_strs("x", c, refs).unwrap()
}

#[test]
fn bleu_matches_oracle_on_random_corpora() {
    let mut nonzero = 0;
    for seed in 0..40 {
        let c = random_corpus(seed, true);
        for n in 1..=4 {
            let (a, o) = (bleu(&c, n), oracle_bleu(&c, n));
            assert!((a - o).abs() < 1e-9, "seed {seed} n {n}: {a} vs {o}");
            nonzero += (o > 0.0) as usize;
        }
    }
    assert!(nonzero > 100, "oracle too often trivially zero ({nonzero})");
}

#[test]
fn rouge_matches_oracle_on_random_corpora() {
    for seed in 0..40 {
        let c = random_corpus(seed, true);
        let (a, o) = (rouge_l(&c), oracle_rouge(&c));
        assert!((a - o).abs() < 1e-9, "seed {seed}: {a} vs {o}");
    }
}

#[test]
fn cider_matches_oracle_on_random_corpora() {
    let mut nonzero = 0;
    for seed in 0..40 {
        let c = random_corpus(seed, true);
        let (a, o) = (cider_d(&c).unwrap(), oracle_cider(&c));
        assert!((a - o).abs() < 1e-9, "seed {seed}: {a} vs {o}");
        nonzero += (o > 0.0) as usize;
    }
    assert!(nonzero > 20);
}

#[test]
fn lcs_matches_brute_force() {
    for seed in 0..30 {
        let c = random_corpus(seed, true);
        for it in &c {
            for r in &it.references {
                assert_eq!(lcs_length(&it.candidate, r), oracle_lcs(&it.candidate, r));
            }
        }
    }
}

#[test]
fn bleu_is_monotone_when_precisions_are() {
    for seed in 0..60 {
        let c = random_corpus(seed, true);
        for n in 1..4 {
            let p = |k| {
                let s = modified_precision(&c, k);
                s.matches as f64 / s.total.max(1) as f64
            };
            if (1..=n).all(|k| p(n + 1) <= p(k)) {
                assert!(bleu(&c, n + 1) <= bleu(&c, n) + 1e-12, "seed {seed} n {n}");
            }
        }
    }
}

#[test]
fn cider_three_item_toy_corpus() {
    let c = [
        item("a dog barks", &["a dog barks loudly", "the dog barks"]),
        item("rain falls on a roof", &["rain falls on the roof", "heavy rain on a roof"]),
        item("a car passes", &["a car drives past", "traffic passes by"]),
    ];
    let (a, o) = (cider_d(&c).unwrap(), oracle_cider(&c));
    assert!(a > 0.0);
    assert!((a - o).abs() < 1e-9);
}

#[test]
fn metrics_are_permutation_invariant() {
    for seed in 0..20 {
        let c = random_corpus(seed, true);
        let mut shuffled = c.clone();
        shuffled.shuffle(&mut rng::seeded(seed + 100));
        for n in 1..=4 {
            assert!((bleu(&c, n) - bleu(&shuffled, n)).abs() < 1e-12);
        }
        assert!((rouge_l(&c) - rouge_l(&shuffled)).abs() < 1e-12);
        assert!((cider_d(&c).unwrap() - cider_d(&shuffled).unwrap()).abs() < 1e-12);
    }
}
