//! Sequence-length reduction tables and a relative inference timing run.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{final_length, ModelConfig, Seq2Seq, REFERENCE_FACTORS};
use crate::training::fixtures::random_features;

/// One factor's encoder output lengths for the shortest and longest input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SubsampleRow {
    pub factor: usize,
    /// `None` when the input is too short to survive every stage.
    pub t_min_final: Option<usize>,
    pub t_max_final: Option<usize>,
    /// Reduction in hundredths of a percent, truncated.
    pub reduction_basis_points: u32,
}

impl SubsampleRow {
    pub fn degenerate(&self) -> bool {
        self.t_min_final.is_none() || self.t_max_final.is_none()
    }

    /// Percentage with two decimals and a two-digit integer part, e.g. `00.00`.
    pub fn reduction_percent(&self) -> String {
        let bp = self.reduction_basis_points;
        format!("{:02}.{:02}", bp / 100, bp % 100)
    }
}

/// `1 - M^-(L-1)` in basis points, truncated: the per-step reduction implied
/// by the stride alone, independent of floor effects at a particular length.
pub fn reduction_basis_points(factor: usize, layers: usize) -> u32 {
    let denom = (factor as u128).pow((layers - 1) as u32);
    (10_000 * (denom - 1) / denom) as u32
}

pub fn subsample_table(t_min: usize, t_max: usize, layers: usize, factors: &[usize]) -> Result<Vec<SubsampleRow>> {
    if t_min == 0 || t_min > t_max {
        return Err(Error::Config(format!("need 1 <= t-min <= t-max, got {t_min} and {t_max}")));
    }
    if layers < 2 {
        return Err(Error::Config(format!("need at least 2 layers, got {layers}")));
    }
    if factors.is_empty() || factors.contains(&0) {
        return Err(Error::Config("factors must be a non-empty list of positive integers".into()));
    }
    Ok(factors
        .iter()
        .map(|&m| SubsampleRow {
            factor: m,
            t_min_final: final_length(t_min, m, layers),
            t_max_final: final_length(t_max, m, layers),
            reduction_basis_points: reduction_basis_points(m, layers),
        })
        .collect())
}

pub fn format_subsample_table(rows: &[SubsampleRow]) -> String {
    let mut out = String::from("M     T_L^min  T_L^max  reduction(%)\n");
    for r in rows {
        let len = |v: Option<usize>| v.map_or_else(|| "0".to_string(), |v| v.to_string());
        write!(
            out,
            "{:<5} {:>7}  {:>7}  {:>12}",
            r.factor,
            len(r.t_min_final),
            len(r.t_max_final),
            r.reduction_percent()
        )
        .expect("write to string");
        if r.degenerate() {
            out.push_str("  degenerate");
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub factor: usize,
    /// Minimum over rounds of the mean per-clip encode+decode time.
    pub mean_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub model: ModelConfig,
    pub factors: Vec<usize>,
    pub frames: usize,
    pub clips: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            model: ModelConfig {
                encoder_hidden: 64,
                decoder_hidden: 64,
                vocab_size: 64,
                ..ModelConfig::default()
            },
            factors: REFERENCE_FACTORS.to_vec(),
            frames: 2584,
            clips: 2,
            rounds: 3,
            seed: 0,
        }
    }
}

/// Times inference on fixed random clips for every factor. Rounds are
/// interleaved across factors and each factor keeps its fastest round, which
/// damps drift from other load on the machine. Decoding always runs the full
/// step budget so only the encoder cost differs between factors.
pub fn bench_inference(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.clips == 0 || cfg.rounds == 0 {
        return Err(Error::Config("bench needs at least one clip and one round".into()));
    }
    let inputs: Vec<_> = (0..cfg.clips)
        .map(|i| random_features(cfg.frames, cfg.model.input_features, cfg.seed.wrapping_add(i as u64)))
        .collect();
    let models = cfg
        .factors
        .iter()
        .map(|&m| {
            let mc = ModelConfig {
                subsample_factor: m,
                ..cfg.model.clone()
            };
            if mc.final_length(cfg.frames).is_none() {
                return Err(Error::SequenceTooShort {
                    len: cfg.frames,
                    factor: m,
                });
            }
            Seq2Seq::init(mc, cfg.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let never = usize::MAX;
    let mut best = vec![f64::INFINITY; models.len()];
    for _ in 0..cfg.rounds {
        for ((model, store), slot) in models.iter().zip(best.iter_mut()) {
            let start = Instant::now();
            for x in &inputs {
                std::hint::black_box(model.caption(store.values(), x, never)?);
            }
            *slot = slot.min(start.elapsed().as_secs_f64() / cfg.clips as f64);
        }
    }
    Ok(cfg
        .factors
        .iter()
        .zip(best)
        .map(|(&factor, mean_seconds)| BenchRow { factor, mean_seconds })
        .collect())
}

pub fn format_bench(rows: &[BenchRow]) -> String {
    let base = rows.first().map_or(1.0, |r| r.mean_seconds);
    let mut out = String::from("M     seconds/clip  relative\n");
    for r in rows {
        writeln!(out, "{:<5} {:>12.4}  {:>8.3}", r.factor, r.mean_seconds, r.mean_seconds / base).expect("write to string");
    }
    out
}
