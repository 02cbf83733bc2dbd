use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use audiocap_core::features::{load_lmel, log_mel, read_wav, save_lmel, wav_duration_seconds, LMEL_EXTENSION};
use audiocap_core::metrics::{build_items, ExternalScores, MetricsReport};
use audiocap_core::model::{load_checkpoint, param_count, save_checkpoint, ModelConfig, Seq2Seq};
use audiocap_core::report::{bench_inference, format_bench, format_subsample_table, subsample_table, BenchConfig};
use audiocap_core::textproc::{normalize_caption, read_captions_csv, CaptionRecord};
use audiocap_core::training::{
    evaluate_split, write_epochs_csv, write_predictions_csv, Example, Trainer,
};
use audiocap_core::{Error, ParamStore, Tensor, Vocabulary, WeightTable};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{resolve, RunConfig};
use crate::SubsampleArgs;

const MANIFEST: &str = "manifest.csv";

fn feature_path(dir: &Path, file_name: &str) -> PathBuf {
    let stem = Path::new(file_name)
        .file_stem()
        .map_or_else(|| file_name.to_string(), |s| s.to_string_lossy().into_owned());
    dir.join(format!("{stem}.{LMEL_EXTENSION}"))
}

fn list_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

enum Outcome {
    Extracted { frames: usize, seconds: f64 },
    Skipped { frames: usize, seconds: f64 },
    Failed(String),
}

fn up_to_date(wav: &Path, out: &Path) -> bool {
    let mtime = |p: &Path| fs::metadata(p).and_then(|m| m.modified()).ok();
    matches!((mtime(wav), mtime(out)), (Some(w), Some(o)) if o >= w)
}

fn extract_one(cfg: &RunConfig, wav: &Path, out: &Path, force: bool) -> Outcome {
    if !force && up_to_date(wav, out) {
        if let (Ok(f), Ok(seconds)) = (load_lmel(out), wav_duration_seconds(wav)) {
            return Outcome::Skipped {
                frames: f.num_frames(),
                seconds,
            };
        }
    }
    let run = || -> audiocap_core::Result<Outcome> {
        let clip = read_wav(wav)?;
        let feats = log_mel(&clip, &cfg.features)?;
        save_lmel(out, &feats.data)?;
        Ok(Outcome::Extracted {
            frames: feats.num_frames(),
            seconds: clip.duration_seconds(),
        })
    };
    run().unwrap_or_else(|e| Outcome::Failed(e.to_string()))
}

pub fn extract_features(
    cfg: &RunConfig,
    audio_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    workers: Option<usize>,
    force: bool,
) -> Result<()> {
    let audio_dir = resolve(audio_dir, &cfg.paths.audio_dir, "audio dir", true)?;
    let out_dir = resolve(out_dir, &cfg.paths.features_dir, "features dir", false)?;
    let wavs = list_with_extension(&audio_dir, "wav")?;
    if wavs.is_empty() {
        bail!("no audio files in {}", audio_dir.display());
    }
    fs::create_dir_all(&out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()?;
    let outcomes: Vec<(String, Outcome)> = pool.install(|| {
        wavs.par_iter()
            .map(|wav| {
                let name = wav.file_name().unwrap_or_default().to_string_lossy().into_owned();
                let out = feature_path(&out_dir, &name);
                (name, extract_one(cfg, wav, &out, force))
            })
            .collect()
    });

    let mut manifest = csv::Writer::from_path(out_dir.join(MANIFEST))?;
    manifest.write_record(["file_name", "T", "duration_seconds"])?;
    let (mut extracted, mut skipped, mut failed) = (0, 0, Vec::new());
    for (name, outcome) in &outcomes {
        let (frames, seconds) = match outcome {
            Outcome::Extracted { frames, seconds } => {
                extracted += 1;
                (frames, seconds)
            }
            Outcome::Skipped { frames, seconds } => {
                skipped += 1;
                (frames, seconds)
            }
            Outcome::Failed(msg) => {
                failed.push(format!("{name}: {msg}"));
                continue;
            }
        };
        manifest.write_record([name.clone(), frames.to_string(), seconds.to_string()])?;
    }
    manifest.flush()?;
    if failed.is_empty() {
        println!("{extracted} extracted, {skipped} skipped");
        Ok(())
    } else {
        println!("{extracted} extracted, {skipped} skipped, {} failed", failed.len());
        for f in &failed {
            eprintln!("failed: {f}");
        }
        bail!("{} of {} files failed", failed.len(), outcomes.len())
    }
}

fn all_captions(records: &[CaptionRecord]) -> Vec<&str> {
    records.iter().flat_map(|r| r.captions.iter().map(String::as_str)).collect()
}

pub fn build_vocab(cfg: &RunConfig, captions: Option<PathBuf>, out: &Path) -> Result<()> {
    let captions = resolve(captions, &cfg.paths.captions, "captions", true)?;
    let records = read_captions_csv(&captions)?;
    let vocab = Vocabulary::build(&all_captions(&records))?;
    let weights = WeightTable::from_vocab(&vocab, cfg.training.beta_clamp)?;
    vocab.save(out, Some(&weights))?;
    println!("{} tokens written to {}", vocab.len(), out.display());
    Ok(())
}

/// Loads one feature file per caption row, failing with the full list of
/// rows whose features are missing.
fn load_features(dir: &Path, records: &[CaptionRecord]) -> Result<Vec<Arc<Tensor>>> {
    let missing: Vec<String> = records
        .iter()
        .filter(|r| !feature_path(dir, &r.file_name).is_file())
        .map(|r| r.file_name.clone())
        .collect();
    if !missing.is_empty() {
        for m in &missing {
            eprintln!("missing features: {m} (expected {})", feature_path(dir, m).display());
        }
        bail!("{} caption row(s) have no feature file in {}", missing.len(), dir.display());
    }
    records
        .iter()
        .map(|r| Ok(Arc::new(load_lmel(feature_path(dir, &r.file_name))?.data)))
        .collect()
}

fn check_feature_width(features: &[Arc<Tensor>], expected: usize) -> Result<()> {
    if let Some(f) = features.iter().map(|f| f.cols()).find(|&f| f != expected) {
        bail!("features have {f} bands but the model expects {expected} (model.input_features)");
    }
    Ok(())
}

fn predict_rows(
    names: &[String],
    features: &[Arc<Tensor>],
    model: &Seq2Seq,
    params: &ParamStore,
    vocab: &Vocabulary,
) -> Result<Vec<(String, String)>> {
    let clips: Vec<(String, Arc<Tensor>)> = names.iter().cloned().zip(features.iter().cloned()).collect();
    let rows: Vec<(String, String)> = evaluate_split(&clips, model, params, vocab.eos_index())?
        .into_iter()
        .map(|p| (p.file_name, vocab.words(&p.tokens).join(" ")))
        .collect();
    Ok(rows)
}

pub fn train(
    mut cfg: RunConfig,
    features_dir: Option<PathBuf>,
    captions: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    vocab_path: Option<PathBuf>,
) -> Result<()> {
    let features_dir = resolve(features_dir, &cfg.paths.features_dir, "features dir", true)?;
    let captions = resolve(captions, &cfg.paths.captions, "captions", true)?;
    let out_dir = resolve(out_dir, &cfg.paths.output_dir, "output dir", false)?;
    let records = read_captions_csv(&captions)?;
    if records.is_empty() {
        bail!("{} has no caption rows", captions.display());
    }
    let features = load_features(&features_dir, &records)?;
    check_feature_width(&features, cfg.model.input_features)?;

    let vocab = match &vocab_path {
        Some(p) => Vocabulary::load(p)?.0,
        None => Vocabulary::build(&all_captions(&records))?,
    };
    if cfg.model.vocab_size != vocab.len() {
        info!("vocab_size set to {} from the captions (config had {})", vocab.len(), cfg.model.vocab_size);
        cfg.model.vocab_size = vocab.len();
    }
    cfg.model.validate()?;
    let weights = WeightTable::from_vocab(&vocab, cfg.training.beta_clamp)?;
    let eos = vocab.eos_index();
    let mut examples = Vec::new();
    for (r, f) in records.iter().zip(&features) {
        for c in &r.captions {
            examples.push(Example {
                clip_id: r.file_name.clone(),
                features: f.clone(),
                targets: vocab.encode(&normalize_caption(c)?)?,
            });
        }
    }

    cfg.paths.features_dir = Some(features_dir);
    cfg.paths.captions = Some(captions);
    cfg.paths.output_dir = Some(out_dir.clone());
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.json"), cfg.to_json()?)?;
    vocab.save(out_dir.join("vocab.json"), Some(&weights))?;
    let params = param_count(&cfg.model);
    info!("model parameters: {params}");
    println!("parameters: {params}");
    println!("examples: {} from {} clips", examples.len(), records.len());

    let digits = cfg.training.loss_round_digits as usize;
    let mut trainer = Trainer::new(cfg.model.clone(), cfg.training.clone(), eos)?;
    let result = trainer.run(&examples, &weights, |r| {
        println!("epoch {:>5}  loss {:.*}", r.epoch, digits, r.rounded_loss);
    });
    write_epochs_csv(out_dir.join("epochs.csv"), trainer.records())?;
    save_checkpoint(out_dir.join("last.sscp"), &cfg.model, trainer.last_params())?;
    let summary = match result {
        Ok(s) => s,
        Err(e @ Error::Divergence { .. }) => {
            return Err(anyhow!(e).context(format!(
                "training diverged; last good parameters kept in {}",
                out_dir.join("last.sscp").display()
            )))
        }
        Err(e) => return Err(e.into()),
    };
    save_checkpoint(out_dir.join("best.sscp"), &cfg.model, trainer.best_params())?;
    let names: Vec<String> = records.iter().map(|r| r.file_name.clone()).collect();
    let rows = predict_rows(&names, &features, trainer.model(), trainer.best_params(), &vocab)?;
    write_predictions_csv(out_dir.join("predictions.csv"), &rows)?;
    println!(
        "best loss {:.*} at epoch {} ({} epochs{})",
        digits,
        summary.best_rounded_loss,
        summary.best_epoch,
        summary.records.len(),
        if summary.stopped_early { ", early stop" } else { "" }
    );
    Ok(())
}

/// Field-by-field differences between two model configurations.
fn config_diff(a: &ModelConfig, b: &ModelConfig) -> Result<Vec<String>> {
    let (va, vb) = (serde_json::to_value(a)?, serde_json::to_value(b)?);
    let (Some(ma), Some(mb)) = (va.as_object(), vb.as_object()) else {
        return Ok(Vec::new());
    };
    Ok(ma
        .iter()
        .filter(|(k, v)| mb.get(*k) != Some(*v))
        .map(|(k, v)| format!("{k}: checkpoint {} vs {}", mb.get(k).map_or("-".into(), |x| x.to_string()), v))
        .collect())
}

/// Loads a checkpoint and its vocabulary, refusing on any mismatch.
fn load_model(checkpoint: &Path, vocab: Option<PathBuf>) -> Result<(Seq2Seq, ParamStore, Vocabulary)> {
    let run_dir = checkpoint.parent().unwrap_or(Path::new("."));
    let (model, store) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let vocab_path = vocab.unwrap_or_else(|| run_dir.join("vocab.json"));
    let vocab = Vocabulary::load(&vocab_path)
        .with_context(|| format!("loading vocabulary {}", vocab_path.display()))?
        .0;
    let mut problems = Vec::new();
    if vocab.len() != model.config().vocab_size {
        problems.push(format!(
            "vocab_size: checkpoint {} vs {} tokens in {}",
            model.config().vocab_size,
            vocab.len(),
            vocab_path.display()
        ));
    }
    let run_cfg = run_dir.join("config.json");
    if run_cfg.is_file() {
        let saved: RunConfig = serde_json::from_str(&fs::read_to_string(&run_cfg)?)
            .with_context(|| format!("parsing {}", run_cfg.display()))?;
        for d in config_diff(&saved.model, model.config())? {
            problems.push(format!("{d} in {}", run_cfg.display()));
        }
    }
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("mismatch: {p}");
        }
        bail!("checkpoint does not match its vocabulary or configuration");
    }
    Ok((model, store, vocab))
}

pub fn evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    features_dir: Option<PathBuf>,
    captions: Option<PathBuf>,
    out: &Path,
    vocab: Option<PathBuf>,
    external: Option<PathBuf>,
) -> Result<()> {
    let features_dir = resolve(features_dir, &cfg.paths.features_dir, "features dir", true)?;
    let captions = resolve(captions, &cfg.paths.captions, "captions", true)?;
    let external = match external {
        Some(p) => ExternalScores::load(&p).with_context(|| format!("reading {}", p.display()))?,
        None => ExternalScores::default(),
    };
    let (model, store, vocab) = load_model(checkpoint, vocab)?;
    let records = read_captions_csv(&captions)?;
    let features = load_features(&features_dir, &records)?;
    check_feature_width(&features, model.config().input_features)?;
    fs::create_dir_all(out)?;
    let names: Vec<String> = records.iter().map(|r| r.file_name.clone()).collect();
    let rows = predict_rows(&names, &features, &model, &store, &vocab)?;
    write_predictions_csv(out.join("predictions.csv"), &rows)?;
    if rows.len() < records.len() {
        warn!("{} clip(s) too short to caption were skipped", records.len() - rows.len());
    }
    let items = build_items(&rows, &records)?;
    let report = MetricsReport::compute(&items, external)?;
    fs::write(out.join("report.json"), report.to_json()?)?;
    let table = report.to_table();
    fs::write(out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn manifest_names(dir: &Path) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    if let Ok(mut r) = csv::Reader::from_path(dir.join(MANIFEST)) {
        for row in r.records().flatten() {
            if let Some(name) = row.get(0) {
                let stem = Path::new(name).file_stem().unwrap_or_default().to_string_lossy().into_owned();
                map.insert(stem, name.to_string());
            }
        }
    }
    map
}

pub fn predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    features_dir: Option<PathBuf>,
    vocab: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let features_dir = resolve(features_dir, &cfg.paths.features_dir, "features dir", true)?;
    let (model, store, vocab) = load_model(checkpoint, vocab)?;
    let files = list_with_extension(&features_dir, LMEL_EXTENSION)?;
    if files.is_empty() {
        bail!("no feature files in {}", features_dir.display());
    }
    let names = manifest_names(&features_dir);
    let mut clips = Vec::with_capacity(files.len());
    for f in &files {
        let seq = load_lmel(f)?;
        let name = names.get(&seq.source_id).cloned().unwrap_or_else(|| format!("{}.wav", seq.source_id));
        clips.push((name, Arc::new(seq.data)));
    }
    let features: Vec<Arc<Tensor>> = clips.iter().map(|c| c.1.clone()).collect();
    check_feature_width(&features, model.config().input_features)?;
    let names: Vec<String> = clips.into_iter().map(|c| c.0).collect();
    let rows = predict_rows(&names, &features, &model, &store, &vocab)?;
    match out {
        Some(path) => {
            write_predictions_csv(&path, &rows)?;
            println!("{} predictions written to {}", rows.len(), path.display());
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(["file_name", "caption_predicted"])?;
            for (name, caption) in &rows {
                w.write_record([name, caption])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn subsample_report(a: &SubsampleArgs, seed: u64) -> Result<()> {
    let rows = subsample_table(a.t_min, a.t_max, a.layers, &a.factors)?;
    print!("{}", format_subsample_table(&rows));
    if a.bench {
        let cfg = BenchConfig {
            model: ModelConfig {
                layers: a.layers,
                ..BenchConfig::default().model
            },
            factors: a.factors.clone(),
            frames: a.bench_frames,
            clips: a.bench_clips,
            rounds: a.bench_rounds,
            seed,
        };
        let bench = bench_inference(&cfg)?;
        println!();
        print!("{}", format_bench(&bench));
        let decreasing = bench.windows(2).all(|w| w[1].mean_seconds < w[0].mean_seconds);
        println!("time strictly decreasing with M: {}", if decreasing { "yes" } else { "no" });
    }
    Ok(())
}

pub fn show_config(load: impl FnOnce() -> Result<RunConfig>, defaults: bool, params: bool) -> Result<()> {
    let cfg = if defaults { RunConfig::default() } else { load()? };
    if params {
        println!("parameters: {}", param_count(&cfg.model));
    } else {
        println!("{}", cfg.to_json()?);
    }
    Ok(())
}
