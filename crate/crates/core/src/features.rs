//! Audio decoding and log mel-band energy extraction.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const LMEL_MAGIC: &[u8; 4] = b"LMEL";
pub const LMEL_VERSION: u16 = 1;
pub const LMEL_EXTENSION: &str = "lmel";

/// Mono audio with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Reads a linear-PCM WAV file, scaling integer samples by `2^-(bits-1)`
/// and averaging channels down to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::Unsupported | hound::Error::FormatError(_) => Error::NonPcm {
            path: path.to_path_buf(),
            detail: e.to_string(),
        },
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::NonPcm {
            path: path.to_path_buf(),
            detail: format!("{:?} samples", spec.sample_format),
        });
    }
    let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
    let interleaved = reader
        .into_samples::<i32>()
        .map(|s| s.map(|v| f64::from(v) * scale))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let channels = usize::from(spec.channels.max(1));
    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyAudio(path.to_path_buf()));
    }
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes mono 16-bit PCM, clipping samples to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Duration from the WAV header alone, without decoding samples.
pub fn wav_duration_seconds(path: impl AsRef<Path>) -> Result<f64> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path)?;
    Ok(f64::from(reader.duration()) / f64::from(reader.spec().sample_rate))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFunction {
    #[default]
    Hamming,
    Hann,
}

impl WindowFunction {
    /// Periodic window of length `n` (the DFT-even variant).
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let (a0, a1) = match self {
            WindowFunction::Hamming => (0.54, 0.46),
            WindowFunction::Hann => (0.5, 0.5),
        };
        (0..n)
            .map(|k| a0 - a1 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureExtractionConfig {
    pub window_length: usize,
    pub hop_length: usize,
    pub num_mels: usize,
    pub window_function: WindowFunction,
    /// Reflection-pad the signal by `window_length / 2` on both ends.
    pub centered: bool,
    pub log_floor: f64,
    pub f_min: f64,
    /// Upper mel edge in Hz; `None` means the Nyquist frequency.
    pub f_max: Option<f64>,
}

impl Default for FeatureExtractionConfig {
    fn default() -> Self {
        FeatureExtractionConfig {
            window_length: 1024,
            hop_length: 512,
            num_mels: 64,
            window_function: WindowFunction::Hamming,
            centered: true,
            log_floor: 1e-10,
            f_min: 0.0,
            f_max: None,
        }
    }
}

impl FeatureExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.hop_length == 0 {
            return Err(Error::Config("window and hop lengths must be positive".into()));
        }
        if self.hop_length > self.window_length {
            return Err(Error::Config(format!(
                "hop length {} exceeds window length {}",
                self.hop_length, self.window_length
            )));
        }
        if self.num_mels == 0 {
            return Err(Error::Config("num_mels must be at least 1".into()));
        }
        if !(self.log_floor.is_finite() && self.log_floor > 0.0) {
            return Err(Error::Config(format!("log_floor must be > 0, got {}", self.log_floor)));
        }
        Ok(())
    }

    pub fn fft_bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Number of frames produced for `num_samples` input samples.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        if self.centered {
            num_samples / self.hop_length + 1
        } else if num_samples < self.window_length {
            0
        } else {
            (num_samples - self.window_length) / self.hop_length + 1
        }
    }

    fn mel_range(&self, sample_rate: u32) -> Result<(f64, f64)> {
        let nyquist = f64::from(sample_rate) / 2.0;
        let f_max = self.f_max.unwrap_or(nyquist);
        if f_max > nyquist {
            return Err(Error::Config(format!(
                "sample rate {sample_rate} Hz cannot represent a mel range up to {f_max} Hz"
            )));
        }
        if !(self.f_min >= 0.0 && self.f_min < f_max) {
            return Err(Error::Config(format!(
                "invalid mel range [{}, {f_max}] Hz",
                self.f_min
            )));
        }
        Ok((self.f_min, f_max))
    }
}

/// A `T × F` matrix of log mel-band energies for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub data: Tensor,
    pub source_id: String,
}

impl FeatureSequence {
    pub fn num_frames(&self) -> usize {
        self.data.rows()
    }

    pub fn num_features(&self) -> usize {
        self.data.cols()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Centre frequencies (Hz) of the mel filters, plus the two outer edges.
fn mel_edges(num_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (0..num_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (num_mels + 1) as f64))
        .collect()
}

/// Triangular filters with peaks equally spaced on the mel scale, each
/// scaled by `2 / (upper edge - lower edge)` so that filters have equal area.
pub fn mel_filterbank(
    cfg: &FeatureExtractionConfig,
    sample_rate: u32,
    fft_bins: usize,
) -> Result<Tensor> {
    cfg.validate()?;
    if fft_bins != cfg.fft_bins() {
        return Err(Error::Config(format!(
            "expected {} FFT bins for a {}-sample window, got {fft_bins}",
            cfg.fft_bins(),
            cfg.window_length
        )));
    }
    let (f_min, f_max) = cfg.mel_range(sample_rate)?;
    let edges = mel_edges(cfg.num_mels, f_min, f_max);
    let bin_hz = f64::from(sample_rate) / cfg.window_length as f64;
    let mut weights = Tensor::zeros(&[cfg.num_mels, fft_bins]);
    for m in 0..cfg.num_mels {
        let (lower, centre, upper) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (upper - lower);
        let row = weights.row_mut(m);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lower) / (centre - lower);
            let falling = (upper - f) / (upper - centre);
            *w = rising.min(falling).max(0.0) * norm;
        }
        if row.iter().all(|&w| w <= 0.0) {
            return Err(Error::Config(format!(
                "mel filter {m} ({lower:.1}-{upper:.1} Hz) covers no FFT bin; \
                 too many mel bands for a {}-sample window",
                cfg.window_length
            )));
        }
    }
    Ok(weights)
}

/// Index into a signal of length `n` extended by mirror reflection about its
/// first and last samples (edge samples are not repeated).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    if r < n as isize {
        r as usize
    } else {
        (period - r) as usize
    }
}

/// Reusable extractor holding the window, filterbank and FFT plan for one
/// sample rate.
pub struct LogMelExtractor {
    cfg: FeatureExtractionConfig,
    sample_rate: u32,
    window: Vec<f64>,
    filterbank: Tensor,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMelExtractor {
    pub fn new(cfg: FeatureExtractionConfig, sample_rate: u32) -> Result<Self> {
        let filterbank = mel_filterbank(&cfg, sample_rate, cfg.fft_bins())?;
        let window = cfg.window_function.coefficients(cfg.window_length);
        let fft = FftPlanner::new().plan_fft_forward(cfg.window_length);
        Ok(LogMelExtractor {
            cfg,
            sample_rate,
            window,
            filterbank,
            fft,
        })
    }

    pub fn config(&self) -> &FeatureExtractionConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &Tensor {
        &self.filterbank
    }

    /// Magnitude-squared spectrum of the windowed frame starting at `start`
    /// (in padded-signal coordinates).
    fn power_spectrum(&self, samples: &[f64], start: isize, buf: &mut [Complex<f64>], out: &mut [f64]) {
        let n = samples.len();
        for (k, (c, w)) in buf.iter_mut().zip(&self.window).enumerate() {
            let idx = start + k as isize;
            let x = if self.cfg.centered {
                samples[reflect_index(idx, n)]
            } else {
                samples[idx as usize]
            };
            *c = Complex::new(x * w, 0.0);
        }
        self.fft.process(buf);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.norm_sqr();
        }
    }

    pub fn extract(&self, clip: &AudioClip, source_id: impl Into<String>) -> Result<FeatureSequence> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::Config(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.sample_rate, clip.sample_rate
            )));
        }
        if clip.samples.is_empty() {
            return Err(Error::Contract("cannot extract features from an empty clip".into()));
        }
        let frames = self.cfg.num_frames(clip.samples.len());
        if frames == 0 {
            return Err(Error::Contract(format!(
                "clip of {} samples is shorter than one {}-sample window",
                clip.samples.len(),
                self.cfg.window_length
            )));
        }
        let bins = self.cfg.fft_bins();
        let mels = self.cfg.num_mels;
        let offset = if self.cfg.centered {
            (self.cfg.window_length / 2) as isize
        } else {
            0
        };
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.window_length];
        let mut power = vec![0.0; bins];
        let mut data = Vec::with_capacity(frames * mels);
        for t in 0..frames {
            let start = (t * self.cfg.hop_length) as isize - offset;
            self.power_spectrum(&clip.samples, start, &mut buf, &mut power);
            for m in 0..mels {
                let energy: f64 = self
                    .filterbank
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                data.push((energy + self.cfg.log_floor).ln());
            }
        }
        Ok(FeatureSequence {
            data: Tensor::matrix(frames, mels, data)?,
            source_id: source_id.into(),
        })
    }
}

/// One-shot log mel extraction.
pub fn log_mel(clip: &AudioClip, cfg: &FeatureExtractionConfig) -> Result<FeatureSequence> {
    LogMelExtractor::new(cfg.clone(), clip.sample_rate)?.extract(clip, String::new())
}

/// Serialises features as `LMEL | version u16 | T u32 | F u32 | T·F f32`,
/// little-endian.
pub fn write_lmel<W: Write>(mut w: W, features: &Tensor) -> Result<()> {
    let (t, f) = (features.rows(), features.cols());
    w.write_all(LMEL_MAGIC)?;
    w.write_u16::<LittleEndian>(LMEL_VERSION)?;
    w.write_u32::<LittleEndian>(to_u32(t)?)?;
    w.write_u32::<LittleEndian>(to_u32(f)?)?;
    for &v in features.data() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

pub fn read_lmel<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LMEL_MAGIC {
        return Err(Error::format("feature", format!("bad magic {magic:?}")));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != LMEL_VERSION {
        return Err(Error::format("feature", format!("unsupported version {version}")));
    }
    let t = r.read_u32::<LittleEndian>()? as usize;
    let f = r.read_u32::<LittleEndian>()? as usize;
    let mut data = vec![0f32; t * f];
    r.read_f32_into::<LittleEndian>(&mut data)
        .map_err(|e| Error::format("feature", format!("truncated data: {e}")))?;
    Tensor::matrix(t, f, data.into_iter().map(f64::from).collect())
}

pub fn save_lmel(path: impl AsRef<Path>, features: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_lmel(&mut w, features)?;
    w.flush()?;
    Ok(())
}

pub fn load_lmel(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let data = read_lmel(BufReader::new(File::open(path)?))?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(FeatureSequence { data, source_id })
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format("feature", format!("extent {v} exceeds u32")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw_wav(path: &Path, channels: u16, rate: u32, samples: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn wav_silence_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zeros.wav");
        write_raw_wav(&p, 1, 44100, &vec![0i16; 44100]);
        let clip = read_wav(&p).unwrap();
        assert_eq!(clip.samples.len(), 44100);
        assert!(clip.samples.iter().all(|&s| s == 0.0));

        let p = dir.path().join("neg.wav");
        write_raw_wav(&p, 1, 44100, &[i16::MIN, 16384]);
        assert_eq!(read_wav(&p).unwrap().samples, vec![-1.0, 0.5]);
    }

    #[test]
    fn wav_writer_round_trip_and_header_duration() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tone.wav");
        let clip = AudioClip {
            samples: (0..22050).map(|i| (i as f64 * 0.01).sin() * 0.5).collect(),
            sample_rate: 44100,
        };
        write_wav(&p, &clip).unwrap();
        assert_eq!(wav_duration_seconds(&p).unwrap(), 0.5);
        let back = read_wav(&p).unwrap();
        assert_eq!(back.samples.len(), 22050);
        assert!(back.samples.iter().zip(&clip.samples).all(|(a, b)| (a - b).abs() < 1e-4));
        assert!(matches!(wav_duration_seconds(dir.path().join("nope.wav")), Err(Error::MissingFile(_))));
    }

    #[test]
    fn wav_stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stereo.wav");
        let frames: Vec<i16> = (0..100).flat_map(|_| [16384i16, -16384]).collect();
        write_raw_wav(&p, 2, 44100, &frames);
        let clip = read_wav(&p).unwrap();
        assert_eq!(clip.samples.len(), 100);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn wav_error_variants() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_wav(dir.path().join("nope.wav")),
            Err(Error::MissingFile(_))
        ));

        let p = dir.path().join("empty.wav");
        write_raw_wav(&p, 1, 44100, &[]);
        assert!(matches!(read_wav(&p), Err(Error::EmptyAudio(_))));

        let p = dir.path().join("float.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44100,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::NonPcm { .. })));

        let p = dir.path().join("garbage.wav");
        std::fs::write(&p, b"this is not a riff file at all").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::NonPcm { .. })));
    }

    #[test]
    fn reflection_padding_indices() {
        // [a b c d] reflected: ... c b | a b c d | c b ...
        let idx: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, [3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn frame_counts_for_fifteen_and_thirty_seconds() {
        let cfg = FeatureExtractionConfig::default();
        assert_eq!(cfg.num_frames(15 * 44100), 1292);
        assert_eq!(cfg.num_frames(30 * 44100), 2584);
    }

    #[test]
    fn silence_gives_log_floor() {
        let cfg = FeatureExtractionConfig::default();
        let clip = AudioClip {
            samples: vec![0.0; 5000],
            sample_rate: 44100,
        };
        let feats = log_mel(&clip, &cfg).unwrap();
        assert_eq!(feats.num_frames(), 5000 / 512 + 1);
        assert_eq!(feats.num_features(), 64);
        let floor = 1e-10f64.ln();
        assert!(feats.data.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn very_short_clips_still_frame() {
        let cfg = FeatureExtractionConfig::default();
        for n in [1, 2, 511, 512, 513] {
            let clip = AudioClip {
                samples: (0..n).map(|i| (i as f64 * 0.01).sin()).collect(),
                sample_rate: 44100,
            };
            let feats = log_mel(&clip, &cfg).unwrap();
            assert_eq!(feats.num_frames(), n / 512 + 1);
            assert!(feats.data.is_finite());
        }
    }

    #[test]
    fn mel_range_beyond_nyquist_is_rejected() {
        let cfg = FeatureExtractionConfig {
            f_max: Some(30_000.0),
            ..Default::default()
        };
        let clip = AudioClip {
            samples: vec![0.0; 2048],
            sample_rate: 44100,
        };
        assert!(matches!(log_mel(&clip, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn filterbank_shape_and_monotone_peaks() {
        let cfg = FeatureExtractionConfig::default();
        let fb = mel_filterbank(&cfg, 44100, 513).unwrap();
        assert_eq!(fb.shape(), &[64, 513]);
        let mut last_peak = 0;
        for m in 0..64 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0));
            let peak = crate::numcore::argmax(row);
            if m > 0 {
                assert!(peak >= last_peak);
            }
            last_peak = peak;
        }
        let edges = mel_edges(64, 0.0, 22050.0);
        assert!(edges.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn degenerate_filterbank_is_rejected() {
        let cfg = FeatureExtractionConfig {
            window_length: 64,
            hop_length: 32,
            num_mels: 128,
            ..Default::default()
        };
        assert!(matches!(
            mel_filterbank(&cfg, 44100, 33),
            Err(Error::Config(_))
        ));
        assert!(mel_filterbank(&FeatureExtractionConfig::default(), 44100, 512).is_err());
    }

    #[test]
    fn pure_tone_energy_concentrates_in_nearest_filters() {
        let cfg = FeatureExtractionConfig::default();
        let ex = LogMelExtractor::new(cfg.clone(), 44100).unwrap();
        let fb = ex.filterbank();
        let edges = mel_edges(64, 0.0, 22050.0);
        for tone in [440.0, 1000.0, 2500.0, 6000.0, 12000.0] {
            let samples: Vec<f64> = (0..4096)
                .map(|i| (2.0 * std::f64::consts::PI * tone * i as f64 / 44100.0).sin() * 0.5)
                .collect();
            let mut buf = vec![Complex::new(0.0, 0.0); 1024];
            let mut power = vec![0.0; 513];
            ex.power_spectrum(&samples, 1024, &mut buf, &mut power);
            let response: Vec<f64> = (0..64)
                .map(|m| fb.row(m).iter().zip(&power).map(|(w, p)| w * p).sum())
                .collect();
            let mut by_distance: Vec<usize> = (0..64).collect();
            by_distance.sort_by(|&a, &b| {
                let da = (edges[a + 1] - tone).abs();
                let db = (edges[b + 1] - tone).abs();
                da.partial_cmp(&db).unwrap()
            });
            let near: f64 = by_distance[..3].iter().map(|&m| response[m]).sum();
            let total: f64 = response.iter().sum();
            assert!(near / total >= 0.9, "{tone} Hz: {}", near / total);
        }
    }

    #[test]
    fn lmel_round_trip_and_bad_magic() {
        let t = Tensor::from_rows(&[vec![1.5, -2.25], vec![0.0, 3.0], vec![-23.0, 7.125]]).unwrap();
        let mut bytes = Vec::new();
        write_lmel(&mut bytes, &t).unwrap();
        assert_eq!(&bytes[..4], b"LMEL");
        assert_eq!(bytes.len(), 4 + 2 + 4 + 4 + 6 * 4);
        assert_eq!(read_lmel(&bytes[..]).unwrap(), t);

        bytes[0] = b'X';
        assert!(matches!(read_lmel(&bytes[..]), Err(Error::Format { .. })));
    }
}
