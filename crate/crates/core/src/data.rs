//! Labelled ECG records: text ingestion and a synthetic generator.
//!
//! A record on disk is two UTF-8 files. The signal is a CSV with a required
//! `sample_index,amplitude` header, optionally preceded by `# key=value`
//! metadata lines (`record_id`, `sample_rate`, `lead`). The annotation file
//! holds one R-peak sample index per line.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::Signal;

pub const DEFAULT_SAMPLE_RATE: f64 = 360.0;
pub const SIGNAL_HEADER: &str = "sample_index,amplitude";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("invalid record {record}: {message}")]
    InvalidRecord { record: String, message: String },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub record_id: String,
    pub signal: Signal,
    pub rpeak_annotations: Vec<usize>,
    pub lead: String,
}

impl LabeledRecord {
    pub fn new(
        record_id: impl Into<String>,
        signal: Signal,
        rpeak_annotations: Vec<usize>,
        lead: impl Into<String>,
    ) -> Result<Self, DataError> {
        let record_id = record_id.into();
        if let Some(w) = rpeak_annotations.windows(2).find(|w| w[1] <= w[0]) {
            return Err(DataError::InvalidRecord {
                record: record_id,
                message: format!("annotations not strictly increasing ({} then {})", w[0], w[1]),
            });
        }
        if let Some(&last) = rpeak_annotations.last() {
            if last >= signal.len() {
                return Err(DataError::InvalidRecord {
                    record: record_id,
                    message: format!("annotation {last} outside signal of {} samples", signal.len()),
                });
            }
        }
        Ok(Self { record_id, signal, rpeak_annotations, lead: lead.into() })
    }

    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.signal.sample_rate()
    }
}

/// A contiguous excerpt of a record used for training or testing. Only
/// labels and detections inside `core` are scored; the rest is context.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub record: LabeledRecord,
    /// Scored range, in the excerpt's own sample indices.
    pub core: Range<usize>,
    /// Index of the excerpt's first sample in the source record.
    pub offset: usize,
}

impl Window {
    /// The whole record, all of it scored.
    pub fn whole(record: LabeledRecord) -> Self {
        let core = 0..record.len();
        Self { record, core, offset: 0 }
    }

    /// Excerpt `range` of `record`, scoring `core` (both in record indices).
    pub fn excerpt(record: &LabeledRecord, range: Range<usize>, core: Range<usize>) -> Result<Self, DataError> {
        let invalid = |message: String| DataError::InvalidRecord { record: record.record_id.clone(), message };
        if !(range.start <= core.start && core.end <= range.end && core.start < core.end) {
            return Err(invalid(format!("core {core:?} not inside window {range:?}")));
        }
        let signal = record
            .signal
            .slice(range.clone())
            .ok_or_else(|| invalid(format!("window {range:?} too short or out of bounds")))?;
        let labels = record
            .rpeak_annotations
            .iter()
            .filter(|&&a| range.contains(&a))
            .map(|&a| a - range.start)
            .collect();
        let excerpt = LabeledRecord::new(record.record_id.clone(), signal, labels, record.lead.clone())?;
        Ok(Self { record: excerpt, core: core.start - range.start..core.end - range.start, offset: range.start })
    }

    /// Annotations inside the scored range.
    pub fn core_labels(&self) -> Vec<usize> {
        self.record.rpeak_annotations.iter().copied().filter(|a| self.core.contains(a)).collect()
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Parsed signal CSV: samples plus any metadata found in comment lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignalFile {
    pub samples: Vec<f64>,
    pub record_id: Option<String>,
    pub sample_rate: Option<f64>,
    pub lead: Option<String>,
}

pub fn parse_signal_csv(text: &str, source: &str) -> Result<SignalFile, DataError> {
    let err = |line: usize, message: String| DataError::Malformed { path: source.to_string(), line, message };
    let mut out = SignalFile::default();
    let mut header_seen = false;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim_end_matches('\r');
        if !header_seen {
            if let Some(meta) = line.strip_prefix('#') {
                let Some((key, value)) = meta.trim().split_once('=') else { continue };
                let value = value.trim();
                match key.trim() {
                    "record_id" => out.record_id = Some(value.to_string()),
                    "lead" => out.lead = Some(value.to_string()),
                    "sample_rate" => {
                        let rate: f64 = value.parse().map_err(|_| err(line_no, format!("bad sample_rate {value:?}")))?;
                        out.sample_rate = Some(rate);
                    }
                    _ => {}
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if line.trim() != SIGNAL_HEADER {
                return Err(err(line_no, format!("expected header {SIGNAL_HEADER:?}, found {line:?}")));
            }
            header_seen = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (idx, amp) =
            line.split_once(',').ok_or_else(|| err(line_no, format!("expected 2 columns, found {line:?}")))?;
        let idx: usize = idx.trim().parse().map_err(|_| err(line_no, format!("bad sample_index {idx:?}")))?;
        if idx != out.samples.len() {
            return Err(err(line_no, format!("sample_index {idx}, expected {}", out.samples.len())));
        }
        let amp: f64 = amp.trim().parse().map_err(|_| err(line_no, format!("bad amplitude {amp:?}")))?;
        if !amp.is_finite() {
            return Err(err(line_no, format!("amplitude {amp} is not finite")));
        }
        out.samples.push(amp);
    }
    if !header_seen {
        return Err(err(text.lines().count().max(1), format!("missing header {SIGNAL_HEADER:?}")));
    }
    Ok(out)
}

pub fn parse_annotations(text: &str, source: &str) -> Result<Vec<usize>, DataError> {
    let mut out: Vec<usize> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| DataError::Malformed { path: source.to_string(), line: k + 1, message };
        let idx: usize = line.parse().map_err(|_| err(format!("bad annotation {line:?}")))?;
        if let Some(&prev) = out.last() {
            if idx <= prev {
                return Err(err(format!("annotation {idx} does not follow {prev}")));
            }
        }
        out.push(idx);
    }
    Ok(out)
}

/// Loads a record from a signal CSV and an annotation file.
pub fn load_record(signal_path: &Path, annotation_path: &Path) -> Result<LabeledRecord, DataError> {
    let signal_src = signal_path.display().to_string();
    let file = parse_signal_csv(&read(signal_path)?, &signal_src)?;
    let annotations = parse_annotations(&read(annotation_path)?, &annotation_path.display().to_string())?;
    let record_id = file.record_id.unwrap_or_else(|| {
        signal_path.file_stem().map_or_else(|| "record".into(), |s| s.to_string_lossy().into_owned())
    });
    let signal = Signal::new(file.samples, file.sample_rate.unwrap_or(DEFAULT_SAMPLE_RATE))
        .map_err(|e| DataError::InvalidRecord { record: record_id.clone(), message: e.to_string() })?;
    LabeledRecord::new(record_id, signal, annotations, file.lead.unwrap_or_default())
}

pub fn format_signal_csv(record: &LabeledRecord) -> String {
    let mut s = String::with_capacity(record.len() * 16 + 64);
    let _ = writeln!(s, "# record_id={}", record.record_id);
    let _ = writeln!(s, "# sample_rate={}", record.sample_rate());
    let _ = writeln!(s, "# lead={}", record.lead);
    s.push_str(SIGNAL_HEADER);
    s.push('\n');
    for (i, y) in record.signal.samples().iter().enumerate() {
        let _ = writeln!(s, "{i},{y}");
    }
    s
}

pub fn format_annotations(record: &LabeledRecord) -> String {
    let mut s = String::new();
    for a in &record.rpeak_annotations {
        let _ = writeln!(s, "{a}");
    }
    s
}

pub fn save_record(record: &LabeledRecord, signal_path: &Path, annotation_path: &Path) -> Result<(), DataError> {
    let write = |path: &Path, text: String| {
        fs::write(path, text).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
    };
    write(signal_path, format_signal_csv(record))?;
    write(annotation_path, format_annotations(record))
}

/// Parameters of the synthetic ECG generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub record_id: String,
    pub n_cycles: usize,
    pub heart_rate_bpm: f64,
    pub sample_rate: f64,
    pub r_amplitude: f64,
    pub noise_sigma: f64,
    pub baseline_wander_amp: f64,
    pub wander_hz: f64,
    /// Depth of a narrow negative wave just before each R peak.
    pub pre_r_dip: f64,
    /// Depth of the matching negative wave just after each R peak.
    pub post_r_dip: f64,
    pub invert_qrs: bool,
    /// Beat-to-beat jitter of the R position as a fraction of the cycle.
    pub rr_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            record_id: "synthetic".into(),
            n_cycles: 10,
            heart_rate_bpm: 60.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            r_amplitude: 10.0,
            noise_sigma: 0.0,
            baseline_wander_amp: 0.0,
            wander_hz: 0.15,
            pre_r_dip: 0.0,
            post_r_dip: 0.0,
            invert_qrs: false,
            rr_jitter: 0.05,
            seed: 0,
        }
    }
}

/// Full width at half maximum of the synthetic R wave.
pub const R_WAVE_FWHM_S: f64 = 0.030;
const DIP_OFFSET_S: f64 = 0.035;
const DIP_FWHM_S: f64 = 0.020;
const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_4;

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.into()));
        if self.n_cycles == 0 {
            return bad("n_cycles must be positive");
        }
        if !(self.heart_rate_bpm > 0.0 && self.sample_rate > 0.0 && self.r_amplitude > 0.0) {
            return bad("heart rate, sample rate and R amplitude must be positive");
        }
        let non_neg = [self.noise_sigma, self.baseline_wander_amp, self.wander_hz, self.pre_r_dip, self.post_r_dip];
        if non_neg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("noise, wander and dip parameters must be finite and non-negative");
        }
        if !(0.0..0.25).contains(&self.rr_jitter) {
            return bad("rr_jitter must be in [0, 0.25)");
        }
        Ok(())
    }

    pub fn samples_per_cycle(&self) -> f64 {
        60.0 / self.heart_rate_bpm * self.sample_rate
    }
}

fn add_gaussian(out: &mut [f64], center: f64, sigma: f64, amplitude: f64) {
    let reach = (6.0 * sigma).ceil() as isize;
    let c = center.round() as isize;
    for i in (c - reach).max(0)..(c + reach + 1).min(out.len() as isize) {
        let z = (i as f64 - center) / sigma;
        out[i as usize] += amplitude * (-0.5 * z * z).exp();
    }
}

/// Generates a labelled record: Gaussian R waves at jittered beat positions,
/// optional Q/S-like dips, sinusoidal baseline wander and white noise. The
/// annotation of each beat is the sample at the centre of its R wave.
///
/// Beat positions and the wander phase come from one random stream and the
/// noise from another, so changing `noise_sigma` leaves everything else fixed.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<LabeledRecord, DataError> {
    cfg.validate()?;
    let fs = cfg.sample_rate;
    let period = cfg.samples_per_cycle();
    let n = (cfg.n_cycles as f64 * period).round() as usize;
    let mut structure = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(1);

    let sign = if cfg.invert_qrs { -1.0 } else { 1.0 };
    let r_sigma = R_WAVE_FWHM_S * fs / FWHM_TO_SIGMA;
    let dip_sigma = DIP_FWHM_S * fs / FWHM_TO_SIGMA;
    let dip_offset = DIP_OFFSET_S * fs;

    let mut clean = vec![0.0; n];
    let mut annotations = Vec::with_capacity(cfg.n_cycles);
    for k in 0..cfg.n_cycles {
        let jitter = if cfg.rr_jitter > 0.0 { structure.random_range(-cfg.rr_jitter..cfg.rr_jitter) } else { 0.0 };
        let center = (((k as f64 + 0.5) + jitter) * period).round().clamp(0.0, (n - 1) as f64);
        annotations.push(center as usize);
        add_gaussian(&mut clean, center, r_sigma, sign * cfg.r_amplitude);
        if cfg.pre_r_dip > 0.0 {
            add_gaussian(&mut clean, center - dip_offset, dip_sigma, -sign * cfg.pre_r_dip);
        }
        if cfg.post_r_dip > 0.0 {
            add_gaussian(&mut clean, center + dip_offset, dip_sigma, -sign * cfg.post_r_dip);
        }
    }
    let phase = structure.random_range(0.0..2.0 * PI);
    if cfg.baseline_wander_amp > 0.0 {
        for (i, y) in clean.iter_mut().enumerate() {
            *y += cfg.baseline_wander_amp * (2.0 * PI * cfg.wander_hz * i as f64 / fs + phase).sin();
        }
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| DataError::InvalidConfig(e.to_string()))?;
        for y in clean.iter_mut() {
            *y += normal.sample(&mut noise_rng);
        }
    }
    let signal = Signal::new(clean, fs)
        .map_err(|e| DataError::InvalidRecord { record: cfg.record_id.clone(), message: e.to_string() })?;
    LabeledRecord::new(cfg.record_id.clone(), signal, annotations, "synthetic")
}
