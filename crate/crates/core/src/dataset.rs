//! Labeled multichannel series: loading, windowing, normalization, splits,
//! k-shot subsampling and a deterministic synthetic generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WINDOW_LENGTH: usize = 32;
pub const DEFAULT_OVERLAP: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input, line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("label out of range, line {line}: label {label} but {n_classes} classes declared")]
    LabelOutOfRange {
        line: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// A time-major `T x C` recording with one activity id per timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub name: String,
    pub channels: usize,
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledSeries {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(DatasetError::InvalidConfig("channels must be positive".into()));
        }
        if self.data.len() != self.labels.len() * self.channels {
            return Err(DatasetError::InvalidConfig(format!(
                "data length {} does not match {} timesteps x {} channels",
                self.data.len(),
                self.labels.len(),
                self.channels
            )));
        }
        if let Some((t, &l)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.class_names.len()) {
            return Err(DatasetError::LabelOutOfRange {
                line: t + 3,
                label: l,
                n_classes: self.class_names.len(),
            });
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::InvalidConfig("non-finite sample value".into()));
        }
        Ok(())
    }
}

/// A fixed-length `L x C` segment, the unit of classification and sanitization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuWindow {
    pub length: usize,
    pub channels: usize,
    /// Row-major, `length` rows of `channels` values.
    pub data: Vec<f32>,
    pub label: Option<usize>,
    pub source_index: usize,
}

impl ImuWindow {
    pub fn new(length: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), length * channels, "window data does not match shape");
        Self {
            length,
            channels,
            data,
            label: None,
            source_index: 0,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.length, self.channels)
    }

    /// Bitwise equality of the sample data, treating `-0.0` and `0.0` as different.
    pub fn bit_identical(&self, other: &ImuWindow) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

// ---------------------------------------------------------------------------
// CSV loader
// ---------------------------------------------------------------------------

/// Reads the generic CSV layout:
///
/// ```text
/// #classes: name0,name1,...
/// #channels: C
/// label_id,v_0,...,v_{C-1}
/// ```
pub fn load_labeled_series(path: &Path) -> Result<LabeledSeries> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".to_string());
    parse_labeled_series(&name, &text)
}

pub fn parse_labeled_series(name: &str, text: &str) -> Result<LabeledSeries> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (line_no, header) = lines
        .next()
        .ok_or_else(|| DatasetError::EmptyInput("missing #classes header".into()))?;
    let class_list = header
        .strip_prefix("#classes:")
        .ok_or_else(|| DatasetError::Malformed {
            line: line_no,
            message: "expected `#classes: name0,name1,...`".into(),
        })?;
    let class_names: Vec<String> = class_list
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if class_names.is_empty() {
        return Err(DatasetError::Malformed {
            line: line_no,
            message: "no class names declared".into(),
        });
    }

    let (line_no, header) = lines
        .next()
        .ok_or_else(|| DatasetError::EmptyInput("missing #channels header".into()))?;
    let channels: usize = header
        .strip_prefix("#channels:")
        .and_then(|s| s.trim().parse().ok())
        .filter(|&c: &usize| c > 0)
        .ok_or_else(|| DatasetError::Malformed {
            line: line_no,
            message: "expected `#channels: C` with C > 0".into(),
        })?;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, row) in lines {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != channels + 1 {
            return Err(DatasetError::Malformed {
                line,
                message: format!("expected {} columns, found {}", channels + 1, fields.len()),
            });
        }
        let label: usize = fields[0].trim().parse().map_err(|_| DatasetError::Malformed {
            line,
            message: format!("non-numeric label `{}`", fields[0]),
        })?;
        if label >= class_names.len() {
            return Err(DatasetError::LabelOutOfRange {
                line,
                label,
                n_classes: class_names.len(),
            });
        }
        for f in &fields[1..] {
            let v: f32 = f.trim().parse().map_err(|_| DatasetError::Malformed {
                line,
                message: format!("non-numeric value `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::Malformed {
                    line,
                    message: format!("non-finite value `{f}`"),
                });
            }
            data.push(v);
        }
        labels.push(label);
    }

    Ok(LabeledSeries {
        name: name.to_string(),
        channels,
        data,
        labels,
        class_names,
    })
}

pub fn format_labeled_series(series: &LabeledSeries) -> String {
    let mut out = String::with_capacity(series.data.len() * 10);
    let _ = writeln!(out, "#classes: {}", series.class_names.join(","));
    let _ = writeln!(out, "#channels: {}", series.channels);
    for t in 0..series.len() {
        let _ = write!(out, "{}", series.labels[t]);
        for v in series.row(t) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_labeled_series(series: &LabeledSeries, path: &Path) -> Result<()> {
    fs::write(path, format_labeled_series(series)).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

pub fn window_stride(length: usize, overlap_fraction: f64) -> usize {
    ((length as f64 * (1.0 - overlap_fraction)).round() as usize).max(1)
}

/// Slides a window of `length` steps over the series. Each window takes the
/// majority timestep label; ties go to the lowest label id.
pub fn make_windows(series: &LabeledSeries, length: usize, overlap_fraction: f64) -> Result<Vec<ImuWindow>> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(DatasetError::InvalidConfig(format!(
            "overlap fraction {overlap_fraction} outside [0, 1)"
        )));
    }
    if length == 0 || length > series.len() {
        return Err(DatasetError::EmptyInput(format!(
            "window length {length} exceeds series length {}",
            series.len()
        )));
    }
    let stride = window_stride(length, overlap_fraction);
    let c = series.channels;
    let mut counts = vec![0usize; series.n_classes()];
    let windows = (0..=series.len() - length)
        .step_by(stride)
        .map(|start| {
            counts.iter_mut().for_each(|n| *n = 0);
            for &l in &series.labels[start..start + length] {
                counts[l] += 1;
            }
            // max_by_key keeps the last maximum, so scan in reverse to keep the lowest id.
            let label = counts
                .iter()
                .enumerate()
                .rev()
                .max_by_key(|(_, &n)| n)
                .map(|(l, _)| l)
                .unwrap_or(0);
            ImuWindow {
                length,
                channels: c,
                data: series.data[start * c..(start + length) * c].to_vec(),
                label: Some(label),
                source_index: start,
            }
        })
        .collect();
    Ok(windows)
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-channel z-scoring fitted on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub constant_channel_mask: Vec<bool>,
}

const CONSTANT_STD: f64 = 1e-12;

impl Normalizer {
    pub fn fit(windows: &[ImuWindow]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| DatasetError::EmptyInput("cannot fit normalizer on zero windows".into()))?;
        let c = first.channels;
        let mut sum = vec![0f64; c];
        let mut n = 0usize;
        for w in windows {
            if w.channels != c {
                return Err(DatasetError::InvalidConfig("windows disagree on channel count".into()));
            }
            for t in 0..w.length {
                for (s, &v) in sum.iter_mut().zip(w.row(t)) {
                    *s += v as f64;
                }
            }
            n += w.length;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0f64; c];
        for w in windows {
            for t in 0..w.length {
                for ((s, &v), m) in sq.iter_mut().zip(w.row(t)).zip(&mean) {
                    let d = v as f64 - m;
                    *s += d * d;
                }
            }
        }
        let std: Vec<f64> = sq.iter().map(|s| (s / n as f64).sqrt()).collect();
        let mask: Vec<bool> = std.iter().map(|&s| s <= CONSTANT_STD).collect();
        Ok(Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: std
                .iter()
                .zip(&mask)
                .map(|(&s, &m)| if m { 1.0 } else { s as f32 })
                .collect(),
            constant_channel_mask: mask,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, window: &ImuWindow) -> ImuWindow {
        let mut out = window.clone();
        self.apply_in_place(&mut out.data);
        out
    }

    pub fn apply_in_place(&self, data: &mut [f32]) {
        let c = self.channels();
        for row in data.chunks_mut(c) {
            for (i, v) in row.iter_mut().enumerate() {
                *v = if self.constant_channel_mask[i] {
                    0.0
                } else {
                    (*v - self.mean[i]) / self.std[i]
                };
            }
        }
    }

    /// Maps normalized values back to raw units. Constant channels come back as their mean.
    pub fn invert(&self, window: &ImuWindow) -> ImuWindow {
        let mut out = window.clone();
        let c = self.channels();
        for row in out.data.chunks_mut(c) {
            for (i, v) in row.iter_mut().enumerate() {
                *v = if self.constant_channel_mask[i] {
                    self.mean[i]
                } else {
                    *v * self.std[i] + self.mean[i]
                };
            }
        }
        out
    }
}

pub fn fit_normalizer(windows: &[ImuWindow]) -> Result<Normalizer> {
    Normalizer::fit(windows)
}

pub fn apply_normalizer(normalizer: &Normalizer, window: &ImuWindow) -> ImuWindow {
    normalizer.apply(window)
}

// ---------------------------------------------------------------------------
// Splits and k-shot sampling
// ---------------------------------------------------------------------------

/// Seeded shuffle then cut; `|train| = round(ratio * N)`.
pub fn split(windows: &[ImuWindow], ratio: f64, seed: u64) -> Result<(Vec<ImuWindow>, Vec<ImuWindow>)> {
    if windows.is_empty() {
        return Err(DatasetError::EmptyInput("nothing to split".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidConfig(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * windows.len() as f64).round() as usize;
    let train = order[..n_train].iter().map(|&i| windows[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| windows[i].clone()).collect();
    Ok((train, test))
}

/// Keeps every non-sensitive window and `min(k, available)` windows of each
/// sensitive class. `k = 0` drops sensitive classes entirely.
pub fn few_shot_subsample(train: &[ImuWindow], sensitive: &BTreeSet<usize>, k: usize, seed: u64) -> Vec<ImuWindow> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, w) in train.iter().enumerate() {
        if let Some(l) = w.label.filter(|l| sensitive.contains(l)) {
            by_class.entry(l).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; train.len()];
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        for &i in idx.iter().skip(k) {
            keep[i] = false;
        }
    }
    train
        .iter()
        .zip(keep)
        .filter_map(|(w, k)| k.then(|| w.clone()))
        .collect()
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    /// Approximate number of windows per class under default windowing.
    pub samples_per_class: usize,
    pub channels: usize,
    pub window_length: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 6,
            samples_per_class: 500,
            channels: 6,
            window_length: DEFAULT_WINDOW_LENGTH,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

/// Waveform families cycled over class ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Waveform {
    Sinusoid,
    Square,
    Chirp,
    DampedBurst,
    RandomWalk,
    AmplitudeModulated,
}

pub const WAVEFORMS: [Waveform; 6] = [
    Waveform::Sinusoid,
    Waveform::Square,
    Waveform::Chirp,
    Waveform::DampedBurst,
    Waveform::RandomWalk,
    Waveform::AmplitudeModulated,
];

pub const SYNTHETIC_ACTIVITIES: [&str; 6] = ["walking", "knocking", "swinging", "hammering", "standing", "brushing"];

pub fn synthetic_class_name(class: usize) -> String {
    let base = SYNTHETIC_ACTIVITIES[class % SYNTHETIC_ACTIVITIES.len()];
    match class / SYNTHETIC_ACTIVITIES.len() {
        0 => base.to_string(),
        v => format!("{base}_{}", v + 1),
    }
}

pub fn synthetic_waveform(class: usize) -> Waveform {
    WAVEFORMS[class % WAVEFORMS.len()]
}

struct ClassShape {
    waveform: Waveform,
    time_scale: f64,
    offset: Vec<f64>,
    gain: Vec<f64>,
    phase: Vec<f64>,
}

const TAU: f64 = std::f64::consts::TAU;

impl ClassShape {
    fn value(&self, ch: usize, t: f64, latent: f64) -> f64 {
        let t = t * self.time_scale;
        let phi = self.phase[ch];
        let w = match self.waveform {
            Waveform::Sinusoid => (TAU * t / 16.0 + phi).sin(),
            Waveform::Square => {
                if (TAU * t / 12.0 + phi).sin() >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Waveform::Chirp => {
                let period = 32.0;
                let u = (t + phi / TAU * period).rem_euclid(period);
                let (f0, f1) = (1.0 / 20.0, 1.0 / 4.0);
                (TAU * (f0 * u + (f1 - f0) * u * u / (2.0 * period))).sin()
            }
            Waveform::DampedBurst => {
                let period = 24.0;
                let u = (t + phi / TAU * period).rem_euclid(period);
                2.0 * (-u / 4.0).exp() * (TAU * u / 6.0).sin()
            }
            Waveform::RandomWalk => latent,
            Waveform::AmplitudeModulated => (0.6 + 0.4 * (TAU * t / 64.0).sin()) * (TAU * t / 5.0 + phi).sin(),
        };
        self.offset[ch] + self.gain[ch] * w
    }
}

/// Builds a series of activity bouts. Each class owns a waveform family with
/// class-specific per-channel offsets, gains and phases; bouts are shuffled.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<LabeledSeries> {
    if config.n_classes < 3 {
        return Err(DatasetError::InvalidConfig(format!(
            "need at least 3 classes, got {}",
            config.n_classes
        )));
    }
    if config.channels == 0 || config.window_length < 2 || config.samples_per_class == 0 {
        return Err(DatasetError::InvalidConfig(
            "channels, window length and samples per class must be positive".into(),
        ));
    }
    if !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
        return Err(DatasetError::InvalidConfig("noise sigma must be a nonnegative real".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.channels;
    let shapes: Vec<ClassShape> = (0..config.n_classes)
        .map(|class| ClassShape {
            waveform: synthetic_waveform(class),
            time_scale: 1.0 + 0.35 * (class / WAVEFORMS.len()) as f64,
            offset: (0..c).map(|_| rng.random_range(-0.8..0.8)).collect(),
            gain: (0..c)
                .map(|_| {
                    let g: f64 = rng.random_range(0.4..1.0);
                    if rng.random_bool(0.5) {
                        g
                    } else {
                        -g
                    }
                })
                .collect(),
            phase: (0..c).map(|_| rng.random_range(0.0..TAU)).collect(),
        })
        .collect();

    let stride = window_stride(config.window_length, DEFAULT_OVERLAP);
    let per_class = config.samples_per_class * stride + (config.window_length - stride);
    let bout_len = 8 * config.window_length;
    let mut bouts: Vec<(usize, usize)> = Vec::new();
    for class in 0..config.n_classes {
        let mut remaining = per_class;
        while remaining > 0 {
            let len = remaining.min(bout_len);
            bouts.push((class, len));
            remaining -= len;
        }
    }
    bouts.shuffle(&mut rng);

    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| DatasetError::InvalidConfig(e.to_string()))?;
    let drift = Normal::new(0.0, 0.25).expect("valid sigma");
    let total: usize = bouts.iter().map(|b| b.1).sum();
    let mut data = Vec::with_capacity(total * c);
    let mut labels = Vec::with_capacity(total);
    for (class, len) in bouts {
        let shape = &shapes[class];
        let start: f64 = rng.random_range(0.0..1000.0f64).floor();
        let mut latent: f64 = rng.sample(Normal::new(0.0, 1.0).expect("valid sigma"));
        for step in 0..len {
            if shape.waveform == Waveform::RandomWalk {
                latent = 0.97 * latent + rng.sample(drift);
            }
            let t = start + step as f64;
            for ch in 0..c {
                let mut v = shape.value(ch, t, latent);
                if config.noise_sigma > 0.0 {
                    v += rng.sample(noise);
                }
                data.push(v as f32);
            }
            labels.push(class);
        }
    }
    Ok(LabeledSeries {
        name: "synthetic".to_string(),
        channels: c,
        data,
        labels,
        class_names: (0..config.n_classes).map(synthetic_class_name).collect(),
    })
}
