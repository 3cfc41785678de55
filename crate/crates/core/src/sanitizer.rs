//! Replacement of black-listed windows with synthesized gray-listed ones.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DescriptionCorpus;
use crate::dataset::{ImuWindow, Normalizer};
use crate::model::{Classifier, ModelError, RankedClass, SimilarityRanking};
use crate::policy::{validate, Category, PolicyStore, PrivacyPolicy};

#[derive(Debug, Error)]
pub enum SanitizerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("class `{0}` has no exemplars")]
    MissingExemplars(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("no gray class available in the ranking")]
    NoGrayClass,
    #[error("policy does not fit the checkpoint: {0}")]
    PolicyMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed library file: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, SanitizerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExemplars {
    /// Normalized windows, row-major `L x C`.
    pub windows: Vec<Vec<f32>>,
    /// Per-channel std of this class in normalized units.
    pub channel_std: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarLibrary {
    pub window_length: usize,
    pub channels: usize,
    pub classes: BTreeMap<String, ClassExemplars>,
}

/// Groups normalized training windows by class for each requested class.
pub fn build_library<S: AsRef<str>>(
    train_windows: &[ImuWindow],
    class_names: &[String],
    classes: &[S],
    normalizer: &Normalizer,
) -> Result<ExemplarLibrary> {
    let first = train_windows
        .first()
        .ok_or_else(|| SanitizerError::Config("no training windows".into()))?;
    let (l, c) = first.shape();
    let mut out = BTreeMap::new();
    for name in classes {
        let name = name.as_ref();
        let idx = class_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SanitizerError::UnknownClass(name.to_string()))?;
        let windows: Vec<Vec<f32>> = train_windows
            .iter()
            .filter(|w| w.label == Some(idx))
            .map(|w| {
                let mut d = w.data.clone();
                normalizer.apply_in_place(&mut d);
                d
            })
            .collect();
        if windows.is_empty() {
            return Err(SanitizerError::MissingExemplars(name.to_string()));
        }
        let n = (windows.len() * l) as f64;
        let mut mean = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for w in &windows {
            for row in w.chunks(c) {
                for (i, &v) in row.iter().enumerate() {
                    mean[i] += v as f64;
                    sq[i] += (v as f64) * (v as f64);
                }
            }
        }
        let channel_std = mean
            .iter()
            .zip(&sq)
            .map(|(m, s)| ((s / n) - (m / n).powi(2)).max(0.0).sqrt() as f32)
            .collect();
        out.insert(name.to_string(), ClassExemplars { windows, channel_std });
    }
    Ok(ExemplarLibrary {
        window_length: l,
        channels: c,
        classes: out,
    })
}

impl ExemplarLibrary {
    pub fn count(&self, class: &str) -> usize {
        self.classes.get(class).map_or(0, |e| e.windows.len())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("library serializes");
        fs::write(path, text).map_err(|source| SanitizerError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| SanitizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let lib: Self = serde_json::from_str(&text).map_err(|e| SanitizerError::Malformed(e.to_string()))?;
        let want = lib.window_length * lib.channels;
        for (name, ex) in &lib.classes {
            if ex.windows.is_empty() {
                return Err(SanitizerError::MissingExemplars(name.clone()));
            }
            if ex.windows.iter().any(|w| w.len() != want) || ex.channel_std.len() != lib.channels {
                return Err(SanitizerError::Malformed(format!("class `{name}` has mis-shaped exemplars")));
            }
        }
        Ok(lib)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    pub enabled: bool,
    pub amplitude_min: f32,
    pub amplitude_max: f32,
    /// Largest circular shift as a fraction of the window length.
    pub max_shift_fraction: f32,
    /// Noise std as a multiple of the class channel std.
    pub noise_scale: f32,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            amplitude_min: 0.9,
            amplitude_max: 1.1,
            max_shift_fraction: 0.1,
            noise_scale: 0.02,
        }
    }
}

impl JitterConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// A normalized window of `target_class`: a seeded exemplar with amplitude
/// scaling, circular shift and additive noise.
pub fn synthesize(target_class: &str, library: &ExemplarLibrary, seed: u64, jitter: &JitterConfig) -> Result<ImuWindow> {
    let ex = library
        .classes
        .get(target_class)
        .ok_or_else(|| SanitizerError::UnknownClass(target_class.to_string()))?;
    let (l, c) = (library.window_length, library.channels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = &ex.windows[rng.random_range(0..ex.windows.len())];
    if !jitter.enabled {
        return Ok(ImuWindow::new(l, c, base.clone()));
    }
    let scale = if jitter.amplitude_max > jitter.amplitude_min {
        rng.random_range(jitter.amplitude_min..jitter.amplitude_max)
    } else {
        jitter.amplitude_min
    };
    let max_shift = (jitter.max_shift_fraction * l as f32).floor() as i64;
    let shift = if max_shift > 0 {
        rng.random_range(-max_shift..=max_shift)
    } else {
        0
    };
    let mut data = vec![0f32; l * c];
    for t in 0..l {
        let src = (t as i64 - shift).rem_euclid(l as i64) as usize;
        for ch in 0..c {
            let sigma = jitter.noise_scale * ex.channel_std[ch];
            let noise = if sigma > 0.0 {
                Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng)
            } else {
                0.0
            };
            data[t * c + ch] = base[src * c + ch] * scale + noise;
        }
    }
    Ok(ImuWindow::new(l, c, data))
}

/// First class after rank 1 whose effective category is gray. The top-K
/// prefix is scanned first and the scan continues past it if needed, so a
/// gray class is always found when one is ranked at all.
pub fn select_replacement<'a>(
    ranking: &'a SimilarityRanking,
    policy: &PrivacyPolicy,
    unlisted_as_black: bool,
    top_k: Option<usize>,
) -> Result<&'a RankedClass> {
    if let Some(k) = top_k {
        if k == 0 || k > ranking.len() {
            return Err(SanitizerError::Config(format!("K = {k} outside 1..={}", ranking.len())));
        }
    }
    ranking
        .entries
        .iter()
        .skip(1)
        .find(|e| policy.effective_category(&e.name, unlisted_as_black) == Category::Gray)
        .ok_or(SanitizerError::NoGrayClass)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Passthrough,
    Replaced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SanitizationResult {
    pub output: ImuWindow,
    pub action: Action,
    pub detected_top1: String,
    pub replacement_class: Option<String>,
    /// Corpus entry standing in for the generation prompt of the replacement.
    pub replacement_description: Option<String>,
    pub ranking: SimilarityRanking,
    pub policy_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SanitizerConfig {
    pub unlisted_as_black: bool,
    /// Prefix length scanned first for a gray class; `None` means the full ranking.
    pub top_k: Option<usize>,
    pub jitter: JitterConfig,
}

/// Read-only over the model and library; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Sanitizer {
    classifier: Arc<Classifier>,
    library: Arc<ExemplarLibrary>,
    descriptions: BTreeMap<String, Vec<String>>,
    config: SanitizerConfig,
}

impl Sanitizer {
    pub fn new(
        classifier: Arc<Classifier>,
        library: Arc<ExemplarLibrary>,
        corpus: &DescriptionCorpus,
        config: SanitizerConfig,
    ) -> Result<Self> {
        let (l, c) = classifier.window_shape();
        if (library.window_length, library.channels) != (l, c) {
            return Err(SanitizerError::Config(format!(
                "library windows are {} x {}, checkpoint expects {l} x {c}",
                library.window_length, library.channels
            )));
        }
        if let Some(k) = config.top_k {
            if k == 0 || k > classifier.class_names().len() {
                return Err(SanitizerError::Config(format!("K = {k} outside the class count")));
            }
        }
        Ok(Self {
            descriptions: corpus.activities.clone(),
            classifier,
            library,
            config,
        })
    }

    pub fn classifier(&self) -> &Arc<Classifier> {
        &self.classifier
    }

    pub fn library(&self) -> &ExemplarLibrary {
        &self.library
    }

    pub fn config(&self) -> &SanitizerConfig {
        &self.config
    }

    fn check_policy(&self, policy: &PrivacyPolicy) -> Result<()> {
        validate(policy, self.classifier.class_names())
            .map_err(|issues| SanitizerError::PolicyMismatch(format!("{issues:?}")))
    }

    pub fn sanitize(&self, window: &ImuWindow, policy: &PrivacyPolicy, seed: u64) -> Result<SanitizationResult> {
        self.check_policy(policy)?;
        let ranking = self.classifier.rank(window, self.classifier.class_names())?;
        self.apply(window, ranking, policy, seed)
    }

    /// Batched ranking; window `i` uses seed `seed + i`.
    pub fn sanitize_batch(&self, windows: &[ImuWindow], policy: &PrivacyPolicy, seed: u64) -> Result<Vec<SanitizationResult>> {
        self.check_policy(policy)?;
        let rankings = self.classifier.rank_batch(windows, self.classifier.class_names())?;
        windows
            .iter()
            .zip(rankings)
            .enumerate()
            .map(|(i, (w, r))| self.apply(w, r, policy, seed.wrapping_add(i as u64)))
            .collect()
    }

    fn apply(
        &self,
        window: &ImuWindow,
        ranking: SimilarityRanking,
        policy: &PrivacyPolicy,
        seed: u64,
    ) -> Result<SanitizationResult> {
        let top1 = ranking.top1().name.clone();
        if policy.effective_category(&top1, self.config.unlisted_as_black) != Category::Black {
            return Ok(SanitizationResult {
                output: window.clone(),
                action: Action::Passthrough,
                detected_top1: top1,
                replacement_class: None,
                replacement_description: None,
                ranking,
                policy_version: policy.version,
            });
        }
        let target = select_replacement(&ranking, policy, self.config.unlisted_as_black, self.config.top_k)?
            .name
            .clone();
        let synthetic = synthesize(&target, &self.library, seed, &self.config.jitter)?;
        let mut output = self.classifier.checkpoint().normalizer.invert(&synthetic);
        output.source_index = window.source_index;
        let description = self.descriptions.get(&target).and_then(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            (!d.is_empty()).then(|| d[rng.random_range(0..d.len())].clone())
        });
        Ok(SanitizationResult {
            output,
            action: Action::Replaced,
            detected_top1: top1,
            replacement_class: Some(target),
            replacement_description: description,
            ranking,
            policy_version: policy.version,
        })
    }
}

/// Sanitizes windows in order, taking a fresh policy snapshot for each one.
/// Windows with the wrong shape are skipped with a warning. Returns the
/// number of results delivered.
pub fn sanitize_stream<I, F>(source: I, sanitizer: &Sanitizer, store: &PolicyStore, seed: u64, mut sink: F) -> Result<usize>
where
    I: IntoIterator<Item = ImuWindow>,
    F: FnMut(SanitizationResult),
{
    let mut delivered = 0;
    for (i, window) in source.into_iter().enumerate() {
        if let Err(e) = sanitizer.classifier.check_shape(&window) {
            log::warn!("skipping window {i}: {e}");
            continue;
        }
        let policy = store.snapshot();
        sink(sanitizer.sanitize(&window, &policy, seed.wrapping_add(i as u64))?);
        delivered += 1;
    }
    Ok(delivered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Anchor;

    fn lib_with(classes: &[(&str, usize)]) -> (Vec<ImuWindow>, Vec<String>) {
        let names: Vec<String> = classes.iter().map(|(n, _)| n.to_string()).collect();
        let mut out = Vec::new();
        for (i, (_, count)) in classes.iter().enumerate() {
            for j in 0..*count {
                let data = (0..8).map(|t| (t as f32 + i as f32 * 10.0 + j as f32 * 0.1).sin()).collect();
                out.push(ImuWindow::new(4, 2, data).with_label(i));
            }
        }
        (out, names)
    }

    fn identity() -> Normalizer {
        Normalizer {
            mean: vec![0.0; 2],
            std: vec![1.0; 2],
            constant_channel_mask: vec![false; 2],
        }
    }

    #[test]
    fn counts_match_input() {
        let (w, names) = lib_with(&[("a", 3), ("b", 1), ("c", 5)]);
        let lib = build_library(&w, &names, &names, &identity()).unwrap();
        for (n, c) in [("a", 3), ("b", 1), ("c", 5)] {
            assert_eq!(lib.count(n), c);
        }
        let (w, names) = lib_with(&[("a", 1), ("b", 0)]);
        assert!(matches!(
            build_library(&w, &names, &names, &identity()),
            Err(SanitizerError::MissingExemplars(ref c)) if c == "b"
        ));
    }

    #[test]
    fn synthesize_identity_limit_and_determinism() {
        let (w, names) = lib_with(&[("a", 1), ("b", 2)]);
        let lib = build_library(&w, &names, &names, &identity()).unwrap();
        let plain = synthesize("a", &lib, 9, &JitterConfig::disabled()).unwrap();
        assert_eq!(plain.data, w[0].data);
        let j1 = synthesize("b", &lib, 4, &JitterConfig::default()).unwrap();
        let j2 = synthesize("b", &lib, 4, &JitterConfig::default()).unwrap();
        assert!(j1.bit_identical(&j2));
        for ex in &lib.classes["b"].windows {
            assert_ne!(&j1.data, ex);
        }
        assert!(matches!(
            synthesize("zzz", &lib, 0, &JitterConfig::default()),
            Err(SanitizerError::UnknownClass(_))
        ));
    }

    #[test]
    fn library_file_round_trip() {
        let (w, names) = lib_with(&[("a", 2), ("b", 2)]);
        let lib = build_library(&w, &names, &names, &identity()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lib.json");
        lib.save(&p).unwrap();
        assert_eq!(ExemplarLibrary::load(&p).unwrap(), lib);
    }

    fn ranking(names: &[&str]) -> SimilarityRanking {
        let anchors: Vec<Anchor> = names
            .iter()
            .enumerate()
            .map(|(i, n)| Anchor {
                index: i,
                name: n.to_string(),
                vector: vec![1.0 - i as f32 * 0.1, 0.0],
            })
            .collect();
        let refs: Vec<&Anchor> = anchors.iter().collect();
        crate::model::similarity(&[1.0, 0.0], &refs).unwrap()
    }

    #[test]
    fn first_gray_after_top1() {
        let r = ranking(&["b1", "g1", "w1"]);
        let p = PrivacyPolicy::new(&["w1"], &["b1"], &["g1"]);
        assert_eq!(select_replacement(&r, &p, false, None).unwrap().name, "g1");
    }

    #[test]
    fn scan_skips_black_and_white() {
        let r = ranking(&["b1", "b2", "w1", "g2"]);
        let p = PrivacyPolicy::new(&["w1"], &["b1", "b2"], &["g2"]);
        // Oracle: linear scan from rank 2 for k not in B and k in G.
        let want = r.entries[1..]
            .iter()
            .find(|e| !p.black.contains(&e.name) && p.gray.contains(&e.name))
            .unwrap();
        assert_eq!(select_replacement(&r, &p, false, Some(2)).unwrap(), want);
        assert_eq!(want.name, "g2");
    }

    #[test]
    fn unlisted_counts_per_flag() {
        let r = ranking(&["b1", "u1", "g1"]);
        let p = PrivacyPolicy::new(&[], &["b1"], &["g1"]);
        assert_eq!(select_replacement(&r, &p, false, None).unwrap().name, "u1");
        assert_eq!(select_replacement(&r, &p, true, None).unwrap().name, "g1");
        let none = PrivacyPolicy::new(&["g1", "u1"], &["b1"], &[]);
        assert!(matches!(select_replacement(&r, &none, true, None), Err(SanitizerError::NoGrayClass)));
    }
}
