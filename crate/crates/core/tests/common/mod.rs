#![allow(dead_code)]

use std::sync::Arc;

use privsense_core::corpus::{DescriptionCorpus, TrigramHashEncoder, SYNTHETIC_CORPUS_JSON};
use privsense_core::dataset::{generate_synthetic, make_windows, split, ImuWindow, SyntheticConfig};
use privsense_core::model::{train, Classifier, ModelConfig, TrainConfig};
use privsense_core::policy::PrivacyPolicy;
use privsense_core::sanitizer::{build_library, Sanitizer, SanitizerConfig};

pub struct Trained {
    pub train: Vec<ImuWindow>,
    pub test: Vec<ImuWindow>,
    pub class_names: Vec<String>,
    pub corpus: DescriptionCorpus,
    pub sanitizer: Sanitizer,
}

pub fn windows(seed: u64) -> (Vec<ImuWindow>, Vec<ImuWindow>, Vec<String>) {
    let series = generate_synthetic(&SyntheticConfig {
        samples_per_class: 150,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let windows = make_windows(&series, 32, 0.5).unwrap();
    let (train_w, test) = split(&windows, 0.8, seed).unwrap();
    (train_w, test, series.class_names)
}

/// Small model on the synthetic data, all classes in the library.
pub fn trained(seed: u64) -> Trained {
    let (train_w, test, class_names) = windows(seed);
    let corpus = DescriptionCorpus::parse(SYNTHETIC_CORPUS_JSON).unwrap();
    let encoder = TrigramHashEncoder::new(64, 0);
    let config = TrainConfig {
        epochs: 12,
        seed,
        model: ModelConfig {
            d_model: 32,
            n_layers: 2,
            d_text: 64,
            d_shared: 64,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let out = train(&train_w, &class_names, &corpus, &config, &encoder).unwrap();
    let library = build_library(&train_w, &class_names, &class_names, &out.checkpoint.normalizer).unwrap();
    let classifier = Classifier::new(out.checkpoint, &corpus, &encoder).unwrap();
    let sanitizer = Sanitizer::new(Arc::new(classifier), Arc::new(library), &corpus, SanitizerConfig::default()).unwrap();
    Trained {
        train: train_w,
        test,
        class_names,
        corpus,
        sanitizer,
    }
}

// walking, knocking, swinging, hammering, standing, brushing
pub fn policy() -> PrivacyPolicy {
    PrivacyPolicy::new(&["walking", "knocking"], &["swinging", "hammering"], &["standing", "brushing"])
}
