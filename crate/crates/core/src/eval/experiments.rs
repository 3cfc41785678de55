use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metrics::{grouped_f1, per_class_f1, spearman, ExperimentReport};
use super::{rae_train, train_adversary, Adversary, AdversaryConfig, EvalError, RaeConfig, Result};
use crate::corpus::{DescriptionCorpus, TrigramHashEncoder, SYNTHETIC_CORPUS_JSON};
use crate::dataset::{few_shot_subsample, generate_synthetic, make_windows, split, ImuWindow, LabeledSeries, SyntheticConfig};
use crate::model::{train, Classifier, TrainConfig};
use crate::policy::{validate, PrivacyPolicy};
use crate::sanitizer::{build_library, select_replacement, Action, Sanitizer, SanitizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub window_length: usize,
    pub overlap: f64,
    pub split_ratio: f64,
    pub train: TrainConfig,
    pub adversary: AdversaryConfig,
    pub rae: RaeConfig,
    pub sanitizer: SanitizerConfig,
    pub text_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            window_length: 32,
            overlap: 0.5,
            split_ratio: 0.8,
            train: TrainConfig::desk(),
            adversary: AdversaryConfig::desk(),
            rae: RaeConfig::default(),
            sanitizer: SanitizerConfig::default(),
            text_seed: 0,
        }
    }
}

/// Default W/B/G split of the six built-in synthetic activities.
pub fn synthetic_policy() -> PrivacyPolicy {
    PrivacyPolicy::new(&["standing", "brushing"], &["walking", "knocking"], &["swinging", "hammering"])
}

/// Gray set swapped in at inference by the dynamic experiment: the
/// training-time white classes.
pub fn synthetic_override_gray() -> BTreeSet<String> {
    ["standing", "brushing"].into_iter().map(String::from).collect()
}

/// Consecutive class pairs `[0,1], [2,3], ...`, each held out in turn; an odd
/// last class forms its own group.
pub fn held_out_pairs(n_classes: usize) -> Vec<Vec<usize>> {
    (0..n_classes).collect::<Vec<_>>().chunks(2).map(<[usize]>::to_vec).collect()
}

/// A windowed, split dataset plus its description corpus.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub class_names: Vec<String>,
    pub train: Vec<ImuWindow>,
    pub test: Vec<ImuWindow>,
    pub corpus: DescriptionCorpus,
    pub seed: u64,
}

impl ExperimentData {
    pub fn from_series(
        series: &LabeledSeries,
        corpus: DescriptionCorpus,
        config: &ExperimentConfig,
        seed: u64,
    ) -> Result<Self> {
        let windows = make_windows(series, config.window_length, config.overlap)?;
        let (train, test) = split(&windows, config.split_ratio, seed)?;
        Ok(Self {
            class_names: series.class_names.clone(),
            train,
            test,
            corpus,
            seed,
        })
    }

    /// The built-in synthetic dataset with its shipped corpus.
    pub fn synthetic(synthetic: &SyntheticConfig, config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let series = generate_synthetic(&SyntheticConfig {
            seed,
            ..synthetic.clone()
        })?;
        let shipped = DescriptionCorpus::parse(SYNTHETIC_CORPUS_JSON)?;
        let corpus = if series.class_names.iter().all(|c| shipped.descriptions(c).is_some()) {
            shipped
        } else {
            crate::corpus::templated_corpus(&series.class_names, 100)
        };
        Self::from_series(&series, corpus, config, seed)
    }

    pub fn class_indices(&self, names: &BTreeSet<String>) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.class_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| EvalError::Config(format!("unknown class `{n}`")))
            })
            .collect()
    }

    fn test_labels(&self) -> Vec<usize> {
        self.test.iter().map(|w| w.label.expect("test windows are labeled")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub seed: u64,
    pub adversary_macro_f1: f64,
    pub imuclip_macro_f1: f64,
}

/// Checks of the passthrough/replacement contract over one sanitized set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SanitizeAudit {
    pub passthrough_total: usize,
    pub passthrough_bit_identical: usize,
    pub replaced_total: usize,
    pub replaced_into_gray: usize,
    pub replaced_from_black: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformReport {
    pub seed: u64,
    pub before: ExperimentReport,
    /// One PrivCLIP report per k.
    pub privclip: Vec<(usize, ExperimentReport)>,
    pub audits: Vec<(usize, SanitizeAudit)>,
    pub rae: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicReport {
    pub seed: u64,
    pub train_policy: PrivacyPolicy,
    pub override_policy: PrivacyPolicy,
    pub privclip_replacement_f1: f64,
    pub rae_replacement_f1: f64,
    pub gap: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotPoint {
    pub k: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub per_class: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotCurve {
    pub seed: u64,
    pub groups: Vec<Vec<String>>,
    pub points: Vec<FewShotPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub k: usize,
    pub held_out: Vec<Vec<String>>,
    pub n_desc: Vec<usize>,
    pub f1: Vec<f64>,
    pub spearman: f64,
    pub label_only_f1: f64,
}

type ModelKey = (Vec<usize>, usize, usize);

/// One dataset and seed, with trained models cached so suites that need the
/// same model (same sensitive set, k and corpus size) train it once.
pub struct Experiment {
    pub data: ExperimentData,
    pub config: ExperimentConfig,
    encoder: TrigramHashEncoder,
    models: RefCell<HashMap<ModelKey, Arc<Classifier>>>,
    adversary: RefCell<Option<Arc<Adversary>>>,
}

const FULL: usize = usize::MAX;

impl Experiment {
    pub fn new(data: ExperimentData, config: ExperimentConfig) -> Self {
        let encoder = TrigramHashEncoder::new(config.train.model.d_text, config.text_seed);
        Self {
            data,
            config,
            encoder,
            models: RefCell::new(HashMap::new()),
            adversary: RefCell::new(None),
        }
    }

    fn corpus_for(&self, n_desc: usize) -> Result<DescriptionCorpus> {
        Ok(if n_desc == FULL {
            self.data.corpus.clone()
        } else {
            self.data.corpus.truncated(n_desc)?
        })
    }

    fn training_set(&self, sensitive: &[usize], k: usize) -> Vec<ImuWindow> {
        if k == FULL {
            self.data.train.clone()
        } else {
            let set: BTreeSet<usize> = sensitive.iter().copied().collect();
            few_shot_subsample(&self.data.train, &set, k, self.data.seed)
        }
    }

    fn train_classifier(&self, key: ModelKey, corpus: &DescriptionCorpus) -> Result<Arc<Classifier>> {
        if let Some(c) = self.models.borrow().get(&key) {
            return Ok(c.clone());
        }
        let windows = self.training_set(&key.0, key.1);
        let config = TrainConfig {
            seed: self.data.seed,
            ..self.config.train.clone()
        };
        let out = train(&windows, &self.data.class_names, corpus, &config, &self.encoder)?;
        let c = Arc::new(Classifier::new(out.checkpoint, corpus, &self.encoder)?);
        self.models.borrow_mut().insert(key, c.clone());
        Ok(c)
    }

    /// Model trained with `k` windows per sensitive class (`None` = all data).
    pub fn classifier(&self, sensitive: &[usize], k: Option<usize>) -> Result<Arc<Classifier>> {
        let mut s = sensitive.to_vec();
        s.sort_unstable();
        let k = k.unwrap_or(FULL);
        if k == FULL {
            s.clear();
        }
        self.train_classifier((s, k, FULL), &self.data.corpus)
    }

    fn classifier_with_corpus(&self, sensitive: &[usize], k: usize, n_desc: usize, label_only: bool) -> Result<Arc<Classifier>> {
        let mut s = sensitive.to_vec();
        s.sort_unstable();
        if label_only {
            let corpus = DescriptionCorpus::labels_only(&self.data.class_names);
            let key = (s, k, FULL - 1);
            return self.train_classifier(key, &corpus);
        }
        let corpus = self.corpus_for(n_desc)?;
        let n = if corpus == self.data.corpus { FULL } else { n_desc };
        self.train_classifier((s, k, n), &corpus)
    }

    pub fn adversary(&self) -> Result<Arc<Adversary>> {
        if let Some(a) = self.adversary.borrow().as_ref() {
            return Ok(a.clone());
        }
        let cfg = AdversaryConfig {
            seed: self.data.seed,
            ..self.config.adversary.clone()
        };
        let a = Arc::new(train_adversary(&self.data.train, self.data.class_names.len(), &cfg)?);
        *self.adversary.borrow_mut() = Some(a.clone());
        Ok(a)
    }

    pub fn utility(&self) -> Result<UtilityReport> {
        let truth = self.data.test_labels();
        let n = self.data.class_names.len();
        let adv = self.adversary()?.predict(&self.data.test)?;
        let clip = self.classifier(&[], None)?.predict_indices(&self.data.test)?;
        Ok(UtilityReport {
            seed: self.data.seed,
            adversary_macro_f1: super::macro_f1(&adv, &truth, n),
            imuclip_macro_f1: super::macro_f1(&clip, &truth, n),
        })
    }

    fn check_policy(&self, policy: &PrivacyPolicy) -> Result<()> {
        validate(policy, &self.data.class_names).map_err(EvalError::Policy)
    }

    fn sanitizer(&self, classifier: Arc<Classifier>, training: &[ImuWindow]) -> Result<Sanitizer> {
        let library = build_library(
            training,
            &self.data.class_names,
            &self.data.class_names,
            &classifier.checkpoint().normalizer,
        )?;
        Ok(Sanitizer::new(
            classifier,
            Arc::new(library),
            &self.data.corpus,
            self.config.sanitizer.clone(),
        )?)
    }

    fn report(&self, name: &str, pred: &[usize], policy: &PrivacyPolicy, k: Option<usize>, started: Instant) -> Result<ExperimentReport> {
        let mut r = grouped_f1(pred, &self.data.test_labels(), &self.data.class_names, policy)?;
        r.experiment = name.to_string();
        r.config = json!({
            "policy": policy,
            "k": k,
            "seed": self.data.seed,
            "train_epochs": self.config.train.epochs,
            "adversary_epochs": self.config.adversary.epochs,
        });
        r.runtime_s = started.elapsed().as_secs_f64();
        Ok(r)
    }

    /// Sanitizes the test set with the model for `(B, k)` and audits the results.
    fn sanitize_test(&self, policy: &PrivacyPolicy, k: usize, windows: &[ImuWindow]) -> Result<(Vec<ImuWindow>, Vec<crate::sanitizer::SanitizationResult>, SanitizeAudit)> {
        let black = self.data.class_indices(&policy.black)?;
        let classifier = self.classifier(&black, Some(k))?;
        let training = self.training_set(&black, k);
        let sanitizer = self.sanitizer(classifier, &training)?;
        let results = sanitizer.sanitize_batch(windows, policy, self.data.seed)?;
        let mut audit = SanitizeAudit::default();
        for (w, r) in windows.iter().zip(&results) {
            match r.action {
                Action::Passthrough => {
                    audit.passthrough_total += 1;
                    audit.passthrough_bit_identical += r.output.bit_identical(w) as usize;
                }
                Action::Replaced => {
                    audit.replaced_total += 1;
                    audit.replaced_into_gray += r
                        .replacement_class
                        .as_ref()
                        .is_some_and(|c| policy.gray.contains(c)) as usize;
                    audit.replaced_from_black += policy.black.contains(&r.detected_top1) as usize;
                }
            }
        }
        let outputs = results.iter().map(|r| r.output.clone()).collect();
        Ok((outputs, results, audit))
    }

    pub fn transform(&self, policy: &PrivacyPolicy, ks: &[usize]) -> Result<TransformReport> {
        self.check_policy(policy)?;
        let adversary = self.adversary()?;
        let t = Instant::now();
        let before = self.report("before", &adversary.predict(&self.data.test)?, policy, None, t)?;
        let mut privclip = Vec::new();
        let mut audits = Vec::new();
        for &k in ks {
            let t = Instant::now();
            let (outputs, _, audit) = self.sanitize_test(policy, k, &self.data.test)?;
            let pred = adversary.predict(&outputs)?;
            privclip.push((k, self.report("privclip", &pred, policy, Some(k), t)?));
            audits.push((k, audit));
        }
        let t = Instant::now();
        let rae = self.rae(policy)?;
        let transformed = rae.transform_batch(&self.data.test)?;
        let rae_report = self.report("rae", &adversary.predict(&transformed)?, policy, None, t)?;
        Ok(TransformReport {
            seed: self.data.seed,
            before,
            privclip,
            audits,
            rae: rae_report,
        })
    }

    fn rae(&self, policy: &PrivacyPolicy) -> Result<super::Rae> {
        let black = self.data.class_indices(&policy.black)?;
        let gray = self.data.class_indices(&policy.gray)?;
        let mapping = black.iter().map(|&b| (b, gray.clone())).collect();
        let cfg = RaeConfig {
            seed: self.data.seed,
            mapping,
            ..self.config.rae.clone()
        };
        rae_train(&self.data.train, &cfg)
    }

    /// Both systems trained under `train_policy`; at inference the gray set
    /// becomes `override_gray` and the remaining non-black classes white.
    pub fn dynamic(&self, train_policy: &PrivacyPolicy, override_gray: &BTreeSet<String>, k: usize) -> Result<DynamicReport> {
        self.check_policy(train_policy)?;
        let started = Instant::now();
        let override_policy = PrivacyPolicy {
            version: train_policy.version + 1,
            white: self
                .data
                .class_names
                .iter()
                .filter(|c| !train_policy.black.contains(*c) && !override_gray.contains(*c))
                .cloned()
                .collect(),
            black: train_policy.black.clone(),
            gray: override_gray.clone(),
        };
        self.check_policy(&override_policy)?;
        if !override_gray.is_disjoint(&train_policy.gray) {
            return Err(EvalError::Config("override gray set must be disjoint from the training gray set".into()));
        }
        let adversary = self.adversary()?;
        let black_idx = self.data.class_indices(&train_policy.black)?;
        let black_test: Vec<ImuWindow> = self
            .data
            .test
            .iter()
            .filter(|w| w.label.is_some_and(|l| black_idx.contains(&l)))
            .cloned()
            .collect();
        let n = self.data.class_names.len();
        let index = |name: &str| self.data.class_names.iter().position(|c| c == name).expect("known class");

        let (outputs, results, _) = self.sanitize_test(&override_policy, k, &black_test)?;
        let targets: Vec<usize> = results
            .iter()
            .map(|r| match &r.replacement_class {
                Some(c) => Ok(index(c)),
                None => Ok(index(
                    &select_replacement(&r.ranking, &override_policy, self.config.sanitizer.unlisted_as_black, None)?.name,
                )),
            })
            .collect::<Result<_>>()?;
        let privclip_f1 = replacement_f1(&adversary.predict(&outputs)?, &targets, n);

        let rae = self.rae(train_policy)?;
        let override_idx = self.data.class_indices(override_gray)?;
        let targets: Vec<usize> = black_test
            .iter()
            .map(|w| {
                let pos = black_idx.iter().position(|&b| Some(b) == w.label).expect("black window");
                override_idx[pos % override_idx.len()]
            })
            .collect();
        let rae_f1 = replacement_f1(&adversary.predict(&rae.transform_batch(&black_test)?)?, &targets, n);
        Ok(DynamicReport {
            seed: self.data.seed,
            train_policy: train_policy.clone(),
            override_policy,
            privclip_replacement_f1: privclip_f1,
            rae_replacement_f1: rae_f1,
            gap: privclip_f1 - rae_f1,
            runtime_s: started.elapsed().as_secs_f64(),
        })
    }

    /// F1 of each held-out class on the clean test set when only that
    /// group is subsampled to `k` windows per class.
    pub fn few_shot(&self, groups: &[Vec<usize>], ks: &[usize]) -> Result<FewShotCurve> {
        if ks.windows(2).any(|w| w[0] > w[1]) {
            return Err(EvalError::Config("shot counts must be sorted ascending".into()));
        }
        let truth = self.data.test_labels();
        let n = self.data.class_names.len();
        let mut points = Vec::new();
        for &k in ks {
            let mut per_class = BTreeMap::new();
            for g in groups {
                let pred = self.classifier(g, Some(k))?.predict_indices(&self.data.test)?;
                let f1 = per_class_f1(&pred, &truth, n);
                for &c in g {
                    per_class.insert(self.data.class_names[c].clone(), f1[c].unwrap_or(0.0));
                }
            }
            let vals: Vec<f64> = per_class.values().copied().collect();
            let (mean, std) = mean_std(&vals);
            points.push(FewShotPoint {
                k,
                mean_f1: mean,
                std_f1: std,
                per_class,
            });
        }
        Ok(FewShotCurve {
            seed: self.data.seed,
            groups: groups
                .iter()
                .map(|g| g.iter().map(|&c| self.data.class_names[c].clone()).collect())
                .collect(),
            points,
        })
    }

    /// Mean detection F1 of the held-out classes at `k` shots (each group
    /// held out in turn) as the per-class corpus is truncated to each size
    /// in `n_desc`; plus class-name-only anchors.
    pub fn ablation(&self, groups: &[Vec<usize>], n_desc: &[usize], k: usize) -> Result<AblationReport> {
        if groups.iter().all(|g| g.is_empty()) {
            return Err(EvalError::Config("ablation needs at least one held-out class".into()));
        }
        let truth = self.data.test_labels();
        let n = self.data.class_names.len();
        let detect = |n_desc: usize, label_only: bool| -> Result<f64> {
            let mut vals = Vec::new();
            for g in groups {
                let c = self.classifier_with_corpus(g, k, n_desc, label_only)?;
                let f1 = per_class_f1(&c.predict_indices(&self.data.test)?, &truth, n);
                vals.extend(g.iter().map(|&s| f1[s].unwrap_or(0.0)));
            }
            Ok(mean_std(&vals).0)
        };
        let f1 = n_desc.iter().map(|&d| detect(d, false)).collect::<Result<Vec<_>>>()?;
        let label_only_f1 = detect(1, true)?;
        let x: Vec<f64> = n_desc.iter().map(|&d| d as f64).collect();
        Ok(AblationReport {
            seed: self.data.seed,
            k,
            held_out: groups
                .iter()
                .map(|g| g.iter().map(|&c| self.data.class_names[c].clone()).collect())
                .collect(),
            n_desc: n_desc.to_vec(),
            spearman: spearman(&x, &f1),
            f1,
            label_only_f1,
        })
    }
}

/// Macro F1 over the classes that occur as targets.
fn replacement_f1(pred: &[usize], targets: &[usize], n_classes: usize) -> f64 {
    let f1 = per_class_f1(pred, targets, n_classes);
    let classes: BTreeSet<usize> = targets.iter().copied().collect();
    if classes.is_empty() {
        return 0.0;
    }
    classes.iter().map(|&c| f1[c].unwrap_or(0.0)).sum::<f64>() / classes.len() as f64
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

fn experiments_for(synthetic: &SyntheticConfig, config: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<Experiment>> {
    seeds
        .iter()
        .map(|&s| Ok(Experiment::new(ExperimentData::synthetic(synthetic, config, s)?, config.clone())))
        .collect()
}

pub fn run_transform_experiment(
    synthetic: &SyntheticConfig,
    policy: &PrivacyPolicy,
    ks: &[usize],
    seeds: &[u64],
    config: &ExperimentConfig,
) -> Result<Vec<TransformReport>> {
    experiments_for(synthetic, config, seeds)?
        .iter()
        .map(|e| e.transform(policy, ks))
        .collect()
}

pub fn run_dynamic_experiment(
    synthetic: &SyntheticConfig,
    train_policy: &PrivacyPolicy,
    override_gray: &BTreeSet<String>,
    k: usize,
    seeds: &[u64],
    config: &ExperimentConfig,
) -> Result<Vec<DynamicReport>> {
    experiments_for(synthetic, config, seeds)?
        .iter()
        .map(|e| e.dynamic(train_policy, override_gray, k))
        .collect()
}

pub fn few_shot_curve(
    synthetic: &SyntheticConfig,
    groups: &[Vec<usize>],
    ks: &[usize],
    seeds: &[u64],
    config: &ExperimentConfig,
) -> Result<Vec<FewShotCurve>> {
    experiments_for(synthetic, config, seeds)?
        .iter()
        .map(|e| e.few_shot(groups, ks))
        .collect()
}

pub fn description_ablation(
    synthetic: &SyntheticConfig,
    groups: &[Vec<usize>],
    n_desc: &[usize],
    k: usize,
    seeds: &[u64],
    config: &ExperimentConfig,
) -> Result<Vec<AblationReport>> {
    experiments_for(synthetic, config, seeds)?
        .iter()
        .map(|e| e.ablation(groups, n_desc, k))
        .collect()
}

/// Columns `k,mean_f1,std_f1`, averaging the per-seed curves point-wise.
pub fn write_fewshot_csv(curves: &[FewShotCurve], path: &Path) -> Result<()> {
    let mut out = String::from("k,mean_f1,std_f1\n");
    if let Some(first) = curves.first() {
        for (i, p) in first.points.iter().enumerate() {
            let vals: Vec<f64> = curves
                .iter()
                .flat_map(|c| c.points[i].per_class.values().copied())
                .collect();
            let (m, s) = mean_std(&vals);
            let _ = writeln!(out, "{},{m:.6},{s:.6}", p.k);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
