//! `privsense` command line. [`run`] returns the process exit code: 0 on
//! success, 1 on a domain error, 2 on a usage error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use privsense_core::corpus::{
    generate_corpus_file, load_corpus, templated_corpus, write_corpus, DescriptionCorpus, HttpCompletionClient,
    LlmConfig, TrigramHashEncoder, SYNTHETIC_CORPUS_JSON,
};
use privsense_core::dataset::{
    few_shot_subsample, generate_synthetic, load_labeled_series, make_windows, split, write_labeled_series,
    LabeledSeries, SyntheticConfig,
};
use privsense_core::eval::{
    held_out_pairs, macro_f1, synthetic_override_gray, synthetic_policy, write_fewshot_csv, Experiment,
    ExperimentConfig, ExperimentData,
};
use privsense_core::model::{load_checkpoint, save_checkpoint, train, Classifier, ModelConfig, TrainConfig};
use privsense_core::policy::{load_policy, PrivacyPolicy};
use privsense_core::sanitizer::{build_library, Action, ExemplarLibrary, Sanitizer, SanitizerConfig};
use privsense_core::wire::WindowJson;
use privsense_gateway::{GatewayConfig, API_KEY_ENV};
use serde::Serialize;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "privsense", version, about = "Few-shot IMU activity detection with policy-driven sanitization")]
struct Cli {
    /// Print only machine-readable JSON lines on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the built-in synthetic dataset as CSV.
    GenSynthetic(GenSynthetic),
    /// Write a description corpus (templated offline, or from an LLM endpoint).
    GenCorpus(GenCorpus),
    /// Train a checkpoint and its exemplar library.
    Train(Box<TrainArgs>),
    /// Rank all classes for one window.
    Classify(ClassifyArgs),
    /// Sanitize every window of a dataset under a policy.
    Sanitize(SanitizeArgs),
    /// Run an experiment suite and write its reports.
    Eval(EvalArgs),
    /// Run the HTTP/WebSocket gateway.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenSynthetic {
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 500)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 6)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    window_length: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_sigma: f64,
    #[arg(long, default_value = "synthetic.csv")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum CorpusSource {
    Templated,
    Llm,
}

#[derive(Debug, Args, Serialize)]
struct GenCorpus {
    /// Comma-separated activity names.
    #[arg(long, value_delimiter = ',', required_unless_present = "dataset")]
    activities: Vec<String>,
    /// Take activity names from a dataset file instead.
    #[arg(long, conflicts_with = "activities")]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    #[arg(long, value_enum, default_value_t = CorpusSource::Templated)]
    source: CorpusSource,
    /// OpenAI-compatible chat completions URL (for `--source llm`).
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    endpoint: String,
    #[arg(long, default_value = "gpt-4o-mini")]
    model: String,
    /// Environment variable holding the LLM API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value = "corpus.json")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
struct WindowingArgs {
    #[arg(long, default_value_t = 32)]
    window_length: usize,
    /// Fraction of overlap between consecutive windows.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output checkpoint directory; the exemplar library goes to `library.json` inside it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    windowing: WindowingArgs,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr_imu: f32,
    #[arg(long, default_value_t = 1e-3)]
    lr_text_projection: f32,
    #[arg(long, default_value_t = 0.07)]
    temperature: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f32,
    #[arg(long, default_value_t = 4)]
    patch_len: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    n_heads: usize,
    #[arg(long, default_value_t = 3)]
    n_layers: usize,
    #[arg(long, default_value_t = 512)]
    d_text: usize,
    #[arg(long, default_value_t = 512)]
    d_shared: usize,
    #[arg(long, default_value_t = 0)]
    text_seed: u64,
    /// Keep only this many training windows of each `--sensitive` class.
    #[arg(long, requires = "sensitive")]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sensitive: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
struct ClassifyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// JSON file `{"length":L,"channels":C,"data":[[...]]}`.
    #[arg(long)]
    window: PathBuf,
    /// Restrict the ranking to these classes.
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
struct SanitizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    /// Defaults to `library.json` inside the checkpoint directory.
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    #[arg(long)]
    unlisted_as_black: bool,
    #[arg(long, default_value = "sanitized.csv")]
    out: PathBuf,
    #[arg(long, default_value = "sanitize_results.json")]
    results: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[command(subcommand)]
    suite: EvalSuite,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
enum EvalSuite {
    /// Grouped F1 before and after transformation, PrivCLIP vs autoencoder.
    Table3(Table3Args),
    /// Replacement F1 after a post-training gray-set override.
    Table2(Table2Args),
    /// Detection F1 of held-out classes versus shots.
    Fewshot(FewshotArgs),
    /// Detection F1 versus descriptions per class.
    Ablation(AblationArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct EvalCommon {
    /// CSV dataset; defaults to the built-in synthetic generator.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Defaults to the shipped synthetic corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Comma-separated seeds; defaults to `--seed`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 50)]
    adversary_epochs: usize,
    #[arg(long, default_value_t = 30)]
    rae_epochs: usize,
    #[command(flatten)]
    windowing: WindowingArgs,
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct Table3Args {
    #[command(flatten)]
    common: EvalCommon,
    /// Policy file; defaults to the built-in synthetic split.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [8, 32, 64])]
    k: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
struct Table2Args {
    #[command(flatten)]
    common: EvalCommon,
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Gray set used at inference; must be disjoint from the training gray set.
    #[arg(long, value_delimiter = ',')]
    override_gray: Vec<String>,
    #[arg(long, default_value_t = 64)]
    k: usize,
}

#[derive(Debug, Args, Serialize)]
struct FewshotArgs {
    #[command(flatten)]
    common: EvalCommon,
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 4, 8, 32, 64])]
    k: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
struct AblationArgs {
    #[command(flatten)]
    common: EvalCommon,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 25, 50, 75, 100])]
    n_desc: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    k: usize,
}

#[derive(Debug, Args, Serialize)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Defaults to `library.json` inside the checkpoint directory.
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    unlisted_as_black: bool,
    #[arg(long, default_value = "info")]
    log_level: String,
}

struct Out<'a> {
    json: bool,
    stdout: &'a mut dyn Write,
}

impl Out<'_> {
    fn config(&mut self, command: &str, seed: u64, config: &impl Serialize) -> Result<()> {
        let value = json!({ "command": command, "seed": seed, "config": config });
        if self.json {
            writeln!(self.stdout, "{value}")?;
        } else {
            writeln!(self.stdout, "config: {value}")?;
        }
        Ok(())
    }

    /// One summary line: JSON under `--json`, otherwise `text`.
    fn summary(&mut self, text: &str, value: serde_json::Value) -> Result<()> {
        if self.json {
            writeln!(self.stdout, "{value}")?;
        } else {
            writeln!(self.stdout, "{text}")?;
        }
        self.stdout.flush()?;
        Ok(())
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    let mut out = Out { json: cli.json, stdout };
    match dispatch(cli, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli, out: &mut Out) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a, seed, out),
        Command::GenCorpus(a) => gen_corpus(a, seed, out),
        Command::Train(a) => train_cmd(*a, seed, out),
        Command::Classify(a) => classify(a, seed, out),
        Command::Sanitize(a) => sanitize(a, seed, out),
        Command::Eval(a) => eval(a, seed, out),
        Command::Serve(a) => serve(a, seed, out),
    }
}

fn gen_synthetic(a: GenSynthetic, seed: u64, out: &mut Out) -> Result<()> {
    out.config("gen-synthetic", seed, &a)?;
    let series = generate_synthetic(&SyntheticConfig {
        n_classes: a.classes,
        samples_per_class: a.samples_per_class,
        channels: a.channels,
        window_length: a.window_length,
        noise_sigma: a.noise_sigma,
        seed,
    })?;
    write_labeled_series(&series, &a.out)?;
    out.summary(
        &format!("wrote {} timesteps of {} classes to {}", series.len(), series.n_classes(), a.out.display()),
        json!({ "out": a.out, "timesteps": series.len(), "classes": series.class_names }),
    )
}

fn gen_corpus(a: GenCorpus, seed: u64, out: &mut Out) -> Result<()> {
    out.config("gen-corpus", seed, &a)?;
    let activities = match &a.dataset {
        Some(p) => load_labeled_series(p)?.class_names,
        None => a.activities.clone(),
    };
    if activities.is_empty() {
        bail!("no activities given");
    }
    let corpus = match a.source {
        CorpusSource::Templated => {
            let c = templated_corpus(&activities, a.n_per_class);
            write_corpus(&c, &a.out)?;
            c
        }
        CorpusSource::Llm => {
            let client = HttpCompletionClient::from_env(LlmConfig {
                endpoint: a.endpoint.clone(),
                model: a.model.clone(),
                api_key_env: a.api_key_env.clone(),
            })?;
            generate_corpus_file(&activities, a.n_per_class, &client, &a.out)?
        }
    };
    out.summary(
        &format!("wrote {} activities to {} (hash {})", corpus.activities.len(), a.out.display(), corpus.content_hash()),
        json!({ "out": a.out, "activities": corpus.activities.len(), "hash": corpus.content_hash() }),
    )
}

fn train_cmd(a: TrainArgs, seed: u64, out: &mut Out) -> Result<()> {
    out.config("train", seed, &a)?;
    let series = load_labeled_series(&a.dataset)?;
    let corpus = load_corpus(&a.corpus)?;
    let windows = make_windows(&series, a.windowing.window_length, a.windowing.overlap)?;
    let (train_w, test_w) = split(&windows, a.windowing.split_ratio, seed)?;
    let train_w = match a.k {
        Some(k) => {
            let sensitive = indices(&series, &a.sensitive)?;
            few_shot_subsample(&train_w, &sensitive.into_iter().collect(), k, seed)
        }
        None => train_w,
    };
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr_imu: a.lr_imu,
        lr_text_projection: a.lr_text_projection,
        temperature: a.temperature,
        weight_decay: a.weight_decay,
        seed,
        model: ModelConfig {
            window_length: a.windowing.window_length,
            channels: series.channels,
            patch_len: a.patch_len,
            d_model: a.d_model,
            n_heads: a.n_heads,
            n_layers: a.n_layers,
            d_text: a.d_text,
            d_shared: a.d_shared,
            temperature: a.temperature,
        },
    };
    let encoder = TrigramHashEncoder::new(a.d_text, a.text_seed);
    let outcome = train(&train_w, &series.class_names, &corpus, &config, &encoder)?;
    save_checkpoint(&outcome.checkpoint, &a.out)?;
    let library = build_library(&train_w, &series.class_names, &series.class_names, &outcome.checkpoint.normalizer)?;
    library.save(&a.out.join("library.json"))?;
    let classifier = Classifier::new(outcome.checkpoint, &corpus, &encoder)?;
    let truth: Vec<usize> = test_w.iter().filter_map(|w| w.label).collect();
    let f1 = macro_f1(&classifier.predict_indices(&test_w)?, &truth, series.class_names.len());
    let final_loss = outcome.epoch_losses.last().copied().unwrap_or(f64::NAN);
    out.summary(
        &format!("trained {} epochs, final loss {final_loss:.4}, test macro-F1 {f1:.3}; wrote {}", a.epochs, a.out.display()),
        json!({ "out": a.out, "final_loss": final_loss, "test_macro_f1": f1, "test_windows": test_w.len() }),
    )
}

fn indices(series: &LabeledSeries, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            series
                .class_names
                .iter()
                .position(|c| c == n)
                .with_context(|| format!("unknown class `{n}`"))
        })
        .collect()
}

fn load_classifier(checkpoint: &Path, corpus: &DescriptionCorpus) -> Result<Classifier> {
    let ckpt = load_checkpoint(checkpoint)?;
    let encoder = TrigramHashEncoder::from_id(&ckpt.text_encoder_id)
        .with_context(|| format!("unsupported text encoder `{}`", ckpt.text_encoder_id))?;
    if ckpt.corpus_hash != corpus.content_hash() {
        bail!(
            "corpus hash mismatch: checkpoint was trained with {}, corpus file has {}",
            ckpt.corpus_hash,
            corpus.content_hash()
        );
    }
    Ok(Classifier::new(ckpt, corpus, &encoder)?)
}

fn classify(a: ClassifyArgs, seed: u64, out: &mut Out) -> Result<()> {
    out.config("classify", seed, &a)?;
    let corpus = load_corpus(&a.corpus)?;
    let classifier = load_classifier(&a.checkpoint, &corpus)?;
    let text = std::fs::read_to_string(&a.window).with_context(|| format!("reading {}", a.window.display()))?;
    let json: WindowJson = serde_json::from_str(&text).context("parsing window JSON")?;
    let window = json.to_window(classifier.window_shape()).map_err(anyhow::Error::msg)?;
    let candidates = if a.candidates.is_empty() {
        classifier.class_names().to_vec()
    } else {
        a.candidates.clone()
    };
    let ranking = classifier.rank(&window, &candidates)?;
    let top1 = ranking.top1();
    out.summary(
        &format!("{} ({:.4})", top1.name, top1.score),
        json!({ "top1": top1.name, "top_k": ranking.pairs() }),
    )
}

fn sanitize(a: SanitizeArgs, seed: u64, out: &mut Out) -> Result<()> {
    out.config("sanitize", seed, &a)?;
    let corpus = load_corpus(&a.corpus)?;
    let classifier = load_classifier(&a.checkpoint, &corpus)?;
    let library = ExemplarLibrary::load(&a.library.clone().unwrap_or_else(|| a.checkpoint.join("library.json")))?;
    let policy = load_policy(&a.policy)?;
    let series = load_labeled_series(&a.dataset)?;
    let (l, _) = classifier.window_shape();
    let windows = make_windows(&series, l, a.overlap)?;
    let sanitizer = Sanitizer::new(
        Arc::new(classifier),
        Arc::new(library),
        &corpus,
        SanitizerConfig {
            unlisted_as_black: a.unlisted_as_black,
            ..SanitizerConfig::default()
        },
    )?;
    let results = sanitizer.sanitize_batch(&windows, &policy, seed)?;
    let mut data = Vec::with_capacity(windows.len() * l * series.channels);
    let mut labels = Vec::with_capacity(windows.len() * l);
    for (w, r) in windows.iter().zip(&results) {
        data.extend_from_slice(&r.output.data);
        labels.extend(std::iter::repeat_n(w.label.unwrap_or(0), l));
    }
    let sanitized = LabeledSeries {
        name: format!("{}-sanitized", series.name),
        channels: series.channels,
        data,
        labels,
        class_names: series.class_names.clone(),
    };
    write_labeled_series(&sanitized, &a.out)?;
    let records: Vec<serde_json::Value> = results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            json!({
                "index": i,
                "action": r.action,
                "top1": r.detected_top1,
                "replacement": r.replacement_class,
                "replacement_description": r.replacement_description,
                "policy_version": r.policy_version,
            })
        })
        .collect();
    std::fs::write(&a.results, serde_json::to_string_pretty(&records)?)?;
    let replaced = results.iter().filter(|r| r.action == Action::Replaced).count();
    out.summary(
        &format!("{} windows, {replaced} replaced; wrote {} and {}", results.len(), a.out.display(), a.results.display()),
        json!({ "windows": results.len(), "replaced": replaced, "out": a.out, "results": a.results }),
    )
}

fn experiments(common: &EvalCommon, seed: u64) -> Result<Vec<Experiment>> {
    let config = ExperimentConfig {
        window_length: common.windowing.window_length,
        overlap: common.windowing.overlap,
        split_ratio: common.windowing.split_ratio,
        train: TrainConfig {
            epochs: common.epochs,
            ..TrainConfig::desk()
        },
        adversary: privsense_core::eval::AdversaryConfig {
            epochs: common.adversary_epochs,
            ..Default::default()
        },
        rae: privsense_core::eval::RaeConfig {
            epochs: common.rae_epochs,
            ..Default::default()
        },
        ..ExperimentConfig::default()
    };
    let seeds = if common.seeds.is_empty() { vec![seed] } else { common.seeds.clone() };
    let series = common.dataset.as_ref().map(|p| load_labeled_series(p)).transpose()?;
    let corpus = match &common.corpus {
        Some(p) => Some(load_corpus(p)?),
        None => None,
    };
    seeds
        .iter()
        .map(|&s| {
            let data = match &series {
                Some(series) => {
                    let corpus = match &corpus {
                        Some(c) => c.clone(),
                        None => DescriptionCorpus::parse(SYNTHETIC_CORPUS_JSON)?,
                    };
                    ExperimentData::from_series(series, corpus, &config, s)?
                }
                None => {
                    let mut d = ExperimentData::synthetic(&SyntheticConfig::default(), &config, s)?;
                    if let Some(c) = &corpus {
                        d.corpus = c.clone();
                    }
                    d
                }
            };
            Ok(Experiment::new(data, config.clone()))
        })
        .collect()
}

fn write_report(dir: &Path, name: &str, value: &impl Serialize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(path)
}

fn policy_or_default(path: &Option<PathBuf>) -> Result<PrivacyPolicy> {
    Ok(match path {
        Some(p) => load_policy(p)?,
        None => synthetic_policy(),
    })
}

fn eval(a: EvalArgs, seed: u64, out: &mut Out) -> Result<()> {
    out.config("eval", seed, &a.suite)?;
    match a.suite {
        EvalSuite::Table3(t) => {
            let policy = policy_or_default(&t.policy)?;
            let mut reports = Vec::new();
            for e in experiments(&t.common, seed)? {
                reports.push(e.transform(&policy, &t.k)?);
            }
            let path = write_report(&t.common.out_dir, "table3.json", &reports)?;
            let last = reports.last().context("no seeds")?;
            let (k, r) = last.privclip.last().context("no k values")?;
            let g = &r.groups;
            out.summary(
                &format!(
                    "k={k}: black {:.3} gray {:.3} white {:.3} (seed {}); wrote {}",
                    g.black.unwrap_or(f64::NAN),
                    g.gray.unwrap_or(f64::NAN),
                    g.white.unwrap_or(f64::NAN),
                    last.seed,
                    path.display()
                ),
                json!({ "report": path, "k": k, "groups": g, "seed": last.seed }),
            )
        }
        EvalSuite::Table2(t) => {
            let policy = policy_or_default(&t.policy)?;
            let override_gray: BTreeSet<String> = if t.override_gray.is_empty() {
                synthetic_override_gray()
            } else {
                t.override_gray.iter().cloned().collect()
            };
            let mut reports = Vec::new();
            for e in experiments(&t.common, seed)? {
                reports.push(e.dynamic(&policy, &override_gray, t.k)?);
            }
            let path = write_report(&t.common.out_dir, "table2.json", &reports)?;
            let min_gap = reports.iter().map(|r| r.gap).fold(f64::INFINITY, f64::min);
            let r = &reports[0];
            out.summary(
                &format!(
                    "privclip {:.3} rae {:.3} min gap {min_gap:.3}; wrote {}",
                    r.privclip_replacement_f1,
                    r.rae_replacement_f1,
                    path.display()
                ),
                json!({
                    "report": path,
                    "privclip_replacement_f1": reports.iter().map(|r| r.privclip_replacement_f1).collect::<Vec<_>>(),
                    "rae_replacement_f1": reports.iter().map(|r| r.rae_replacement_f1).collect::<Vec<_>>(),
                    "min_gap": min_gap,
                }),
            )
        }
        EvalSuite::Fewshot(t) => {
            let mut curves = Vec::new();
            for e in experiments(&t.common, seed)? {
                let groups = held_out_pairs(e.data.class_names.len());
                curves.push(e.few_shot(&groups, &t.k)?);
            }
            let path = write_report(&t.common.out_dir, "fewshot.json", &curves)?;
            let csv = t.common.out_dir.join("fewshot_curve.csv");
            write_fewshot_csv(&curves, &csv)?;
            let means: Vec<f64> = curves[0].points.iter().map(|p| p.mean_f1).collect();
            out.summary(
                &format!("mean F1 by k {:?}: {:?}; wrote {} and {}", t.k, rounded(&means), path.display(), csv.display()),
                json!({ "report": path, "csv": csv, "k": t.k, "mean_f1": means }),
            )
        }
        EvalSuite::Ablation(t) => {
            let mut reports = Vec::new();
            for e in experiments(&t.common, seed)? {
                let groups = held_out_pairs(e.data.class_names.len());
                reports.push(e.ablation(&groups, &t.n_desc, t.k)?);
            }
            let path = write_report(&t.common.out_dir, "ablation.json", &reports)?;
            let csv = t.common.out_dir.join("ablation.csv");
            let mut text = String::from("seed,n_desc,f1\n");
            for r in &reports {
                for (n, f) in r.n_desc.iter().zip(&r.f1) {
                    text.push_str(&format!("{},{n},{f:.6}\n", r.seed));
                }
                text.push_str(&format!("{},label_only,{:.6}\n", r.seed, r.label_only_f1));
            }
            std::fs::write(&csv, text)?;
            let rho: Vec<f64> = reports.iter().map(|r| r.spearman).collect();
            out.summary(
                &format!("spearman per seed {:?}; wrote {} and {}", rounded(&rho), path.display(), csv.display()),
                json!({ "report": path, "csv": csv, "spearman": rho }),
            )
        }
    }
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}

fn serve(a: ServeArgs, seed: u64, out: &mut Out) -> Result<()> {
    out.config("serve", seed, &a)?;
    let _ = env_logger::Builder::new().parse_filters(&a.log_level).try_init();
    let config = GatewayConfig {
        bind: a.bind,
        library: a.library.clone().unwrap_or_else(|| a.checkpoint.join("library.json")),
        checkpoint: a.checkpoint,
        corpus: a.corpus,
        policy: a.policy,
        unlisted_as_black: a.unlisted_as_black,
        log_level: a.log_level,
        seed,
        api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    let mut bound = None;
    runtime.block_on(privsense_gateway::serve(
        config,
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
        |addr| bound = Some(addr),
    ))?;
    out.summary(
        &format!("stopped ({})", bound.map(|a| a.to_string()).unwrap_or_default()),
        json!({ "stopped": bound }),
    )
}
