#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use privsense_core::corpus::{write_corpus, DescriptionCorpus, TrigramHashEncoder, SYNTHETIC_CORPUS_JSON};
use privsense_core::dataset::{generate_synthetic, make_windows, split, ImuWindow, SyntheticConfig};
use privsense_core::model::{save_checkpoint, train, Classifier, ModelConfig, TrainConfig};
use privsense_core::policy::{write_policy, PrivacyPolicy};
use privsense_core::sanitizer::build_library;
use privsense_gateway::{serve_on, AppState, GatewayConfig};
use tokio::net::TcpListener;

/// Trained artifacts written once per test binary.
pub struct Fixture {
    pub dir: PathBuf,
    pub classifier: Arc<Classifier>,
    pub test: Vec<ImuWindow>,
    pub class_names: Vec<String>,
}

pub fn policy() -> PrivacyPolicy {
    // walking, knocking, swinging, hammering, standing, brushing
    PrivacyPolicy::new(&["walking", "knocking"], &["swinging", "hammering"], &["standing", "brushing"])
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("privsense-gw-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let series = generate_synthetic(&SyntheticConfig {
            samples_per_class: 150,
            seed: 5,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let windows = make_windows(&series, 32, 0.5).unwrap();
        let (train_w, test) = split(&windows, 0.8, 5).unwrap();
        let corpus = DescriptionCorpus::parse(SYNTHETIC_CORPUS_JSON).unwrap();
        let encoder = TrigramHashEncoder::new(64, 0);
        let config = TrainConfig {
            epochs: 12,
            seed: 5,
            model: ModelConfig {
                d_model: 32,
                n_layers: 2,
                d_text: 64,
                d_shared: 64,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        let out = train(&train_w, &series.class_names, &corpus, &config, &encoder).unwrap();
        save_checkpoint(&out.checkpoint, &dir.join("ckpt")).unwrap();
        write_corpus(&corpus, &dir.join("corpus.json")).unwrap();
        build_library(&train_w, &series.class_names, &series.class_names, &out.checkpoint.normalizer)
            .unwrap()
            .save(&dir.join("library.json"))
            .unwrap();
        let classifier = Arc::new(Classifier::new(out.checkpoint, &corpus, &encoder).unwrap());
        Fixture {
            dir,
            classifier,
            test,
            class_names: series.class_names,
        }
    })
}

impl Fixture {
    /// A fresh copy of the policy file in its own directory.
    pub fn config(&self, policy: &PrivacyPolicy) -> (tempfile::TempDir, GatewayConfig) {
        let tmp = tempfile::tempdir().unwrap();
        let policy_path = tmp.path().join("policy.json");
        write_policy(policy, &policy_path).unwrap();
        let config = GatewayConfig {
            bind: "127.0.0.1:0".parse().unwrap(),
            checkpoint: self.dir.join("ckpt"),
            corpus: self.dir.join("corpus.json"),
            library: self.dir.join("library.json"),
            policy: policy_path,
            unlisted_as_black: false,
            log_level: "warn".into(),
            seed: 0,
            api_key: None,
        };
        (tmp, config)
    }

    /// Test windows the model ranks first as `class`.
    pub fn windows_detected_as(&self, class: &str) -> Vec<ImuWindow> {
        self.test
            .iter()
            .filter(|w| {
                let (top, _) = self.classifier.classify(w, self.classifier.class_names()).unwrap();
                top == class
            })
            .cloned()
            .collect()
    }
}

pub struct Running {
    pub base: String,
    pub ws: String,
    pub state: AppState,
    pub shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    pub handle: tokio::task::JoinHandle<std::io::Result<()>>,
    pub _dir: tempfile::TempDir,
    pub config: GatewayConfig,
}

impl Running {
    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.handle.await.unwrap().unwrap();
    }
}

/// Loads the fixture through the real loader and serves it on an ephemeral port.
pub async fn start(policy: &PrivacyPolicy, api_key: Option<&str>) -> Running {
    let f = fixture();
    let (dir, mut config) = f.config(policy);
    config.api_key = api_key.map(str::to_string);
    let engine = privsense_gateway::load_engine(&config).unwrap();
    let state = AppState::new(Some(config.policy.clone()), config.api_key.clone(), config.seed);
    state.install(engine);
    start_with_state(state, dir, config).await
}

pub async fn start_with_state(state: AppState, dir: tempfile::TempDir, config: GatewayConfig) -> Running {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel();
    let handle = tokio::spawn(serve_on(listener, state.clone(), async {
        let _ = rx.await;
    }));
    Running {
        base: format!("http://{addr}/api/v1"),
        ws: format!("ws://{addr}/api/v1/stream"),
        state,
        shutdown: Some(tx),
        handle,
        _dir: dir,
        config,
    }
}

pub fn window_json(w: &ImuWindow) -> serde_json::Value {
    serde_json::to_value(privsense_core::wire::WindowJson::from_window(w)).unwrap()
}

/// True when the reply's window decodes to exactly the values of `w`.
pub fn same_window(reply: &serde_json::Value, w: &ImuWindow) -> bool {
    let json: privsense_core::wire::WindowJson = serde_json::from_value(reply.clone()).unwrap();
    json.to_window(w.shape()).is_ok_and(|got| got.bit_identical(w))
}
