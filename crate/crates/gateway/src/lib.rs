//! Trusted-side service: policy management, classification, sanitization and
//! live stream sanitization over HTTP and WebSocket.
//!
//! Routes (all under `/api/v1`): `GET|PUT /policy`, `POST /classify`,
//! `POST /sanitize`, `GET /metrics`, `GET /activities`, and the `/stream`
//! WebSocket. Every response carries the policy version it was computed under.

mod metrics;
mod routes;
mod stream;

use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use privsense_core::corpus::{load_corpus, CorpusError, TrigramHashEncoder};
use privsense_core::model::{load_checkpoint, Classifier, ModelError};
use privsense_core::policy::{append_history, load_policy, write_policy, HistoryEntry, PolicyError, PolicyStore};
use privsense_core::sanitizer::{ExemplarLibrary, Sanitizer, SanitizerConfig, SanitizerError};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;

pub use metrics::{Metrics, MetricsSnapshot};
pub use routes::router;

/// Environment variable holding the optional API key.
pub const API_KEY_ENV: &str = "PRIVSENSE_API_KEY";
/// Header clients send the key in.
pub const API_KEY_HEADER: &str = "x-api-key";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("corpus hash mismatch: checkpoint was trained with {checkpoint}, corpus file has {corpus}")]
    CorpusHashMismatch { checkpoint: String, corpus: String },
    #[error("checkpoint names unsupported text encoder `{0}`")]
    UnknownTextEncoder(String),
    #[error("exemplar library lacks gray classes: {0:?}")]
    LibraryGap(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Sanitizer(#[from] SanitizerError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GatewayError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub bind: SocketAddr,
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub library: PathBuf,
    pub policy: PathBuf,
    pub unlisted_as_black: bool,
    pub log_level: String,
    /// Base seed for replacement synthesis; request `i` uses `seed + i`.
    pub seed: u64,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

/// Sidecar receiving one JSON line per accepted policy update.
pub fn history_path(policy_path: &Path) -> PathBuf {
    let mut name = policy_path.file_name().unwrap_or_default().to_os_string();
    name.push(".history.jsonl");
    policy_path.with_file_name(name)
}

/// Loaded model, library and policy store; immutable apart from the store.
pub struct Engine {
    pub sanitizer: Sanitizer,
    pub store: PolicyStore,
    pub metrics: Metrics,
}

impl Engine {
    pub fn new(sanitizer: Sanitizer, store: PolicyStore) -> Self {
        let metrics = Metrics::new(sanitizer.classifier().class_names());
        Self {
            sanitizer,
            store,
            metrics,
        }
    }

    /// Gray classes the exemplar library cannot synthesize.
    pub fn library_gaps<'a>(&self, gray: impl IntoIterator<Item = &'a String>) -> Vec<String> {
        gray.into_iter()
            .filter(|c| self.sanitizer.library().count(c) == 0)
            .cloned()
            .collect()
    }
}

/// Loads and cross-checks every artifact named by `config`.
pub fn load_engine(config: &GatewayConfig) -> Result<Engine> {
    let corpus = load_corpus(&config.corpus)?;
    let checkpoint = load_checkpoint(&config.checkpoint)?;
    let hash = corpus.content_hash();
    if checkpoint.corpus_hash != hash {
        return Err(GatewayError::CorpusHashMismatch {
            checkpoint: checkpoint.corpus_hash,
            corpus: hash,
        });
    }
    let encoder = TrigramHashEncoder::from_id(&checkpoint.text_encoder_id)
        .ok_or_else(|| GatewayError::UnknownTextEncoder(checkpoint.text_encoder_id.clone()))?;
    let classifier = Classifier::new(checkpoint, &corpus, &encoder)?;
    let class_names = classifier.class_names().to_vec();
    let library = ExemplarLibrary::load(&config.library)?;
    let sanitizer = Sanitizer::new(
        Arc::new(classifier),
        Arc::new(library),
        &corpus,
        SanitizerConfig {
            unlisted_as_black: config.unlisted_as_black,
            ..SanitizerConfig::default()
        },
    )?;
    let store = PolicyStore::new(load_policy(&config.policy)?, class_names)?;
    let engine = Engine::new(sanitizer, store);
    let gaps = engine.library_gaps(&engine.store.snapshot().gray);
    if !gaps.is_empty() {
        return Err(GatewayError::LibraryGap(gaps));
    }
    Ok(engine)
}

struct Inner {
    engine: OnceLock<Arc<Engine>>,
    policy_path: Option<PathBuf>,
    persist: Mutex<()>,
    api_key: Option<String>,
    seed: u64,
    requests: AtomicU64,
    started: Instant,
}

/// Shared handler state. Requests get 503 until an engine is installed.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// `policy_path`: where accepted updates are persisted; `None` keeps them in memory.
    pub fn new(policy_path: Option<PathBuf>, api_key: Option<String>, seed: u64) -> Self {
        Self {
            inner: Arc::new(Inner {
                engine: OnceLock::new(),
                policy_path,
                persist: Mutex::new(()),
                api_key,
                seed,
                requests: AtomicU64::new(0),
                started: Instant::now(),
            }),
        }
    }

    pub fn install(&self, engine: Engine) -> bool {
        self.inner.engine.set(Arc::new(engine)).is_ok()
    }

    pub fn engine(&self) -> Option<Arc<Engine>> {
        self.inner.engine.get().cloned()
    }

    fn next_seed(&self) -> u64 {
        self.inner.seed.wrapping_add(self.inner.requests.fetch_add(1, Ordering::Relaxed))
    }

    fn uptime_s(&self) -> f64 {
        self.inner.started.elapsed().as_secs_f64()
    }

    fn api_key(&self) -> Option<&str> {
        self.inner.api_key.as_deref()
    }

    /// Rewrites the policy file and appends to its history sidecar.
    fn persist(&self, entry: &HistoryEntry) -> std::result::Result<(), PolicyError> {
        let Some(path) = &self.inner.policy_path else {
            return Ok(());
        };
        let _guard = self.inner.persist.lock().unwrap_or_else(|e| e.into_inner());
        write_policy(&entry.policy, path)?;
        append_history(std::slice::from_ref(entry), &history_path(path))
    }
}

/// Serves on an already-bound listener until `shutdown` resolves.
pub async fn serve_on<F>(listener: TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Loads everything, binds, and serves until `shutdown` resolves. `on_bound`
/// receives the actual address (useful with port 0).
pub async fn serve<F>(config: GatewayConfig, shutdown: F, on_bound: impl FnOnce(SocketAddr)) -> Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let load_config = config.clone();
    let engine = tokio::task::spawn_blocking(move || load_engine(&load_config))
        .await
        .map_err(|e| std::io::Error::other(e.to_string()))??;
    let state = AppState::new(Some(config.policy.clone()), config.api_key.clone(), config.seed);
    state.install(engine);
    let listener = TcpListener::bind(config.bind).await?;
    let addr = listener.local_addr()?;
    log::info!("listening on {addr}");
    on_bound(addr);
    serve_on(listener, state.clone(), shutdown).await?;
    if let Some(engine) = state.engine() {
        log::info!(
            "shut down at policy version {} after {} windows",
            engine.store.version(),
            engine.metrics.snapshot(engine.store.version(), state.uptime_s()).windows_seen
        );
    }
    Ok(())
}
