//! HTTP collection server.
//!
//! Routes:
//!
//! ```text
//! GET  /config/{number}
//! GET  /app_runtime_config_file_{number}.json   (and legacy .csv)
//! GET  /personal_information_request/{number}
//! POST /samples                     multipart: metadata + optional audio
//! POST /status/{phone_hash}
//! GET  /response/{phone_hash}       404 when there is none
//! GET  /response/{phone_hash}/audio
//! POST /admin/config
//! GET  /admin/status
//! GET  /export/{YYYY-MM-DD}
//! ```
//!
//! Config documents are served byte-for-byte as installed. Each number maps to
//! an `Arc` that is swapped whole, so a reader sees the old document or the
//! new one and nothing in between.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{NaiveDate, Utc};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::{oneshot, Mutex as AsyncMutex};
use tokio::task::JoinHandle;

use crate::engine::{DispatchJob, Dispatcher, EngineKind, EngineRegistry, EngineSpec};
use crate::protocol::config::declared_config_number;
use crate::protocol::wire::{AudioPayload, IngestReceipt, ResponseDocument, SampleUpload};
use crate::protocol::{
    config_number_from_filename, covid_question_set, parse_runtime_config, LocalConfigStatus, PhoneHash,
    RuntimeConfig,
};
use crate::storage::{IngestOutcome, SampleStore, StatusEnvelope, StorageError};

const MAX_BODY: usize = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("config {number} rejected: {message}")]
    BadConfig { number: u32, message: String },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("engine setup failed: {0}")]
    Engine(#[from] crate::engine::EngineError),
}

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub bind: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    pub data_root: PathBuf,
    /// Always resolvable: if nothing is installed under this number at startup
    /// the free-recording default is installed there.
    pub default_config_number: u32,
    pub engines: Vec<EngineSpec>,
    /// Raw config documents installed at startup, after the persisted ones.
    pub configs: Vec<Vec<u8>>,
}

impl ServerOptions {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 0,
            data_root: data_root.into(),
            default_config_number: 0,
            engines: Vec::new(),
            configs: Vec::new(),
        }
    }
}

pub struct AppState {
    store: Arc<SampleStore>,
    configs: RwLock<HashMap<u32, Arc<Bytes>>>,
    config_writes: AsyncMutex<()>,
    engines: EngineRegistry,
    dispatcher: Dispatcher,
    default_config_number: u32,
}

impl AppState {
    pub fn open(opts: &ServerOptions) -> Result<Arc<Self>, ServerError> {
        let store = Arc::new(SampleStore::open(&opts.data_root)?);
        let engines = EngineRegistry::new();
        for spec in &opts.engines {
            engines.register(spec.clone())?;
        }
        let dispatcher = Dispatcher::new(store.clone(), reqwest::Client::new());

        let mut configs = HashMap::new();
        for (number, raw) in store.load_configs()? {
            match parse_runtime_config(&raw, number) {
                Ok(_) => {
                    configs.insert(number, Arc::new(Bytes::from(raw)));
                }
                Err(e) => tracing::warn!("skipping persisted config {number}: {e}"),
            }
        }
        for raw in &opts.configs {
            let number = validate_config(raw)?;
            store.store_config(number, raw)?;
            configs.insert(number, Arc::new(Bytes::from(raw.clone())));
        }
        if let Entry::Vacant(slot) = configs.entry(opts.default_config_number) {
            let raw = RuntimeConfig::free_recording(opts.default_config_number).to_canonical_bytes();
            store.store_config(opts.default_config_number, &raw)?;
            slot.insert(Arc::new(Bytes::from(raw)));
        }

        Ok(Arc::new(Self {
            store,
            configs: RwLock::new(configs),
            config_writes: AsyncMutex::new(()),
            engines,
            dispatcher,
            default_config_number: opts.default_config_number,
        }))
    }

    pub fn store(&self) -> &Arc<SampleStore> {
        &self.store
    }

    pub fn engines(&self) -> &EngineRegistry {
        &self.engines
    }

    pub fn dispatcher(&self) -> &Dispatcher {
        &self.dispatcher
    }

    pub fn default_config_number(&self) -> u32 {
        self.default_config_number
    }

    pub fn config_bytes(&self, number: u32) -> Option<Arc<Bytes>> {
        self.configs.read().expect("config table poisoned").get(&number).cloned()
    }

    /// Validates, persists and then publishes a config document.
    pub async fn apply_admin_config(&self, raw: Bytes) -> Result<u32, ServerError> {
        let number = validate_config(&raw)?;
        let _serial = self.config_writes.lock().await;
        let store = self.store.clone();
        let persisted = raw.clone();
        tokio::task::spawn_blocking(move || store.store_config(number, &persisted))
            .await
            .expect("config write task panicked")?;
        self.configs
            .write()
            .expect("config table poisoned")
            .insert(number, Arc::new(raw));
        Ok(number)
    }
}

fn validate_config(raw: &[u8]) -> Result<u32, ServerError> {
    let bad = |number, e: crate::protocol::ConfigError| ServerError::BadConfig {
        number,
        message: e.to_string(),
    };
    let number = declared_config_number(raw).map_err(|e| bad(0, e))?;
    parse_runtime_config(raw, number).map_err(|e| bad(number, e))?;
    Ok(number)
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self(StatusCode::BAD_REQUEST, msg.into())
    }

    fn unprocessable(msg: impl Into<String>) -> Self {
        Self(StatusCode::UNPROCESSABLE_ENTITY, msg.into())
    }

    fn not_found(msg: impl Into<String>) -> Self {
        Self(StatusCode::NOT_FOUND, msg.into())
    }
}

impl From<StorageError> for ApiError {
    fn from(e: StorageError) -> Self {
        tracing::error!("storage failure: {e}");
        Self(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Body {
            error: String,
        }
        (self.0, Json(Body { error: self.1 })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, StorageError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .expect("storage task panicked")
        .map_err(ApiError::from)
}

fn parse_hash(raw: &str) -> ApiResult<PhoneHash> {
    raw.parse()
        .map_err(|e| ApiError::bad_request(format!("bad phone hash: {e}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/config", get(get_default_config))
        .route("/config/{number}", get(get_config))
        .route("/{file}", get(get_config_file))
        .route("/personal_information_request/{number}", get(get_personal_info))
        .route("/samples", post(post_sample))
        .route("/status/{hash}", post(post_status))
        .route("/response/{hash}", get(get_response))
        .route("/response/{hash}/audio", get(get_response_audio))
        .route("/admin/config", post(post_admin_config))
        .route("/admin/status", get(get_admin_status))
        .route("/export/{date}", get(get_export))
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(state)
}

fn config_response(state: &AppState, number: u32) -> ApiResult<Response> {
    let bytes = state
        .config_bytes(number)
        .ok_or_else(|| ApiError::not_found(format!("no config {number}")))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], Bytes::clone(&bytes)).into_response())
}

async fn get_default_config(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    config_response(&state, state.default_config_number)
}

async fn get_config(State(state): State<Arc<AppState>>, Path(number): Path<String>) -> ApiResult<Response> {
    let number = number
        .parse()
        .map_err(|_| ApiError::not_found(format!("no config {number}")))?;
    config_response(&state, number)
}

async fn get_config_file(State(state): State<Arc<AppState>>, Path(file): Path<String>) -> ApiResult<Response> {
    let number = config_number_from_filename(&file).map_err(|_| ApiError::not_found(format!("no such file {file}")))?;
    config_response(&state, number)
}

async fn get_personal_info(Path(_number): Path<u32>) -> Json<crate::protocol::PersonalInfoSchema> {
    Json(covid_question_set())
}

async fn read_sample(mut multipart: Multipart) -> ApiResult<(SampleUpload, Option<AudioPayload>)> {
    let mut meta = None;
    let mut audio = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("bad multipart body: {e}")))?
    {
        match field.name() {
            Some("metadata") => {
                let bytes = field
                    .bytes()
                    .await
                    .map_err(|e| ApiError::bad_request(format!("bad metadata part: {e}")))?;
                let upload: SampleUpload = serde_json::from_slice(&bytes)
                    .map_err(|e| ApiError::unprocessable(format!("bad metadata: {e}")))?;
                meta = Some(upload);
            }
            Some("audio") => {
                let media_type = field
                    .content_type()
                    .unwrap_or("application/octet-stream")
                    .to_owned();
                let bytes = field
                    .bytes()
                    .await
                    .map_err(|e| ApiError::bad_request(format!("bad audio part: {e}")))?;
                audio = Some(AudioPayload::new(media_type, bytes.to_vec()));
            }
            _ => {}
        }
    }
    let meta = meta.ok_or_else(|| ApiError::unprocessable("missing metadata part"))?;
    meta.validate(audio.as_ref()).map_err(ApiError::unprocessable)?;
    Ok((meta, audio))
}

async fn post_sample(State(state): State<Arc<AppState>>, multipart: Multipart) -> ApiResult<Json<IngestReceipt>> {
    let (upload, audio) = read_sample(multipart).await?;
    let store = state.store.clone();
    let (u, a) = (upload.clone(), audio.clone());
    let outcome = blocking(move || store.ingest(&u, a.as_ref())).await?;
    let receipt = match outcome {
        IngestOutcome::Duplicate => IngestReceipt {
            sample_id: upload.sample_id,
            stored: false,
            duplicate: true,
            engine_dispatched: false,
        },
        IngestOutcome::Stored { phone_sample_count } => {
            let kind = state.engines.kind(upload.engine_number);
            let dispatched = kind != EngineKind::None;
            let sample_id = upload.sample_id;
            if dispatched {
                state.dispatcher.submit(DispatchJob {
                    kind,
                    sample: upload,
                    audio,
                    phone_sample_count,
                });
            }
            IngestReceipt {
                sample_id,
                stored: true,
                duplicate: false,
                engine_dispatched: dispatched,
            }
        }
    };
    Ok(Json(receipt))
}

#[derive(Serialize)]
struct Ack {
    ok: bool,
}

async fn post_status(
    State(state): State<Arc<AppState>>,
    Path(hash): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Ack>> {
    let hash = parse_hash(&hash)?;
    let status: LocalConfigStatus =
        serde_json::from_slice(&body).map_err(|e| ApiError::unprocessable(format!("bad status document: {e}")))?;
    status
        .validate()
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let store = state.store.clone();
    blocking(move || store.store_status(&hash, &status, Utc::now())).await?;
    Ok(Json(Ack { ok: true }))
}

async fn get_response(State(state): State<Arc<AppState>>, Path(hash): Path<String>) -> ApiResult<Json<ResponseDocument>> {
    let hash = parse_hash(&hash)?;
    let store = state.store.clone();
    let stored = blocking(move || store.load_response(&hash))
        .await?
        .ok_or_else(|| ApiError::not_found("no response"))?;
    Ok(Json(ResponseDocument {
        text: stored.text,
        audio_url: stored.audio.map(|_| format!("/response/{hash}/audio")),
    }))
}

async fn get_response_audio(State(state): State<Arc<AppState>>, Path(hash): Path<String>) -> ApiResult<Response> {
    let hash = parse_hash(&hash)?;
    let store = state.store.clone();
    let found = blocking(move || {
        let Some((path, media)) = store.load_response(&hash)?.and_then(|r| r.audio) else {
            return Ok(None);
        };
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some((bytes, media))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(StorageError::Io { path, source }),
        }
    })
    .await?;
    let (bytes, media) = found.ok_or_else(|| ApiError::not_found("no response audio"))?;
    Ok(([(header::CONTENT_TYPE, media)], bytes).into_response())
}

#[derive(Serialize)]
struct ConfigAck {
    config_number: u32,
}

async fn post_admin_config(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<ConfigAck>> {
    match state.apply_admin_config(body).await {
        Ok(config_number) => Ok(Json(ConfigAck { config_number })),
        Err(ServerError::Storage(e)) => Err(e.into()),
        Err(e) => Err(ApiError::unprocessable(e.to_string())),
    }
}

#[derive(Serialize)]
struct StatusRow {
    phone_hash: PhoneHash,
    #[serde(flatten)]
    envelope: StatusEnvelope,
}

async fn get_admin_status(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<StatusRow>>> {
    let store = state.store.clone();
    let rows = blocking(move || store.list_statuses()).await?;
    Ok(Json(
        rows.into_iter()
            .map(|(phone_hash, envelope)| StatusRow { phone_hash, envelope })
            .collect(),
    ))
}

async fn get_export(State(state): State<Arc<AppState>>, Path(date): Path<String>) -> ApiResult<Response> {
    let date = NaiveDate::parse_from_str(&date, "%Y-%m-%d")
        .map_err(|_| ApiError::bad_request(format!("bad date {date}, expected YYYY-MM-DD")))?;
    let store = state.store.clone();
    let bytes = blocking(move || {
        let bundle = store.build_daily_export(date)?;
        std::fs::read(&bundle.path).map_err(|source| StorageError::Io {
            path: bundle.path.clone(),
            source,
        })
    })
    .await?;
    let disposition = format!("attachment; filename=\"{date}.zip\"");
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip".to_owned()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}

/// A server running on a background task.
pub struct RunningServer {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn state(&self) -> &Arc<AppState> {
        &self.state
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        (&mut self.task).await.expect("server task panicked")
    }
}

/// Binds and serves in the background until [`RunningServer::shutdown`].
pub async fn start(opts: ServerOptions) -> Result<RunningServer, ServerError> {
    let state = AppState::open(&opts)?;
    let addr = SocketAddr::new(opts.bind, opts.port);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::Bind { addr, source })?;
    let addr = listener.local_addr().map_err(|source| ServerError::Bind { addr, source })?;
    let (tx, rx) = oneshot::channel();
    let app = router(state.clone());
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "collection server listening");
    Ok(RunningServer {
        addr,
        state,
        shutdown: Some(tx),
        task,
    })
}
