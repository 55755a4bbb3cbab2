//! `Engine_number` registry and per-phone dispatch.
//!
//! Engine 0 never produces anything. The echo engine answers with a
//! deterministic receipt text. A remote engine receives the sample as a
//! multipart POST with the same `metadata` and `audio` parts as `/samples`
//! and must answer with a plain-text body, which becomes the response text.
//!
//! Dispatch runs after the ingest acknowledgment, one job at a time per
//! phone, so responses land in sample order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::Utc;
use thiserror::Error;
use tokio::sync::{mpsc, Notify};

use crate::protocol::wire::{AudioPayload, EngineResponse, SampleUpload};
use crate::protocol::PhoneHash;
use crate::storage::SampleStore;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineKind {
    None,
    Echo,
    Remote { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineSpec {
    pub number: u32,
    pub kind: EngineKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("engine number 0 is reserved for no processing")]
    ReservedNumber,
    #[error("engine spec {0:?} is not of the form <number>=<none|echo|remote:url>")]
    BadSpec(String),
    #[error("remote engine unreachable: {0}")]
    RemoteUnreachable(String),
}

impl fmt::Display for EngineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            EngineKind::None => write!(f, "{}=none", self.number),
            EngineKind::Echo => write!(f, "{}=echo", self.number),
            EngineKind::Remote { endpoint } => write!(f, "{}=remote:{endpoint}", self.number),
        }
    }
}

impl FromStr for EngineSpec {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EngineError::BadSpec(s.to_owned());
        let (number, kind) = s.split_once('=').ok_or_else(bad)?;
        let number: u32 = number.trim().parse().map_err(|_| bad())?;
        let kind = match kind.trim().split_once(':') {
            None if kind.trim() == "none" => EngineKind::None,
            None if kind.trim() == "echo" => EngineKind::Echo,
            Some(("remote", url)) if !url.is_empty() => EngineKind::Remote {
                endpoint: url.to_owned(),
            },
            _ => return Err(bad()),
        };
        Ok(Self { number, kind })
    }
}

pub fn echo_text(sample: &SampleUpload, phone_sample_count: u64) -> String {
    format!(
        "received sample {} ({} total for this phone)",
        sample.sample_id, phone_sample_count
    )
}

#[derive(Debug, Default)]
pub struct EngineRegistry {
    engines: RwLock<BTreeMap<u32, EngineKind>>,
}

impl EngineRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, spec: EngineSpec) -> Result<(), EngineError> {
        if spec.number == 0 {
            return Err(EngineError::ReservedNumber);
        }
        self.engines
            .write()
            .expect("engine registry poisoned")
            .insert(spec.number, spec.kind);
        Ok(())
    }

    /// Unregistered numbers behave like engine 0.
    pub fn kind(&self, number: u32) -> EngineKind {
        if number == 0 {
            return EngineKind::None;
        }
        self.engines
            .read()
            .expect("engine registry poisoned")
            .get(&number)
            .cloned()
            .unwrap_or(EngineKind::None)
    }

    pub fn specs(&self) -> Vec<EngineSpec> {
        self.engines
            .read()
            .expect("engine registry poisoned")
            .iter()
            .map(|(n, k)| EngineSpec {
                number: *n,
                kind: k.clone(),
            })
            .collect()
    }
}

/// Runs one engine on one sample.
pub async fn dispatch(
    kind: &EngineKind,
    http: &reqwest::Client,
    sample: &SampleUpload,
    audio: Option<&AudioPayload>,
    phone_sample_count: u64,
) -> Result<Option<EngineResponse>, EngineError> {
    let text = match kind {
        EngineKind::None => return Ok(None),
        EngineKind::Echo => echo_text(sample, phone_sample_count),
        EngineKind::Remote { endpoint } => call_remote(http, endpoint, sample, audio).await?,
    };
    Ok(Some(EngineResponse {
        phone_hash: sample.phone_hash,
        text: Some(text),
        audio: None,
        produced_at: Utc::now(),
    }))
}

async fn call_remote(
    http: &reqwest::Client,
    endpoint: &str,
    sample: &SampleUpload,
    audio: Option<&AudioPayload>,
) -> Result<String, EngineError> {
    let unreachable = |e: reqwest::Error| EngineError::RemoteUnreachable(e.to_string());
    let form = crate::client::transport::sample_form(sample, audio).map_err(unreachable)?;
    let resp = http
        .post(endpoint)
        .multipart(form)
        .timeout(Duration::from_secs(30))
        .send()
        .await
        .map_err(unreachable)?;
    let status = resp.status();
    if !status.is_success() {
        return Err(EngineError::RemoteUnreachable(format!("endpoint answered {status}")));
    }
    resp.text().await.map_err(unreachable)
}

pub struct DispatchJob {
    pub kind: EngineKind,
    pub sample: SampleUpload,
    pub audio: Option<AudioPayload>,
    pub phone_sample_count: u64,
}

struct Shared {
    store: Arc<SampleStore>,
    http: reqwest::Client,
    workers: Mutex<HashMap<PhoneHash, mpsc::UnboundedSender<DispatchJob>>>,
    pending: AtomicU64,
    drained: Notify,
}

/// Per-phone ordered dispatch queue feeding `store_response`.
#[derive(Clone)]
pub struct Dispatcher {
    shared: Arc<Shared>,
}

const WORKER_IDLE: Duration = Duration::from_secs(60);

impl Dispatcher {
    pub fn new(store: Arc<SampleStore>, http: reqwest::Client) -> Self {
        Self {
            shared: Arc::new(Shared {
                store,
                http,
                workers: Mutex::new(HashMap::new()),
                pending: AtomicU64::new(0),
                drained: Notify::new(),
            }),
        }
    }

    /// Queues a job behind earlier jobs for the same phone. Must be called
    /// from within a Tokio runtime.
    pub fn submit(&self, job: DispatchJob) {
        let hash = job.sample.phone_hash;
        self.shared.pending.fetch_add(1, Ordering::SeqCst);
        let mut workers = self.shared.workers.lock().expect("dispatch table poisoned");
        let job = match workers.get(&hash) {
            Some(tx) => match tx.send(job) {
                Ok(()) => return,
                Err(mpsc::error::SendError(job)) => job,
            },
            None => job,
        };
        let (tx, rx) = mpsc::unbounded_channel();
        tx.send(job).expect("fresh channel accepts a job");
        workers.insert(hash, tx);
        tokio::spawn(worker(self.shared.clone(), hash, rx));
    }

    pub fn pending(&self) -> u64 {
        self.shared.pending.load(Ordering::SeqCst)
    }

    /// Waits until every submitted job has finished.
    pub async fn wait_idle(&self) {
        loop {
            let notified = self.shared.drained.notified();
            if self.pending() == 0 {
                return;
            }
            notified.await;
        }
    }
}

async fn worker(shared: Arc<Shared>, hash: PhoneHash, mut rx: mpsc::UnboundedReceiver<DispatchJob>) {
    loop {
        let job = match tokio::time::timeout(WORKER_IDLE, rx.recv()).await {
            Ok(Some(job)) => job,
            Ok(None) => return,
            Err(_) => {
                let mut workers = shared.workers.lock().expect("dispatch table poisoned");
                // submit() sends under this lock, so an empty queue here stays empty
                if rx.is_empty() {
                    workers.remove(&hash);
                    return;
                }
                continue;
            }
        };
        run_job(&shared, job).await;
        if shared.pending.fetch_sub(1, Ordering::SeqCst) == 1 {
            shared.drained.notify_waiters();
        }
    }
}

async fn run_job(shared: &Shared, job: DispatchJob) {
    let result = dispatch(
        &job.kind,
        &shared.http,
        &job.sample,
        job.audio.as_ref(),
        job.phone_sample_count,
    )
    .await;
    let response = match result {
        Ok(Some(r)) => r,
        Ok(None) => return,
        Err(e) => {
            tracing::warn!(phone = %job.sample.phone_hash, sample = %job.sample.sample_id, "engine dispatch failed: {e}");
            return;
        }
    };
    let store = shared.store.clone();
    let stored = tokio::task::spawn_blocking(move || store.store_response(&response)).await;
    match stored {
        Ok(Ok(_)) => {}
        Ok(Err(e)) => tracing::warn!("storing engine response failed: {e}"),
        Err(e) => tracing::warn!("response writer panicked: {e}"),
    }
}
