//! Offline-first client SDK: the phone side of the protocol.
//!
//! Everything lives under one directory:
//!
//! ```text
//! client_root/identity             hidden phone hash
//! client_root/status.json          local_config_status_file
//! client_root/queue/journal.log    pending samples
//! client_root/queue/rejected.jsonl samples the server refused for good
//! client_root/cached_config.json   last config fetched from the network
//! ```
//!
//! Recording never waits on the network: samples go into the durable queue
//! and [`Client::flush_queue`] drains it whenever the server is reachable.

pub mod queue;
pub mod transport;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::protocol::wire::{AudioPayload, EngineResponse, SampleUpload};
use crate::protocol::{parse_runtime_config, should_upload_status, LocalConfigStatus, PhoneHash, RuntimeConfig};
use crate::storage::write_atomic;
pub use queue::{DurableQueue, QueuedSample};
pub use transport::{HttpTransport, Transport, TransportError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot persist {path}: {source}")]
    Persistence {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("sample {0} is already queued")]
    DuplicateSample(Uuid),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("corrupt client file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

impl From<crate::storage::StorageError> for ClientError {
    fn from(e: crate::storage::StorageError) -> Self {
        match e {
            crate::storage::StorageError::Io { path, source } => Self::Persistence { path, source },
            other => Self::Persistence {
                path: PathBuf::new(),
                source: io::Error::other(other.to_string()),
            },
        }
    }
}

/// Exponential backoff with jitter: the n-th consecutive failure waits a
/// uniform draw from `[d/2, d]` where `d = min(cap, base * 2^(n-1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            cap: Duration::from_secs(60),
        }
    }
}

impl Backoff {
    pub fn ceiling(&self, failures: u32) -> Duration {
        if failures == 0 {
            return Duration::ZERO;
        }
        let factor = 1u32.checked_shl(failures - 1).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.cap)
    }

    pub fn delay<R: Rng + ?Sized>(&self, failures: u32, rng: &mut R) -> Duration {
        let ceiling = self.ceiling(failures);
        if ceiling.is_zero() {
            return ceiling;
        }
        let half = ceiling / 2;
        half + Duration::from_nanos(rng.gen_range(0..=(ceiling - half).as_nanos() as u64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigProvenance {
    Network,
    Cache,
    Bundled,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleOutcome {
    Delivered { sample_id: Uuid, duplicate: bool },
    Rejected { sample_id: Uuid, reason: String },
    Failed { sample_id: Uuid, error: TransportError },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlushReport {
    pub delivered: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub remaining: usize,
    /// The flush did not try the network because the backoff window is open.
    pub deferred: bool,
    pub outcomes: Vec<SampleOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StatusUpload {
    Sent,
    Skipped,
    Failed(TransportError),
}

#[derive(Serialize, Deserialize)]
struct CachedConfig {
    number: u32,
    fetched_at: DateTime<Utc>,
    body: String,
}

/// Persistent client state.
pub struct ClientStore {
    root: PathBuf,
    phone_hash: Option<PhoneHash>,
    status: LocalConfigStatus,
    queue: DurableQueue,
}

fn persist_err(path: &Path) -> impl FnOnce(io::Error) -> ClientError + '_ {
    move |source| ClientError::Persistence {
        path: path.to_owned(),
        source,
    }
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>, ClientError> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(persist_err(path)(e)),
    }
}

impl ClientStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(persist_err(&root))?;

        let id_path = root.join("identity");
        let phone_hash = match read_optional(&id_path)? {
            Some(bytes) => {
                let text = String::from_utf8_lossy(&bytes);
                Some(text.trim().parse().map_err(|e: crate::protocol::PhoneHashError| {
                    ClientError::Corrupt {
                        path: id_path.clone(),
                        message: e.to_string(),
                    }
                })?)
            }
            None => None,
        };

        let status_path = root.join("status.json");
        let status = match read_optional(&status_path)? {
            Some(bytes) => serde_json::from_slice(&bytes).map_err(|e| ClientError::Corrupt {
                path: status_path.clone(),
                message: e.to_string(),
            })?,
            None => LocalConfigStatus::default(),
        };

        let queue = DurableQueue::open(root.join("queue"))?;
        Ok(Self {
            root,
            phone_hash,
            status,
            queue,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Returns the device identity, creating it on first use.
    pub fn ensure_phone_hash<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PhoneHash, ClientError> {
        if let Some(h) = self.phone_hash {
            return Ok(h);
        }
        let hash = PhoneHash::generate(rng);
        write_atomic(&self.root.join("identity"), format!("{hash}\n").as_bytes())?;
        self.phone_hash = Some(hash);
        Ok(hash)
    }

    pub fn phone_hash(&self) -> Option<PhoneHash> {
        self.phone_hash
    }

    pub fn status(&self) -> &LocalConfigStatus {
        &self.status
    }

    /// Replaces the status document and persists it.
    pub fn set_status(&mut self, status: LocalConfigStatus) -> Result<(), ClientError> {
        let bytes = serde_json::to_vec_pretty(&status).expect("status serializes");
        write_atomic(&self.root.join("status.json"), &bytes)?;
        self.status = status;
        Ok(())
    }

    /// Edits the status in place and persists it.
    pub fn update_status(&mut self, f: impl FnOnce(&mut LocalConfigStatus)) -> Result<(), ClientError> {
        let mut next = self.status.clone();
        f(&mut next);
        self.set_status(next)
    }

    pub fn queue(&self) -> &DurableQueue {
        &self.queue
    }

    fn cache_path(&self) -> PathBuf {
        self.root.join("cached_config.json")
    }

    pub fn cached_config(&self, number: u32) -> Option<(RuntimeConfig, DateTime<Utc>)> {
        let bytes = read_optional(&self.cache_path()).ok()??;
        let cached: CachedConfig = serde_json::from_slice(&bytes).ok()?;
        if cached.number != number {
            return None;
        }
        let config = parse_runtime_config(cached.body.as_bytes(), number).ok()?;
        Some((config, cached.fetched_at))
    }

    fn cache_config(&self, number: u32, body: &[u8]) -> Result<(), ClientError> {
        let cached = CachedConfig {
            number,
            fetched_at: Utc::now(),
            body: String::from_utf8_lossy(body).into_owned(),
        };
        write_atomic(&self.cache_path(), &serde_json::to_vec(&cached).expect("cache serializes"))?;
        Ok(())
    }

    fn record_rejected(&self, sample: &QueuedSample, reason: &str) -> Result<(), ClientError> {
        #[derive(Serialize)]
        struct Rejected<'a> {
            upload: &'a SampleUpload,
            reason: &'a str,
        }
        let path = self.root.join("queue").join("rejected.jsonl");
        let mut line = serde_json::to_vec(&Rejected {
            upload: &sample.upload,
            reason,
        })
        .expect("rejection serializes");
        line.push(b'\n');
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(persist_err(&path))?;
        f.write_all(&line).map_err(persist_err(&path))
    }
}

pub struct Client {
    store: ClientStore,
    transport: Arc<dyn Transport>,
    backoff: Backoff,
    failures: u32,
    next_attempt_at: Option<DateTime<Utc>>,
    rng: ChaCha8Rng,
}

impl Client {
    pub fn new(store: ClientStore, transport: Arc<dyn Transport>, seed: u64) -> Self {
        Self {
            store,
            transport,
            backoff: Backoff::default(),
            failures: 0,
            next_attempt_at: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn store(&self) -> &ClientStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ClientStore {
        &mut self.store
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    pub fn ensure_phone_hash(&mut self) -> Result<PhoneHash, ClientError> {
        self.store.ensure_phone_hash(&mut self.rng)
    }

    /// When the next flush may hit the network, if a backoff is running.
    pub fn next_attempt_at(&self) -> Option<DateTime<Utc>> {
        self.next_attempt_at
    }

    pub fn queue_len(&self) -> usize {
        self.store.queue.len()
    }

    /// Network first; on failure or timeout the cached copy of the same
    /// config, and failing that the bundled free-recording default.
    pub async fn fetch_config_with_fallback(
        &mut self,
        number: u32,
        timeout: Duration,
    ) -> (RuntimeConfig, ConfigProvenance) {
        let fetched = tokio::time::timeout(timeout, self.transport.fetch_config(number)).await;
        if let Ok(Ok(body)) = fetched {
            match parse_runtime_config(&body, number) {
                Ok(config) => {
                    if let Err(e) = self.store.cache_config(number, &body) {
                        tracing::warn!("could not cache config {number}: {e}");
                    }
                    return (config, ConfigProvenance::Network);
                }
                Err(e) => tracing::warn!("server sent an invalid config {number}: {e}"),
            }
        }
        match self.store.cached_config(number) {
            Some((config, _)) => (config, ConfigProvenance::Cache),
            None => (RuntimeConfig::free_recording(number), ConfigProvenance::Bundled),
        }
    }

    pub fn enqueue_sample(&mut self, upload: SampleUpload, audio: Option<AudioPayload>) -> Result<(), ClientError> {
        upload
            .validate(audio.as_ref())
            .map_err(ClientError::InvalidSample)?;
        self.store.queue.enqueue(QueuedSample { upload, audio })
    }

    fn note_failure(&mut self, now: DateTime<Utc>) {
        self.failures = self.failures.saturating_add(1);
        let delay = self.backoff.delay(self.failures, &mut self.rng);
        self.next_attempt_at = Some(now + chrono::Duration::from_std(delay).unwrap_or_default());
    }

    fn note_success(&mut self) {
        self.failures = 0;
        self.next_attempt_at = None;
    }

    /// Sends queued samples in order until the queue is empty or a send
    /// fails. A failed sample stays at the head of the queue.
    pub async fn flush_queue(&mut self, now: DateTime<Utc>) -> FlushReport {
        let mut report = FlushReport::default();
        if self.next_attempt_at.is_some_and(|t| now < t) {
            report.deferred = true;
            report.remaining = self.store.queue.len();
            return report;
        }
        while let Some(head) = self.store.queue.front().cloned() {
            let id = head.upload.sample_id;
            match self.transport.send_sample(&head.upload, head.audio.as_ref()).await {
                Ok(receipt) => {
                    if let Err(e) = self.store.queue.ack(&id) {
                        tracing::warn!("could not record delivery of {id}: {e}");
                        self.note_failure(now);
                        break;
                    }
                    self.note_success();
                    report.delivered += 1;
                    if receipt.duplicate {
                        report.duplicates += 1;
                    }
                    report.outcomes.push(SampleOutcome::Delivered {
                        sample_id: id,
                        duplicate: receipt.duplicate,
                    });
                }
                Err(e) if e.is_permanent() => {
                    let reason = e.to_string();
                    tracing::warn!("server rejected sample {id}: {reason}");
                    if let Err(e) = self
                        .store
                        .record_rejected(&head, &reason)
                        .and_then(|_| self.store.queue.ack(&id))
                    {
                        tracing::warn!("could not drop rejected sample {id}: {e}");
                        self.note_failure(now);
                        break;
                    }
                    report.rejected += 1;
                    report.outcomes.push(SampleOutcome::Rejected { sample_id: id, reason });
                }
                Err(error) => {
                    self.note_failure(now);
                    report.outcomes.push(SampleOutcome::Failed { sample_id: id, error });
                    break;
                }
            }
        }
        report.remaining = self.store.queue.len();
        report
    }

    pub async fn upload_status_if_due(&mut self, now: DateTime<Utc>) -> StatusUpload {
        if !should_upload_status(self.store.status(), now) {
            return StatusUpload::Skipped;
        }
        let Some(hash) = self.store.phone_hash() else {
            return StatusUpload::Skipped;
        };
        let mut doc = self.store.status().clone();
        doc.mark_uploaded(now);
        match self.transport.send_status(&hash, &doc).await {
            Ok(()) => {
                if let Err(e) = self.store.update_status(|s| s.mark_uploaded(now)) {
                    tracing::warn!("status sent but not saved locally: {e}");
                }
                StatusUpload::Sent
            }
            Err(e) => StatusUpload::Failed(e),
        }
    }

    /// Any engine feedback waiting for this phone. Transport failures read as
    /// "nothing yet": the caller keeps recording.
    pub async fn poll_response(&self) -> Option<EngineResponse> {
        let hash = self.store.phone_hash()?;
        match self.transport.fetch_response(&hash).await {
            Ok(r) => r,
            Err(e) => {
                tracing::debug!("response poll failed: {e}");
                None
            }
        }
    }
}
