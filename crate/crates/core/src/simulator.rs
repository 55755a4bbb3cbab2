//! Multi-phone scenario runner.
//!
//! Each simulated phone is a real [`Client`] with its own store, driven
//! through the prompt loop on a virtual clock. Connectivity is modeled at the
//! request boundary: a seeded on/off schedule per phone decides whether a
//! request reaches the server or fails with [`TransportError::Offline`].
//! After the loop a drain phase forces connectivity on until every queue is
//! empty (or the wall-clock cap hits), so the report describes eventual state.
//!
//! Every random choice comes from a ChaCha stream keyed by `(seed, phone,
//! purpose)`, so one seed fixes the schedules, phone hashes, sample ids and
//! audio bytes regardless of how the phones interleave.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use chrono::{DateTime, DurationRound, TimeDelta, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::client::{Client, ClientError, ClientStore, ConfigProvenance, StatusUpload, Transport, TransportError};
use crate::protocol::wire::{AudioPayload, EngineResponse, IngestReceipt, SampleUpload};
use crate::protocol::{
    expire_session, next_prompt, parse_runtime_config, register_recording, required_selection, select_list,
    session_expired, start_over, LocalConfigStatus, PhoneHash, PromptStep, RuntimeConfig, SelectionRequirement,
    SessionState,
};
use crate::storage::{census, sha256_hex};

/// Media type stamped on synthetic audio.
pub const SYNTHETIC_MEDIA_TYPE: &str = "audio/wav";
pub const MIN_AUDIO_BYTES: usize = 1024;
pub const MAX_AUDIO_BYTES: usize = 30 * 1024;

// Virtual seconds between two recordings on one phone.
const MIN_GAP_SECS: i64 = 10;
const MAX_GAP_SECS: i64 = 90;
// Mean length of one on+off connectivity cycle.
const CYCLE_SECS: f64 = 600.0;

const LANGUAGES: [&str; 3] = ["en", "es", "ca"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub phones: usize,
    pub samples_per_phone: usize,
    pub uptime_fraction: f64,
    pub seed: u64,
    pub config_number: u32,
    /// 0 defers to the config's `default_engine_number`.
    pub engine_number: u32,
    /// Probability that an acknowledgment is lost after the server stored the
    /// sample.
    pub ack_drop_rate: f64,
    /// Refetch the config before every n-th recording.
    pub config_refresh_every: Option<usize>,
    pub drain: bool,
    pub drain_cap: Duration,
}

impl ScenarioSpec {
    pub fn new(phones: usize, samples_per_phone: usize, uptime_fraction: f64, seed: u64) -> Self {
        Self {
            phones,
            samples_per_phone,
            uptime_fraction,
            seed,
            config_number: 0,
            engine_number: 0,
            ack_drop_rate: 0.0,
            config_refresh_every: None,
            drain: true,
            drain_cap: Duration::from_secs(120),
        }
    }

    pub fn expected_samples(&self) -> usize {
        self.phones * self.samples_per_phone
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub delivered: usize,
    /// Re-sends the server recognized and did not store again.
    pub duplicates_detected_on_server: usize,
    pub queue_residue: usize,
    /// Delivered samples per phone hash.
    pub per_phone_counts: BTreeMap<String, usize>,
    /// Seconds of real time the run took.
    pub wall_time: f64,
    /// Virtual time at which the run began and ended. Every sample timestamp
    /// falls inside.
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub rejected: usize,
    /// Requests that reached the server (connectivity on) and failed for a
    /// reason other than injected ack loss.
    pub failed_requests: usize,
    pub acks_dropped: usize,
    pub config_fetches: usize,
    /// sha256 of every config body the server returned.
    pub config_digests: BTreeSet<String>,
    pub status_uploads: usize,
    pub responses_seen: usize,
    pub drain_timed_out: bool,
}

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("scenario setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
}

// Purposes, each its own ChaCha stream per phone.
const STREAM_SCHEDULE: u64 = 0;
const STREAM_IDS: u64 = 1;
const STREAM_AUDIO: u64 = 2;
const STREAM_CLIENT: u64 = 3;
const STREAM_ACKS: u64 = 4;
const STREAM_CHOICES: u64 = 5;

fn stream(seed: u64, phone: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phone as u64 * 8 + purpose);
    rng
}

/// On-windows, in virtual milliseconds since the run start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivitySchedule {
    on: Vec<(i64, i64)>,
    horizon: i64,
}

impl ConnectivitySchedule {
    /// Alternating on/off windows whose expected on-share is `uptime`.
    /// Beyond the horizon the phone is offline.
    pub fn generate<R: Rng + ?Sized>(rng: &mut R, uptime: f64, horizon_ms: i64) -> Self {
        let uptime = uptime.clamp(0.0, 1.0);
        if uptime >= 1.0 {
            return Self {
                on: vec![(0, horizon_ms)],
                horizon: horizon_ms,
            };
        }
        let mut on = Vec::new();
        if uptime > 0.0 {
            let mean_on = uptime * CYCLE_SECS * 1000.0;
            let mean_off = (1.0 - uptime) * CYCLE_SECS * 1000.0;
            let mut t = 0i64;
            let mut online = rng.gen_bool(uptime);
            while t < horizon_ms {
                let mean = if online { mean_on } else { mean_off };
                let len = (rng.gen_range(0.0..2.0) * mean).max(1.0) as i64;
                if online {
                    on.push((t, (t + len).min(horizon_ms)));
                }
                t += len;
                online = !online;
            }
        }
        Self { on, horizon: horizon_ms }
    }

    pub fn is_online(&self, at_ms: i64) -> bool {
        let i = self.on.partition_point(|&(start, _)| start <= at_ms);
        i > 0 && at_ms < self.on[i - 1].1
    }

    pub fn on_fraction(&self) -> f64 {
        if self.horizon == 0 {
            return 0.0;
        }
        self.on.iter().map(|(a, b)| b - a).sum::<i64>() as f64 / self.horizon as f64
    }

    pub fn windows(&self) -> &[(i64, i64)] {
        &self.on
    }
}

fn horizon_ms(spec: &ScenarioSpec) -> i64 {
    (spec.samples_per_phone as i64 + 1) * MAX_GAP_SECS * 1000
}

pub fn phone_schedule(spec: &ScenarioSpec, phone: usize) -> ConnectivitySchedule {
    ConnectivitySchedule::generate(&mut stream(spec.seed, phone, STREAM_SCHEDULE), spec.uptime_fraction, horizon_ms(spec))
}

/// The sample ids phone `phone` will generate, in order.
pub fn phone_sample_ids(spec: &ScenarioSpec, phone: usize) -> Vec<Uuid> {
    let mut rng = stream(spec.seed, phone, STREAM_IDS);
    (0..spec.samples_per_phone).map(|_| next_id(&mut rng)).collect()
}

fn next_id(rng: &mut ChaCha8Rng) -> Uuid {
    uuid::Builder::from_random_bytes(rng.gen()).into_uuid()
}

fn synthetic_audio(rng: &mut ChaCha8Rng) -> AudioPayload {
    let len = rng.gen_range(MIN_AUDIO_BYTES..=MAX_AUDIO_BYTES);
    let mut bytes = vec![0u8; len];
    rng.fill(bytes.as_mut_slice());
    AudioPayload::new(SYNTHETIC_MEDIA_TYPE, bytes)
}

#[derive(Default)]
struct Stats {
    failed_requests: AtomicU64,
    acks_dropped: AtomicU64,
    config_fetches: AtomicU64,
    config_digests: Mutex<BTreeSet<String>>,
}

impl Stats {
    fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }
}

/// Loses the acknowledgment of a delivered sample with probability `rate`.
/// The server has stored the sample; the client only sees an error.
pub struct AckDropTransport<T> {
    inner: T,
    rate: f64,
    rng: Mutex<ChaCha8Rng>,
}

impl<T: Transport> AckDropTransport<T> {
    pub fn new(inner: T, rate: f64, seed: u64) -> Self {
        Self {
            inner,
            rate,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

#[async_trait]
impl<T: Transport> Transport for AckDropTransport<T> {
    async fn fetch_config(&self, number: u32) -> Result<Vec<u8>, TransportError> {
        self.inner.fetch_config(number).await
    }

    async fn send_sample(
        &self,
        upload: &SampleUpload,
        audio: Option<&AudioPayload>,
    ) -> Result<IngestReceipt, TransportError> {
        let receipt = self.inner.send_sample(upload, audio).await?;
        let drop = self.rate > 0.0 && self.rng.lock().expect("ack rng poisoned").gen_bool(self.rate.min(1.0));
        if drop {
            return Err(TransportError::AckLost);
        }
        Ok(receipt)
    }

    async fn send_status(&self, hash: &PhoneHash, status: &LocalConfigStatus) -> Result<(), TransportError> {
        self.inner.send_status(hash, status).await
    }

    async fn fetch_response(&self, hash: &PhoneHash) -> Result<Option<EngineResponse>, TransportError> {
        self.inner.fetch_response(hash).await
    }
}

/// Gates a phone's requests on its connectivity schedule at the phone's
/// current virtual time, and tallies what reached the server.
struct ScheduledTransport {
    inner: Arc<dyn Transport>,
    schedule: ConnectivitySchedule,
    clock_ms: Arc<AtomicI64>,
    forced_on: Arc<AtomicBool>,
    stats: Arc<Stats>,
}

impl ScheduledTransport {
    fn online(&self) -> bool {
        self.forced_on.load(Ordering::SeqCst) || self.schedule.is_online(self.clock_ms.load(Ordering::SeqCst))
    }

    fn gate(&self) -> Result<(), TransportError> {
        if self.online() {
            Ok(())
        } else {
            Err(TransportError::Offline)
        }
    }

    fn tally<T>(&self, result: Result<T, TransportError>) -> Result<T, TransportError> {
        match &result {
            Err(TransportError::AckLost) => Stats::bump(&self.stats.acks_dropped),
            Err(e) => {
                tracing::warn!("request failed while online: {e}");
                Stats::bump(&self.stats.failed_requests);
            }
            Ok(_) => {}
        }
        result
    }
}

#[async_trait]
impl Transport for ScheduledTransport {
    async fn fetch_config(&self, number: u32) -> Result<Vec<u8>, TransportError> {
        self.gate()?;
        Stats::bump(&self.stats.config_fetches);
        let body = self.tally(self.inner.fetch_config(number).await)?;
        self.stats
            .config_digests
            .lock()
            .expect("digest set poisoned")
            .insert(sha256_hex(&body));
        Ok(body)
    }

    async fn send_sample(
        &self,
        upload: &SampleUpload,
        audio: Option<&AudioPayload>,
    ) -> Result<IngestReceipt, TransportError> {
        self.gate()?;
        self.tally(self.inner.send_sample(upload, audio).await)
    }

    async fn send_status(&self, hash: &PhoneHash, status: &LocalConfigStatus) -> Result<(), TransportError> {
        self.gate()?;
        self.tally(self.inner.send_status(hash, status).await)
    }

    async fn fetch_response(&self, hash: &PhoneHash) -> Result<Option<EngineResponse>, TransportError> {
        self.gate()?;
        self.tally(self.inner.fetch_response(hash).await)
    }
}

#[derive(Default)]
struct PhoneOutcome {
    hash: String,
    delivered: usize,
    duplicates: usize,
    rejected: usize,
    residue: usize,
    status_uploads: usize,
    responses_seen: usize,
    config_failures: usize,
    end_ms: i64,
    drain_timed_out: bool,
}

struct PhoneRun {
    index: usize,
    spec: Arc<ScenarioSpec>,
    client: Client,
    clock_ms: Arc<AtomicI64>,
    forced_on: Arc<AtomicBool>,
    start: DateTime<Utc>,
    initial_config: RuntimeConfig,
    schedule: ConnectivitySchedule,
    drain_deadline: Instant,
}

impl PhoneRun {
    fn now(&self) -> DateTime<Utc> {
        self.start + TimeDelta::milliseconds(self.clock_ms.load(Ordering::SeqCst))
    }

    fn advance(&self, ms: i64) {
        self.clock_ms.fetch_add(ms, Ordering::SeqCst);
    }

    fn absorb_flush(&self, out: &mut PhoneOutcome, report: &crate::client::FlushReport) {
        out.delivered += report.delivered;
        out.duplicates += report.duplicates;
        out.rejected += report.rejected;
    }

    async fn after_flush(&mut self, out: &mut PhoneOutcome) {
        let now = self.now();
        if self.client.upload_status_if_due(now).await == StatusUpload::Sent {
            out.status_uploads += 1;
        }
        if self.client.poll_response().await.is_some() {
            out.responses_seen += 1;
        }
    }

    async fn run(mut self) -> Result<PhoneOutcome, SimulatorError> {
        let spec = self.spec.clone();
        let hash = self.client.ensure_phone_hash()?;
        let mut out = PhoneOutcome {
            hash: hash.to_string(),
            ..Default::default()
        };
        let mut ids = stream(spec.seed, self.index, STREAM_IDS);
        let mut audio_rng = stream(spec.seed, self.index, STREAM_AUDIO);
        let mut choices = stream(spec.seed, self.index, STREAM_CHOICES);

        let language = LANGUAGES[self.index % LANGUAGES.len()];
        let engine_number = spec.engine_number;
        let config_number = spec.config_number;
        self.client.store_mut().update_status(|s| {
            s.set_language(language);
            s.engine_number = engine_number;
            s.run_time_file_config_number = config_number;
        })?;

        let mut config = self.initial_config.clone();
        let mut session = SessionState::new(hash, self.now());

        for k in 0..spec.samples_per_phone {
            self.advance(choices.gen_range(MIN_GAP_SECS..=MAX_GAP_SECS) * 1000);
            let now = self.now();

            if let Some(every) = spec.config_refresh_every.filter(|&e| e > 0) {
                if k % every == 0 {
                    let (fresh, provenance) = self
                        .client
                        .fetch_config_with_fallback(spec.config_number, Duration::from_secs(10))
                        .await;
                    if provenance == ConfigProvenance::Network {
                        config = fresh;
                    } else if self.schedule.is_online(self.clock_ms.load(Ordering::SeqCst)) {
                        // reachable server, yet no usable document
                        out.config_failures += 1;
                    }
                }
            }

            let status = self.client.store().status().clone();
            if session_expired(&session, &status, now) {
                session = expire_session(&session, &config);
            }
            if let SelectionRequirement::Choose { list_count, .. } = required_selection(&config) {
                let stale = session.selected_list_index.is_none_or(|i| i >= list_count);
                if stale {
                    session = select_list(&session, &config, choices.gen_range(0..list_count))
                        .expect("index drawn within range");
                }
            }

            let mut step = next_prompt(&session, &config).expect("session has a list");
            if matches!(step, PromptStep::Terminal { .. }) {
                session = start_over(&session);
                step = next_prompt(&session, &config).expect("session has a list");
            }

            let sample_id = next_id(&mut ids);
            let (prompt_text, recorded_seconds, text_input, audio) = match &step {
                PromptStep::Record { text, seconds } => {
                    let secs = choices.gen_range(1..=(*seconds).max(1)) as f64;
                    (Some(text.clone()), Some(secs), None, Some(synthetic_audio(&mut audio_rng)))
                }
                PromptStep::Free => {
                    let secs = choices.gen_range(1..=config.max_recording_time.max(1)) as f64;
                    (None, Some(secs), None, Some(synthetic_audio(&mut audio_rng)))
                }
                PromptStep::TextOnly { text } | PromptStep::Terminal { text } => {
                    (Some(text.clone()), None, Some(format!("synthetic answer {k}")), None)
                }
            };
            let guided = config.mode == crate::protocol::RecordingMode::Guided;
            let list_index = guided.then(|| session.selected_list_index.unwrap_or(0) as u32);
            let prompt_index = guided.then(|| {
                let len = config.list(list_index.unwrap_or(0) as usize).map_or(1, |l| l.len());
                (session.cursor % len) as u32
            });
            let upload = SampleUpload {
                sample_id,
                phone_hash: hash,
                timestamp: now,
                config_number: config.config_number,
                list_index,
                prompt_index,
                prompt_text,
                recorded_seconds,
                text_input,
                language: language.to_owned(),
                engine_number: if engine_number != 0 {
                    engine_number
                } else {
                    config.default_engine_number
                },
            };
            self.client.enqueue_sample(upload, audio)?;

            let (next_session, next_status) = register_recording(&session, &status, &config, now);
            session = next_session;
            self.client.store_mut().set_status(next_status)?;

            let report = self.client.flush_queue(now).await;
            self.absorb_flush(&mut out, &report);
            self.after_flush(&mut out).await;
        }

        if spec.drain {
            self.forced_on.store(true, Ordering::SeqCst);
            while self.client.queue_len() > 0 {
                if Instant::now() >= self.drain_deadline {
                    out.drain_timed_out = true;
                    break;
                }
                match self.client.next_attempt_at() {
                    Some(t) if t > self.now() => {
                        let wait = (t - self.now()).num_milliseconds().max(1);
                        self.advance(wait);
                    }
                    _ => self.advance(1000),
                }
                let report = self.client.flush_queue(self.now()).await;
                self.absorb_flush(&mut out, &report);
                if report.delivered > 0 {
                    self.after_flush(&mut out).await;
                }
            }
            let now = self.now();
            let _ = self.client.upload_status_if_due(now).await;
        }

        out.residue = self.client.queue_len();
        out.end_ms = self.clock_ms.load(Ordering::SeqCst);
        Ok(out)
    }
}

/// Runs `spec` against the server at `server_url`. Phone stores live under
/// `client_root/phone_<i>`; pass a fresh directory.
pub async fn run_scenario(
    spec: &ScenarioSpec,
    server_url: &str,
    client_root: &Path,
) -> Result<ScenarioReport, SimulatorError> {
    let base: Arc<dyn Transport> = Arc::new(crate::client::HttpTransport::new(server_url));
    run_scenario_with(spec, base, client_root).await
}

/// Like [`run_scenario`] over an arbitrary transport.
pub async fn run_scenario_with(
    spec: &ScenarioSpec,
    base: Arc<dyn Transport>,
    client_root: &Path,
) -> Result<ScenarioReport, SimulatorError> {
    if !(0.0..=1.0).contains(&spec.uptime_fraction) {
        return Err(SimulatorError::InvalidSpec(format!(
            "uptime {} is outside 0..1",
            spec.uptime_fraction
        )));
    }
    if !(0.0..1.0).contains(&spec.ack_drop_rate) {
        return Err(SimulatorError::InvalidSpec(format!(
            "ack drop rate {} must be in [0, 1)",
            spec.ack_drop_rate
        )));
    }
    let wall = Instant::now();
    let start = Utc::now()
        .duration_trunc(TimeDelta::milliseconds(1))
        .expect("millisecond truncation");

    let body = base
        .fetch_config(spec.config_number)
        .await
        .map_err(|e| SimulatorError::Setup(format!("config {} unavailable: {e}", spec.config_number)))?;
    let initial_config = parse_runtime_config(&body, spec.config_number)
        .map_err(|e| SimulatorError::Setup(format!("config {} invalid: {e}", spec.config_number)))?;

    let spec_arc = Arc::new(spec.clone());
    let stats = Arc::new(Stats::default());
    stats
        .config_digests
        .lock()
        .expect("digest set poisoned")
        .insert(sha256_hex(&body));
    let drain_deadline = Instant::now() + spec.drain_cap;

    let mut tasks = Vec::with_capacity(spec.phones);
    for index in 0..spec.phones {
        let clock_ms = Arc::new(AtomicI64::new(0));
        let forced_on = Arc::new(AtomicBool::new(false));
        let acks: Arc<dyn Transport> = Arc::new(AckDropTransport::new(
            base.clone(),
            spec.ack_drop_rate,
            stream(spec.seed, index, STREAM_ACKS).gen(),
        ));
        let schedule = phone_schedule(spec, index);
        let transport = Arc::new(ScheduledTransport {
            inner: acks,
            schedule: schedule.clone(),
            clock_ms: clock_ms.clone(),
            forced_on: forced_on.clone(),
            stats: stats.clone(),
        });
        let store = ClientStore::open(phone_root(client_root, index))?;
        let client = Client::new(store, transport, stream(spec.seed, index, STREAM_CLIENT).gen());
        let run = PhoneRun {
            index,
            spec: spec_arc.clone(),
            client,
            clock_ms,
            forced_on,
            start,
            initial_config: initial_config.clone(),
            schedule,
            drain_deadline,
        };
        tasks.push(tokio::spawn(run.run()));
    }

    let mut report = ScenarioReport {
        window_start: start,
        window_end: start,
        ..Default::default()
    };
    for task in tasks {
        let out = task.await.expect("phone task panicked")?;
        report.delivered += out.delivered;
        report.duplicates_detected_on_server += out.duplicates;
        report.rejected += out.rejected;
        report.queue_residue += out.residue;
        report.status_uploads += out.status_uploads;
        report.responses_seen += out.responses_seen;
        report.failed_requests += out.config_failures;
        report.drain_timed_out |= out.drain_timed_out;
        report.window_end = report.window_end.max(start + TimeDelta::milliseconds(out.end_ms));
        *report.per_phone_counts.entry(out.hash).or_default() += out.delivered;
    }
    report.failed_requests += stats.failed_requests.load(Ordering::Relaxed) as usize;
    report.acks_dropped = stats.acks_dropped.load(Ordering::Relaxed) as usize;
    report.config_fetches = stats.config_fetches.load(Ordering::Relaxed) as usize;
    report.config_digests = std::mem::take(&mut *stats.config_digests.lock().expect("digest set poisoned"));
    report.wall_time = wall.elapsed().as_secs_f64();
    Ok(report)
}

pub fn phone_root(client_root: &Path, index: usize) -> PathBuf {
    client_root.join(format!("phone_{index}"))
}

/// Checks a finished run. With `data_root` the server's sample tree is
/// counted as well; without it only the report itself is checked.
pub fn verify_report(report: &ScenarioReport, spec: &ScenarioSpec, data_root: Option<&Path>) -> Vec<String> {
    let mut violations = Vec::new();
    let expected = spec.expected_samples();
    if report.delivered != expected {
        violations.push(format!(
            "count mismatch: delivered {} of {expected}",
            report.delivered
        ));
    }
    if report.queue_residue != 0 {
        violations.push(format!("queue residue: {} samples never delivered", report.queue_residue));
    }
    if report.per_phone_counts.len() != spec.phones {
        violations.push(format!(
            "count mismatch: {} phone hashes reported for {} phones",
            report.per_phone_counts.len(),
            spec.phones
        ));
    }
    for (hash, n) in &report.per_phone_counts {
        if *n != spec.samples_per_phone {
            violations.push(format!(
                "count mismatch: phone {hash} delivered {n} of {}",
                spec.samples_per_phone
            ));
        }
    }

    let Some(root) = data_root else {
        return violations;
    };
    let stored = match census(root) {
        Ok(s) => s,
        Err(e) => {
            violations.push(format!("server data unreadable: {e}"));
            return violations;
        }
    };
    let mut files_per_id: HashMap<Uuid, usize> = HashMap::new();
    let mut stored_per_phone: BTreeMap<&str, usize> = BTreeMap::new();
    for (dir, sample) in &stored {
        let owner = sample.meta.upload.phone_hash.to_string();
        let ours = report.per_phone_counts.contains_key(dir.as_str()) || report.per_phone_counts.contains_key(&owner);
        if !ours {
            continue;
        }
        if owner != *dir {
            violations.push(format!(
                "isolation breach: sample {} of phone {owner} stored under {dir}",
                sample.meta.upload.sample_id
            ));
        }
        *files_per_id.entry(sample.meta.upload.sample_id).or_default() += 1;
        *stored_per_phone.entry(dir.as_str()).or_default() += 1;
        let ts = sample.meta.upload.timestamp;
        if ts < report.window_start || ts > report.window_end {
            violations.push(format!(
                "timestamp outside run window: sample {} at {ts}",
                sample.meta.upload.sample_id
            ));
        }
    }
    let files: usize = files_per_id.values().sum();
    if files_per_id.len() != expected || files != expected {
        violations.push(format!(
            "count mismatch: server holds {files} sample files for {} distinct ids, expected {expected}",
            files_per_id.len()
        ));
    }
    for (hash, n) in &report.per_phone_counts {
        let on_disk = stored_per_phone.get(hash.as_str()).copied().unwrap_or(0);
        if on_disk != *n {
            violations.push(format!(
                "count mismatch: phone {hash} has {on_disk} samples on the server, {n} delivered"
            ));
        }
    }
    violations
}
