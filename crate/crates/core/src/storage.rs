//! Filesystem layout for samples, status documents, engine responses,
//! installed configs and daily exports.
//!
//! ```text
//! data_root/
//!   samples/<hash>/<ts>_<sample_id>.<ext>        audio
//!   samples/<hash>/<ts>_<sample_id>.meta.json    metadata sidecar
//!   status/<hash>.json
//!   responses/<hash>/response.txt | response.<ext>
//!   exports/<YYYY-MM-DD>.zip
//!   index/seen_ids/<hash>/<sample_id>
//!   configs/app_runtime_config_file_<n>.json
//! ```
//!
//! `<ts>` is the sample timestamp in UTC as `YYYY-MM-DDTHH-MM-SS.mmmZ`, i.e.
//! ISO-8601 with the colons replaced by hyphens.
//!
//! Every file is written to a hidden temporary name, synced and renamed into
//! place. For a sample the audio is renamed first and the sidecar last, and
//! only sidecars make a sample visible, so readers never see half a pair.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

use crate::protocol::config::config_filename;
use crate::protocol::wire::{AudioPayload, EngineResponse, SampleUpload};
use crate::protocol::{LocalConfigStatus, PhoneHash};

const SIDECAR_SUFFIX: &str = ".meta.json";
const TMP_MARKER: &str = ".tmp-";
pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("injected fault at {0:?}")]
    Injected(FaultPoint),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Points inside [`SampleStore::store_sample`] where a crash can be simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    AfterAudioTemp,
    AfterSidecarTemp,
    AfterAudioRename,
}

/// Metadata sidecar stored next to each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    #[serde(flatten)]
    pub upload: SampleUpload,
    pub text_only: bool,
    #[serde(default)]
    pub media_type: Option<String>,
    #[serde(default)]
    pub audio_file: Option<String>,
    #[serde(default)]
    pub audio_sha256: Option<String>,
    pub received_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub audio_path: Option<PathBuf>,
    pub sidecar_path: PathBuf,
    pub meta: SampleSidecar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredResponse {
    pub text: Option<String>,
    pub audio: Option<(PathBuf, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusEnvelope {
    pub received_at: DateTime<Utc>,
    pub status: LocalConfigStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportBundle {
    pub date: NaiveDate,
    pub path: PathBuf,
    pub rows: usize,
    pub audio_files: usize,
}

/// One manifest row: the sidecar plus where the audio sits in the archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    #[serde(flatten)]
    pub sidecar: SampleSidecar,
    #[serde(default)]
    pub archive_path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Stored { phone_sample_count: u64 },
    Duplicate,
}

#[derive(Default)]
struct PhoneSlot {
    sample_count: Option<u64>,
}

pub struct SampleStore {
    root: PathBuf,
    phones: Mutex<HashMap<PhoneHash, Arc<Mutex<PhoneSlot>>>>,
}

pub fn filename_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H-%M-%S%.3fZ").to_string()
}

pub fn media_type_for_extension(ext: &str) -> &'static str {
    match ext {
        "wav" => "audio/wav",
        "webm" => "audio/webm",
        "ogg" => "audio/ogg",
        "mp3" => "audio/mpeg",
        "m4a" => "audio/mp4",
        "flac" => "audio/flac",
        _ => "application/octet-stream",
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn tmp_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!(".{name}{TMP_MARKER}{}", Uuid::new_v4().simple()))
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

/// Write-then-rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let dir = path.parent().expect("atomic writes target a file inside a directory");
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().unwrap_or_default().to_string_lossy();
    let tmp = tmp_path(dir, &name);
    if let Err(e) = write_synced(&tmp, bytes) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path)(e)
    })
}

fn read_dir_names(dir: &Path) -> Result<Vec<String>, StorageError> {
    match fs::read_dir(dir) {
        Ok(entries) => {
            let mut names = Vec::new();
            for entry in entries {
                let entry = entry.map_err(io_err(dir))?;
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
            names.sort();
            Ok(names)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(io_err(dir)(e)),
    }
}

fn is_tmp(name: &str) -> bool {
    name.starts_with('.') && name.contains(TMP_MARKER)
}

fn read_sidecar(path: &Path) -> Result<StoredSample, StorageError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let meta: SampleSidecar =
        serde_json::from_slice(&bytes).map_err(|e| StorageError::Corrupt {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    Ok(StoredSample {
        audio_path: meta.audio_file.as_ref().map(|f| dir.join(f)),
        sidecar_path: path.to_owned(),
        meta,
    })
}

/// Every sidecar under `root/samples`, paired with the directory it sits in.
/// Read-only: unlike [`SampleStore::open`] this never touches the tree, so it
/// is safe against a live server.
pub fn census(root: &Path) -> Result<Vec<(String, StoredSample)>, StorageError> {
    let samples = root.join("samples");
    let mut out = Vec::new();
    for dir in read_dir_names(&samples)?.into_iter().filter(|n| !is_tmp(n)) {
        let path = samples.join(&dir);
        for name in read_dir_names(&path)? {
            if name.ends_with(SIDECAR_SUFFIX) && !is_tmp(&name) {
                out.push((dir.clone(), read_sidecar(&path.join(name))?));
            }
        }
    }
    Ok(out)
}

impl SampleStore {
    /// Opens (creating if needed) a store and cleans up after any crash.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let root = root.into();
        for sub in ["samples", "status", "responses", "exports", "index/seen_ids", "configs"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let store = Self {
            root,
            phones: Mutex::new(HashMap::new()),
        };
        store.recover()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn samples_dir(&self, hash: &PhoneHash) -> PathBuf {
        self.root.join("samples").join(hash.to_string())
    }

    fn responses_dir(&self, hash: &PhoneHash) -> PathBuf {
        self.root.join("responses").join(hash.to_string())
    }

    fn seen_dir(&self, hash: &PhoneHash) -> PathBuf {
        self.root.join("index").join("seen_ids").join(hash.to_string())
    }

    pub fn status_path(&self, hash: &PhoneHash) -> PathBuf {
        self.root.join("status").join(format!("{hash}.json"))
    }

    pub fn export_path(&self, date: NaiveDate) -> PathBuf {
        self.root.join("exports").join(format!("{}.zip", date.format("%Y-%m-%d")))
    }

    /// Removes temporary files and audio left without a sidecar.
    pub fn recover(&self) -> Result<(), StorageError> {
        let samples = self.root.join("samples");
        for hash_dir in read_dir_names(&samples)? {
            let dir = samples.join(&hash_dir);
            let names = read_dir_names(&dir)?;
            for name in &names {
                let path = dir.join(name);
                if is_tmp(name) {
                    fs::remove_file(&path).map_err(io_err(&path))?;
                    continue;
                }
                if name.ends_with(SIDECAR_SUFFIX) {
                    continue;
                }
                let Some((stem, _ext)) = name.rsplit_once('.') else {
                    continue;
                };
                let sidecar = format!("{stem}{SIDECAR_SUFFIX}");
                if !names.contains(&sidecar) {
                    fs::remove_file(&path).map_err(io_err(&path))?;
                }
            }
        }
        for sub in ["status", "exports", "configs"] {
            let dir = self.root.join(sub);
            for name in read_dir_names(&dir)? {
                if is_tmp(&name) {
                    let path = dir.join(name);
                    fs::remove_file(&path).map_err(io_err(&path))?;
                }
            }
        }
        let responses = self.root.join("responses");
        for hash_dir in read_dir_names(&responses)? {
            let dir = responses.join(hash_dir);
            for name in read_dir_names(&dir)? {
                if is_tmp(&name) {
                    let path = dir.join(name);
                    fs::remove_file(&path).map_err(io_err(&path))?;
                }
            }
        }
        Ok(())
    }

    fn slot(&self, hash: &PhoneHash) -> Arc<Mutex<PhoneSlot>> {
        let mut phones = self.phones.lock().expect("phone table poisoned");
        phones.entry(*hash).or_default().clone()
    }

    pub fn is_seen(&self, hash: &PhoneHash, sample_id: &Uuid) -> bool {
        self.seen_dir(hash).join(sample_id.to_string()).exists()
    }

    fn mark_seen(&self, hash: &PhoneHash, sample_id: &Uuid) -> Result<(), StorageError> {
        let dir = self.seen_dir(hash);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(sample_id.to_string());
        File::create(&path)
            .and_then(|f| f.sync_all())
            .map_err(io_err(&path))
    }

    fn count_seen(&self, hash: &PhoneHash) -> Result<u64, StorageError> {
        Ok(read_dir_names(&self.seen_dir(hash))?
            .iter()
            .filter(|n| !is_tmp(n))
            .count() as u64)
    }

    /// Stores a sample unless its id was seen before for this phone.
    ///
    /// Writes for one phone are serialized; different phones proceed in
    /// parallel.
    pub fn ingest(
        &self,
        upload: &SampleUpload,
        audio: Option<&AudioPayload>,
    ) -> Result<IngestOutcome, StorageError> {
        let slot = self.slot(&upload.phone_hash);
        let mut slot = slot.lock().expect("phone slot poisoned");
        if self.is_seen(&upload.phone_hash, &upload.sample_id) {
            return Ok(IngestOutcome::Duplicate);
        }
        let count = match slot.sample_count {
            Some(c) => c,
            None => self.count_seen(&upload.phone_hash)?,
        };
        self.store_sample(upload, audio)?;
        self.mark_seen(&upload.phone_hash, &upload.sample_id)?;
        slot.sample_count = Some(count + 1);
        Ok(IngestOutcome::Stored {
            phone_sample_count: count + 1,
        })
    }

    pub fn store_sample(
        &self,
        upload: &SampleUpload,
        audio: Option<&AudioPayload>,
    ) -> Result<StoredSample, StorageError> {
        self.store_sample_inner(upload, audio, None)
    }

    /// Like [`store_sample`](Self::store_sample) but stops dead at `fault`,
    /// leaving the directory as a crash at that point would.
    #[doc(hidden)]
    pub fn store_sample_with_fault(
        &self,
        upload: &SampleUpload,
        audio: Option<&AudioPayload>,
        fault: FaultPoint,
    ) -> Result<StoredSample, StorageError> {
        self.store_sample_inner(upload, audio, Some(fault))
    }

    fn store_sample_inner(
        &self,
        upload: &SampleUpload,
        audio: Option<&AudioPayload>,
        fault: Option<FaultPoint>,
    ) -> Result<StoredSample, StorageError> {
        let dir = self.samples_dir(&upload.phone_hash);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let stem = format!("{}_{}", filename_timestamp(&upload.timestamp), upload.sample_id);
        let sidecar_path = dir.join(format!("{stem}{SIDECAR_SUFFIX}"));
        let audio_path = audio.map(|a| dir.join(format!("{stem}.{}", a.extension())));

        let meta = SampleSidecar {
            upload: upload.clone(),
            text_only: audio.is_none(),
            media_type: audio.map(|a| a.media_type.clone()),
            audio_file: audio_path
                .as_ref()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned()),
            audio_sha256: audio.map(|a| sha256_hex(&a.bytes)),
            received_at: Utc::now(),
        };
        let sidecar_bytes = serde_json::to_vec_pretty(&meta).expect("sidecar serializes");

        let mut temps: Vec<PathBuf> = Vec::new();
        let cleanup = |temps: &[PathBuf]| {
            for t in temps {
                let _ = fs::remove_file(t);
            }
        };
        let crash = |point: FaultPoint| fault == Some(point);

        let audio_tmp = match (audio, &audio_path) {
            (Some(a), Some(_)) => {
                let tmp = tmp_path(&dir, &stem);
                temps.push(tmp.clone());
                if let Err(e) = write_synced(&tmp, &a.bytes) {
                    cleanup(&temps);
                    return Err(e);
                }
                Some(tmp)
            }
            _ => None,
        };
        if crash(FaultPoint::AfterAudioTemp) {
            return Err(StorageError::Injected(FaultPoint::AfterAudioTemp));
        }
        let sidecar_tmp = tmp_path(&dir, &format!("{stem}{SIDECAR_SUFFIX}"));
        temps.push(sidecar_tmp.clone());
        if let Err(e) = write_synced(&sidecar_tmp, &sidecar_bytes) {
            cleanup(&temps);
            return Err(e);
        }
        if crash(FaultPoint::AfterSidecarTemp) {
            return Err(StorageError::Injected(FaultPoint::AfterSidecarTemp));
        }
        if let (Some(tmp), Some(dest)) = (&audio_tmp, &audio_path) {
            if let Err(e) = fs::rename(tmp, dest) {
                cleanup(&temps);
                return Err(io_err(dest)(e));
            }
        }
        if crash(FaultPoint::AfterAudioRename) {
            return Err(StorageError::Injected(FaultPoint::AfterAudioRename));
        }
        if let Err(e) = fs::rename(&sidecar_tmp, &sidecar_path) {
            cleanup(&temps);
            if let Some(dest) = &audio_path {
                let _ = fs::remove_file(dest);
            }
            return Err(io_err(&sidecar_path)(e));
        }
        Ok(StoredSample {
            audio_path,
            sidecar_path,
            meta,
        })
    }

    /// Names of all phone directories holding samples.
    pub fn phones(&self) -> Result<Vec<String>, StorageError> {
        Ok(read_dir_names(&self.root.join("samples"))?
            .into_iter()
            .filter(|n| !is_tmp(n))
            .collect())
    }

    pub fn list_samples(&self, hash: &PhoneHash) -> Result<Vec<StoredSample>, StorageError> {
        self.list_samples_in(&self.samples_dir(hash))
    }

    fn list_samples_in(&self, dir: &Path) -> Result<Vec<StoredSample>, StorageError> {
        read_dir_names(dir)?
            .iter()
            .filter(|n| n.ends_with(SIDECAR_SUFFIX) && !is_tmp(n))
            .map(|n| read_sidecar(&dir.join(n)))
            .collect()
    }

    pub fn all_samples(&self) -> Result<Vec<StoredSample>, StorageError> {
        let mut out = Vec::new();
        for phone in self.phones()? {
            out.extend(self.list_samples_in(&self.root.join("samples").join(phone))?);
        }
        Ok(out)
    }

    pub fn store_status(
        &self,
        hash: &PhoneHash,
        status: &LocalConfigStatus,
        received_at: DateTime<Utc>,
    ) -> Result<(), StorageError> {
        let slot = self.slot(hash);
        let _guard = slot.lock().expect("phone slot poisoned");
        let env = StatusEnvelope {
            received_at,
            status: status.clone(),
        };
        write_atomic(
            &self.status_path(hash),
            &serde_json::to_vec_pretty(&env).expect("status serializes"),
        )
    }

    pub fn load_status(&self, hash: &PhoneHash) -> Result<Option<StatusEnvelope>, StorageError> {
        let path = self.status_path(hash);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| StorageError::Corrupt {
                    path,
                    message: e.to_string(),
                }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn list_statuses(&self) -> Result<Vec<(PhoneHash, StatusEnvelope)>, StorageError> {
        let mut out = Vec::new();
        for name in read_dir_names(&self.root.join("status"))? {
            let Some(hash) = name.strip_suffix(".json").and_then(|h| h.parse().ok()) else {
                continue;
            };
            if let Some(env) = self.load_status(&hash)? {
                out.push((hash, env));
            }
        }
        Ok(out)
    }

    /// Writes `response.txt` and/or `response.<ext>`, replacing whatever
    /// response the phone had before.
    pub fn store_response(&self, response: &EngineResponse) -> Result<Vec<PathBuf>, StorageError> {
        let dir = self.responses_dir(&response.phone_hash);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut written = Vec::new();
        if let Some(text) = &response.text {
            let path = dir.join("response.txt");
            write_atomic(&path, text.as_bytes())?;
            written.push(path);
        }
        if let Some(audio) = &response.audio {
            let path = dir.join(format!("response.{}", audio.extension()));
            write_atomic(&path, &audio.bytes)?;
            written.push(path);
        }
        for name in read_dir_names(&dir)? {
            let path = dir.join(&name);
            if name.starts_with("response.") && !written.contains(&path) {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }
        Ok(written)
    }

    pub fn load_response(&self, hash: &PhoneHash) -> Result<Option<StoredResponse>, StorageError> {
        let dir = self.responses_dir(hash);
        let mut text = None;
        let mut audio = None;
        for name in read_dir_names(&dir)? {
            let path = dir.join(&name);
            if name == "response.txt" {
                match fs::read_to_string(&path) {
                    Ok(t) => text = Some(t),
                    Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                    Err(e) => return Err(io_err(&path)(e)),
                }
            } else if let Some(ext) = name.strip_prefix("response.") {
                let media = media_type_for_extension(ext).to_owned();
                audio = Some((path, media));
            }
        }
        if text.is_none() && audio.is_none() {
            return Ok(None);
        }
        Ok(Some(StoredResponse { text, audio }))
    }

    pub fn store_config(&self, number: u32, raw: &[u8]) -> Result<(), StorageError> {
        write_atomic(&self.root.join("configs").join(config_filename(number)), raw)
    }

    pub fn load_configs(&self) -> Result<Vec<(u32, Vec<u8>)>, StorageError> {
        let dir = self.root.join("configs");
        let mut out = Vec::new();
        for name in read_dir_names(&dir)? {
            let Ok(number) = crate::protocol::config_number_from_filename(&name) else {
                continue;
            };
            let path = dir.join(&name);
            out.push((number, fs::read(&path).map_err(io_err(&path))?));
        }
        Ok(out)
    }

    /// Builds `exports/<date>.zip` with every sample whose timestamp falls on
    /// `date` (UTC) and a `manifest.jsonl` with one row per sample.
    pub fn build_daily_export(&self, date: NaiveDate) -> Result<ExportBundle, StorageError> {
        let prefix = date.format("%Y-%m-%d").to_string();
        let mut selected = Vec::new();
        for phone in self.phones()? {
            let dir = self.root.join("samples").join(&phone);
            for name in read_dir_names(&dir)? {
                if name.starts_with(&prefix) && name.ends_with(SIDECAR_SUFFIX) {
                    let sample = read_sidecar(&dir.join(&name))?;
                    if sample.meta.upload.timestamp.date_naive() == date {
                        selected.push((phone.clone(), sample));
                    }
                }
            }
        }

        let dest = self.export_path(date);
        let dir = dest.parent().expect("exports dir");
        let tmp = tmp_path(dir, &format!("{prefix}.zip"));
        let result = write_export(&tmp, &selected);
        let (rows, audio_files) = match result {
            Ok(counts) => counts,
            Err(e) => {
                let _ = fs::remove_file(&tmp);
                return Err(e);
            }
        };
        fs::rename(&tmp, &dest).map_err(io_err(&dest))?;
        Ok(ExportBundle {
            date,
            path: dest,
            rows,
            audio_files,
        })
    }
}

fn write_export(
    path: &Path,
    samples: &[(String, StoredSample)],
) -> Result<(usize, usize), StorageError> {
    use zip::write::SimpleFileOptions;
    use zip::CompressionMethod;

    let zip_err = |e: zip::result::ZipError| StorageError::Io {
        path: path.to_owned(),
        source: io::Error::other(e),
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut zip = zip::ZipWriter::new(file);
    let stored = SimpleFileOptions::default().compression_method(CompressionMethod::Stored);
    let deflated = SimpleFileOptions::default().compression_method(CompressionMethod::Deflated);

    let mut manifest = Vec::new();
    let mut audio_files = 0;
    for (phone, sample) in samples {
        let archive_path = match (&sample.audio_path, &sample.meta.audio_file) {
            (Some(src), Some(name)) => {
                let bytes = fs::read(src).map_err(io_err(src))?;
                let inner = format!("samples/{phone}/{name}");
                zip.start_file(inner.as_str(), stored).map_err(zip_err)?;
                zip.write_all(&bytes).map_err(io_err(path))?;
                audio_files += 1;
                Some(inner)
            }
            _ => None,
        };
        let row = ManifestRow {
            sidecar: sample.meta.clone(),
            archive_path,
        };
        serde_json::to_writer(&mut manifest, &row).expect("manifest row serializes");
        manifest.push(b'\n');
    }
    zip.start_file(MANIFEST_NAME, deflated).map_err(zip_err)?;
    zip.write_all(&manifest).map_err(io_err(path))?;
    let file = zip.finish().map_err(zip_err)?;
    file.sync_all().map_err(io_err(path))?;
    Ok((samples.len(), audio_files))
}
