//! Durable FIFO of pending samples.
//!
//! Backed by an append-only journal, `queue/journal.log`. Each record is
//!
//! ```text
//! u32 LE payload length | u32 LE crc32(payload) | payload
//! ```
//!
//! and the payload is either an enqueue (tag 1, `u32 LE` metadata length,
//! metadata JSON, raw audio bytes) or an acknowledgment (tag 2, 16-byte sample
//! id). Replaying the journal rebuilds the queue. A torn or corrupt tail is
//! cut off with a warning. The journal is rewritten whenever the queue drains
//! and on open.

use std::collections::{HashSet, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::ClientError;
use crate::protocol::wire::{AudioPayload, SampleUpload};

const TAG_ENQUEUE: u8 = 1;
const TAG_ACK: u8 = 2;
const HEADER: usize = 8;
const JOURNAL: &str = "journal.log";

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedSample {
    pub upload: SampleUpload,
    pub audio: Option<AudioPayload>,
}

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    upload: SampleUpload,
    media_type: Option<String>,
}

pub struct DurableQueue {
    dir: PathBuf,
    journal: File,
    entries: VecDeque<QueuedSample>,
    ids: HashSet<Uuid>,
}

fn persist_err(path: &Path) -> impl FnOnce(io::Error) -> ClientError + '_ {
    move |source| ClientError::Persistence {
        path: path.to_owned(),
        source,
    }
}

fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

fn encode_enqueue(sample: &QueuedSample) -> Vec<u8> {
    let meta = EntryMeta {
        upload: sample.upload.clone(),
        media_type: sample.audio.as_ref().map(|a| a.media_type.clone()),
    };
    let meta = serde_json::to_vec(&meta).expect("queue metadata serializes");
    let audio = sample.audio.as_ref().map(|a| a.bytes.as_slice()).unwrap_or_default();
    let mut payload = Vec::with_capacity(5 + meta.len() + audio.len());
    payload.push(TAG_ENQUEUE);
    payload.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    payload.extend_from_slice(&meta);
    payload.extend_from_slice(audio);
    frame(&payload)
}

fn encode_ack(id: &Uuid) -> Vec<u8> {
    let mut payload = Vec::with_capacity(17);
    payload.push(TAG_ACK);
    payload.extend_from_slice(id.as_bytes());
    frame(&payload)
}

enum Record {
    Enqueue(QueuedSample),
    Ack(Uuid),
}

fn decode(payload: &[u8]) -> Option<Record> {
    let (&tag, rest) = payload.split_first()?;
    match tag {
        TAG_ENQUEUE => {
            let len = u32::from_le_bytes(rest.get(..4)?.try_into().ok()?) as usize;
            let meta: EntryMeta = serde_json::from_slice(rest.get(4..4 + len)?).ok()?;
            let audio_bytes = &rest[4 + len..];
            let audio = meta
                .media_type
                .map(|m| AudioPayload::new(m, audio_bytes.to_vec()));
            Some(Record::Enqueue(QueuedSample {
                upload: meta.upload,
                audio,
            }))
        }
        TAG_ACK => Some(Record::Ack(Uuid::from_slice(rest).ok()?)),
        _ => None,
    }
}

/// Splits a journal into records; returns them and the length of the valid
/// prefix.
fn replay(bytes: &[u8]) -> (Vec<Record>, usize) {
    let mut records = Vec::new();
    let mut at = 0;
    while at + HEADER <= bytes.len() {
        let len = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap());
        let Some(payload) = bytes.get(at + HEADER..at + HEADER + len) else {
            break;
        };
        if crc32fast::hash(payload) != crc {
            break;
        }
        let Some(record) = decode(payload) else {
            break;
        };
        records.push(record);
        at += HEADER + len;
    }
    (records, at)
}

impl DurableQueue {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(persist_err(&dir))?;
        let path = dir.join(JOURNAL);
        let mut bytes = Vec::new();
        match File::open(&path) {
            Ok(mut f) => {
                f.read_to_end(&mut bytes).map_err(persist_err(&path))?;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(persist_err(&path)(e)),
        }
        let (records, valid) = replay(&bytes);
        if valid < bytes.len() {
            tracing::warn!(
                journal = %path.display(),
                dropped = bytes.len() - valid,
                "dropping corrupt queue journal tail"
            );
        }
        let mut entries = VecDeque::new();
        let mut ids = HashSet::new();
        for record in records {
            match record {
                Record::Enqueue(s) => {
                    if ids.insert(s.upload.sample_id) {
                        entries.push_back(s);
                    }
                }
                Record::Ack(id) => {
                    if ids.remove(&id) {
                        entries.retain(|e| e.upload.sample_id != id);
                    }
                }
            }
        }
        let journal = Self::rewrite(&dir, &entries)?;
        Ok(Self {
            dir,
            journal,
            entries,
            ids,
        })
    }

    /// Writes a fresh journal holding exactly `entries` and swaps it in.
    fn rewrite(dir: &Path, entries: &VecDeque<QueuedSample>) -> Result<File, ClientError> {
        let path = dir.join(JOURNAL);
        let tmp = dir.join(format!("{JOURNAL}.tmp"));
        {
            let mut f = File::create(&tmp).map_err(persist_err(&tmp))?;
            for e in entries {
                f.write_all(&encode_enqueue(e)).map_err(persist_err(&tmp))?;
            }
            f.sync_all().map_err(persist_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(persist_err(&path))?;
        OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(persist_err(&path))
    }

    fn append(&mut self, record: &[u8]) -> Result<(), ClientError> {
        let path = self.dir.join(JOURNAL);
        self.journal.write_all(record).map_err(persist_err(&path))?;
        self.journal.sync_data().map_err(persist_err(&path))
    }

    pub fn enqueue(&mut self, sample: QueuedSample) -> Result<(), ClientError> {
        let id = sample.upload.sample_id;
        if self.ids.contains(&id) {
            return Err(ClientError::DuplicateSample(id));
        }
        self.append(&encode_enqueue(&sample))?;
        self.ids.insert(id);
        self.entries.push_back(sample);
        Ok(())
    }

    pub fn front(&self) -> Option<&QueuedSample> {
        self.entries.front()
    }

    /// Removes a delivered sample.
    pub fn ack(&mut self, id: &Uuid) -> Result<(), ClientError> {
        if !self.ids.contains(id) {
            return Ok(());
        }
        self.append(&encode_ack(id))?;
        self.ids.remove(id);
        self.entries.retain(|e| e.upload.sample_id != *id);
        if self.entries.is_empty() {
            self.journal = Self::rewrite(&self.dir, &self.entries)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedSample> {
        self.entries.iter()
    }
}
