//! Documents exchanged between clients, the server and engines.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::identity::PhoneHash;

/// Metadata of one recording event. Audio travels next to it, not inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleUpload {
    pub sample_id: Uuid,
    pub phone_hash: PhoneHash,
    pub timestamp: DateTime<Utc>,
    pub config_number: u32,
    #[serde(default)]
    pub list_index: Option<u32>,
    #[serde(default)]
    pub prompt_index: Option<u32>,
    #[serde(default)]
    pub prompt_text: Option<String>,
    #[serde(default)]
    pub recorded_seconds: Option<f64>,
    /// Content of the text box shown next to the record button.
    #[serde(default)]
    pub text_input: Option<String>,
    pub language: String,
    #[serde(default)]
    pub engine_number: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioPayload {
    pub media_type: String,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

impl AudioPayload {
    pub fn new(media_type: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            media_type: media_type.into(),
            bytes,
        }
    }

    /// File extension for the declared media type. Unknown types are kept
    /// opaque as `.bin`.
    pub fn extension(&self) -> &'static str {
        extension_for(&self.media_type)
    }
}

pub fn extension_for(media_type: &str) -> &'static str {
    let essence = media_type
        .split(';')
        .next()
        .unwrap_or_default()
        .trim()
        .to_ascii_lowercase();
    match essence.as_str() {
        "audio/wav" | "audio/x-wav" | "audio/wave" | "audio/vnd.wave" => "wav",
        "audio/webm" => "webm",
        "audio/ogg" | "audio/opus" => "ogg",
        "audio/mpeg" | "audio/mp3" => "mp3",
        "audio/mp4" | "audio/aac" | "audio/x-m4a" => "m4a",
        "audio/flac" | "audio/x-flac" => "flac",
        _ => "bin",
    }
}

impl SampleUpload {
    /// Structural checks shared by the client (before enqueueing) and the
    /// server (before storing).
    pub fn validate(&self, audio: Option<&AudioPayload>) -> Result<(), String> {
        if self.sample_id.is_nil() {
            return Err("sample_id must not be nil".into());
        }
        let lang_ok = (2..=8).contains(&self.language.len())
            && self
                .language
                .bytes()
                .all(|b| b.is_ascii_alphabetic() || b == b'-');
        if !lang_ok {
            return Err(format!("invalid language {:?}", self.language));
        }
        if let Some(s) = self.recorded_seconds {
            if !s.is_finite() || s < 0.0 {
                return Err(format!("invalid recorded_seconds {s}"));
            }
        }
        match audio {
            Some(a) if a.bytes.is_empty() => Err("audio part is empty".into()),
            Some(a) if a.media_type.trim().is_empty() => Err("audio part has no media type".into()),
            Some(_) => Ok(()),
            None if self.is_text_submission() => Ok(()),
            None => Err("sample carries neither audio nor text input".into()),
        }
    }

    pub fn is_text_submission(&self) -> bool {
        self.text_input.as_deref().is_some_and(|t| !t.trim().is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub sample_id: Uuid,
    pub stored: bool,
    pub duplicate: bool,
    pub engine_dispatched: bool,
}

/// Feedback produced by an engine for one phone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineResponse {
    pub phone_hash: PhoneHash,
    pub text: Option<String>,
    pub audio: Option<AudioPayload>,
    pub produced_at: DateTime<Utc>,
}

/// Body of `GET /response/{phone_hash}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ResponseDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_url: Option<String>,
}
