//! The client's `local_config_status_file`, uploaded as the
//! `sample_server_upload_file`.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::identity::{generate_neighbor_code, is_neighbor_code, NeighborCodeError};
use super::personal_info::{is_age_question, is_forbidden_field, AnswerValue};

pub const DEFAULT_RESET_TIME_MINUTES: u32 = 30;
pub const DEFAULT_LANGUAGE: &str = "en";
pub const SUPPORTED_LANGUAGES: [&str; 3] = ["en", "es", "ca"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalConfigStatus {
    pub language: String,
    pub study_code: Option<String>,
    pub personal_info: BTreeMap<String, AnswerValue>,
    pub generated_neighbor_codes: BTreeSet<String>,
    pub entered_neighbor_codes: BTreeSet<String>,
    pub run_time_file_config_number: u32,
    pub total_count: u64,
    pub current_count: u64,
    /// Minutes of inactivity before a session resets.
    pub reset_time: u32,
    pub engine_number: u32,
    pub vns_number: String,
    pub dynamic_vns_toggle: bool,
    pub dynamic_vns: Option<String>,
    pub dirty: bool,
    pub ui_color: String,
    pub terms_accepted: bool,
    pub last_recording_time: Option<DateTime<Utc>>,
    pub last_upload_time: Option<DateTime<Utc>>,
}

impl Default for LocalConfigStatus {
    fn default() -> Self {
        Self {
            language: DEFAULT_LANGUAGE.to_owned(),
            study_code: None,
            personal_info: BTreeMap::new(),
            generated_neighbor_codes: BTreeSet::new(),
            entered_neighbor_codes: BTreeSet::new(),
            run_time_file_config_number: 0,
            total_count: 0,
            current_count: 0,
            reset_time: DEFAULT_RESET_TIME_MINUTES,
            engine_number: 0,
            vns_number: String::new(),
            dynamic_vns_toggle: true,
            dynamic_vns: None,
            dirty: false,
            ui_color: String::new(),
            terms_accepted: false,
            last_recording_time: None,
            last_upload_time: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatusError {
    #[error("personal info key {0:?} is not allowed")]
    ForbiddenField(String),
    #[error("personal info {key:?} holds uncapped age {value}")]
    UncappedAge { key: String, value: i64 },
    #[error("invalid language code {0:?}")]
    BadLanguage(String),
    #[error("reset_time must be at least one minute")]
    NonPositiveResetTime,
    #[error("invalid neighbor code {0:?}")]
    BadNeighborCode(String),
}

impl LocalConfigStatus {
    pub fn reset_window(&self) -> Duration {
        Duration::minutes(i64::from(self.reset_time))
    }

    /// Checks a status document received from a client.
    pub fn validate(&self) -> Result<(), StatusError> {
        let lang_ok = (2..=8).contains(&self.language.len())
            && self
                .language
                .bytes()
                .all(|b| b.is_ascii_alphabetic() || b == b'-');
        if !lang_ok {
            return Err(StatusError::BadLanguage(self.language.clone()));
        }
        if self.reset_time == 0 {
            return Err(StatusError::NonPositiveResetTime);
        }
        for (key, value) in &self.personal_info {
            if is_forbidden_field(key) {
                return Err(StatusError::ForbiddenField(key.clone()));
            }
            if is_age_question(key) {
                if let AnswerValue::Number(n) = value {
                    if *n >= 90 {
                        return Err(StatusError::UncappedAge {
                            key: key.clone(),
                            value: *n,
                        });
                    }
                }
            }
        }
        if let Some(bad) = self
            .generated_neighbor_codes
            .iter()
            .chain(&self.entered_neighbor_codes)
            .find(|c| !is_neighbor_code(c))
        {
            return Err(StatusError::BadNeighborCode(bad.clone()));
        }
        Ok(())
    }

    /// Generates a neighbor code, records it and marks the status changed.
    pub fn add_generated_neighbor_code<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
    ) -> Result<String, NeighborCodeError> {
        let code = generate_neighbor_code(rng, &self.generated_neighbor_codes)?;
        self.generated_neighbor_codes.insert(code.clone());
        self.dirty = true;
        Ok(code)
    }

    pub fn add_entered_neighbor_code(&mut self, code: &str) -> Result<(), StatusError> {
        let code = code.trim();
        if !is_neighbor_code(code) {
            return Err(StatusError::BadNeighborCode(code.to_owned()));
        }
        if self.entered_neighbor_codes.insert(code.to_owned()) {
            self.dirty = true;
        }
        Ok(())
    }

    pub fn set_language(&mut self, language: &str) {
        if self.language != language {
            self.language = language.to_owned();
            self.dirty = true;
        }
    }

    /// Records a successful upload of this document.
    pub fn mark_uploaded(&mut self, now: DateTime<Utc>) {
        self.dirty = false;
        self.last_upload_time = Some(now);
    }
}

/// `Total_count += Current_count; Current_count = 0`.
pub fn reset_counts(status: &LocalConfigStatus) -> LocalConfigStatus {
    LocalConfigStatus {
        total_count: status.total_count + status.current_count,
        current_count: 0,
        dirty: true,
        ..status.clone()
    }
}

/// Upload when the user changed something, or when the phone has been idle
/// for more than `reset_time` minutes since its last recording and nothing
/// has been uploaded since that idle period began.
pub fn should_upload_status(status: &LocalConfigStatus, now: DateTime<Utc>) -> bool {
    if status.dirty {
        return true;
    }
    let Some(last) = status.last_recording_time else {
        return false;
    };
    let idle_from = last + status.reset_window();
    if now <= idle_from {
        return false;
    }
    match status.last_upload_time {
        Some(uploaded) => uploaded <= idle_from,
        None => true,
    }
}
