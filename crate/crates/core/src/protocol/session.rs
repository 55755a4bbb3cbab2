//! Prompt session state machine.
//!
//! Guided sessions walk the selected list round-robin. The cursor only moves
//! in [`register_recording`], so re-displaying a prompt after an aborted
//! recording never skips it. A textless pair in the final position is a
//! terminal message that holds the session until [`start_over`].

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{PromptList, RecordingMode, RuntimeConfig};
use super::identity::PhoneHash;
use super::status::LocalConfigStatus;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub phone_hash: PhoneHash,
    pub selected_list_index: Option<usize>,
    pub cursor: usize,
    pub last_activity: DateTime<Utc>,
    pub last_recording_time: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptStep {
    Record { text: String, seconds: u32 },
    TextOnly { text: String },
    Terminal { text: String },
    Free,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("a list must be selected before guided prompting starts")]
    NoListSelected,
    #[error("list {index} does not exist (config has {count})")]
    InvalidList { index: usize, count: usize },
    #[error("step does not record audio")]
    NotARecordingStep,
}

impl SessionState {
    pub fn new(phone_hash: PhoneHash, now: DateTime<Utc>) -> Self {
        Self {
            phone_hash,
            selected_list_index: None,
            cursor: 0,
            last_activity: now,
            last_recording_time: None,
        }
    }
}

/// The list a session is prompting from, if any.
///
/// A single list is used without asking; text-only configs read the first.
fn active_list<'a>(
    session: &SessionState,
    config: &'a RuntimeConfig,
) -> Result<&'a PromptList, SessionError> {
    match config.mode {
        RecordingMode::TextOnly => config.lists.first().ok_or(SessionError::NoListSelected),
        RecordingMode::FreeRecording => Err(SessionError::NoListSelected),
        RecordingMode::Guided => {
            let index = match session.selected_list_index {
                Some(i) => i,
                None if config.lists.len() == 1 => 0,
                None => return Err(SessionError::NoListSelected),
            };
            config.lists.get(index).ok_or(SessionError::InvalidList {
                index,
                count: config.lists.len(),
            })
        }
    }
}

pub fn select_list(
    session: &SessionState,
    config: &RuntimeConfig,
    index: usize,
) -> Result<SessionState, SessionError> {
    if index >= config.lists.len() {
        return Err(SessionError::InvalidList {
            index,
            count: config.lists.len(),
        });
    }
    Ok(SessionState {
        selected_list_index: Some(index),
        cursor: 0,
        ..session.clone()
    })
}

pub fn next_prompt(session: &SessionState, config: &RuntimeConfig) -> Result<PromptStep, SessionError> {
    match config.mode {
        RecordingMode::FreeRecording => Ok(PromptStep::Free),
        RecordingMode::TextOnly => {
            let list = active_list(session, config)?;
            let text = list
                .prompts
                .iter()
                .skip(1)
                .map(|p| p.text.trim())
                .find(|t| !t.is_empty())
                .unwrap_or(&config.no_recording_text);
            Ok(PromptStep::TextOnly {
                text: text.to_owned(),
            })
        }
        RecordingMode::Guided => {
            let list = active_list(session, config)?;
            // a live config swap may have shortened the list
            let at = session.cursor % list.len();
            let pair = &list.prompts[at];
            Ok(match pair.seconds {
                Some(seconds) => PromptStep::Record {
                    text: pair.text.clone(),
                    seconds,
                },
                None if at + 1 == list.len() => PromptStep::Terminal {
                    text: pair.text.clone(),
                },
                None => PromptStep::TextOnly {
                    text: pair.text.clone(),
                },
            })
        }
    }
}

pub fn effective_record_seconds(step: &PromptStep, config: &RuntimeConfig) -> Result<u32, SessionError> {
    match step {
        PromptStep::Record { seconds, .. } => Ok(*seconds),
        PromptStep::Free => Ok(config.max_recording_time),
        _ => Err(SessionError::NotARecordingStep),
    }
}

/// Bookkeeping after a recording or text submission completed.
pub fn register_recording(
    session: &SessionState,
    status: &LocalConfigStatus,
    config: &RuntimeConfig,
    now: DateTime<Utc>,
) -> (SessionState, LocalConfigStatus) {
    let mut next = session.clone();
    if config.mode == RecordingMode::Guided {
        if let Ok(list) = active_list(session, config) {
            let at = session.cursor % list.len();
            let terminal = at + 1 == list.len() && list.prompts[at].seconds.is_none();
            if !terminal {
                next.cursor = (at + 1) % list.len();
            }
        }
    }
    next.last_activity = now;
    next.last_recording_time = Some(now);

    let status = LocalConfigStatus {
        current_count: status.current_count + 1,
        last_recording_time: Some(now),
        ..status.clone()
    };
    (next, status)
}

pub fn session_expired(session: &SessionState, status: &LocalConfigStatus, now: DateTime<Utc>) -> bool {
    now - session.last_activity > status.reset_window()
}

/// Resets an inactive session: back to the first prompt, and back to list
/// selection when there is a choice to make.
pub fn expire_session(session: &SessionState, config: &RuntimeConfig) -> SessionState {
    SessionState {
        cursor: 0,
        selected_list_index: if config.lists.len() >= 2 {
            None
        } else {
            session.selected_list_index
        },
        ..session.clone()
    }
}

pub fn start_over(session: &SessionState) -> SessionState {
    SessionState {
        cursor: 0,
        ..session.clone()
    }
}
