//! Runtime config documents (`app_runtime_config_file`).
//!
//! A config carries a selector string and zero to four prompt lists. The
//! recording mode is derived from the list contents:
//!
//! * no lists (or an empty body): free recording,
//! * first pair of the first list is `("no_recording", 0)`: text only,
//! * anything else: guided prompting.
//!
//! The canonical encoding is compact JSON with a fixed field order, so that
//! [`RuntimeConfig::to_canonical_bytes`] followed by [`parse_runtime_config`]
//! is the identity and canonical documents re-serialize byte for byte.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_LISTS: usize = 4;
pub const DEFAULT_MAX_RECORDING_TIME: u32 = 30;
pub const DEFAULT_NO_RECORDING_TEXT: &str = "Recording de-activated, submit text only";
pub const NO_RECORDING_SENTINEL: &str = "no_recording";
pub const CONFIG_FILE_STEM: &str = "app_runtime_config_file";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("malformed config document: {0}")]
    MalformedDocument(String),
    #[error("config declares {0} lists, at most 4 are allowed")]
    TooManyLists(usize),
    #[error("list {list} prompt {prompt} has empty text")]
    EmptyPromptText { list: usize, prompt: usize },
    #[error("list {list} prompt {prompt} has non-positive seconds {seconds}")]
    NonPositiveSeconds {
        list: usize,
        prompt: usize,
        seconds: i64,
    },
    #[error("list {list} prompt {prompt} asks for {seconds} s, above the {max} s limit")]
    SecondsExceedLimit {
        list: usize,
        prompt: usize,
        seconds: u32,
        max: u32,
    },
    #[error("bad config file name {0:?}")]
    BadName(String),
}

/// One `<"text", seconds>` pair.
///
/// `seconds` is `None` for textless-recording pairs. The only place a zero is
/// accepted is the text-only sentinel at the head of the first list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptPair {
    pub text: String,
    pub seconds: Option<u32>,
}

impl PromptPair {
    pub fn record(text: impl Into<String>, seconds: u32) -> Self {
        Self {
            text: text.into(),
            seconds: Some(seconds),
        }
    }

    pub fn textless(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            seconds: None,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.text == NO_RECORDING_SENTINEL && self.seconds == Some(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptList {
    pub prompts: Vec<PromptPair>,
}

impl PromptList {
    pub fn new(prompts: Vec<PromptPair>) -> Self {
        Self { prompts }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordingMode {
    Guided,
    FreeRecording,
    TextOnly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuntimeConfig {
    pub config_number: u32,
    pub selector_string: String,
    pub lists: Vec<PromptList>,
    pub mode: RecordingMode,
    pub no_recording_text: String,
    pub max_recording_time: u32,
    pub default_engine_number: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectionRequirement {
    None,
    Choose {
        selector_string: String,
        list_count: usize,
    },
}

// Wire form. Numbers are read as i64 so out-of-range values surface as
// validation errors instead of opaque decode failures.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    config_number: Option<i64>,
    #[serde(default)]
    selector_string: Option<String>,
    #[serde(default)]
    lists: Vec<RawList>,
    #[serde(default)]
    no_recording_text: Option<String>,
    #[serde(default)]
    max_recording_time: Option<i64>,
    #[serde(default)]
    default_engine_number: Option<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawList {
    prompts: Vec<RawPair>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    text: String,
    #[serde(default)]
    seconds: Option<i64>,
}

#[derive(Serialize)]
struct CanonicalConfig<'a> {
    config_number: u32,
    selector_string: &'a str,
    lists: &'a [PromptList],
    no_recording_text: &'a str,
    max_recording_time: u32,
    default_engine_number: u32,
}

impl RuntimeConfig {
    /// The config used when nothing could be fetched and nothing is cached.
    pub fn free_recording(config_number: u32) -> Self {
        Self {
            config_number,
            selector_string: String::new(),
            lists: Vec::new(),
            mode: RecordingMode::FreeRecording,
            no_recording_text: DEFAULT_NO_RECORDING_TEXT.to_owned(),
            max_recording_time: DEFAULT_MAX_RECORDING_TIME,
            default_engine_number: 0,
        }
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let doc = CanonicalConfig {
            config_number: self.config_number,
            selector_string: &self.selector_string,
            lists: &self.lists,
            no_recording_text: &self.no_recording_text,
            max_recording_time: self.max_recording_time,
            default_engine_number: self.default_engine_number,
        };
        serde_json::to_vec(&doc).expect("config serialization is infallible")
    }

    pub fn list(&self, index: usize) -> Option<&PromptList> {
        self.lists.get(index)
    }
}

fn non_negative_u32(value: i64, field: &str) -> Result<u32, ConfigError> {
    u32::try_from(value)
        .map_err(|_| ConfigError::MalformedDocument(format!("{field} out of range: {value}")))
}

/// Reads the number declared inside a document, without validating the rest.
pub fn declared_config_number(raw: &[u8]) -> Result<u32, ConfigError> {
    #[derive(Deserialize)]
    struct Head {
        config_number: Option<i64>,
    }
    let head: Head = serde_json::from_slice(raw)
        .map_err(|e| ConfigError::MalformedDocument(e.to_string()))?;
    match head.config_number {
        Some(n) => non_negative_u32(n, "config_number"),
        None => Err(ConfigError::MalformedDocument(
            "missing config_number".to_owned(),
        )),
    }
}

pub fn parse_runtime_config(raw: &[u8], expected_number: u32) -> Result<RuntimeConfig, ConfigError> {
    if raw.iter().all(u8::is_ascii_whitespace) {
        return Ok(RuntimeConfig::free_recording(expected_number));
    }
    let doc: RawConfig = serde_json::from_slice(raw)
        .map_err(|e| ConfigError::MalformedDocument(e.to_string()))?;

    if let Some(n) = doc.config_number {
        non_negative_u32(n, "config_number")?;
    }
    if doc.lists.len() > MAX_LISTS {
        return Err(ConfigError::TooManyLists(doc.lists.len()));
    }

    let max_recording_time = match doc.max_recording_time {
        None => DEFAULT_MAX_RECORDING_TIME,
        Some(v) if v >= 1 => non_negative_u32(v, "max_recording_time")?,
        Some(v) => {
            return Err(ConfigError::MalformedDocument(format!(
                "max_recording_time must be positive, got {v}"
            )))
        }
    };
    let default_engine_number = match doc.default_engine_number {
        None => 0,
        Some(v) => non_negative_u32(v, "default_engine_number")?,
    };

    let mut lists = Vec::with_capacity(doc.lists.len());
    for (li, raw_list) in doc.lists.into_iter().enumerate() {
        if raw_list.prompts.is_empty() {
            return Err(ConfigError::MalformedDocument(format!("list {li} has no prompts")));
        }
        let mut prompts = Vec::with_capacity(raw_list.prompts.len());
        for (pi, pair) in raw_list.prompts.into_iter().enumerate() {
            let sentinel_slot = li == 0 && pi == 0;
            let seconds = match pair.seconds {
                None => None,
                Some(0) if sentinel_slot && pair.text == NO_RECORDING_SENTINEL => Some(0),
                Some(s) if s <= 0 => {
                    return Err(ConfigError::NonPositiveSeconds {
                        list: li,
                        prompt: pi,
                        seconds: s,
                    })
                }
                Some(s) => {
                    let s = u32::try_from(s).unwrap_or(u32::MAX);
                    if s > max_recording_time {
                        return Err(ConfigError::SecondsExceedLimit {
                            list: li,
                            prompt: pi,
                            seconds: s,
                            max: max_recording_time,
                        });
                    }
                    Some(s)
                }
            };
            if pair.text.trim().is_empty() {
                return Err(ConfigError::EmptyPromptText { list: li, prompt: pi });
            }
            prompts.push(PromptPair {
                text: pair.text,
                seconds,
            });
        }
        lists.push(PromptList { prompts });
    }

    let selector_string = doc.selector_string.unwrap_or_default();
    if lists.len() >= 2 && selector_string.trim().is_empty() {
        return Err(ConfigError::MalformedDocument(
            "selector_string is required when more than one list is given".to_owned(),
        ));
    }

    let mode = if lists.is_empty() {
        RecordingMode::FreeRecording
    } else if lists[0].prompts[0].is_sentinel() {
        RecordingMode::TextOnly
    } else {
        RecordingMode::Guided
    };

    Ok(RuntimeConfig {
        config_number: expected_number,
        selector_string,
        lists,
        mode,
        no_recording_text: doc
            .no_recording_text
            .unwrap_or_else(|| DEFAULT_NO_RECORDING_TEXT.to_owned()),
        max_recording_time,
        default_engine_number,
    })
}

pub fn required_selection(config: &RuntimeConfig) -> SelectionRequirement {
    if config.mode != RecordingMode::Guided || config.lists.len() <= 1 {
        return SelectionRequirement::None;
    }
    SelectionRequirement::Choose {
        selector_string: config.selector_string.clone(),
        list_count: config.lists.len(),
    }
}

/// Extracts `N` from `app_runtime_config_file_N.json` (or the legacy `.csv`).
pub fn config_number_from_filename(name: &str) -> Result<u32, ConfigError> {
    let bad = || ConfigError::BadName(name.to_owned());
    let rest = name
        .strip_prefix(CONFIG_FILE_STEM)
        .and_then(|r| r.strip_prefix('_'))
        .ok_or_else(bad)?;
    let digits = rest
        .strip_suffix(".json")
        .or_else(|| rest.strip_suffix(".csv"))
        .ok_or_else(bad)?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    digits.parse().map_err(|_| bad())
}

pub fn config_filename(number: u32) -> String {
    format!("{CONFIG_FILE_STEM}_{number}.json")
}
