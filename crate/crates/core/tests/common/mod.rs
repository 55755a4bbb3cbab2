#![allow(dead_code)]

use aiba::engine::EngineSpec;
use aiba::protocol::wire::{AudioPayload, SampleUpload};
use aiba::protocol::{ConfigError, PhoneHash, RecordingMode};
use aiba::server::{self, RunningServer, ServerOptions};
use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use uuid::Uuid;

pub struct TestServer {
    pub dir: TempDir,
    pub server: RunningServer,
}

impl TestServer {
    pub fn url(&self) -> String {
        self.server.url()
    }

    pub fn data_root(&self) -> &std::path::Path {
        self.dir.path()
    }
}

pub async fn start_server(engines: &[&str], configs: &[&str]) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    let server = start_at(dir.path(), engines, configs).await;
    TestServer { dir, server }
}

pub async fn start_at(root: &std::path::Path, engines: &[&str], configs: &[&str]) -> RunningServer {
    let mut opts = ServerOptions::new(root);
    opts.engines = engines.iter().map(|e| e.parse::<EngineSpec>().unwrap()).collect();
    opts.configs = configs.iter().map(|c| c.as_bytes().to_vec()).collect();
    server::start(opts).await.unwrap()
}

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap()
}

pub fn hash(n: u128) -> PhoneHash {
    PhoneHash::from_u128(n)
}

pub fn upload(phone: PhoneHash, id: u128, ts: DateTime<Utc>) -> SampleUpload {
    SampleUpload {
        sample_id: Uuid::from_u128(id),
        phone_hash: phone,
        timestamp: ts,
        config_number: 7,
        list_index: Some(0),
        prompt_index: Some(0),
        prompt_text: Some("tossi 10 segons".into()),
        recorded_seconds: Some(4.5),
        text_input: None,
        language: "ca".into(),
        engine_number: 0,
    }
}

pub fn audio(seed: u64, len: usize) -> AudioPayload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bytes = vec![0u8; len];
    rng.fill(bytes.as_mut_slice());
    AudioPayload::new("audio/wav", bytes)
}

pub fn http() -> reqwest::Client {
    reqwest::Client::new()
}

/// Canonical two-prompt guided config installed as number 7.
pub const CONFIG_7: &str = r#"{"config_number":7,"selector_string":"","lists":[{"prompts":[{"text":"tossi 10 segons","seconds":10},{"text":"digui ommm amb la m prolongada 10 segons si pots","seconds":12}]}],"no_recording_text":"Recording de-activated, submit text only","max_recording_time":30,"default_engine_number":0}"#;

/// A replacement for config 7 with a terminal pair.
pub const CONFIG_7_V2: &str = r#"{"config_number":7,"selector_string":"","lists":[{"prompts":[{"text":"cough three times","seconds":8},{"text":"read the sentence aloud","seconds":15},{"text":"thank you please record again tomorrow","seconds":null}]}],"no_recording_text":"Recording de-activated, submit text only","max_recording_time":30,"default_engine_number":0}"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrKind {
    Malformed,
    TooManyLists,
    EmptyText,
    NonPositive,
    ExceedsLimit,
}

pub fn err_kind(e: &ConfigError) -> ErrKind {
    match e {
        ConfigError::MalformedDocument(_) => ErrKind::Malformed,
        ConfigError::TooManyLists(_) => ErrKind::TooManyLists,
        ConfigError::EmptyPromptText { .. } => ErrKind::EmptyText,
        ConfigError::NonPositiveSeconds { .. } => ErrKind::NonPositive,
        ConfigError::SecondsExceedLimit { .. } => ErrKind::ExceedsLimit,
        ConfigError::BadName(_) => panic!("not a document error"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    /// Mode and prompt count per list; `canonical` documents must
    /// re-serialize byte for byte.
    Ok {
        mode: RecordingMode,
        prompts: Vec<usize>,
        canonical: bool,
    },
    Err(ErrKind),
}

pub struct Golden {
    pub name: &'static str,
    pub doc: String,
    pub expect: Expect,
}

const TAIL: &str = r#","no_recording_text":"Recording de-activated, submit text only","max_recording_time":30,"default_engine_number":0}"#;

fn canonical(selector: &str, lists: &str) -> String {
    format!(r#"{{"config_number":7,"selector_string":"{selector}","lists":[{lists}]{TAIL}"#)
}

fn ok(mode: RecordingMode, prompts: &[usize], canonical: bool) -> Expect {
    Expect::Ok {
        mode,
        prompts: prompts.to_vec(),
        canonical,
    }
}

/// Hand-classified config documents. Every expectation here was written from
/// the grammar rules, not by running the parser.
pub fn golden_configs() -> Vec<Golden> {
    use ErrKind::*;
    use RecordingMode::*;
    let l = |pairs: &str| format!(r#"{{"prompts":[{pairs}]}}"#);
    let g = |name, doc: String, expect| Golden { name, doc, expect };
    vec![
        g(
            "guided single list",
            canonical(
                "",
                &l(r#"{"text":"tossi 10 segons","seconds":10},{"text":"digui ommm amb la m prolongada 10 segons si pots","seconds":12}"#),
            ),
            ok(Guided, &[2], true),
        ),
        g(
            "guided with terminal textless pair",
            canonical("", &l(r#"{"text":"cough","seconds":10},{"text":"thank you please record again tomorrow","seconds":null}"#)),
            ok(Guided, &[2], true),
        ),
        g(
            "guided with mid-list textless pair",
            canonical(
                "",
                &l(r#"{"text":"cough","seconds":10},{"text":"describe the cough","seconds":null},{"text":"breathe","seconds":8}"#),
            ),
            ok(Guided, &[3], true),
        ),
        g(
            "guided two lists",
            canonical(
                "Tria estudi",
                &format!("{},{}", l(r#"{"text":"a","seconds":5}"#), l(r#"{"text":"b","seconds":6},{"text":"c","seconds":7}"#)),
            ),
            ok(Guided, &[1, 2], true),
        ),
        g(
            "guided four lists",
            canonical(
                "Choose",
                &[1, 2, 3, 4]
                    .iter()
                    .map(|i| l(&format!(r#"{{"text":"p{i}","seconds":{i}}}"#)))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ok(Guided, &[1, 1, 1, 1], true),
        ),
        g("free recording, empty lists", canonical("", ""), ok(FreeRecording, &[], true)),
        g("free recording, empty body", String::new(), ok(FreeRecording, &[], false)),
        g("free recording, whitespace body", " \n\t".into(), ok(FreeRecording, &[], false)),
        g(
            "text only with prompt",
            canonical("", &l(r#"{"text":"no_recording","seconds":0},{"text":"How do you feel today?","seconds":null}"#)),
            ok(TextOnly, &[2], true),
        ),
        g(
            "text only sentinel alone",
            canonical("", &l(r#"{"text":"no_recording","seconds":0}"#)),
            ok(TextOnly, &[1], true),
        ),
        g(
            "custom limits and engine",
            r#"{"config_number":7,"selector_string":"","lists":[{"prompts":[{"text":"long read","seconds":60}]}],"no_recording_text":"Només text","max_recording_time":60,"default_engine_number":1}"#.into(),
            ok(Guided, &[1], true),
        ),
        g(
            "defaults omitted",
            r#"{"lists":[{"prompts":[{"text":"cough","seconds":10}]}]}"#.into(),
            ok(Guided, &[1], false),
        ),
        g(
            "five lists",
            canonical("five", &vec![l(r#"{"text":"a","seconds":1}"#); 5].join(",")),
            Expect::Err(TooManyLists),
        ),
        g("empty prompt text", canonical("", &l(r#"{"text":"","seconds":3}"#)), Expect::Err(EmptyText)),
        g("blank prompt text", canonical("", &l(r#"{"text":"   ","seconds":3}"#)), Expect::Err(EmptyText)),
        g("zero seconds", canonical("", &l(r#"{"text":"cough","seconds":0}"#)), Expect::Err(NonPositive)),
        g("negative seconds", canonical("", &l(r#"{"text":"cough","seconds":-4}"#)), Expect::Err(NonPositive)),
        g(
            "sentinel out of place",
            canonical("", &l(r#"{"text":"cough","seconds":3},{"text":"no_recording","seconds":0}"#)),
            Expect::Err(NonPositive),
        ),
        g(
            "seconds above max",
            canonical("", &l(r#"{"text":"cough","seconds":31}"#)),
            Expect::Err(ExceedsLimit),
        ),
        g("not json", "lists: none".into(), Expect::Err(Malformed)),
        g(
            "unknown field",
            r#"{"config_number":7,"lists":[],"colour":"red"}"#.into(),
            Expect::Err(Malformed),
        ),
        g(
            "seconds as text",
            canonical("", &l(r#"{"text":"cough","seconds":"10"}"#)),
            Expect::Err(Malformed),
        ),
        g(
            "two lists without selector",
            canonical("", &format!("{},{}", l(r#"{"text":"a","seconds":5}"#), l(r#"{"text":"b","seconds":5}"#))),
            Expect::Err(Malformed),
        ),
        g("list without prompts", canonical("", r#"{"prompts":[]}"#), Expect::Err(Malformed)),
    ]
}
