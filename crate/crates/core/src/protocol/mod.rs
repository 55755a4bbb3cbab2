//! I/O-free protocol core.
//!
//! Everything in here is a pure function over plain values: the runtime
//! config grammar, the prompt session state machine, the status document and
//! its upload rule, the personal-information guard, device identity and the
//! wire documents exchanged with the collection server. The server, the client
//! SDK, the simulator and the C ABI all build on these.

pub mod config;
pub mod endpoint;
pub mod identity;
pub mod personal_info;
pub mod session;
pub mod status;
pub mod wire;

pub use config::{
    config_number_from_filename, parse_runtime_config, required_selection, ConfigError,
    PromptList, PromptPair, RecordingMode, RuntimeConfig, SelectionRequirement,
};
pub use endpoint::{base_url, resolve_server_endpoint, EndpointError, DEFAULT_SERVER};
pub use identity::{generate_neighbor_code, NeighborCodeError, PhoneHash, PhoneHashError};
pub use personal_info::{
    covid_question_set, validate_personal_info, AnswerValue, PersonalInfoSchema,
    PersonalInfoViolation, Question, QuestionKind, AGE_CAP_TOKEN,
};
pub use session::{
    effective_record_seconds, expire_session, next_prompt, register_recording, select_list,
    session_expired, start_over, PromptStep, SessionError, SessionState,
};
pub use status::{reset_counts, should_upload_status, LocalConfigStatus, StatusError};
pub use wire::{AudioPayload, EngineResponse, IngestReceipt, ResponseDocument, SampleUpload};
