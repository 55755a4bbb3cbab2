//! Voice-sample collection: a pure protocol core, a filesystem store, an
//! engine registry, an HTTP collection server, an offline-first client SDK and
//! a multi-phone scenario simulator.

pub mod protocol;
pub mod storage;
pub mod client;
pub mod engine;
pub mod server;
pub mod simulator;
