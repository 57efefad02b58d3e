//! An HL7 v2 portal: fetches patient demographics from HL7 servers over MLLP
//! and serves them to plain TCP clients through a small line-based command
//! language, with labels and messages taken from file-based language packs.
//!
//! * [`hl7`]: ER7 parsing and serialization
//! * [`mllp`]: MLLP framing and the upstream client connection
//! * [`lexicon`]: language packs and hot reload
//! * [`mapping`], [`interpreter`]: the command set and per-client sessions
//! * [`server`], [`eventlog`]: the downstream TCP server and its event log
//! * [`mock`]: fixture-backed HL7 server for tests
//! * [`client`]: command-line client

pub mod client;
pub mod eventlog;
pub mod hl7;
pub mod interpreter;
pub mod lexicon;
pub mod mapping;
pub mod mllp;
pub mod mock;
pub mod qbp;
pub mod server;
pub mod text;
