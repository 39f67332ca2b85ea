//! Identification of ICS honeypots posing as Siemens S7 PLCs from the
//! IP time-to-live their replies carry.
//!
//! The pipeline harvests candidate hosts ([`ingest`]), measures reply TTL
//! and hop distance ([`probe`]), reconstructs the TTL each host stamped on
//! its packets and matches it against reference values ([`fingerprint`],
//! [`analysis`]), then publishes anonymized results ([`report`]). The
//! [`netsim`] module provides a deterministic network for testing all of
//! it without touching the internet.

pub mod analysis;
pub mod cli;
pub mod fingerprint;
pub mod files;
pub mod ingest;
pub mod netsim;
pub mod probe;
pub mod report;
