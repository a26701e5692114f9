//! Portable checkpoint/restore runtime with attested migration.
//!
//! - [`vm`]: stack-machine interpreter and state capture
//! - [`snapshot`]: encrypted, chunked snapshot files and page deltas
//! - [`attestation`]: quote verification and Merkle component trees
//! - [`migration`]: attested snapshot transfer between nodes
//! - [`scheduler`]: migrate-or-stay decisions and cost calibration
//! - [`replication`]: replica sync with vector clocks and failover
//! - [`speculation`]: fast/slow dual-path execution
//! - [`validation`]: streaming output gating
//! - [`sim`]: deterministic simulated network

pub mod attestation;
pub mod bytes;
pub mod clock;
pub mod digest;
pub mod migration;
pub mod replication;
pub mod scheduler;
pub mod sim;
pub mod snapshot;
pub mod speculation;
pub mod validation;
pub mod vm;

pub use digest::Digest;
