//! A stand-alone micro-benchmark suite that models the parameter-server
//! communication pattern of distributed deep-learning training over a
//! self-contained RPC layer.
//!
//! The suite generates deep-learning-shaped scatter-gather payloads and
//! measures point-to-point latency, point-to-point bandwidth, and
//! parameter-server throughput across configurable cluster shapes, payload
//! modes, and networks.
//!
//! Crate layout:
//!
//! - [`workload`]: payload specifications (Small/Medium/Large buffer taxonomy,
//!   uniform/random/skew distribution schemes) and deterministic
//!   materialization into byte buffers.
//! - [`wire`]: the bit-exact frame format with serialized (contiguous TLV) and
//!   non-serialized (scatter-gather segment list) body encodings.
//! - [`rpc`]: parameter-server and worker endpoints over a pluggable reliable
//!   byte-stream transport; echo, put/ack, and get exchanges.
//! - [`bench`]: the three benchmark drivers with warmup/measurement phasing,
//!   statistics, and multi-run aggregation.
//! - [`monitor`]: per-process CPU/memory/network sampling during a run.
//! - [`cli`]: configuration parsing, role dispatch, local multi-process
//!   orchestration, and JSON/CSV report emission.

pub mod bench;
pub mod cli;
pub mod monitor;
pub mod rpc;
pub mod wire;
pub mod workload;
