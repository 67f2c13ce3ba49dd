//! Deterministic discrete-event simulator for the Real-Time Media Flow Protocol.
//!
//! The crate is layered bottom-up:
//!
//! - [`netsim`]: clock, event queue, seeded randomness, links and routing;
//! - [`wire`]: chunk/packet structures and the binary codec;
//! - [`flows`]: per-flow sequencing, bundling, acks, loss detection, flow control;
//! - [`cc`]: per-session congestion control with time-critical modes;
//! - [`engine`]: the protocol layer (sessions, handshake, demultiplexing, mobility);
//! - [`app`]: configurable traffic sources/sinks with statistics;
//! - [`harness`]: config parsing, dumbbell topology, presets and CSV output.

pub mod app;
pub mod cc;
pub mod engine;
pub mod flows;
pub mod harness;
pub mod netsim;
pub mod wire;
