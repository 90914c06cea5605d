//! Coalition-game assignment of streaming clients to bandwidth-capped servers.
//!
//! * [`engine`] is the pure coalitional game: payoffs, single-player transfers,
//!   the stabilization loop and its stability/termination diagnostics.
//! * [`sim`] is a discrete-event simulator of rate-adaptive segment streaming
//!   over processor-sharing servers. It produces the requested bitrates the
//!   game consumes and measures what the game changes.
//! * [`orchestrator`] keeps the client → server assignment map, runs the game
//!   over it and serves it through a small line protocol.
//! * [`harness`] sweeps scenarios (random phase vs. game phase) and writes the
//!   CSV tables.

pub mod engine;
pub mod harness;
mod ids;
pub mod orchestrator;
pub mod rng;
pub mod sim;

pub use ids::{ClientId, IdError, ServerId};

/// Bandwidth and bitrate unit used throughout the game: integer Kbps.
pub type Kbps = i64;
