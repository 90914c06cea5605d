//! Rate-based bitrate selection: harmonic-mean throughput times a safety
//! factor, with a drop to the lowest rung when the buffer runs low.

use super::{Ladder, SimConfig};
use crate::Kbps;

/// Harmonic mean of the last `window` samples. An empty history falls back
/// to the lowest ladder rate.
pub fn estimate_throughput(history: &[f64], window: usize, ladder: &Ladder) -> f64 {
    let tail = &history[history.len().saturating_sub(window)..];
    if tail.is_empty() {
        return ladder.lowest() as f64;
    }
    let inv: f64 = tail.iter().map(|x| 1.0 / x).sum();
    tail.len() as f64 / inv
}

pub fn select_bitrate(est: f64, buffer_s: f64, ladder: &Ladder, cfg: &SimConfig) -> Kbps {
    if buffer_s < cfg.panic_buffer_s {
        return ladder.lowest();
    }
    let budget = cfg.safety_alpha * est;
    ladder
        .bitrates()
        .iter()
        .rev()
        .copied()
        .find(|&r| r as f64 <= budget)
        .unwrap_or_else(|| ladder.lowest())
}
