//! Ring-collective byte and time models.
//!
//! Per-participant wire bytes for a payload of `S` bytes across `N` ranks:
//! allgather and reducescatter move `S * (N-1) / N`, allreduce moves
//! `2 * S * (N-1) / N`, and all-to-all (treated as one aggregate exchange)
//! moves `S * (N-1) / N`. Time follows the usual alpha-beta form:
//! `steps * latency + wire_bytes / bandwidth`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollectiveKind {
    AllGather,
    ReduceScatter,
    AllReduce,
    AllToAll,
}

/// Bytes each participant puts on the wire.
pub fn collective_bytes(kind: CollectiveKind, payload: f64, participants: usize) -> f64 {
    if participants <= 1 {
        return 0.0;
    }
    let n = participants as f64;
    let share = payload * (n - 1.0) / n;
    match kind {
        CollectiveKind::AllGather | CollectiveKind::ReduceScatter | CollectiveKind::AllToAll => {
            share
        }
        CollectiveKind::AllReduce => 2.0 * share,
    }
}

/// Latency steps the ring takes to complete.
pub fn collective_steps(kind: CollectiveKind, participants: usize) -> u64 {
    if participants <= 1 {
        return 0;
    }
    let n = participants as u64;
    match kind {
        CollectiveKind::AllGather | CollectiveKind::ReduceScatter => n - 1,
        CollectiveKind::AllReduce => 2 * (n - 1),
        CollectiveKind::AllToAll => 1,
    }
}

/// Seconds to move `payload` bytes across `participants` ranks on a link of
/// the given per-rank `bandwidth` (bytes/s) and per-step `latency` (s).
pub fn collective_time(
    kind: CollectiveKind,
    payload: f64,
    participants: usize,
    bandwidth: f64,
    latency: f64,
) -> f64 {
    if participants <= 1 {
        return 0.0;
    }
    let wire = collective_bytes(kind, payload, participants);
    collective_steps(kind, participants) as f64 * latency + wire / bandwidth
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allgather_share() {
        assert_eq!(collective_bytes(CollectiveKind::AllGather, 1024.0, 4), 768.0);
    }

    #[test]
    fn single_participant_is_free() {
        for kind in [
            CollectiveKind::AllGather,
            CollectiveKind::ReduceScatter,
            CollectiveKind::AllReduce,
            CollectiveKind::AllToAll,
        ] {
            assert_eq!(collective_bytes(kind, 123.0, 1), 0.0);
            assert_eq!(collective_time(kind, 123.0, 1, 1e9, 1e-6), 0.0);
        }
    }

    #[test]
    fn allreduce_doubles_the_share() {
        let s = 8.0 * 1024.0 * 1024.0;
        let bytes = collective_bytes(CollectiveKind::AllReduce, s, 16);
        assert_eq!(bytes, 2.0 * s * 15.0 / 16.0);
        assert_eq!(bytes, 15.0 * 1024.0 * 1024.0);
    }

    #[test]
    fn zero_latency_time_is_proportional_to_bytes() {
        let t1 = collective_time(CollectiveKind::ReduceScatter, 1e6, 8, 1e9, 0.0);
        let t2 = collective_time(CollectiveKind::ReduceScatter, 5e5, 8, 1e9, 0.0);
        assert!((t1 - 2.0 * t2).abs() < 1e-18);
        assert_eq!(t1, collective_bytes(CollectiveKind::ReduceScatter, 1e6, 8) / 1e9);
    }

    #[test]
    fn latency_scales_with_ring_steps() {
        let lat = 1e-5;
        let t = collective_time(CollectiveKind::AllReduce, 0.0, 9, 1e9, lat);
        assert!((t - 16.0 * lat).abs() < 1e-18);
    }
}
