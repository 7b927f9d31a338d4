//! Heartbeat timeout detection and EWMA reliability scores.

use serde::{Deserialize, Serialize};

/// Smoothing constant for reliability updates.
pub const DEFAULT_LAMBDA: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRecord {
    pub provider: String,
    pub score: f64,
    pub last_heartbeat_ms: u64,
}

impl ReliabilityRecord {
    pub fn new(provider: impl Into<String>, last_heartbeat_ms: u64) -> Self {
        ReliabilityRecord { provider: provider.into(), score: 1.0, last_heartbeat_ms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    Success,
    Failure,
}

/// Providers silent for strictly longer than `timeout_ms`, sorted by id.
pub fn detect_failures(records: &[ReliabilityRecord], now_ms: u64, timeout_ms: u64) -> Vec<String> {
    let mut out: Vec<String> = records
        .iter()
        .filter(|r| now_ms.saturating_sub(r.last_heartbeat_ms) > timeout_ms)
        .map(|r| r.provider.clone())
        .collect();
    out.sort();
    out
}

pub fn update_reliability(record: &ReliabilityRecord, observation: Observation) -> ReliabilityRecord {
    update_reliability_with(record, observation, DEFAULT_LAMBDA)
}

/// `score' = λ·score + (1 − λ)·obs`, clamped to `[0, 1]`.
pub fn update_reliability_with(record: &ReliabilityRecord, observation: Observation, lambda: f64) -> ReliabilityRecord {
    let obs = match observation {
        Observation::Success => 1.0,
        Observation::Failure => 0.0,
    };
    let score = (lambda * record.score + (1.0 - lambda) * obs).clamp(0.0, 1.0);
    ReliabilityRecord { score, ..record.clone() }
}
