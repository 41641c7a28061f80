//! Runtime adjustment from biometric streams.
//!
//! A rule fires its action once its condition has held continuously for
//! `sustain_ms`, then stays quiet until the condition has been false for
//! `sustain_ms` (hysteresis). Samples are treated as sample-and-hold.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::protocol::command_from_value;
use crate::session::Command;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PulseBpm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Greater,
    Less,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Greater => value > threshold,
            Comparator::Less => value < threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiometricRule {
    pub metric: Metric,
    pub comparator: Comparator,
    pub threshold: f64,
    pub sustain_ms: i64,
    pub action: Command,
}

/// A rule action emitted at sample time `t_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct Triggered {
    pub t_ms: i64,
    pub rule: usize,
    pub action: Command,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct RuleState {
    disarmed: bool,
    true_since: Option<i64>,
    false_since: Option<i64>,
}

/// Incremental evaluator for a fixed rule set.
#[derive(Debug, Clone, PartialEq)]
pub struct BiometricMonitor {
    rules: Vec<BiometricRule>,
    states: Vec<RuleState>,
}

impl BiometricMonitor {
    pub fn new(rules: Vec<BiometricRule>) -> Self {
        let states = vec![RuleState::default(); rules.len()];
        Self { rules, states }
    }

    pub fn rules(&self) -> &[BiometricRule] {
        &self.rules
    }

    /// Feeds one pulse sample; samples must arrive in time order.
    pub fn push(&mut self, t_ms: i64, pulse_bpm: f64) -> Vec<Triggered> {
        let mut out = Vec::new();
        for (i, (rule, st)) in self.rules.iter().zip(&mut self.states).enumerate() {
            let value = match rule.metric {
                Metric::PulseBpm => pulse_bpm,
            };
            if rule.comparator.holds(value, rule.threshold) {
                st.false_since = None;
                let since = *st.true_since.get_or_insert(t_ms);
                if !st.disarmed && t_ms - since >= rule.sustain_ms {
                    st.disarmed = true;
                    out.push(Triggered { t_ms, rule: i, action: rule.action.clone() });
                }
            } else {
                st.true_since = None;
                let since = *st.false_since.get_or_insert(t_ms);
                if st.disarmed && t_ms - since >= rule.sustain_ms {
                    st.disarmed = false;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rule {index}: {reason}")]
pub struct RulesError {
    pub index: usize,
    pub reason: String,
}

#[derive(Deserialize)]
struct RawRule {
    metric: Metric,
    comparator: Comparator,
    threshold: f64,
    sustain_ms: i64,
    command: Value,
}

/// Parses a rules file: a JSON list of objects like
/// `{"metric": "pulse_bpm", "comparator": "greater", "threshold": 110,
/// "sustain_ms": 5000, "command": {"action": "pause"}}`.
pub fn parse_rules(text: &[u8]) -> Result<Vec<BiometricRule>, RulesError> {
    let raw: Vec<Value> =
        serde_json::from_slice(text).map_err(|e| RulesError { index: 0, reason: e.to_string() })?;
    raw.into_iter()
        .enumerate()
        .map(|(index, v)| {
            let err = |reason: String| RulesError { index, reason };
            let r: RawRule = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
            if !r.threshold.is_finite() {
                return Err(err("threshold must be finite".into()));
            }
            if r.sustain_ms < 0 {
                return Err(err("sustain_ms must be non-negative".into()));
            }
            let action = command_from_value(&r.command).map_err(|e| err(e.to_string()))?;
            Ok(BiometricRule { metric: r.metric, comparator: r.comparator, threshold: r.threshold, sustain_ms: r.sustain_ms, action })
        })
        .collect()
}

/// Evaluates `rules` over a time-sorted history of `(t_ms, value)` samples.
pub fn eval_biometric(rules: &[BiometricRule], history: &[(i64, f64)]) -> Vec<Triggered> {
    let mut monitor = BiometricMonitor::new(rules.to_vec());
    history.iter().flat_map(|&(t, v)| monitor.push(t, v)).collect()
}
