//! Protocol metrics computed from a trace.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::{names, Trace, TraceRecord};
use crate::encounter::{EncounterStage, EventKind};
use crate::ids::DeviceId;

/// The conventional share flow used as the comparison point: five screens
/// and 15 to 30 seconds. Reported, not simulated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Baseline {
    pub screens: u32,
    pub seconds_min: f64,
    pub seconds_max: f64,
}

pub const BASELINE: Baseline = Baseline {
    screens: 5,
    seconds_min: 15.0,
    seconds_max: 30.0,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    /// Handshakes attempted plus pulls performed before sharing began.
    pub user_gesture_count: u32,
    /// From the first intent signal to entering Sharing, simulated seconds.
    pub time_to_sharing: Option<f64>,
    pub message_count: u64,
    /// Stages in order of first visit.
    pub stages_visited: Vec<EncounterStage>,
    /// The device whose records were counted: the first initiator.
    pub reference_device: Option<DeviceId>,
    pub first_intent_at: Option<f64>,
    pub sharing_at: Option<f64>,
    /// Set when Sharing was never reached; the other fields are partial.
    pub incomplete: bool,
    pub baseline: Baseline,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("trace never reaches Sharing")]
    IncompleteTrace(Box<Metrics>),
}

impl Metrics {
    pub fn require_complete(self) -> Result<Metrics, MetricsError> {
        if self.incomplete {
            Err(MetricsError::IncompleteTrace(Box::new(self)))
        } else {
            Ok(self)
        }
    }
}

fn is_protocol(r: &TraceRecord) -> bool {
    EventKind::from_name(&r.event).is_some()
}

/// Counts are taken on the device that initiated the first encounter, or on
/// the first device with protocol activity when nobody signalled intent.
pub fn metrics(trace: &Trace) -> Metrics {
    let message_count = trace.iter().filter(|r| r.event == names::SEND).count() as u64;
    let first_intent = trace
        .iter()
        .find(|r| r.event == EventKind::HandExtended.name() && r.accepted());
    let reference = first_intent
        .and_then(|r| r.detail_str("by").map(DeviceId::from))
        .or_else(|| trace.iter().find(|r| is_protocol(r)).and_then(|r| r.device_id.clone()));

    let Some(reference) = reference else {
        return Metrics {
            user_gesture_count: 0,
            time_to_sharing: None,
            message_count,
            stages_visited: Vec::new(),
            reference_device: None,
            first_intent_at: None,
            sharing_at: None,
            incomplete: true,
            baseline: BASELINE,
        };
    };

    let own: Vec<&TraceRecord> = trace.applied(&reference).filter(|r| is_protocol(r)).collect();
    let mut stages_visited = Vec::new();
    for r in &own {
        for s in [r.stage_before, r.stage_after].into_iter().flatten() {
            if !stages_visited.contains(&s) {
                stages_visited.push(s);
            }
        }
    }
    let sharing_at = own
        .iter()
        .find(|r| r.stage_after == Some(EncounterStage::Sharing))
        .map(|r| r.t);
    let before_sharing = |r: &&&TraceRecord| sharing_at.is_none_or(|s| r.t <= s);
    let handshakes = own
        .iter()
        .filter(before_sharing)
        .filter(|r| r.event == EventKind::HandExtended.name())
        .count();
    let pulls = own
        .iter()
        .filter(before_sharing)
        .filter(|r| r.event == EventKind::PullCompleted.name())
        .count();
    let first_intent_at = own
        .iter()
        .find(|r| r.event == EventKind::HandExtended.name())
        .map(|r| r.t);

    Metrics {
        user_gesture_count: (handshakes + pulls) as u32,
        time_to_sharing: match (first_intent_at, sharing_at) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        },
        message_count,
        stages_visited,
        reference_device: Some(reference),
        first_intent_at,
        sharing_at,
        incomplete: sharing_at.is_none(),
        baseline: BASELINE,
    }
}
