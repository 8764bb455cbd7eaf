//! Trace records and their JSON Lines form.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::canonical::{self, FloatStyle};
use crate::encounter::EncounterStage;
use crate::ids::DeviceId;

/// Harness record names. Protocol events use their [`EventKind`] names.
///
/// [`EventKind`]: crate::encounter::EventKind
pub mod names {
    pub const SEND: &str = "Send";
    pub const TERMINATION_REPORT: &str = "TerminationReport";
    pub const RESIDUE_EXPIRED: &str = "ResidueExpired";
    pub const GRANT_MINTED: &str = "GrantMinted";
    pub const GRANT_RECEIVED: &str = "GrantReceived";
    pub const OBJECT_OP: &str = "ObjectOp";
    pub const OFFER_ACCEPTED: &str = "OfferAccepted";
    pub const DELTA_APPLIED: &str = "DeltaApplied";
    pub const TXN: &str = "Txn";
    pub const ACCESS: &str = "Access";
    pub const LISTING_EXPIRED: &str = "ListingExpired";
    pub const ALIGNMENT_FAILED: &str = "AlignmentFailed";
    pub const QUIESCENCE_TIMEOUT: &str = "QuiescenceTimeout";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TraceRecord {
    pub t: f64,
    pub seq: u64,
    pub device_id: Option<DeviceId>,
    pub event: String,
    pub stage_before: Option<EncounterStage>,
    pub stage_after: Option<EncounterStage>,
    pub details: Map<String, Value>,
}

impl TraceRecord {
    /// Protocol records carry `"accepted": true` when the event was applied.
    pub fn accepted(&self) -> bool {
        self.details.get("accepted").and_then(Value::as_bool).unwrap_or(false)
    }

    pub fn detail_str(&self, key: &str) -> Option<&str> {
        self.details.get(key).and_then(Value::as_str)
    }

    pub fn to_line(&self) -> String {
        canonical::to_canonical_string(self, FloatStyle::Fixed6).expect("trace record serializes")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Error)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

impl Trace {
    pub fn push(
        &mut self,
        t: f64,
        device: Option<&DeviceId>,
        event: &str,
        stages: (Option<EncounterStage>, Option<EncounterStage>),
        details: Map<String, Value>,
    ) {
        let seq = self.records.len() as u64;
        self.records.push(TraceRecord {
            t,
            seq,
            device_id: device.cloned(),
            event: event.to_owned(),
            stage_before: stages.0,
            stage_after: stages.1,
            details,
        });
    }

    /// One canonical record per line, six-decimal floats, trailing newline.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, TraceParseError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: TraceRecord = serde_json::from_str(line).map_err(|e| TraceParseError {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter()
    }

    /// Applied protocol records of one device.
    pub fn applied<'a>(&'a self, device: &'a DeviceId) -> impl Iterator<Item = &'a TraceRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.device_id.as_ref() == Some(device) && r.accepted())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn jsonl_round_trip_is_byte_exact() {
        let mut tr = Trace::default();
        let mut d = Map::new();
        d.insert("z".into(), json!(0.1 + 0.2));
        d.insert("a".into(), json!(-0.0));
        d.insert("n".into(), json!(3));
        tr.push(1.0 / 3.0, Some(&"A".into()), "GripSustained", (Some(EncounterStage::Previewed), Some(EncounterStage::Accepted)), d);
        tr.push(2.0, None, names::QUIESCENCE_TIMEOUT, (None, None), Map::new());
        let text = tr.to_jsonl();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"details":{"a":0.000000,"n":3,"z":0.300000},"deviceId":"A","event":"GripSustained","seq":0,"stageAfter":"Accepted","stageBefore":"Previewed","t":0.333333}"#
        );
        let back = Trace::parse_jsonl(&text).unwrap();
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn bad_line_is_reported() {
        let e = Trace::parse_jsonl("\n{\"t\":1}\n").unwrap_err();
        assert_eq!(e.line, 2);
    }
}
