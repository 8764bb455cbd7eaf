//! Gesture detection over hand-pose streams.
//!
//! The detectors here are stateless functions over frame windows.
//! [`GestureTracker`] owns the windows for one device watching one peer and
//! sequences the detectors through a handshake.

mod tracker;

pub use tracker::{GestureTracker, TrackerPhase};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::Vec3;
use crate::ids::DeviceId;

/// Forward palm travel that signals intent.
pub const EXTENSION_DISTANCE_M: f64 = 0.15;
/// Minimum span of the extension window.
pub const EXTENSION_WINDOW_S: f64 = 0.3;
/// Palms this close count as within reach of a clasp.
pub const CLASP_REACH_M: f64 = 0.15;
/// Palms this close count as in contact.
pub const CONTACT_M: f64 = 0.05;
/// Maximum angle between a palm normal and the direction to the other palm.
pub const FACING_MAX_DEG: f64 = 45.0;
pub const SUSTAIN_S: f64 = 0.8;
pub const PULL_DISTANCE_M: f64 = 0.10;
pub const PULL_WINDOW_S: f64 = 1.0;
/// A grip must stay broken this long before it counts as released.
pub const RELEASE_DEBOUNCE_S: f64 = 0.1;
/// Maximum timestamp difference between two frames compared as a pair.
pub const MAX_PAIR_SKEW_S: f64 = 0.05;

/// Slack for comparing simulated times and distances against thresholds.
const EPS: f64 = 1e-9;

/// One sample of one hand, in the observing device's local frame. Local
/// frames are gravity-aligned with +y up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HandFrame {
    pub device_id: DeviceId,
    pub t: f64,
    pub palm_pos: Vec3,
    pub palm_normal: Vec3,
    pub grip_closed: bool,
    pub head_pos: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GestureKind {
    HandExtended,
    ClaspDetected,
    GripSustained,
    GripReleasedEarly,
    PullCompleted,
    ReleaseDetected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GestureEvent {
    pub kind: GestureKind,
    pub t: f64,
    /// Set for clasp, sustained grip and pull.
    pub clasp_midpoint: Option<Vec3>,
    /// Extending hand for `HandExtended`, puller for `PullCompleted`.
    pub by: Option<DeviceId>,
    /// Target of a `HandExtended`.
    pub toward: Option<DeviceId>,
}

impl GestureEvent {
    fn at(kind: GestureKind, t: f64) -> Self {
        Self {
            kind,
            t,
            clasp_midpoint: None,
            by: None,
            toward: None,
        }
    }

    fn with_midpoint(mut self, midpoint: Vec3) -> Self {
        self.clasp_midpoint = Some(midpoint);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GestureError {
    #[error("both frames come from {0}")]
    SameDevice(DeviceId),
    #[error("frames are {skew:.3} s apart")]
    FrameSkew { skew: f64 },
}

/// Forward reach of a palm along `peer_dir`, measured from the head.
pub fn reach(frame: &HandFrame, peer_dir: &Vec3) -> f64 {
    (frame.palm_pos - frame.head_pos).dot(peer_dir)
}

/// Fires when the last open palm in `frames` is at least
/// [`EXTENSION_DISTANCE_M`] further toward the peer than the least extended
/// frame in the window. The window must span [`EXTENSION_WINDOW_S`].
pub fn detect_extension(frames: &[HandFrame], peer_dir: &Vec3) -> Option<GestureEvent> {
    let (first, last) = (frames.first()?, frames.last()?);
    if last.t - first.t < EXTENSION_WINDOW_S - EPS || last.grip_closed {
        return None;
    }
    let least = frames.iter().map(|f| reach(f, peer_dir)).fold(f64::INFINITY, f64::min);
    if reach(last, peer_dir) - least >= EXTENSION_DISTANCE_M - EPS {
        let mut ev = GestureEvent::at(GestureKind::HandExtended, last.t);
        ev.by = Some(last.device_id.clone());
        Some(ev)
    } else {
        None
    }
}

/// Per-condition breakdown for one pair of frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClaspConditions {
    pub distance: f64,
    pub within_reach: bool,
    pub facing: bool,
    pub contact: bool,
    pub both_closed: bool,
}

impl ClaspConditions {
    pub fn evaluate(a: &HandFrame, b: &HandFrame) -> Self {
        let gap = b.palm_pos - a.palm_pos;
        let distance = gap.norm();
        let facing = if distance < EPS {
            true
        } else {
            let dir = gap / distance;
            let cos_max = FACING_MAX_DEG.to_radians().cos();
            a.palm_normal.dot(&dir) >= cos_max - EPS && b.palm_normal.dot(&-dir) >= cos_max - EPS
        };
        Self {
            distance,
            within_reach: distance <= CLASP_REACH_M + EPS,
            facing,
            contact: distance <= CONTACT_M + EPS,
            both_closed: a.grip_closed && b.grip_closed,
        }
    }

    pub fn clasped(&self) -> bool {
        self.within_reach && self.facing && self.contact && self.both_closed
    }

    /// Whether an established grip still holds.
    pub fn holding(&self) -> bool {
        self.within_reach && self.both_closed
    }
}

pub fn midpoint(a: &HandFrame, b: &HandFrame) -> Vec3 {
    (a.palm_pos + b.palm_pos) / 2.0
}

fn check_pair(a: &HandFrame, b: &HandFrame) -> Result<(), GestureError> {
    if a.device_id == b.device_id {
        return Err(GestureError::SameDevice(a.device_id.clone()));
    }
    let skew = (a.t - b.t).abs();
    if skew > MAX_PAIR_SKEW_S + EPS {
        return Err(GestureError::FrameSkew { skew });
    }
    Ok(())
}

pub fn detect_clasp(a: &HandFrame, b: &HandFrame) -> Result<Option<GestureEvent>, GestureError> {
    check_pair(a, b)?;
    Ok(ClaspConditions::evaluate(a, b)
        .clasped()
        .then(|| GestureEvent::at(GestureKind::ClaspDetected, a.t.max(b.t)).with_midpoint(midpoint(a, b))))
}

/// Grip state of a hand pair at one instant. `heads` follows the order of
/// the participants passed to [`detect_pull`].
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub t: f64,
    pub valid: bool,
    pub midpoint: Vec3,
    pub heads: [Vec3; 2],
}

impl PairSample {
    pub fn from_frames(a: &HandFrame, b: &HandFrame) -> Self {
        Self {
            t: a.t.max(b.t),
            valid: ClaspConditions::evaluate(a, b).holding(),
            midpoint: midpoint(a, b),
            heads: [a.head_pos, b.head_pos],
        }
    }
}

/// Time at which a broken grip is confirmed: the first sample at which the
/// samples have been invalid for [`RELEASE_DEBOUNCE_S`] with no valid sample
/// in between.
fn first_confirmed_break(samples: &[PairSample]) -> Option<(usize, f64)> {
    let mut broken_since = None;
    for (i, s) in samples.iter().enumerate() {
        if s.valid {
            broken_since = None;
        } else {
            let since = *broken_since.get_or_insert(s.t);
            if s.t - since >= RELEASE_DEBOUNCE_S - EPS {
                return Some((i, s.t));
            }
        }
    }
    None
}

/// Grip history from the clasp at `onset`. Sustained when a valid sample lies
/// [`SUSTAIN_S`] or more after the onset before any confirmed break.
pub fn detect_sustained(samples: &[PairSample], onset: f64) -> Option<GestureEvent> {
    let from = samples.partition_point(|s| s.t < onset);
    let samples = &samples[from..];
    let broken = first_confirmed_break(samples);
    let limit = broken.map_or(samples.len(), |(i, _)| i);
    if let Some(s) = samples[..limit]
        .iter()
        .find(|s| s.valid && s.t - onset >= SUSTAIN_S - EPS)
    {
        return Some(GestureEvent::at(GestureKind::GripSustained, s.t).with_midpoint(s.midpoint));
    }
    broken.map(|(_, t)| GestureEvent::at(GestureKind::GripReleasedEarly, t))
}

/// Displacement of the grip midpoint toward either participant's head,
/// measured horizontally, over the last [`PULL_WINDOW_S`] of unbroken grip. The larger displacement
/// names the puller; an exact tie goes to `participants[0]`, which callers
/// set to the initiator.
pub fn detect_pull(samples: &[PairSample], participants: &[DeviceId; 2]) -> Option<GestureEvent> {
    let last = samples.last()?;
    if !last.valid {
        return None;
    }
    let start = samples.iter().rposition(|s| !s.valid).map_or(0, |i| i + 1);
    let mut best = [f64::NEG_INFINITY; 2];
    for s in &samples[start..] {
        if last.t - s.t > PULL_WINDOW_S + EPS {
            continue;
        }
        let moved = last.midpoint - s.midpoint;
        for (k, head) in s.heads.iter().enumerate() {
            let mut to_head = head - s.midpoint;
            to_head.y = 0.0;
            let len = to_head.norm();
            if len > EPS {
                best[k] = best[k].max(moved.dot(&(to_head / len)));
            }
        }
    }
    let k = if best[1] > best[0] { 1 } else { 0 };
    (best[k] >= PULL_DISTANCE_M - EPS).then(|| {
        let mut ev = GestureEvent::at(GestureKind::PullCompleted, last.t).with_midpoint(last.midpoint);
        ev.by = Some(participants[k].clone());
        ev
    })
}

/// Fires once the grip has been broken (a grip open or palms more than
/// [`CLASP_REACH_M`] apart) for [`RELEASE_DEBOUNCE_S`]. Missing frames do not
/// count as a break.
pub fn detect_release(samples: &[PairSample]) -> Option<GestureEvent> {
    first_confirmed_break(samples).map(|(_, t)| GestureEvent::at(GestureKind::ReleaseDetected, t))
}
