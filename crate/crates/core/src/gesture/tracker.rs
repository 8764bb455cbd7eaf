use std::collections::VecDeque;

use super::{
    detect_clasp, detect_extension, detect_pull, detect_release, detect_sustained, GestureError, GestureEvent,
    GestureKind, HandFrame, PairSample, EXTENSION_WINDOW_S, PULL_WINDOW_S,
};
use crate::alignment::Vec3;
use crate::ids::DeviceId;

/// Extension windows keep a little more than the minimum span.
const EXTENSION_HISTORY_S: f64 = EXTENSION_WINDOW_S + 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackerPhase {
    Idle,
    /// Clasp seen, waiting for the grip to be sustained.
    Holding,
    /// Grip sustained, waiting for the pull.
    Pulling,
    /// Pull done; the hands may part without further events.
    Retired,
    /// A clasp during sharing; its end is the release gesture.
    Farewell,
}

/// Gesture state for one device watching its own hand and one peer's.
///
/// Feed paired frames in time order with [`GestureTracker::observe`]. Both
/// frames are in the observing device's local frame.
#[derive(Clone, Debug)]
pub struct GestureTracker {
    own: DeviceId,
    peer: DeviceId,
    phase: TrackerPhase,
    sharing: bool,
    initiator: Option<DeviceId>,
    extension: [VecDeque<HandFrame>; 2],
    extended: [bool; 2],
    onset: f64,
    samples: Vec<PairSample>,
}

impl GestureTracker {
    pub fn new(own: DeviceId, peer: DeviceId) -> Self {
        Self {
            own,
            peer,
            phase: TrackerPhase::Idle,
            sharing: false,
            initiator: None,
            extension: [VecDeque::new(), VecDeque::new()],
            extended: [false; 2],
            onset: 0.0,
            samples: Vec::new(),
        }
    }

    pub fn phase(&self) -> TrackerPhase {
        self.phase
    }

    /// While sharing, a new clasp is treated as the farewell handshake.
    pub fn set_sharing(&mut self, sharing: bool) {
        self.sharing = sharing;
    }

    /// Breaks pull ties in favour of the initiator once roles are known.
    pub fn set_initiator(&mut self, initiator: DeviceId) {
        self.initiator = Some(initiator);
    }

    /// Allows both hands to signal intent again.
    pub fn rearm(&mut self) {
        self.extended = [false; 2];
        self.extension.iter_mut().for_each(VecDeque::clear);
    }

    fn ordered(&self) -> [DeviceId; 2] {
        match &self.initiator {
            Some(i) if *i == self.peer => [self.peer.clone(), self.own.clone()],
            Some(_) => [self.own.clone(), self.peer.clone()],
            None if self.peer < self.own => [self.peer.clone(), self.own.clone()],
            None => [self.own.clone(), self.peer.clone()],
        }
    }

    pub fn observe(&mut self, own: &HandFrame, peer: &HandFrame) -> Result<Vec<GestureEvent>, GestureError> {
        let mut events = Vec::new();
        let clasp = detect_clasp(own, peer)?;
        let t = own.t.max(peer.t);

        if self.phase == TrackerPhase::Idle && !self.sharing {
            self.track_extension(own, peer, &mut events);
        }

        // Heads ordered as `ordered()` so pull ties go to the initiator.
        let order = self.ordered();
        let mut sample = PairSample::from_frames(own, peer);
        if order[0] == self.peer {
            sample.heads.swap(0, 1);
        }

        match self.phase {
            TrackerPhase::Idle => {
                if let Some(ev) = clasp {
                    self.onset = ev.t;
                    self.samples.clear();
                    self.samples.push(sample);
                    if self.sharing {
                        self.phase = TrackerPhase::Farewell;
                    } else {
                        self.phase = TrackerPhase::Holding;
                        events.push(ev);
                    }
                }
            }
            TrackerPhase::Holding => {
                self.samples.push(sample);
                if let Some(ev) = detect_sustained(&self.samples, self.onset) {
                    match ev.kind {
                        GestureKind::GripSustained => {
                            self.phase = TrackerPhase::Pulling;
                            self.samples.clear();
                        }
                        _ => {
                            self.phase = TrackerPhase::Idle;
                            self.rearm();
                        }
                    }
                    events.push(ev);
                }
            }
            TrackerPhase::Pulling => {
                self.samples.push(sample);
                self.samples.retain(|s| t - s.t <= PULL_WINDOW_S + 0.5);
                if let Some(ev) = detect_release(&self.samples) {
                    self.phase = TrackerPhase::Idle;
                    self.rearm();
                    events.push(ev);
                } else if let Some(ev) = detect_pull(&self.samples, &order) {
                    self.phase = TrackerPhase::Retired;
                    self.samples.clear();
                    events.push(ev);
                }
            }
            TrackerPhase::Retired | TrackerPhase::Farewell => {
                self.samples.push(sample);
                self.samples.retain(|s| t - s.t <= PULL_WINDOW_S);
                if let Some(ev) = detect_release(&self.samples) {
                    if self.phase == TrackerPhase::Farewell {
                        events.push(ev);
                    }
                    self.phase = TrackerPhase::Idle;
                    self.samples.clear();
                    self.rearm();
                }
            }
        }
        Ok(events)
    }

    fn track_extension(&mut self, own: &HandFrame, peer: &HandFrame, events: &mut Vec<GestureEvent>) {
        let hands = [(own, peer, &self.peer), (peer, own, &self.own)];
        let mut fired = Vec::new();
        for (k, (hand, other, target)) in hands.into_iter().enumerate() {
            let window = &mut self.extension[k];
            window.push_back(hand.clone());
            while window.front().is_some_and(|f| hand.t - f.t > EXTENSION_HISTORY_S) {
                window.pop_front();
            }
            if self.extended[k] {
                continue;
            }
            let dir = other.head_pos - hand.head_pos;
            let dir = Vec3::new(dir.x, 0.0, dir.z);
            let Some(dir) = dir.try_normalize(1e-9) else { continue };
            if let Some(mut ev) = detect_extension(window.make_contiguous(), &dir) {
                ev.toward = Some(target.clone());
                fired.push((k, ev));
            }
        }
        fired.sort_by(|a, b| a.1.t.total_cmp(&b.1.t).then_with(|| a.1.by.cmp(&b.1.by)));
        for (k, ev) in fired {
            self.extended[k] = true;
            events.push(ev);
        }
    }
}
