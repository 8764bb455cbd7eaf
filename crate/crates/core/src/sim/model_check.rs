//! Exhaustive breadth-first exploration of the encounter stage machine.
//!
//! States are sessions plus two path flags recording whether the current
//! attempt has seen a bilateral clasp and a sustained grip. Both flags reset
//! when an attempt is aborted. Any reachable Sharing state without both flags
//! is a counterexample.

use std::collections::{BTreeSet, VecDeque};

use crate::alignment::AlignmentResult;
use crate::discovery::BeaconToken;
use crate::encounter::{EncounterError, EncounterSession, EncounterStage, ProtocolEvent, Transition};
use crate::ids::{DeviceId, SessionId};
use crate::permissions::RevocationTrigger;

#[derive(Clone, Debug, PartialEq)]
pub struct PathState {
    pub session: EncounterSession,
    pub bilateral: bool,
    pub sustained: bool,
}

impl PathState {
    fn key(&self) -> (String, bool, bool) {
        (
            serde_json::to_string(&self.session).expect("session serializes"),
            self.bilateral,
            self.sustained,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exploration {
    pub states: usize,
    pub transitions: usize,
    /// Event names from the initial state to the first violation.
    pub counterexample: Option<Vec<String>>,
}

/// Every event the stage machine can be offered, for participants `a`, `b`.
pub fn alphabet(a: &DeviceId, b: &DeviceId) -> Vec<ProtocolEvent> {
    vec![
        ProtocolEvent::PrerequisiteSatisfied,
        ProtocolEvent::BeaconSeen {
            token: BeaconToken([0; 16]),
        },
        ProtocolEvent::HandExtended {
            by: a.clone(),
            toward: b.clone(),
        },
        ProtocolEvent::HandExtended {
            by: b.clone(),
            toward: a.clone(),
        },
        ProtocolEvent::ClaspDetected { bilateral: true },
        ProtocolEvent::ClaspDetected { bilateral: false },
        ProtocolEvent::GripSustained,
        ProtocolEvent::GripReleasedEarly,
        ProtocolEvent::PullCompleted { puller: a.clone() },
        ProtocolEvent::PullCompleted { puller: b.clone() },
        ProtocolEvent::AlignmentDone(AlignmentResult::identity()),
        ProtocolEvent::SyncEstablished,
        ProtocolEvent::ReleaseDetected,
        ProtocolEvent::StepBackThroughPortal { by: a.clone() },
        ProtocolEvent::StepBackThroughPortal { by: b.clone() },
        ProtocolEvent::RevocationTriggered(RevocationTrigger::Gesture),
        ProtocolEvent::RevocationTriggered(RevocationTrigger::DistanceThreshold),
        ProtocolEvent::DistanceExceeded,
    ]
}

fn label(ev: &ProtocolEvent) -> String {
    match ev {
        ProtocolEvent::HandExtended { by, .. } => format!("HandExtended({by})"),
        ProtocolEvent::ClaspDetected { bilateral } => format!("ClaspDetected(bilateral={bilateral})"),
        ProtocolEvent::PullCompleted { puller } => format!("PullCompleted({puller})"),
        ProtocolEvent::StepBackThroughPortal { by } => format!("StepBackThroughPortal({by})"),
        other => other.kind().name().to_owned(),
    }
}

/// Explores everything reachable from a fresh session through `step`, all at
/// clock 0, and reports the shortest path into Sharing that skipped the
/// bilateral clasp or the sustained grip.
pub fn check_consent_gate<F>(step: F) -> Exploration
where
    F: Fn(&EncounterSession, &ProtocolEvent, f64) -> Result<Transition, EncounterError>,
{
    let (a, b) = (DeviceId::from("A"), DeviceId::from("B"));
    let events = alphabet(&a, &b);
    let init = PathState {
        session: EncounterSession::new(SessionId::new("model"), a, b, 0.0).expect("distinct devices"),
        bilateral: false,
        sustained: false,
    };

    let mut seen = BTreeSet::from([init.key()]);
    let mut queue = VecDeque::from([(init, Vec::<String>::new())]);
    let mut transitions = 0;
    while let Some((state, path)) = queue.pop_front() {
        for ev in &events {
            let Ok(tr) = step(&state.session, ev, 0.0) else { continue };
            transitions += 1;
            let mut next = PathState {
                session: tr.session,
                bilateral: state.bilateral,
                sustained: state.sustained,
            };
            match ev {
                ProtocolEvent::ClaspDetected { bilateral: true } => next.bilateral = true,
                ProtocolEvent::GripSustained => next.sustained = true,
                _ => {}
            }
            if next.session.stage() == EncounterStage::Aware || next.session.is_ended() {
                next.bilateral = false;
                next.sustained = false;
            }
            let mut path = path.clone();
            path.push(label(ev));
            if next.session.stage() == EncounterStage::Sharing && !(next.bilateral && next.sustained) {
                return Exploration {
                    states: seen.len(),
                    transitions,
                    counterexample: Some(path),
                };
            }
            if seen.insert(next.key()) {
                queue.push_back((next, path));
            }
        }
    }
    Exploration {
        states: seen.len(),
        transitions,
        counterexample: None,
    }
}

/// The real stage machine.
pub fn engine_step(s: &EncounterSession, ev: &ProtocolEvent, clock: f64) -> Result<Transition, EncounterError> {
    s.apply_event(ev, clock)
}

/// A deliberately broken stage machine that treats a one-sided clasp as
/// consent. Used to show the checker catches the flaw.
pub fn faulty_step(s: &EncounterSession, ev: &ProtocolEvent, clock: f64) -> Result<Transition, EncounterError> {
    match ev {
        ProtocolEvent::ClaspDetected { bilateral: false } => {
            s.apply_event(&ProtocolEvent::ClaspDetected { bilateral: true }, clock)
        }
        _ => s.apply_event(ev, clock),
    }
}
