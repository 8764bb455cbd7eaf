//! The encounter stage machine.
//!
//! A session moves through eight stages. Approach covers the first three
//! transitions, the handshake covers preview and consent, the pull covers
//! alignment and sync, and release (or revocation, or walking out of range)
//! terminates. [`EncounterSession::apply_event`] is a pure function: it
//! returns a new session and the effects the caller must carry out.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::AlignmentResult;
use crate::discovery::BeaconToken;
use crate::ids::{DeviceId, SessionId, TokenId};
use crate::permissions::RevocationTrigger;

/// Two clasp detections count as one bilateral clasp when they are at most
/// this far apart.
pub const CONSENT_WINDOW_S: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EncounterStage {
    Isolated,
    Eligible,
    Aware,
    Requested,
    Previewed,
    Accepted,
    CoLocated,
    Sharing,
}

impl EncounterStage {
    pub const ALL: [EncounterStage; 8] = [
        EncounterStage::Isolated,
        EncounterStage::Eligible,
        EncounterStage::Aware,
        EncounterStage::Requested,
        EncounterStage::Previewed,
        EncounterStage::Accepted,
        EncounterStage::CoLocated,
        EncounterStage::Sharing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncounterStage::Isolated => "Isolated",
            EncounterStage::Eligible => "Eligible",
            EncounterStage::Aware => "Aware",
            EncounterStage::Requested => "Requested",
            EncounterStage::Previewed => "Previewed",
            EncounterStage::Accepted => "Accepted",
            EncounterStage::CoLocated => "CoLocated",
            EncounterStage::Sharing => "Sharing",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for EncounterStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Initiator,
    Responder,
}

/// Where a participant currently perceives themself during sharing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerceivedSide {
    OwnWorld,
    SharedLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminationCause {
    Release,
    StepBack,
    Revocation,
    DistanceExceeded,
}

impl TerminationCause {
    pub const ALL: [TerminationCause; 4] = [
        TerminationCause::Release,
        TerminationCause::StepBack,
        TerminationCause::Revocation,
        TerminationCause::DistanceExceeded,
    ];

    /// Trigger recorded on tokens revoked by this termination.
    pub fn revocation_trigger(self) -> RevocationTrigger {
        match self {
            TerminationCause::DistanceExceeded => RevocationTrigger::DistanceThreshold,
            _ => RevocationTrigger::Gesture,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProtocolEvent {
    PrerequisiteSatisfied,
    BeaconSeen { token: BeaconToken },
    HandExtended { by: DeviceId, toward: DeviceId },
    ClaspDetected { bilateral: bool },
    GripSustained,
    GripReleasedEarly,
    PullCompleted { puller: DeviceId },
    AlignmentDone(AlignmentResult),
    SyncEstablished,
    ReleaseDetected,
    StepBackThroughPortal { by: DeviceId },
    RevocationTriggered(RevocationTrigger),
    DistanceExceeded,
}

/// Payload-free discriminant of [`ProtocolEvent`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    PrerequisiteSatisfied,
    BeaconSeen,
    HandExtended,
    ClaspDetected,
    GripSustained,
    GripReleasedEarly,
    PullCompleted,
    AlignmentDone,
    SyncEstablished,
    ReleaseDetected,
    StepBackThroughPortal,
    RevocationTriggered,
    DistanceExceeded,
}

impl EventKind {
    pub const ALL: [EventKind; 13] = [
        EventKind::PrerequisiteSatisfied,
        EventKind::BeaconSeen,
        EventKind::HandExtended,
        EventKind::ClaspDetected,
        EventKind::GripSustained,
        EventKind::GripReleasedEarly,
        EventKind::PullCompleted,
        EventKind::AlignmentDone,
        EventKind::SyncEstablished,
        EventKind::ReleaseDetected,
        EventKind::StepBackThroughPortal,
        EventKind::RevocationTriggered,
        EventKind::DistanceExceeded,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::PrerequisiteSatisfied => "PrerequisiteSatisfied",
            EventKind::BeaconSeen => "BeaconSeen",
            EventKind::HandExtended => "HandExtended",
            EventKind::ClaspDetected => "ClaspDetected",
            EventKind::GripSustained => "GripSustained",
            EventKind::GripReleasedEarly => "GripReleasedEarly",
            EventKind::PullCompleted => "PullCompleted",
            EventKind::AlignmentDone => "AlignmentDone",
            EventKind::SyncEstablished => "SyncEstablished",
            EventKind::ReleaseDetected => "ReleaseDetected",
            EventKind::StepBackThroughPortal => "StepBackThroughPortal",
            EventKind::RevocationTriggered => "RevocationTriggered",
            EventKind::DistanceExceeded => "DistanceExceeded",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl ProtocolEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            ProtocolEvent::PrerequisiteSatisfied => EventKind::PrerequisiteSatisfied,
            ProtocolEvent::BeaconSeen { .. } => EventKind::BeaconSeen,
            ProtocolEvent::HandExtended { .. } => EventKind::HandExtended,
            ProtocolEvent::ClaspDetected { .. } => EventKind::ClaspDetected,
            ProtocolEvent::GripSustained => EventKind::GripSustained,
            ProtocolEvent::GripReleasedEarly => EventKind::GripReleasedEarly,
            ProtocolEvent::PullCompleted { .. } => EventKind::PullCompleted,
            ProtocolEvent::AlignmentDone(_) => EventKind::AlignmentDone,
            ProtocolEvent::SyncEstablished => EventKind::SyncEstablished,
            ProtocolEvent::ReleaseDetected => EventKind::ReleaseDetected,
            ProtocolEvent::StepBackThroughPortal { .. } => EventKind::StepBackThroughPortal,
            ProtocolEvent::RevocationTriggered(_) => EventKind::RevocationTriggered,
            ProtocolEvent::DistanceExceeded => EventKind::DistanceExceeded,
        }
    }
}

/// Side effects the caller must carry out after a transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Effect {
    RolesAssigned { initiator: DeviceId, responder: DeviceId },
    /// Show the scope preview (objects, layers, duration, rights) to both.
    ScopePreview { recipients: [DeviceId; 2] },
    ConsentGranted,
    PreviewAborted,
    AlignmentRequested { puller: DeviceId },
    SharedFrameEstablished,
    SharingStarted,
    PerceivedSideChanged { device: DeviceId, side: PerceivedSide },
    TokensRevoked { trigger: RevocationTrigger },
    ResidueApplied,
    LentObjectsReverted,
    MirrorsRemoved,
    SessionEnded { cause: TerminationCause },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncounterError {
    #[error("initiator and responder are the same device")]
    DuplicateDevice,
    #[error("{event} is not accepted in stage {stage}")]
    IllegalTransition { stage: EncounterStage, event: EventKind },
    #[error("event at t={clock} precedes the last applied event at t={last}")]
    StaleEvent { clock: f64, last: f64 },
    #[error("clasp was not detected independently by both devices")]
    UnilateralClasp,
    #[error("{0} is not a participant in this session")]
    NotParticipant(DeviceId),
    #[error("session already ended")]
    SessionClosed,
}

/// Per-pair encounter state as seen by one device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EncounterSession {
    id: SessionId,
    initiator: DeviceId,
    responder: DeviceId,
    stage: EncounterStage,
    tokens: BTreeSet<TokenId>,
    alignment: Option<AlignmentResult>,
    initiator_side: PerceivedSide,
    responder_side: PerceivedSide,
    created_at: f64,
    started_at: Option<f64>,
    ended_at: Option<f64>,
    termination_cause: Option<TerminationCause>,
    last_event_at: Option<f64>,
    puller: Option<DeviceId>,
    /// Evidence gathered on the current attempt; cleared by an abort.
    bilateral_clasp: bool,
    grip_sustained: bool,
}

/// Result of a successful transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub session: EncounterSession,
    pub effects: Vec<Effect>,
}

impl EncounterSession {
    pub fn new(
        id: SessionId,
        initiator: DeviceId,
        responder: DeviceId,
        clock: f64,
    ) -> Result<Self, EncounterError> {
        if initiator == responder {
            return Err(EncounterError::DuplicateDevice);
        }
        Ok(Self {
            id,
            initiator,
            responder,
            stage: EncounterStage::Isolated,
            tokens: BTreeSet::new(),
            alignment: None,
            initiator_side: PerceivedSide::OwnWorld,
            responder_side: PerceivedSide::OwnWorld,
            created_at: clock,
            started_at: None,
            ended_at: None,
            termination_cause: None,
            last_event_at: None,
            puller: None,
            bilateral_clasp: false,
            grip_sustained: false,
        })
    }

    pub fn id(&self) -> &SessionId {
        &self.id
    }

    pub fn stage(&self) -> EncounterStage {
        self.stage
    }

    pub fn initiator(&self) -> &DeviceId {
        &self.initiator
    }

    pub fn responder(&self) -> &DeviceId {
        &self.responder
    }

    pub fn participants(&self) -> [&DeviceId; 2] {
        [&self.initiator, &self.responder]
    }

    pub fn is_participant(&self, device: &DeviceId) -> bool {
        *device == self.initiator || *device == self.responder
    }

    pub fn peer_of(&self, device: &DeviceId) -> Option<&DeviceId> {
        if *device == self.initiator {
            Some(&self.responder)
        } else if *device == self.responder {
            Some(&self.initiator)
        } else {
            None
        }
    }

    pub fn role_of(&self, device: &DeviceId) -> Option<Role> {
        if *device == self.initiator {
            Some(Role::Initiator)
        } else if *device == self.responder {
            Some(Role::Responder)
        } else {
            None
        }
    }

    pub fn tokens(&self) -> &BTreeSet<TokenId> {
        &self.tokens
    }

    pub fn alignment(&self) -> Option<&AlignmentResult> {
        self.alignment.as_ref()
    }

    pub fn perceived_side(&self, device: &DeviceId) -> Option<PerceivedSide> {
        match self.role_of(device)? {
            Role::Initiator => Some(self.initiator_side),
            Role::Responder => Some(self.responder_side),
        }
    }

    pub fn created_at(&self) -> f64 {
        self.created_at
    }

    pub fn started_at(&self) -> Option<f64> {
        self.started_at
    }

    pub fn ended_at(&self) -> Option<f64> {
        self.ended_at
    }

    pub fn termination_cause(&self) -> Option<TerminationCause> {
        self.termination_cause
    }

    pub fn puller(&self) -> Option<&DeviceId> {
        self.puller.as_ref()
    }

    pub fn is_ended(&self) -> bool {
        self.ended_at.is_some()
    }

    /// Whether this attempt has seen a bilateral clasp and a sustained grip.
    pub fn consent_evidence(&self) -> (bool, bool) {
        (self.bilateral_clasp, self.grip_sustained)
    }

    /// Records tokens minted for this session.
    pub fn with_tokens(mut self, ids: impl IntoIterator<Item = TokenId>) -> Self {
        self.tokens.extend(ids);
        self
    }

    pub fn apply_event(&self, event: &ProtocolEvent, clock: f64) -> Result<Transition, EncounterError> {
        use EncounterStage::*;

        if self.is_ended() {
            return Err(EncounterError::SessionClosed);
        }
        if let Some(last) = self.last_event_at {
            if clock < last {
                return Err(EncounterError::StaleEvent { clock, last });
            }
        }
        let illegal = || EncounterError::IllegalTransition {
            stage: self.stage,
            event: event.kind(),
        };

        let mut next = self.clone();
        next.last_event_at = Some(clock);
        let mut effects = Vec::new();

        match (self.stage, event) {
            (Isolated, ProtocolEvent::PrerequisiteSatisfied) => next.stage = Eligible,
            (Eligible, ProtocolEvent::BeaconSeen { .. }) => next.stage = Aware,
            (Aware, ProtocolEvent::HandExtended { by, .. }) => {
                let other = self.peer_of(by).ok_or_else(|| EncounterError::NotParticipant(by.clone()))?;
                next.responder = other.clone();
                next.initiator = by.clone();
                next.stage = Requested;
                effects.push(Effect::RolesAssigned {
                    initiator: next.initiator.clone(),
                    responder: next.responder.clone(),
                });
            }
            (Requested, ProtocolEvent::ClaspDetected { bilateral }) => {
                if !bilateral {
                    return Err(EncounterError::UnilateralClasp);
                }
                next.stage = Previewed;
                next.bilateral_clasp = true;
                effects.push(Effect::ScopePreview {
                    recipients: [self.initiator.clone(), self.responder.clone()],
                });
            }
            (Previewed, ProtocolEvent::GripSustained) => {
                next.stage = Accepted;
                next.grip_sustained = true;
                effects.push(Effect::ConsentGranted);
            }
            (Previewed, ProtocolEvent::GripReleasedEarly) => {
                next.stage = Aware;
                next.bilateral_clasp = false;
                next.grip_sustained = false;
                effects.push(Effect::PreviewAborted);
            }
            (Accepted, ProtocolEvent::PullCompleted { puller }) => {
                if self.puller.is_some() {
                    return Err(illegal());
                }
                if !self.is_participant(puller) {
                    return Err(EncounterError::NotParticipant(puller.clone()));
                }
                next.puller = Some(puller.clone());
                effects.push(Effect::AlignmentRequested { puller: puller.clone() });
            }
            (Accepted, ProtocolEvent::AlignmentDone(result)) => {
                if self.puller.is_none() {
                    return Err(illegal());
                }
                next.stage = CoLocated;
                next.alignment = Some(result.clone());
                effects.push(Effect::SharedFrameEstablished);
            }
            (CoLocated, ProtocolEvent::SyncEstablished) => {
                next.stage = Sharing;
                next.started_at = Some(clock);
                next.initiator_side = PerceivedSide::SharedLayer;
                next.responder_side = PerceivedSide::SharedLayer;
                effects.push(Effect::SharingStarted);
            }
            (Sharing, ProtocolEvent::StepBackThroughPortal { by }) => {
                let side = match self.role_of(by).ok_or_else(|| EncounterError::NotParticipant(by.clone()))? {
                    Role::Initiator => &mut next.initiator_side,
                    Role::Responder => &mut next.responder_side,
                };
                *side = match *side {
                    PerceivedSide::SharedLayer => PerceivedSide::OwnWorld,
                    PerceivedSide::OwnWorld => PerceivedSide::SharedLayer,
                };
                let side = *side;
                effects.push(Effect::PerceivedSideChanged { device: by.clone(), side });
                if next.initiator_side == PerceivedSide::OwnWorld && next.responder_side == PerceivedSide::OwnWorld {
                    next.terminate(TerminationCause::StepBack, clock, &mut effects);
                }
            }
            (Sharing, ProtocolEvent::ReleaseDetected) => {
                next.terminate(TerminationCause::Release, clock, &mut effects)
            }
            (Sharing, ProtocolEvent::RevocationTriggered(trigger)) => {
                next.terminate_with(TerminationCause::Revocation, *trigger, clock, &mut effects)
            }
            (Sharing, ProtocolEvent::DistanceExceeded) => {
                next.terminate(TerminationCause::DistanceExceeded, clock, &mut effects)
            }
            _ => return Err(illegal()),
        }
        Ok(Transition { session: next, effects })
    }

    fn terminate(&mut self, cause: TerminationCause, clock: f64, effects: &mut Vec<Effect>) {
        self.terminate_with(cause, cause.revocation_trigger(), clock, effects)
    }

    fn terminate_with(
        &mut self,
        cause: TerminationCause,
        trigger: RevocationTrigger,
        clock: f64,
        effects: &mut Vec<Effect>,
    ) {
        self.stage = EncounterStage::Isolated;
        self.alignment = None;
        self.ended_at = Some(clock);
        self.termination_cause = Some(cause);
        self.initiator_side = PerceivedSide::OwnWorld;
        self.responder_side = PerceivedSide::OwnWorld;
        effects.extend([
            Effect::TokensRevoked { trigger },
            Effect::ResidueApplied,
            Effect::LentObjectsReverted,
            Effect::MirrorsRemoved,
            Effect::SessionEnded { cause },
        ]);
    }
}

/// Event kinds accepted in `stage`. In `Accepted`, `AlignmentDone` further
/// requires a prior `PullCompleted`, and `ClaspDetected` must be bilateral.
pub fn legal_events(stage: EncounterStage) -> BTreeSet<EventKind> {
    use EventKind::*;
    let kinds: &[EventKind] = match stage {
        EncounterStage::Isolated => &[PrerequisiteSatisfied],
        EncounterStage::Eligible => &[BeaconSeen],
        EncounterStage::Aware => &[HandExtended],
        EncounterStage::Requested => &[ClaspDetected],
        EncounterStage::Previewed => &[GripSustained, GripReleasedEarly],
        EncounterStage::Accepted => &[PullCompleted, AlignmentDone],
        EncounterStage::CoLocated => &[SyncEstablished],
        EncounterStage::Sharing => &[ReleaseDetected, StepBackThroughPortal, RevocationTriggered, DistanceExceeded],
    };
    kinds.iter().copied().collect()
}

/// One device's independent clasp detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaspEvidence {
    pub device: DeviceId,
    pub t: f64,
}

/// True when both participants independently detected the clasp within
/// [`CONSENT_WINDOW_S`] of each other.
pub fn consent_is_bilateral(
    session: &EncounterSession,
    evidence: (Option<&ClaspEvidence>, Option<&ClaspEvidence>),
) -> bool {
    if !matches!(session.stage(), EncounterStage::Requested | EncounterStage::Previewed) {
        return false;
    }
    let (Some(a), Some(b)) = evidence else {
        return false;
    };
    a.device != b.device
        && session.is_participant(&a.device)
        && session.is_participant(&b.device)
        && (a.t - b.t).abs() <= CONSENT_WINDOW_S + 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev(s: &str) -> DeviceId {
        DeviceId::from(s)
    }

    fn fresh() -> EncounterSession {
        EncounterSession::new(SessionId::new("s"), dev("A"), dev("B"), 0.0).unwrap()
    }

    fn step(s: &EncounterSession, ev: ProtocolEvent, t: f64) -> EncounterSession {
        s.apply_event(&ev, t).unwrap().session
    }

    fn to_stage(target: EncounterStage) -> EncounterSession {
        let mut s = fresh();
        let script = [
            ProtocolEvent::PrerequisiteSatisfied,
            ProtocolEvent::BeaconSeen {
                token: BeaconToken([1; 16]),
            },
            ProtocolEvent::HandExtended {
                by: dev("A"),
                toward: dev("B"),
            },
            ProtocolEvent::ClaspDetected { bilateral: true },
            ProtocolEvent::GripSustained,
            ProtocolEvent::PullCompleted { puller: dev("B") },
            ProtocolEvent::AlignmentDone(AlignmentResult::identity()),
            ProtocolEvent::SyncEstablished,
        ];
        let mut t = 0.0;
        for ev in script {
            if s.stage() == target && !matches!(ev, ProtocolEvent::AlignmentDone(_)) {
                break;
            }
            t += 0.5;
            s = step(&s, ev, t);
        }
        assert_eq!(s.stage(), target);
        s
    }

    #[test]
    fn new_session_checks_ids() {
        let s = fresh();
        assert_eq!(s.stage(), EncounterStage::Isolated);
        assert!(s.tokens().is_empty() && s.alignment().is_none());
        assert_eq!(s.started_at(), None);
        assert_eq!(
            EncounterSession::new(SessionId::new("s"), dev("A"), dev("A"), 0.0),
            Err(EncounterError::DuplicateDevice)
        );
    }

    #[test]
    fn isolated_to_eligible() {
        let s = step(&fresh(), ProtocolEvent::PrerequisiteSatisfied, 0.0);
        assert_eq!(s.stage(), EncounterStage::Eligible);
    }

    #[test]
    fn early_release_aborts_to_aware() {
        let s = to_stage(EncounterStage::Previewed);
        let tr = s.apply_event(&ProtocolEvent::GripReleasedEarly, 10.0).unwrap();
        assert_eq!(tr.session.stage(), EncounterStage::Aware);
        assert!(tr.session.tokens().is_empty());
        assert_eq!(tr.session.consent_evidence(), (false, false));
        assert_eq!(tr.effects, vec![Effect::PreviewAborted]);
    }

    #[test]
    fn pull_in_aware_is_illegal() {
        let s = to_stage(EncounterStage::Aware);
        let err = s
            .apply_event(&ProtocolEvent::PullCompleted { puller: dev("A") }, 9.0)
            .unwrap_err();
        assert_eq!(
            err,
            EncounterError::IllegalTransition {
                stage: EncounterStage::Aware,
                event: EventKind::PullCompleted
            }
        );
    }

    #[test]
    fn distance_exceeded_terminates_with_residue() {
        let s = to_stage(EncounterStage::Sharing);
        let tr = s.apply_event(&ProtocolEvent::DistanceExceeded, 20.0).unwrap();
        assert_eq!(tr.session.stage(), EncounterStage::Isolated);
        assert_eq!(tr.session.ended_at(), Some(20.0));
        assert!(tr.session.alignment().is_none());
        assert!(tr.effects.contains(&Effect::ResidueApplied));
        assert!(tr.effects.contains(&Effect::LentObjectsReverted));
        assert!(tr.effects.contains(&Effect::TokensRevoked {
            trigger: RevocationTrigger::DistanceThreshold
        }));
    }

    #[test]
    fn first_extender_becomes_initiator() {
        let s = to_stage(EncounterStage::Aware);
        let tr = s
            .apply_event(
                &ProtocolEvent::HandExtended {
                    by: dev("B"),
                    toward: dev("A"),
                },
                5.0,
            )
            .unwrap();
        assert_eq!(tr.session.initiator(), &dev("B"));
        assert_eq!(tr.session.responder(), &dev("A"));
        let stranger = s.apply_event(
            &ProtocolEvent::HandExtended {
                by: dev("C"),
                toward: dev("A"),
            },
            5.0,
        );
        assert_eq!(stranger.unwrap_err(), EncounterError::NotParticipant(dev("C")));
    }

    #[test]
    fn unilateral_clasp_rejected() {
        let s = to_stage(EncounterStage::Requested);
        assert_eq!(
            s.apply_event(&ProtocolEvent::ClaspDetected { bilateral: false }, 9.0),
            Err(EncounterError::UnilateralClasp)
        );
    }

    #[test]
    fn alignment_requires_pull() {
        let s = to_stage(EncounterStage::Accepted);
        assert!(s
            .apply_event(&ProtocolEvent::AlignmentDone(AlignmentResult::identity()), 9.0)
            .is_err());
        let pulled = step(&s, ProtocolEvent::PullCompleted { puller: dev("A") }, 9.0);
        assert_eq!(pulled.stage(), EncounterStage::Accepted);
        assert!(pulled
            .apply_event(&ProtocolEvent::PullCompleted { puller: dev("A") }, 9.1)
            .is_err());
        let colocated = step(&pulled, ProtocolEvent::AlignmentDone(AlignmentResult::identity()), 9.2);
        assert_eq!(colocated.stage(), EncounterStage::CoLocated);
        assert!(colocated.alignment().is_some());
    }

    #[test]
    fn stale_events_rejected() {
        let s = step(&fresh(), ProtocolEvent::PrerequisiteSatisfied, 5.0);
        assert!(matches!(
            s.apply_event(&ProtocolEvent::BeaconSeen { token: BeaconToken([0; 16]) }, 4.0),
            Err(EncounterError::StaleEvent { .. })
        ));
    }

    #[test]
    fn step_back_toggles_then_both_out_terminates() {
        let s = to_stage(EncounterStage::Sharing);
        assert!(s.started_at().is_some());
        let a_out = step(&s, ProtocolEvent::StepBackThroughPortal { by: dev("A") }, 10.0);
        assert_eq!(a_out.stage(), EncounterStage::Sharing);
        assert_eq!(a_out.perceived_side(&dev("A")), Some(PerceivedSide::OwnWorld));
        let a_in = step(&a_out, ProtocolEvent::StepBackThroughPortal { by: dev("A") }, 11.0);
        assert_eq!(a_in.perceived_side(&dev("A")), Some(PerceivedSide::SharedLayer));
        let b_out = step(&a_out, ProtocolEvent::StepBackThroughPortal { by: dev("B") }, 11.0);
        assert_eq!(b_out.stage(), EncounterStage::Isolated);
        assert_eq!(b_out.termination_cause(), Some(TerminationCause::StepBack));
    }

    #[test]
    fn ended_session_is_closed() {
        let s = step(&to_stage(EncounterStage::Sharing), ProtocolEvent::ReleaseDetected, 10.0);
        assert_eq!(
            s.apply_event(&ProtocolEvent::PrerequisiteSatisfied, 11.0),
            Err(EncounterError::SessionClosed)
        );
    }

    #[test]
    fn legal_event_sets() {
        use EventKind::*;
        assert_eq!(legal_events(EncounterStage::Isolated), [PrerequisiteSatisfied].into());
        assert_eq!(legal_events(EncounterStage::Previewed), [GripSustained, GripReleasedEarly].into());
        assert_eq!(
            legal_events(EncounterStage::Sharing),
            [ReleaseDetected, StepBackThroughPortal, RevocationTriggered, DistanceExceeded].into()
        );
    }

    #[test]
    fn bilateral_window() {
        let s = to_stage(EncounterStage::Requested);
        let ev = |d: &str, t| ClaspEvidence { device: dev(d), t };
        assert!(consent_is_bilateral(&s, (Some(&ev("A", 5.0)), Some(&ev("B", 5.1)))));
        assert!(consent_is_bilateral(&s, (Some(&ev("A", 5.0)), Some(&ev("B", 5.2)))));
        assert!(!consent_is_bilateral(&s, (Some(&ev("A", 5.0)), None)));
        assert!(!consent_is_bilateral(&s, (Some(&ev("A", 5.0)), Some(&ev("B", 5.5)))));
        assert!(!consent_is_bilateral(&s, (Some(&ev("A", 5.0)), Some(&ev("A", 5.0)))));
        assert!(!consent_is_bilateral(&to_stage(EncounterStage::Aware), (Some(&ev("A", 5.0)), Some(&ev("B", 5.0)))));
    }
}
