//! Two-phase commit for moves.
//!
//! The sender coordinates: Prepare, then Commit once the receiver has
//! reserved a ghost, and deletes its copy only on CommitAck. If the deadline
//! passes first it switches to Abort and keeps the object, retransmitting
//! Abort until acknowledged; the receiver drops its ghost or its committed
//! instance on Abort. With in-order delivery this leaves the object on
//! exactly one device once the exchange is quiet.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::transfer::{authorize, TransferKind};
use super::{ObjectStore, Owner, SemanticState, SharedObject, SyncError};
use crate::alignment::{RigidTransform, Vec3};
use crate::ids::{DeviceId, ObjectId, TxnId};
use crate::permissions::{PermissionToken, SessionKey};

pub const TXN_DEADLINE_S: f64 = 2.0;
pub const RETRANSMIT_S: f64 = 0.25;
/// Abort is retransmitted at most this many times.
pub const MAX_ABORT_RETRANSMITS: u32 = 40;

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum TxnMessage {
    #[serde(rename_all = "camelCase")]
    Prepare { object: SharedObject, handoff: Vec3 },
    PrepareAck,
    Commit,
    CommitAck,
    Abort,
    AbortAck,
}

impl TxnMessage {
    pub fn name(&self) -> &'static str {
        match self {
            TxnMessage::Prepare { .. } => "prepare",
            TxnMessage::PrepareAck => "prepareAck",
            TxnMessage::Commit => "commit",
            TxnMessage::CommitAck => "commitAck",
            TxnMessage::Abort => "abort",
            TxnMessage::AbortAck => "abortAck",
        }
    }
}

/// Externally visible phase of a transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxnPhase {
    Prepared,
    Committed,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CoordState {
    Preparing,
    Committing,
    Committed,
    Aborting,
    Aborted,
}

/// Sender side of one move.
#[derive(Clone, Debug)]
pub struct Coordinator {
    pub txn_id: TxnId,
    pub object_id: ObjectId,
    pub from: DeviceId,
    pub to: DeviceId,
    pub deadline: f64,
    state: CoordState,
    snapshot: SharedObject,
    handoff: Vec3,
    next_retransmit: f64,
    abort_retransmits: u32,
}

impl Coordinator {
    /// Authorizes the move, locks the object and returns the first Prepare.
    /// Nothing is sent when authorization fails.
    #[allow(clippy::too_many_arguments)]
    pub fn start(
        store: &mut ObjectStore,
        txn_id: TxnId,
        object_id: ObjectId,
        to: &DeviceId,
        token: &PermissionToken,
        key: &SessionKey,
        handoff: Vec3,
        clock: f64,
    ) -> Result<(Self, TxnMessage), SyncError> {
        authorize(store, TransferKind::Move, object_id, to, token, key, clock)?;
        store.lock(object_id);
        let snapshot = store.get(object_id).expect("authorized").clone();
        let me = Self {
            txn_id,
            object_id,
            from: store.device().clone(),
            to: to.clone(),
            deadline: clock + TXN_DEADLINE_S,
            state: CoordState::Preparing,
            snapshot,
            handoff,
            next_retransmit: clock + RETRANSMIT_S,
            abort_retransmits: 0,
        };
        let first = me.prepare();
        Ok((me, first))
    }

    fn prepare(&self) -> TxnMessage {
        TxnMessage::Prepare {
            object: self.snapshot.clone(),
            handoff: self.handoff,
        }
    }

    pub fn phase(&self) -> TxnPhase {
        match self.state {
            CoordState::Preparing | CoordState::Committing | CoordState::Aborting => TxnPhase::Prepared,
            CoordState::Committed => TxnPhase::Committed,
            CoordState::Aborted => TxnPhase::Aborted,
        }
    }

    /// Whether the outcome is decided on this side (it may still be
    /// retransmitting Abort).
    pub fn is_decided(&self) -> bool {
        matches!(self.state, CoordState::Committed | CoordState::Aborting | CoordState::Aborted)
    }

    pub fn is_done(&self) -> bool {
        matches!(self.state, CoordState::Committed | CoordState::Aborted)
    }

    /// When [`Coordinator::on_timer`] next wants to run.
    pub fn next_timer(&self) -> Option<f64> {
        match self.state {
            CoordState::Preparing | CoordState::Committing => Some(self.next_retransmit.min(self.deadline)),
            CoordState::Aborting => Some(self.next_retransmit),
            CoordState::Committed | CoordState::Aborted => None,
        }
    }

    fn abort(&mut self, store: &mut ObjectStore, clock: f64) -> TxnMessage {
        self.state = CoordState::Aborting;
        self.next_retransmit = clock + RETRANSMIT_S;
        store.unlock(self.object_id);
        TxnMessage::Abort
    }

    pub fn on_timer(&mut self, store: &mut ObjectStore, clock: f64) -> Vec<TxnMessage> {
        match self.state {
            CoordState::Preparing | CoordState::Committing if clock >= self.deadline => {
                vec![self.abort(store, clock)]
            }
            CoordState::Preparing | CoordState::Committing if clock >= self.next_retransmit => {
                self.next_retransmit += RETRANSMIT_S;
                vec![if self.state == CoordState::Preparing {
                    self.prepare()
                } else {
                    TxnMessage::Commit
                }]
            }
            CoordState::Aborting if clock >= self.next_retransmit => {
                if self.abort_retransmits >= MAX_ABORT_RETRANSMITS {
                    self.state = CoordState::Aborted;
                    return Vec::new();
                }
                self.abort_retransmits += 1;
                self.next_retransmit += RETRANSMIT_S;
                vec![TxnMessage::Abort]
            }
            _ => Vec::new(),
        }
    }

    pub fn on_message(&mut self, msg: &TxnMessage, store: &mut ObjectStore, clock: f64) -> Vec<TxnMessage> {
        match (self.state, msg) {
            (CoordState::Preparing, TxnMessage::PrepareAck) if clock < self.deadline => {
                self.state = CoordState::Committing;
                self.next_retransmit = clock + RETRANSMIT_S;
                vec![TxnMessage::Commit]
            }
            (CoordState::Committing, TxnMessage::CommitAck) if clock < self.deadline => {
                self.state = CoordState::Committed;
                store.take(self.object_id);
                Vec::new()
            }
            (CoordState::Aborting, TxnMessage::AbortAck) => {
                self.state = CoordState::Aborted;
                Vec::new()
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PartState {
    Prepared,
    Committed,
    Aborted,
}

/// Receiver side of every move addressed to one device.
#[derive(Clone, Debug, Default)]
pub struct Participant {
    txns: BTreeMap<TxnId, (PartState, Option<(SharedObject, Vec3)>)>,
}

impl Participant {
    pub fn new() -> Self {
        Self::default()
    }

    /// Objects reserved but not yet committed.
    pub fn ghosts(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.txns.values().filter_map(|(s, g)| match (s, g) {
            (PartState::Prepared, Some((o, _))) => Some(o.object_id),
            _ => None,
        })
    }

    pub fn phase(&self, txn: TxnId) -> Option<TxnPhase> {
        self.txns.get(&txn).map(|(s, _)| match s {
            PartState::Prepared => TxnPhase::Prepared,
            PartState::Committed => TxnPhase::Committed,
            PartState::Aborted => TxnPhase::Aborted,
        })
    }

    pub fn on_message(&mut self, txn: TxnId, msg: &TxnMessage, store: &mut ObjectStore) -> Vec<TxnMessage> {
        let entry = self.txns.get_mut(&txn);
        match (entry, msg) {
            (None, TxnMessage::Prepare { object, handoff }) => {
                self.txns
                    .insert(txn, (PartState::Prepared, Some((object.clone(), *handoff))));
                vec![TxnMessage::PrepareAck]
            }
            (Some((PartState::Prepared, _)), TxnMessage::Prepare { .. }) => vec![TxnMessage::PrepareAck],
            (Some((state @ PartState::Prepared, ghost)), TxnMessage::Commit) => {
                let (mut object, handoff) = ghost.take().expect("prepared txns hold a ghost");
                object.owner = Owner::Device(store.device().clone());
                object.semantic_state = SemanticState::MovedIn;
                object.transform = RigidTransform::new(*object.transform.rotation(), handoff)
                    .unwrap_or_else(|_| RigidTransform::identity());
                *ghost = Some((object.clone(), handoff));
                store.insert(object);
                *state = PartState::Committed;
                vec![TxnMessage::CommitAck]
            }
            (Some((PartState::Committed, _)), TxnMessage::Commit) => vec![TxnMessage::CommitAck],
            (Some((state, ghost)), TxnMessage::Abort) => {
                if *state == PartState::Committed {
                    if let Some((o, _)) = ghost {
                        store.take(o.object_id);
                    }
                }
                *state = PartState::Aborted;
                *ghost = None;
                vec![TxnMessage::AbortAck]
            }
            (None, TxnMessage::Abort) => {
                self.txns.insert(txn, (PartState::Aborted, None));
                vec![TxnMessage::AbortAck]
            }
            _ => Vec::new(),
        }
    }
}
