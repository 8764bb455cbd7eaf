//! Shared objects, per-device object stores and the transfer semantics.
//!
//! Each device owns an [`ObjectStore`]. Objects cross between stores in one
//! of five ways: move (two-phase commit, see [`txn`]), copy, lend, mirror and
//! co-own (single offers, see [`transfer`]). Live state of mirrored and
//! co-owned objects flows through [`replication`] at the sync tick rate.

pub mod replication;
pub mod transfer;
pub mod txn;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::RigidTransform;
use crate::ids::{DeviceId, ListingId, ObjectId, TokenId};
use crate::permissions::{
    apply_residue, check, Action, CheckContext, PermissionToken, ResidueAction, ResidueEffect, SessionKey,
};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Owner {
    Device(DeviceId),
    Unowned,
}

impl Owner {
    pub fn is(&self, device: &DeviceId) -> bool {
        matches!(self, Owner::Device(d) if d == device)
    }
}

/// Where a copy's rights come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Rights {
    Token(TokenId),
    Listing(ListingId),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SemanticState {
    Native,
    MovedIn,
    CopiedIn { rights: Rights },
    LentIn { lender: DeviceId },
    MirrorOf { source: ObjectId },
    CoOwned,
}

/// Lamport version; the device id breaks ties, larger wins.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Version {
    pub lamport: u64,
    pub device: DeviceId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SharedObject {
    pub object_id: ObjectId,
    pub owner: Owner,
    /// Pose in the shared frame.
    pub transform: RigidTransform,
    pub payload_ref: String,
    pub semantic_state: SemanticState,
    pub version: Version,
}

impl SharedObject {
    pub fn native(object_id: ObjectId, owner: DeviceId, transform: RigidTransform, payload_ref: impl Into<String>) -> Self {
        Self {
            object_id,
            owner: Owner::Device(owner.clone()),
            transform,
            payload_ref: payload_ref.into(),
            semantic_state: SemanticState::Native,
            version: Version {
                lamport: 0,
                device: owner,
            },
        }
    }

    /// Whether its holder may pass it on.
    pub fn is_portable(&self) -> bool {
        matches!(
            self.semantic_state,
            SemanticState::Native | SemanticState::MovedIn | SemanticState::CopiedIn { rights: Rights::Listing(_) }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyncError {
    #[error("no object {0}")]
    UnknownObject(ObjectId),
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("object {0} is locked by a transfer")]
    Locked(ObjectId),
}

fn denied(why: impl Into<String>) -> SyncError {
    SyncError::PermissionDenied(why.into())
}

/// What ending a session did to one store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TerminationReport {
    /// Borrowed objects handed back.
    pub returned: Vec<ObjectId>,
    /// Lent objects restored from escrow.
    pub restored: Vec<ObjectId>,
    pub mirrors_removed: Vec<ObjectId>,
    pub residue: Vec<ResidueEffect>,
}

/// One device's objects.
#[derive(Clone, Debug)]
pub struct ObjectStore {
    device: DeviceId,
    objects: BTreeMap<ObjectId, SharedObject>,
    tombstones: BTreeMap<ObjectId, Version>,
    /// Objects lent out, keyed by id, with the borrower.
    escrow: BTreeMap<ObjectId, (SharedObject, DeviceId)>,
    locked: BTreeSet<ObjectId>,
    mirrored_to: BTreeSet<(ObjectId, DeviceId)>,
    co_owned_with: BTreeSet<(ObjectId, DeviceId)>,
    tokens: BTreeMap<TokenId, PermissionToken>,
    pending_removals: BTreeMap<ObjectId, f64>,
    dirty: BTreeSet<ObjectId>,
    lamport: u64,
}

impl ObjectStore {
    pub fn new(device: DeviceId) -> Self {
        Self {
            device,
            objects: BTreeMap::new(),
            tombstones: BTreeMap::new(),
            escrow: BTreeMap::new(),
            locked: BTreeSet::new(),
            mirrored_to: BTreeSet::new(),
            co_owned_with: BTreeSet::new(),
            tokens: BTreeMap::new(),
            pending_removals: BTreeMap::new(),
            dirty: BTreeSet::new(),
            lamport: 0,
        }
    }

    pub fn device(&self) -> &DeviceId {
        &self.device
    }

    pub fn get(&self, id: ObjectId) -> Option<&SharedObject> {
        self.objects.get(&id)
    }

    pub fn contains(&self, id: ObjectId) -> bool {
        self.objects.contains_key(&id)
    }

    pub fn objects(&self) -> impl Iterator<Item = &SharedObject> {
        self.objects.values()
    }

    pub fn is_tombstoned(&self, id: ObjectId) -> bool {
        self.tombstones.contains_key(&id)
    }

    pub fn is_locked(&self, id: ObjectId) -> bool {
        self.locked.contains(&id)
    }

    pub fn in_escrow(&self, id: ObjectId) -> bool {
        self.escrow.contains_key(&id)
    }

    pub fn lamport(&self) -> u64 {
        self.lamport
    }

    pub fn tokens(&self) -> impl Iterator<Item = &PermissionToken> {
        self.tokens.values()
    }

    pub fn token(&self, id: TokenId) -> Option<&PermissionToken> {
        self.tokens.get(&id)
    }

    /// Stores or replaces a token (e.g. a re-signed revoked version).
    pub fn add_token(&mut self, token: PermissionToken) {
        self.tokens.insert(token.token_id, token);
    }

    pub fn pending_removals(&self) -> &BTreeMap<ObjectId, f64> {
        &self.pending_removals
    }

    fn tick_clock(&mut self) -> Version {
        self.lamport += 1;
        Version {
            lamport: self.lamport,
            device: self.device.clone(),
        }
    }

    fn observe_version(&mut self, v: &Version) {
        self.lamport = self.lamport.max(v.lamport);
    }

    /// Adds an object this device created or received.
    pub fn insert(&mut self, object: SharedObject) -> bool {
        if self.is_tombstoned(object.object_id) {
            return false;
        }
        self.observe_version(&object.version);
        self.objects.insert(object.object_id, object);
        true
    }

    /// Removes an object without leaving a tombstone (it moved elsewhere).
    pub(crate) fn take(&mut self, id: ObjectId) -> Option<SharedObject> {
        self.dirty.remove(&id);
        self.locked.remove(&id);
        self.pending_removals.remove(&id);
        self.objects.remove(&id)
    }

    pub(crate) fn lock(&mut self, id: ObjectId) {
        self.locked.insert(id);
    }

    pub(crate) fn unlock(&mut self, id: ObjectId) {
        self.locked.remove(&id);
    }

    /// The unrevoked token, issued to this device, that lets it change `id`.
    fn mutation_right(&self, id: ObjectId, key: &SessionKey, clock: f64) -> bool {
        self.tokens.values().any(|t| {
            t.subject == self.device
                && t.mutability
                && check(t, &crate::permissions::Request::object(Action::Manipulate, id), CheckContext::at(clock), key)
                    .is_allow()
        })
    }

    fn may_edit(&self, obj: &SharedObject, key: &SessionKey, clock: f64) -> Result<(), SyncError> {
        let id = obj.object_id;
        match &obj.semantic_state {
            SemanticState::MirrorOf { .. } => Err(denied("mirrors are read-only")),
            SemanticState::Native | SemanticState::MovedIn if obj.owner.is(&self.device) => Ok(()),
            SemanticState::CopiedIn {
                rights: Rights::Listing(_),
            } => Ok(()),
            SemanticState::CoOwned if obj.owner.is(&self.device) => Ok(()),
            SemanticState::CopiedIn {
                rights: Rights::Token(tid),
            } => {
                let ok = self.tokens.get(tid).is_some_and(|t| {
                    t.mutability
                        && check(t, &crate::permissions::Request::object(Action::Manipulate, id), CheckContext::at(clock), key)
                            .is_allow()
                });
                ok.then_some(()).ok_or_else(|| denied("copy rights do not allow modification"))
            }
            _ if self.mutation_right(id, key, clock) => Ok(()),
            _ => Err(denied("no mutable grant covers this object")),
        }
    }

    /// Local edit of an object's pose.
    pub fn edit(&mut self, id: ObjectId, transform: RigidTransform, key: &SessionKey, clock: f64) -> Result<(), SyncError> {
        let obj = self.objects.get(&id).ok_or(SyncError::UnknownObject(id))?;
        if self.locked.contains(&id) {
            return Err(SyncError::Locked(id));
        }
        self.may_edit(obj, key, clock)?;
        let version = self.tick_clock();
        let obj = self.objects.get_mut(&id).expect("checked above");
        obj.transform = transform;
        obj.version = version;
        self.dirty.insert(id);
        Ok(())
    }

    /// Deletes an object this device may edit. Deletion is final: the id is
    /// tombstoned and replicated deletes win over concurrent updates.
    pub fn delete(&mut self, id: ObjectId, key: &SessionKey, clock: f64) -> Result<(), SyncError> {
        let obj = self.objects.get(&id).ok_or(SyncError::UnknownObject(id))?;
        if self.locked.contains(&id) {
            return Err(SyncError::Locked(id));
        }
        self.may_edit(obj, key, clock)?;
        let version = self.tick_clock();
        self.objects.remove(&id);
        self.tombstones.insert(id, version);
        self.dirty.insert(id);
        self.pending_removals.remove(&id);
        Ok(())
    }

    /// Applies due fade-outs.
    pub fn sweep(&mut self, clock: f64) -> Vec<ObjectId> {
        let due: Vec<ObjectId> = self
            .pending_removals
            .iter()
            .filter(|(_, at)| **at <= clock)
            .map(|(id, _)| *id)
            .collect();
        for id in &due {
            self.pending_removals.remove(id);
            self.objects.remove(id);
        }
        due
    }

    /// Revokes every held, unrevoked token exchanged with `peer`.
    pub fn revoke_tokens(&mut self, peer: &DeviceId, key: &SessionKey, clock: f64) -> Vec<TokenId> {
        let mut out = Vec::new();
        for token in self.tokens.values_mut() {
            if token.revoked_at.is_none() && (token.issuer == *peer || token.subject == *peer) {
                if let Ok(r) = crate::permissions::revoke(token, clock, key) {
                    *token = r;
                    out.push(token.token_id);
                }
            }
        }
        out
    }

    /// Ends the encounter with `peer`: lent objects go home, mirrors vanish,
    /// co-owned objects revert to their owner's native copy and received
    /// objects get their residue.
    pub fn end_session(&mut self, peer: &DeviceId, clock: f64) -> TerminationReport {
        let mut report = TerminationReport::default();

        let borrowed: Vec<ObjectId> = self
            .objects
            .values()
            .filter(|o| matches!(&o.semantic_state, SemanticState::LentIn { lender } if lender == peer))
            .map(|o| o.object_id)
            .collect();
        for id in borrowed {
            self.take(id);
            report.returned.push(id);
        }
        let lent: Vec<ObjectId> = self
            .escrow
            .iter()
            .filter(|(_, (_, borrower))| borrower == peer)
            .map(|(id, _)| *id)
            .collect();
        for id in lent {
            let (obj, _) = self.escrow.remove(&id).expect("listed above");
            self.objects.insert(id, obj);
            report.restored.push(id);
        }

        let mirrors: Vec<ObjectId> = self
            .objects
            .values()
            .filter(|o| matches!(o.semantic_state, SemanticState::MirrorOf { .. }) && o.owner.is(peer))
            .map(|o| o.object_id)
            .collect();
        for id in mirrors {
            self.take(id);
            report.mirrors_removed.push(id);
        }
        self.mirrored_to.retain(|(_, d)| d != peer);

        let mine: Vec<ObjectId> = self
            .co_owned_with
            .iter()
            .filter(|(_, d)| d == peer)
            .map(|(id, _)| *id)
            .collect();
        for id in mine {
            self.co_owned_with.remove(&(id, peer.clone()));
            if let Some(o) = self.objects.get_mut(&id).filter(|o| o.owner.is(&self.device)) {
                o.semantic_state = SemanticState::Native;
            }
        }

        let held: Vec<(ObjectId, DeviceId)> = self
            .objects
            .values()
            .filter(|o| match &o.semantic_state {
                SemanticState::CopiedIn {
                    rights: Rights::Token(tid),
                } => self.tokens.get(tid).is_some_and(|t| t.issuer == *peer),
                SemanticState::CoOwned => o.owner.is(peer),
                _ => false,
            })
            .map(|o| (o.object_id, self.device.clone()))
            .collect();
        let tokens: Vec<PermissionToken> = self.tokens.values().filter(|t| t.issuer == *peer).cloned().collect();
        report.residue = apply_residue(&held, &tokens, clock);
        for effect in &report.residue {
            match effect.action {
                ResidueAction::RemoveNow => {
                    self.take(effect.object);
                }
                ResidueAction::RemoveAt(at) => {
                    self.pending_removals.insert(effect.object, at);
                }
                ResidueAction::Persist { .. } => {}
            }
        }
        report
    }

    /// Canonical snapshot of the visible objects, for convergence checks.
    pub fn snapshot(&self) -> Vec<SharedObject> {
        self.objects.values().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::Vec3;
    use crate::ids::IdSource;
    use crate::permissions::{Grant, Selector, TokenAuthority};

    pub(crate) fn object(n: u8, owner: &str) -> SharedObject {
        SharedObject::native(
            ObjectId(uuid::Uuid::from_bytes([n; 16])),
            DeviceId::from(owner),
            RigidTransform::identity(),
            format!("payload-{n}"),
        )
    }

    #[test]
    fn edits_bump_versions_and_deletes_tombstone() {
        let key = SessionKey::new([1; 32]);
        let mut s = ObjectStore::new("A".into());
        let o = object(1, "A");
        let id = o.object_id;
        s.insert(o);
        s.edit(id, RigidTransform::from_yaw(0.3, Vec3::x()), &key, 0.0).unwrap();
        assert_eq!(s.get(id).unwrap().version.lamport, 1);
        s.delete(id, &key, 0.0).unwrap();
        assert!(s.is_tombstoned(id));
        assert!(!s.insert(object(1, "A")));
    }

    #[test]
    fn copied_edit_needs_mutability() {
        let key = SessionKey::new([1; 32]);
        let mut auth = TokenAuthority::new(key.clone(), ["A".into(), "B".into()], IdSource::seeded(3));
        let mut s = ObjectStore::new("B".into());
        let mut o = object(2, "B");
        let mut grant = Grant::view_only([Selector::Object(o.object_id)], 100.0);
        grant.actions.insert(Action::Manipulate);
        let token = auth.mint(&"A".into(), &"B".into(), grant.clone(), 0.0).unwrap();
        o.semantic_state = SemanticState::CopiedIn {
            rights: Rights::Token(token.token_id),
        };
        let id = o.object_id;
        s.add_token(token);
        s.insert(o.clone());
        assert!(matches!(
            s.edit(id, RigidTransform::identity(), &key, 1.0),
            Err(SyncError::PermissionDenied(_))
        ));

        grant.mutability = true;
        let token = auth.mint(&"A".into(), &"B".into(), grant, 0.0).unwrap();
        o.semantic_state = SemanticState::CopiedIn {
            rights: Rights::Token(token.token_id),
        };
        s.add_token(token);
        s.insert(o);
        s.edit(id, RigidTransform::identity(), &key, 1.0).unwrap();
    }

    #[test]
    fn mirrors_are_read_only() {
        let key = SessionKey::new([1; 32]);
        let mut s = ObjectStore::new("B".into());
        let mut o = object(3, "A");
        o.semantic_state = SemanticState::MirrorOf { source: o.object_id };
        let id = o.object_id;
        s.insert(o);
        assert!(s.edit(id, RigidTransform::identity(), &key, 0.0).is_err());
    }

    #[test]
    fn fade_sweep() {
        let mut s = ObjectStore::new("B".into());
        let o = object(4, "B");
        let id = o.object_id;
        s.insert(o);
        s.pending_removals.insert(id, 50.0);
        assert!(s.sweep(45.0).is_empty());
        assert!(s.contains(id));
        assert_eq!(s.sweep(51.0), vec![id]);
        assert!(!s.contains(id));
    }
}
