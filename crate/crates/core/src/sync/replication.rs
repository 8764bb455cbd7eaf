//! Fixed-rate state replication for mirrored and co-owned objects.

use serde::{Deserialize, Serialize};

use super::{ObjectStore, SemanticState, SharedObject, Version};
use crate::ids::{DeviceId, ObjectId};

/// Object state replication rate.
pub const SYNC_HZ: f64 = 30.0;

/// One tick's worth of changes for a peer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Delta {
    pub updates: Vec<SharedObject>,
    pub deletes: Vec<(ObjectId, Version)>,
}

impl Delta {
    pub fn is_empty(&self) -> bool {
        self.updates.is_empty() && self.deletes.is_empty()
    }
}

/// Collects changes made since the last tick to objects shared with `peer`:
/// objects co-owned with it and objects it mirrors. Always returns a delta,
/// possibly empty, and clears the dirty marks it consumed.
pub fn tick(store: &mut ObjectStore, peer: &DeviceId) -> Delta {
    let mut delta = Delta::default();
    let dirty: Vec<ObjectId> = store.dirty.iter().copied().collect();
    for id in dirty {
        let key = (id, peer.clone());
        if !store.mirrored_to.contains(&key) && !store.co_owned_with.contains(&key) {
            continue;
        }
        if let Some(obj) = store.get(id) {
            delta.updates.push(obj.clone());
        } else if let Some(v) = store.tombstones.get(&id) {
            delta.deletes.push((id, v.clone()));
        }
        store.dirty.remove(&id);
    }
    delta
}

/// Applies a peer's delta. Updates only touch existing replicas and only
/// when their version dominates; deletes are final.
pub fn apply(store: &mut ObjectStore, delta: &Delta) -> usize {
    let mut applied = 0;
    for update in &delta.updates {
        let id = update.object_id;
        if store.is_tombstoned(id) {
            continue;
        }
        store.observe_version(&update.version);
        let Some(local) = store.objects.get_mut(&id) else { continue };
        if !matches!(local.semantic_state, SemanticState::CoOwned | SemanticState::MirrorOf { .. }) {
            continue;
        }
        if update.version > local.version {
            local.transform = update.transform.clone();
            local.payload_ref = update.payload_ref.clone();
            local.version = update.version.clone();
            applied += 1;
        }
    }
    for (id, version) in &delta.deletes {
        store.observe_version(version);
        let replica = store
            .objects
            .get(id)
            .is_some_and(|o| matches!(o.semantic_state, SemanticState::CoOwned | SemanticState::MirrorOf { .. }));
        if replica {
            store.objects.remove(id);
            store.pending_removals.remove(id);
            store.tombstones.insert(*id, version.clone());
            applied += 1;
        }
    }
    applied
}
