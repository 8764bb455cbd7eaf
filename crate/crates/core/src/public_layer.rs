//! A location-anchored commons. Deposited objects lose their owner, nearby
//! devices see listings without asking, and pickup follows the rule chosen
//! at deposit time.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::Vec3;
use crate::canonical::{self, FloatStyle};
use crate::ids::{DeviceId, IdSource, ListingId, ObjectId};
use crate::sync::{ObjectStore, Owner, Rights, SemanticState, SharedObject, Version};

/// Maximum distance from a listing at which it can be picked up.
pub const PICKUP_RANGE_M: f64 = 2.0;

/// Version author recorded on deposited snapshots in place of the depositor.
pub const COMMONS_AUTHOR: &str = "commons";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Authorship {
    Anonymous,
    Attributed(DeviceId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PickupRule {
    Single,
    Unlimited,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DepositMeta {
    pub authorship: Authorship,
    pub expires_at: Option<f64>,
    pub pickup_rule: PickupRule,
    pub embedded_content_ref: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PublicListing {
    pub listing_id: ListingId,
    pub position: Vec3,
    pub authorship: Authorship,
    pub expires_at: Option<f64>,
    pub pickup_rule: PickupRule,
    pub embedded_content_ref: String,
    pub object_snapshot: SharedObject,
}

impl PublicListing {
    pub fn to_canonical(&self) -> String {
        canonical::to_canonical_string(self, FloatStyle::Shortest).expect("listing serializes")
    }

    /// Expiry is inclusive: a listing is gone at its expiry time.
    pub fn is_expired(&self, clock: f64) -> bool {
        self.expires_at.is_some_and(|at| at <= clock)
    }

    pub fn view(&self) -> ListingView {
        ListingView {
            listing_id: self.listing_id,
            position: self.position,
            authorship: self.authorship.clone(),
            expires_at: self.expires_at,
            pickup_rule: self.pickup_rule,
            object_id: self.object_snapshot.object_id,
            payload_ref: self.object_snapshot.payload_ref.clone(),
        }
    }
}

/// What discovery shows. Has no field for the embedded content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ListingView {
    pub listing_id: ListingId,
    pub position: Vec3,
    pub authorship: Authorship,
    pub expires_at: Option<f64>,
    pub pickup_rule: PickupRule,
    pub object_id: ObjectId,
    pub payload_ref: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PickedUp {
    pub object: SharedObject,
    pub embedded_content_ref: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PublicError {
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("no listing {0}")]
    UnknownListing(ListingId),
    #[error("listing already taken")]
    AlreadyTaken,
    #[error("listing expired")]
    Expired,
    #[error("listing is {distance:.3} m away")]
    OutOfRange { distance: f64 },
}

#[derive(Clone, Debug)]
pub struct Commons {
    listings: BTreeMap<ListingId, PublicListing>,
    taken: BTreeSet<ListingId>,
    expired: BTreeSet<ListingId>,
    ids: IdSource,
}

impl Commons {
    pub fn new(ids: IdSource) -> Self {
        Self {
            listings: BTreeMap::new(),
            taken: BTreeSet::new(),
            expired: BTreeSet::new(),
            ids,
        }
    }

    pub fn get(&self, id: ListingId) -> Option<&PublicListing> {
        self.listings.get(&id)
    }

    pub fn len(&self) -> usize {
        self.listings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.listings.is_empty()
    }

    /// Moves an object out of `store` into the commons.
    pub fn deposit(
        &mut self,
        store: &mut ObjectStore,
        object: ObjectId,
        meta: DepositMeta,
        position: Vec3,
    ) -> Result<PublicListing, PublicError> {
        let obj = store
            .get(object)
            .ok_or_else(|| PublicError::PermissionDenied("not held".into()))?;
        if !obj.owner.is(store.device()) || !obj.is_portable() || store.is_locked(object) {
            return Err(PublicError::PermissionDenied("object is not portable by its holder".into()));
        }
        let mut snapshot = store.take(object).expect("checked above");
        snapshot.owner = Owner::Unowned;
        snapshot.semantic_state = SemanticState::Native;
        snapshot.version = Version {
            lamport: snapshot.version.lamport,
            device: DeviceId::from(COMMONS_AUTHOR),
        };
        let listing = PublicListing {
            listing_id: self.ids.listing_id(),
            position,
            authorship: meta.authorship,
            expires_at: meta.expires_at,
            pickup_rule: meta.pickup_rule,
            embedded_content_ref: meta.embedded_content_ref,
            object_snapshot: snapshot,
        };
        self.listings.insert(listing.listing_id, listing.clone());
        Ok(listing)
    }

    /// Unexpired listings within `radius`. Approaching is consent: nothing
    /// else happens.
    ///
    /// # Panics
    ///
    /// If `radius` is not positive.
    pub fn discover_nearby(&self, pos: &Vec3, radius: f64, clock: f64) -> Vec<ListingView> {
        assert!(radius > 0.0, "discovery radius must be positive");
        self.listings
            .values()
            .filter(|l| !l.is_expired(clock) && (l.position - pos).norm() <= radius)
            .map(PublicListing::view)
            .collect()
    }

    pub fn pickup(&mut self, id: ListingId, who: &DeviceId, who_pos: &Vec3, clock: f64) -> Result<PickedUp, PublicError> {
        let Some(listing) = self.listings.get(&id) else {
            return Err(if self.taken.contains(&id) {
                PublicError::AlreadyTaken
            } else if self.expired.contains(&id) {
                PublicError::Expired
            } else {
                PublicError::UnknownListing(id)
            });
        };
        if listing.is_expired(clock) {
            return Err(PublicError::Expired);
        }
        let distance = (listing.position - who_pos).norm();
        if distance > PICKUP_RANGE_M {
            return Err(PublicError::OutOfRange { distance });
        }
        let mut object = listing.object_snapshot.clone();
        object.owner = Owner::Device(who.clone());
        object.version = Version {
            lamport: object.version.lamport,
            device: who.clone(),
        };
        let embedded_content_ref = listing.embedded_content_ref.clone();
        match listing.pickup_rule {
            PickupRule::Single => {
                object.semantic_state = SemanticState::MovedIn;
                self.listings.remove(&id);
                self.taken.insert(id);
            }
            PickupRule::Unlimited => {
                object.object_id = self.ids.object_id();
                object.semantic_state = SemanticState::CopiedIn {
                    rights: Rights::Listing(id),
                };
            }
        }
        Ok(PickedUp {
            object,
            embedded_content_ref,
        })
    }

    /// Pickups attempted in the same tick, resolved in device-id order.
    pub fn pickup_concurrent(
        &mut self,
        id: ListingId,
        attempts: &[(DeviceId, Vec3)],
        clock: f64,
    ) -> Vec<(DeviceId, Result<PickedUp, PublicError>)> {
        let mut ordered: Vec<&(DeviceId, Vec3)> = attempts.iter().collect();
        ordered.sort_by(|a, b| a.0.cmp(&b.0));
        ordered
            .into_iter()
            .map(|(who, pos)| (who.clone(), self.pickup(id, who, pos, clock)))
            .collect()
    }

    /// Removes listings whose expiry is at or before `clock`.
    pub fn expire_sweep(&mut self, clock: f64) -> Vec<ListingId> {
        let gone: Vec<ListingId> = self
            .listings
            .values()
            .filter(|l| l.is_expired(clock))
            .map(|l| l.listing_id)
            .collect();
        for id in &gone {
            self.listings.remove(id);
            self.expired.insert(*id);
        }
        gone
    }
}
