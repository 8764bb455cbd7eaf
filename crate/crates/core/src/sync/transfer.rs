//! Copy, lend, mirror and co-own: one offer message, applied on delivery.
//!
//! The sender authorizes against the session token it issued to the
//! receiver, applies its own side of the transfer and produces an
//! [`Offer`]. The receiver installs the offered object with
//! [`accept_offer`].

use serde::{Deserialize, Serialize};

use super::{denied, ObjectStore, Owner, Rights, SemanticState, SharedObject, SyncError};
use crate::ids::{DeviceId, IdSource, ObjectId};
use crate::permissions::{
    check, Action, CheckContext, Grant, PermissionToken, Portability, Request, Selector, SessionKey, TokenAuthority,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TransferKind {
    Move,
    Copy,
    Lend,
    Mirror,
    CoOwn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Offer {
    pub kind: TransferKind,
    pub from: DeviceId,
    pub object: SharedObject,
    /// Rights token bound to a copy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rights: Option<PermissionToken>,
}

/// Checks that `store` may send `id` to `to` as `kind` under `token`.
///
/// The token must be issued by the sender to the receiver, cover the object
/// and be live at `clock`. Move needs portability MoveOut, copy at least
/// CopyOut, co-own the manipulate action with mutability, lend and mirror
/// the view action. Only portable objects the sender owns can leave.
pub fn authorize(
    store: &ObjectStore,
    kind: TransferKind,
    id: ObjectId,
    to: &DeviceId,
    token: &PermissionToken,
    key: &SessionKey,
    clock: f64,
) -> Result<(), SyncError> {
    let obj = store.get(id).ok_or(SyncError::UnknownObject(id))?;
    if store.is_locked(id) {
        return Err(SyncError::Locked(id));
    }
    if !obj.owner.is(store.device()) || !obj.is_portable() {
        return Err(denied("object is not portable by its holder"));
    }
    if token.issuer != *store.device() || token.subject != *to {
        return Err(denied("token does not bind sender to receiver"));
    }
    let action = if kind == TransferKind::CoOwn {
        Action::Manipulate
    } else {
        Action::View
    };
    let decision = check(token, &Request::object(action, id), CheckContext::at(clock), key);
    if !decision.is_allow() {
        return Err(denied(format!("{decision:?}")));
    }
    let ok = match kind {
        TransferKind::Move => token.portability == Portability::MoveOut,
        TransferKind::Copy => token.portability >= Portability::CopyOut,
        TransferKind::CoOwn => token.mutability,
        TransferKind::Lend | TransferKind::Mirror => true,
    };
    if ok {
        Ok(())
    } else {
        Err(denied(format!("grant does not allow {kind:?}")))
    }
}

/// Sender side of copy, lend, mirror or co-own.
///
/// A copy gets a fresh object id and a rights token minted with the same
/// mutability, portability and residue as the session grant.
#[allow(clippy::too_many_arguments)]
pub fn make_offer(
    store: &mut ObjectStore,
    kind: TransferKind,
    id: ObjectId,
    to: &DeviceId,
    token: &PermissionToken,
    authority: &mut TokenAuthority,
    ids: &mut IdSource,
    clock: f64,
) -> Result<Offer, SyncError> {
    assert!(kind != TransferKind::Move, "moves go through the two-phase exchange");
    authorize(store, kind, id, to, token, authority.key(), clock)?;
    let from = store.device().clone();
    let mut object = store.get(id).expect("authorized").clone();
    let mut rights = None;
    match kind {
        TransferKind::Copy => {
            let copy_id = ids.object_id();
            let grant = Grant {
                scope: [Selector::Object(copy_id)].into(),
                ..token.grant()
            };
            let minted = authority
                .mint(&from, to, grant, clock)
                .map_err(|e| denied(e.to_string()))?;
            object.object_id = copy_id;
            object.owner = Owner::Device(to.clone());
            object.semantic_state = SemanticState::CopiedIn {
                rights: Rights::Token(minted.token_id),
            };
            rights = Some(minted);
        }
        TransferKind::Lend => {
            let lent = store.take(id).expect("authorized");
            store.escrow.insert(id, (lent, to.clone()));
            object.semantic_state = SemanticState::LentIn { lender: from.clone() };
        }
        TransferKind::Mirror => {
            store.mirrored_to.insert((id, to.clone()));
            object.semantic_state = SemanticState::MirrorOf { source: id };
        }
        TransferKind::CoOwn => {
            store.co_owned_with.insert((id, to.clone()));
            store.objects.get_mut(&id).expect("authorized").semantic_state = SemanticState::CoOwned;
            object.semantic_state = SemanticState::CoOwned;
        }
        TransferKind::Move => unreachable!(),
    }
    Ok(Offer {
        kind,
        from,
        object,
        rights,
    })
}

/// Receiver side: installs the offered object. Returns false if the id is
/// tombstoned here.
pub fn accept_offer(store: &mut ObjectStore, offer: Offer) -> bool {
    if let Some(token) = offer.rights {
        store.add_token(token);
    }
    if offer.kind == TransferKind::CoOwn {
        store.co_owned_with.insert((offer.object.object_id, offer.from.clone()));
    }
    store.insert(offer.object)
}
