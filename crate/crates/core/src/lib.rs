//! Encounter protocol engine and deterministic simulator for handshake-initiated
//! mixed-reality sharing.
//!
//! Two co-located headsets move through an eight-stage encounter lifecycle
//! (prerequisite, discovery, intent, preview, consent, spatial alignment, sync,
//! termination). The user-facing surface is two gestures: a handshake (intent,
//! preview and bilateral consent) and a pull (alignment and sync).
//!
//! Module map:
//!
//! - [`encounter`]: the per-session stage machine and its effects.
//! - [`discovery`]: rotating beacon tokens and range-gated scanning.
//! - [`gesture`]: detectors turning hand-pose streams into protocol events.
//! - [`alignment`]: rigid transforms and the shared frame at the clasp midpoint.
//! - [`permissions`]: scoped, revocable permission tokens and residue.
//! - [`sync`]: replicated object stores, transfer semantics, two-phase move.
//! - [`public_layer`]: the location-anchored commons.
//! - [`sim`]: scenarios, the discrete-event simulator, traces and metrics.

pub mod alignment;
pub mod canonical;
pub mod discovery;
pub mod encounter;
pub mod gesture;
pub mod ids;
mod keyed;
pub mod permissions;
pub mod public_layer;
pub mod sim;
pub mod sync;

pub use alignment::{AlignmentResult, RigidTransform, Vec3};
pub use encounter::{EncounterSession, EncounterStage, ProtocolEvent};
pub use ids::{DeviceId, IdSource, ObjectId, SessionId, TokenId};
