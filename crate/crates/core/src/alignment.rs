//! Shared coordinate frame anchored at the handshake midpoint.
//!
//! Each device observes the clasp midpoint, the direction to its peer and its
//! gravity-up vector in its own local frame. From those it builds a rigid
//! transform into a shared frame whose origin is the midpoint, whose y axis is
//! up and whose z axis runs horizontally from initiator to responder. Both
//! devices pin the same physical point to the origin, so composing one
//! device's transform with the inverse of the other's maps between the two
//! local frames.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality tolerance for rotations.
pub const ORTHONORMAL_TOL: f64 = 1e-9;
/// Minimum angle between peer direction and up before the frame is degenerate.
pub const DEGENERACY_GUARD_DEG: f64 = 5.0;
/// Maximum skew between the two anchor observations.
pub const MAX_OBSERVATION_SKEW_S: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignmentError {
    #[error("peer direction is within {DEGENERACY_GUARD_DEG} degrees of the up vector")]
    DegenerateGeometry,
    #[error("anchor observations are {skew:.3}s apart")]
    StaleObservation { skew: f64 },
    #[error("rotation is not orthonormal with determinant +1")]
    NotOrthonormal,
}

/// Rotation followed by translation: `p' = R p + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, AlignmentError> {
        let t = Self { rotation, translation };
        if t.is_orthonormal(ORTHONORMAL_TOL) {
            Ok(t)
        } else {
            Err(AlignmentError::NotOrthonormal)
        }
    }

    /// Rotation about +y by `yaw` radians, then translation.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            translation: -(rt * self.translation),
            rotation: rt,
        }
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let gram = self.rotation.transpose() * self.rotation;
        (gram - Mat3::identity()).amax() <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Row-major rotation followed by the translation, 9 + 3 numbers.
    pub fn row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }
}

#[derive(Serialize, Deserialize)]
struct RigidTransformWire {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let m = self.row_major();
        RigidTransformWire {
            rotation: [m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]],
            translation: [m[9], m[10], m[11]],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let w = RigidTransformWire::deserialize(deserializer)?;
        let rotation = Mat3::from_row_slice(&w.rotation);
        // Shortest-form floats round-trip exactly; tolerate the 1e-6 loss of
        // fixed-decimal trace files.
        let t = RigidTransform {
            rotation,
            translation: Vec3::from(w.translation),
        };
        if t.is_orthonormal(1e-5) {
            Ok(t)
        } else {
            Err(serde::de::Error::custom("rotation is not orthonormal"))
        }
    }
}

/// Builds the local→shared transform for one device.
///
/// `peer_dir` must point from the initiator toward the responder; [`align`]
/// flips the responder's observation before calling this.
pub fn shared_frame(midpoint: &Vec3, peer_dir: &Vec3, up: &Vec3) -> Result<RigidTransform, AlignmentError> {
    let up = up.try_normalize(1e-12).ok_or(AlignmentError::DegenerateGeometry)?;
    let dir = peer_dir.try_normalize(1e-12).ok_or(AlignmentError::DegenerateGeometry)?;
    if dir.dot(&up).abs() >= DEGENERACY_GUARD_DEG.to_radians().cos() {
        return Err(AlignmentError::DegenerateGeometry);
    }
    let z = (dir - up * dir.dot(&up)).normalize();
    let y = up;
    let x = y.cross(&z);
    let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let t = RigidTransform {
        translation: -(rotation * midpoint),
        rotation,
    };
    debug_assert!(t.is_orthonormal(ORTHONORMAL_TOL));
    Ok(t)
}

/// Points both devices can observe, used to measure alignment mismatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Landmark {
    InitiatorPalm,
    ResponderPalm,
    InitiatorHead,
    ResponderHead,
}

/// Anchor data one device contributes, in its own local frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AnchorObservation {
    pub t: f64,
    pub midpoint: Vec3,
    /// Direction from this device toward its peer.
    pub peer_dir: Vec3,
    pub up: Vec3,
    #[serde(default)]
    pub landmarks: BTreeMap<Landmark, Vec3>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AlignmentResult {
    pub to_shared_from_initiator: RigidTransform,
    pub to_shared_from_responder: RigidTransform,
    /// Largest landmark disagreement in the shared frame, meters.
    pub residual: f64,
    /// Seconds from the earliest anchor observation to completion.
    pub completed_in: f64,
}

impl AlignmentResult {
    pub fn identity() -> Self {
        Self {
            to_shared_from_initiator: RigidTransform::identity(),
            to_shared_from_responder: RigidTransform::identity(),
            residual: 0.0,
            completed_in: 0.0,
        }
    }
}

/// Aligns the two devices' local frames through the shared frame.
///
/// `now` is when both observations are in hand; it fixes `completed_in`.
pub fn align(
    initiator: &AnchorObservation,
    responder: &AnchorObservation,
    now: f64,
) -> Result<AlignmentResult, AlignmentError> {
    let skew = (initiator.t - responder.t).abs();
    if skew > MAX_OBSERVATION_SKEW_S + 1e-9 {
        return Err(AlignmentError::StaleObservation { skew });
    }
    let to_i = shared_frame(&initiator.midpoint, &initiator.peer_dir, &initiator.up)?;
    let to_r = shared_frame(&responder.midpoint, &(-responder.peer_dir), &responder.up)?;

    let mut residual: f64 = 0.0;
    for (landmark, p_i) in &initiator.landmarks {
        if let Some(p_r) = responder.landmarks.get(landmark) {
            residual = residual.max((to_i.apply(p_i) - to_r.apply(p_r)).norm());
        }
    }
    Ok(AlignmentResult {
        to_shared_from_initiator: to_i,
        to_shared_from_responder: to_r,
        residual,
        completed_in: (now - initiator.t.min(responder.t)).max(0.0),
    })
}

/// Maps initiator-local coordinates to responder-local coordinates.
pub fn a_to_b(result: &AlignmentResult) -> RigidTransform {
    result.to_shared_from_responder.inverse().compose(&result.to_shared_from_initiator)
}

/// Maps responder-local coordinates to initiator-local coordinates.
pub fn b_to_a(result: &AlignmentResult) -> RigidTransform {
    result.to_shared_from_initiator.inverse().compose(&result.to_shared_from_responder)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn identity_when_local_equals_shared() {
        let t = shared_frame(&Vec3::zeros(), &v(0.0, 0.0, 1.0), &v(0.0, 1.0, 0.0)).unwrap();
        assert!((t.rotation() - Mat3::identity()).amax() < 1e-15);
        assert!(t.translation().norm() < 1e-15);
    }

    #[test]
    fn offset_midpoint_example() {
        let mid = v(0.5, 1.2, 0.0);
        let t = shared_frame(&mid, &v(1.0, 0.0, 0.0), &v(0.0, 1.0, 0.0)).unwrap();
        // Pre-rotation offset is -midpoint; the stored translation is R·(-midpoint).
        let pre = t.rotation().transpose() * t.translation();
        assert!((pre - v(-0.5, -1.2, 0.0)).norm() < 1e-12);
        assert!(t.apply(&mid).norm() < 1e-12);
        // z follows the peer direction, y stays up.
        assert!((t.apply_vector(&v(1.0, 0.0, 0.0)) - v(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!((t.apply_vector(&v(0.0, 1.0, 0.0)) - v(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn parallel_peer_dir_is_degenerate() {
        let up = v(0.0, 1.0, 0.0);
        assert_eq!(shared_frame(&Vec3::zeros(), &up, &up), Err(AlignmentError::DegenerateGeometry));
        // 4 degrees off vertical is still inside the guard, 6 is not.
        let tilt = |deg: f64| v(deg.to_radians().sin(), deg.to_radians().cos(), 0.0);
        assert!(shared_frame(&Vec3::zeros(), &tilt(4.0), &up).is_err());
        assert!(shared_frame(&Vec3::zeros(), &tilt(6.0), &up).is_ok());
    }

    #[test]
    fn rejects_non_orthonormal() {
        let m = Mat3::identity() * 1.01;
        assert_eq!(RigidTransform::new(m, Vec3::zeros()), Err(AlignmentError::NotOrthonormal));
    }

    #[test]
    fn stale_observation() {
        let obs = |t| AnchorObservation {
            t,
            midpoint: Vec3::zeros(),
            peer_dir: v(1.0, 0.0, 0.0),
            up: v(0.0, 1.0, 0.0),
            landmarks: BTreeMap::new(),
        };
        let mut b = obs(0.15);
        b.peer_dir = v(-1.0, 0.0, 0.0);
        assert!(matches!(align(&obs(0.0), &b, 0.2), Err(AlignmentError::StaleObservation { .. })));
        b.t = 0.1;
        assert!(align(&obs(0.0), &b, 0.2).is_ok());
    }

    #[test]
    fn identical_poses_give_equal_transforms() {
        let obs = AnchorObservation {
            t: 1.0,
            midpoint: v(0.2, 1.1, 0.4),
            peer_dir: v(1.0, 0.0, 0.0),
            up: v(0.0, 1.0, 0.0),
            landmarks: BTreeMap::new(),
        };
        let mut other = obs.clone();
        other.peer_dir = -obs.peer_dir;
        let r = align(&obs, &other, 1.0).unwrap();
        assert_eq!(r.to_shared_from_initiator, r.to_shared_from_responder);
        let ab = a_to_b(&r);
        assert!((ab.rotation() - Mat3::identity()).amax() < 1e-12);
        assert!(ab.translation().norm() < 1e-12);
    }

    #[test]
    fn serde_row_major() {
        let t = RigidTransform::from_yaw(0.3, v(1.0, 2.0, 3.0));
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(json["translation"], serde_json::json!([1.0, 2.0, 3.0]));
        assert_eq!(json["rotation"].as_array().unwrap().len(), 9);
        let back: RigidTransform = serde_json::from_value(json).unwrap();
        assert_eq!(back, t);
    }
}
