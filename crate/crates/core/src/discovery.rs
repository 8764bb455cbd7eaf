//! Proximity discovery with rotating, unlinkable encounter tokens.
//!
//! A device advertises `PRF(secret, epoch)` truncated to 16 bytes. Nothing in
//! the advertisement identifies the device; linking two tokens to the same
//! person only happens later, through the handshake.

use std::collections::BTreeSet;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::alignment::Vec3;
use crate::canonical::{self, FloatStyle};
use crate::encounter::ProtocolEvent;
use crate::ids::DeviceId;
use crate::keyed::keyed_hash;

/// Token rotation period.
pub const ROTATION_PERIOD_S: f64 = 900.0;
/// Default scan radius.
pub const DEFAULT_RANGE_M: f64 = 10.0;

const BEACON_DOMAIN: &[u8] = b"touchport/beacon/v1";

/// Long-lived per-device secret. Never serialized.
#[derive(Clone)]
pub struct DeviceSecret {
    device: DeviceId,
    secret: [u8; 32],
}

impl DeviceSecret {
    pub fn new(device: DeviceId, secret: [u8; 32]) -> Self {
        Self { device, secret }
    }

    pub fn generate(device: DeviceId, rng: &mut impl RngCore) -> Self {
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        Self { device, secret }
    }

    pub fn device(&self) -> &DeviceId {
        &self.device
    }
}

impl fmt::Debug for DeviceSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceSecret")
            .field("device", &self.device)
            .field("secret", &"<redacted>")
            .finish()
    }
}

/// 16-byte rotating encounter token; lowercase hex on the wire.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BeaconToken(pub [u8; 16]);

impl BeaconToken {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for BeaconToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BeaconToken({})", self.to_hex())
    }
}

impl Serialize for BeaconToken {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for BeaconToken {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s.len() != 32 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(serde::de::Error::custom("token must be 32 lowercase hex digits"));
        }
        let mut out = [0u8; 16];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(Self(out))
    }
}

/// A broadcast advertisement. Only `token` and `epoch` go on the wire;
/// emission time and position are simulation ground truth.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Beacon {
    pub token: BeaconToken,
    pub epoch: u64,
    #[serde(skip)]
    pub emitted_at: f64,
    #[serde(skip)]
    pub emitter_pos: Vec3,
}

impl Beacon {
    /// Canonical JSON wire form: `{"epoch":N,"token":"<hex>"}`.
    pub fn to_wire(&self) -> String {
        canonical::to_canonical_string(self, FloatStyle::Shortest).expect("beacon serializes")
    }
}

/// What a receiver learns from a beacon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeaconAdvert {
    pub token: BeaconToken,
    pub epoch: u64,
}

pub fn epoch_for(clock: f64) -> u64 {
    (clock / ROTATION_PERIOD_S).floor().max(0.0) as u64
}

pub fn beacon_token(secret: &DeviceSecret, epoch: u64) -> BeaconToken {
    let digest = keyed_hash(&secret.secret, &[BEACON_DOMAIN, &epoch.to_be_bytes()]);
    let mut token = [0u8; 16];
    token.copy_from_slice(&digest[..16]);
    BeaconToken(token)
}

pub fn make_beacon(secret: &DeviceSecret, epoch: u64, clock: f64, pos: Vec3) -> Beacon {
    debug_assert_eq!(epoch, epoch_for(clock), "epoch must match the clock");
    Beacon {
        token: beacon_token(secret, epoch),
        epoch,
        emitted_at: clock,
        emitter_pos: pos,
    }
}

/// A nearby peer known only by its current token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AwarePeer {
    pub token: BeaconToken,
    pub epoch: u64,
}

/// Returns the beacons emitted within `range` meters (inclusive) of `own_pos`.
///
/// # Panics
///
/// If `range` is not positive.
pub fn scan(own_pos: &Vec3, beacons: &[Beacon], range: f64) -> Vec<AwarePeer> {
    assert!(range > 0.0, "scan range must be positive");
    beacons
        .iter()
        .filter(|b| (b.emitter_pos - own_pos).norm_squared() <= range * range)
        .map(|b| AwarePeer {
            token: b.token,
            epoch: b.epoch,
        })
        .collect()
}

/// Remembers which tokens each device has already reported, so a token
/// produces exactly one `BeaconSeen`.
#[derive(Clone, Debug, Default)]
pub struct SightingRegistry {
    seen: BTreeSet<(DeviceId, BeaconToken)>,
}

impl SightingRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn link(&mut self, observer: &DeviceId, token: BeaconToken) -> Option<ProtocolEvent> {
        self.seen
            .insert((observer.clone(), token))
            .then_some(ProtocolEvent::BeaconSeen { token })
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn secret(name: &str, seed: u64) -> DeviceSecret {
        DeviceSecret::generate(DeviceId::from(name), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn epochs_rotate_tokens() {
        let s = secret("alice", 1);
        assert_ne!(beacon_token(&s, 0), beacon_token(&s, 1));
        assert_eq!(beacon_token(&s, 3), beacon_token(&s, 3));
        let other = secret("bob", 2);
        assert_ne!(beacon_token(&s, 0), beacon_token(&other, 0));
    }

    #[test]
    fn epoch_boundaries() {
        assert_eq!(epoch_for(0.0), 0);
        assert_eq!(epoch_for(899.999), 0);
        assert_eq!(epoch_for(900.0), 1);
    }

    #[test]
    fn scan_range_is_inclusive() {
        let s = secret("alice", 1);
        let at = |x: f64| make_beacon(&s, 0, 0.0, Vec3::new(x, 0.0, 0.0));
        let me = Vec3::zeros();
        assert_eq!(scan(&me, &[at(5.0)], DEFAULT_RANGE_M).len(), 1);
        assert_eq!(scan(&me, &[at(12.0)], DEFAULT_RANGE_M).len(), 0);
        assert_eq!(scan(&me, &[at(10.0)], DEFAULT_RANGE_M).len(), 1);
        assert_eq!(scan(&me, &[at(10.000001)], DEFAULT_RANGE_M).len(), 0);
    }

    #[test]
    fn wire_form_carries_token_and_epoch_only() {
        let s = secret("alice", 1);
        let b = make_beacon(&s, 0, 3.0, Vec3::new(1.0, 2.0, 3.0));
        let wire = b.to_wire();
        assert_eq!(wire, format!(r#"{{"epoch":0,"token":"{}"}}"#, b.token.to_hex()));
        let back: BeaconAdvert = serde_json::from_str(&wire).unwrap();
        assert_eq!(back.token, b.token);
        assert!(!wire.contains("alice"));
    }

    #[test]
    fn rejects_uppercase_hex() {
        let bad = format!(r#"{{"epoch":0,"token":"{}"}}"#, "AB".repeat(16));
        assert!(serde_json::from_str::<BeaconAdvert>(&bad).is_err());
    }

    #[test]
    fn registry_emits_once_per_token() {
        let s = secret("bob", 2);
        let me = DeviceId::from("alice");
        let mut reg = SightingRegistry::new();
        assert!(reg.link(&me, beacon_token(&s, 0)).is_some());
        assert!(reg.link(&me, beacon_token(&s, 0)).is_none());
        // A fresh epoch looks like a stranger until the handshake links it.
        assert!(reg.link(&me, beacon_token(&s, 1)).is_some());
        assert_eq!(reg.len(), 2);
    }

    #[test]
    fn debug_redacts_secret() {
        let s = DeviceSecret::new(DeviceId::from("alice"), [0xab; 32]);
        assert!(!format!("{s:?}").contains("ab, ab"));
    }
}
