//! Permission tokens over the eight sharing dimensions: scope, action,
//! duration, audience, mutability, portability, revocability and residue.
//!
//! Tokens serialize to canonical JSON. The `integrity` field is a truncated
//! HMAC-SHA256 under the session key over the canonical form of every other
//! field, `revokedAt` included, so revoking a token re-signs it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::canonical::{self, FloatStyle};
use crate::ids::{DeviceId, IdSource, ObjectId, SessionId, TokenId};
use crate::keyed::{digest_eq, keyed_hash};

/// Participant separation beyond which every token is treated as revoked.
pub const DISTANCE_THRESHOLD_M: f64 = 10.0;

const TOKEN_DOMAIN: &[u8] = b"touchport/token/v1";
const SESSION_KEY_DOMAIN: &[u8] = b"touchport/session-key/v1";

/// Per-session signing key, agreed at consent time.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey([u8; 32]);

impl SessionKey {
    pub fn new(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    /// Deterministic key for a simulated session.
    pub fn derive(secret: &[u8], session: &SessionId) -> Self {
        Self(keyed_hash(secret, &[SESSION_KEY_DOMAIN, session.as_str().as_bytes()]))
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SessionKey(<redacted>)")
    }
}

/// What a token covers: one object or a named layer.
///
/// Variant order keeps sets sorted by their string form.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Selector {
    Layer(String),
    Object(ObjectId),
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Object(id) => write!(f, "object:{id}"),
            Selector::Layer(name) => write!(f, "layer:{name}"),
        }
    }
}

impl FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(id) = s.strip_prefix("object:") {
            id.parse().map(Selector::Object).map_err(|e| format!("bad object selector: {e}"))
        } else if let Some(name) = s.strip_prefix("layer:") {
            if name.is_empty() {
                return Err("empty layer name".into());
            }
            Ok(Selector::Layer(name.to_owned()))
        } else {
            Err(format!("unknown selector {s:?}"))
        }
    }
}

impl Serialize for Selector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Action {
    // Alphabetical, as in canonical output.
    Manipulate,
    Record,
    View,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::View, Action::Manipulate, Action::Record];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Duration {
    Bounded(f64),
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Audience {
    ParticipantsOnly,
    Extendable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Portability {
    None,
    CopyOut,
    MoveOut,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Revocability {
    Immediate,
    Grace(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Residue {
    None,
    Fade(f64),
    Persist,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RevocationTrigger {
    Gesture,
    DistanceThreshold,
}

/// The eight negotiated dimensions, one field each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Grant {
    pub scope: BTreeSet<Selector>,
    pub actions: BTreeSet<Action>,
    pub duration: Duration,
    pub audience: Audience,
    pub mutability: bool,
    pub portability: Portability,
    pub revocability: Revocability,
    pub residue: Residue,
}

impl Grant {
    /// View-only access to `scope` for `seconds`, nothing left behind.
    pub fn view_only(scope: impl IntoIterator<Item = Selector>, seconds: f64) -> Self {
        Self {
            scope: scope.into_iter().collect(),
            actions: [Action::View].into(),
            duration: Duration::Bounded(seconds),
            audience: Audience::ParticipantsOnly,
            mutability: false,
            portability: Portability::None,
            revocability: Revocability::Immediate,
            residue: Residue::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PermissionToken {
    pub token_id: TokenId,
    pub issuer: DeviceId,
    pub subject: DeviceId,
    pub scope: BTreeSet<Selector>,
    pub actions: BTreeSet<Action>,
    pub issued_at: f64,
    pub duration: Duration,
    pub audience: Audience,
    pub mutability: bool,
    pub portability: Portability,
    pub revocability: Revocability,
    pub residue: Residue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revoked_at: Option<f64>,
    #[serde(with = "integrity_hex")]
    pub integrity: [u8; 16],
}

mod integrity_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 16], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<[u8; 16], D::Error> {
        let s = String::deserialize(deserializer)?;
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(serde::de::Error::custom("integrity must be lowercase hex"));
        }
        let mut out = [0u8; 16];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

impl PermissionToken {
    pub fn grant(&self) -> Grant {
        Grant {
            scope: self.scope.clone(),
            actions: self.actions.clone(),
            duration: self.duration,
            audience: self.audience,
            mutability: self.mutability,
            portability: self.portability,
            revocability: self.revocability,
            residue: self.residue,
        }
    }

    pub fn covers(&self, selector: &Selector) -> bool {
        self.scope.contains(selector)
    }

    pub fn covers_object(&self, object: ObjectId) -> bool {
        self.covers(&Selector::Object(object))
    }

    /// End of validity, if bounded.
    pub fn expires_at(&self) -> Option<f64> {
        match self.duration {
            Duration::Bounded(d) => Some(self.issued_at + d),
            Duration::Unbounded => None,
        }
    }

    /// Earliest clock at which revocation takes effect.
    pub fn revocation_effective_at(&self) -> Option<f64> {
        let at = self.revoked_at?;
        Some(match self.revocability {
            Revocability::Immediate => at,
            Revocability::Grace(g) => at + g,
        })
    }

    fn signing_bytes(&self) -> String {
        let mut value = serde_json::to_value(self).expect("token serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("integrity");
        }
        canonical::write_value(&value, FloatStyle::Shortest)
    }

    fn compute_integrity(&self, key: &SessionKey) -> [u8; 16] {
        let digest = keyed_hash(&key.0, &[TOKEN_DOMAIN, self.signing_bytes().as_bytes()]);
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        out
    }

    fn sign(&mut self, key: &SessionKey) {
        self.integrity = self.compute_integrity(key);
    }

    pub fn verify(&self, key: &SessionKey) -> bool {
        digest_eq(&self.compute_integrity(key), &self.integrity)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenError {
    #[error("scope is empty")]
    EmptyScope,
    #[error("{0} is not a session participant")]
    NonParticipant(DeviceId),
    #[error("token already revoked")]
    AlreadyRevoked,
    #[error("revocation at t={clock} precedes issue at t={issued_at}")]
    RevokedBeforeIssue { clock: f64, issued_at: f64 },
    #[error("malformed token: {0}")]
    MalformedToken(String),
    #[error("integrity check failed")]
    BadIntegrity,
    #[error("object is not in the token's scope")]
    NotInScope,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DenyReason {
    Expired,
    Revoked,
    OutOfScope,
    ActionForbidden,
    BadIntegrity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(self) -> bool {
        self == Decision::Allow
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub action: Action,
    pub target: Selector,
}

impl Request {
    pub fn object(action: Action, object: ObjectId) -> Self {
        Self {
            action,
            target: Selector::Object(object),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckContext {
    pub clock: f64,
    /// Current distance between the participants, when known.
    pub participant_distance: Option<f64>,
}

impl CheckContext {
    pub fn at(clock: f64) -> Self {
        Self {
            clock,
            participant_distance: None,
        }
    }
}

/// Allow iff the integrity verifies, the token is not revoked (or still in
/// grace), it has not expired, the target is in scope and the action is
/// granted. Denials are reported in that order.
pub fn check(token: &PermissionToken, request: &Request, ctx: CheckContext, key: &SessionKey) -> Decision {
    if !token.verify(key) {
        return Decision::Deny(DenyReason::BadIntegrity);
    }
    if let Some(at) = token.revocation_effective_at() {
        if ctx.clock >= at {
            return Decision::Deny(DenyReason::Revoked);
        }
    }
    if ctx.participant_distance.is_some_and(|d| d > DISTANCE_THRESHOLD_M) {
        return Decision::Deny(DenyReason::Revoked);
    }
    if token.expires_at().is_some_and(|end| ctx.clock >= end) {
        return Decision::Deny(DenyReason::Expired);
    }
    if !token.covers(&request.target) {
        return Decision::Deny(DenyReason::OutOfScope);
    }
    if !token.actions.contains(&request.action) {
        return Decision::Deny(DenyReason::ActionForbidden);
    }
    Decision::Allow
}

/// Returns a revoked copy of `token`, re-signed.
pub fn revoke(token: &PermissionToken, clock: f64, key: &SessionKey) -> Result<PermissionToken, TokenError> {
    if token.revoked_at.is_some() {
        return Err(TokenError::AlreadyRevoked);
    }
    if clock < token.issued_at {
        return Err(TokenError::RevokedBeforeIssue {
            clock,
            issued_at: token.issued_at,
        });
    }
    let mut out = token.clone();
    out.revoked_at = Some(clock);
    out.sign(key);
    Ok(out)
}

pub fn serialize(token: &PermissionToken) -> Vec<u8> {
    canonical::to_canonical_string(token, FloatStyle::Shortest)
        .expect("token serializes")
        .into_bytes()
}

/// Parses any JSON rendering of a token and verifies its integrity.
pub fn parse(bytes: &[u8], key: &SessionKey) -> Result<PermissionToken, TokenError> {
    let token: PermissionToken =
        serde_json::from_slice(bytes).map_err(|e| TokenError::MalformedToken(e.to_string()))?;
    if token.scope.is_empty() {
        return Err(TokenError::MalformedToken("empty scope".into()));
    }
    if token.revoked_at.is_some_and(|r| r < token.issued_at) {
        return Err(TokenError::MalformedToken("revokedAt precedes issuedAt".into()));
    }
    if !token.verify(key) {
        return Err(TokenError::BadIntegrity);
    }
    Ok(token)
}

/// Mints and re-issues tokens for one dyadic session.
#[derive(Clone, Debug)]
pub struct TokenAuthority {
    key: SessionKey,
    participants: [DeviceId; 2],
    ids: IdSource,
}

impl TokenAuthority {
    pub fn new(key: SessionKey, participants: [DeviceId; 2], ids: IdSource) -> Self {
        Self { key, participants, ids }
    }

    pub fn key(&self) -> &SessionKey {
        &self.key
    }

    fn require_participant(&self, device: &DeviceId) -> Result<(), TokenError> {
        if self.participants.contains(device) {
            Ok(())
        } else {
            Err(TokenError::NonParticipant(device.clone()))
        }
    }

    pub fn mint(
        &mut self,
        issuer: &DeviceId,
        subject: &DeviceId,
        grant: Grant,
        clock: f64,
    ) -> Result<PermissionToken, TokenError> {
        self.require_participant(issuer)?;
        self.require_participant(subject)?;
        if grant.scope.is_empty() {
            return Err(TokenError::EmptyScope);
        }
        let mut token = PermissionToken {
            token_id: self.ids.token_id(),
            issuer: issuer.clone(),
            subject: subject.clone(),
            scope: grant.scope,
            actions: grant.actions,
            issued_at: clock,
            duration: grant.duration,
            audience: grant.audience,
            mutability: grant.mutability,
            portability: grant.portability,
            revocability: grant.revocability,
            residue: grant.residue,
            revoked_at: None,
            integrity: [0; 16],
        };
        token.sign(&self.key);
        Ok(token)
    }

    pub fn revoke(&self, token: &PermissionToken, clock: f64) -> Result<PermissionToken, TokenError> {
        revoke(token, clock, &self.key)
    }

    pub fn check(&self, token: &PermissionToken, request: &Request, ctx: CheckContext) -> Decision {
        check(token, request, ctx, &self.key)
    }

    pub fn parse(&self, bytes: &[u8]) -> Result<PermissionToken, TokenError> {
        parse(bytes, &self.key)
    }

    /// Replaces `old` with a token carrying `grant`. The old token is revoked
    /// with immediate effect regardless of its own revocability.
    pub fn escalate_or_downgrade(
        &mut self,
        old: &PermissionToken,
        grant: Grant,
        clock: f64,
    ) -> Result<(PermissionToken, PermissionToken), TokenError> {
        if !old.verify(&self.key) {
            return Err(TokenError::BadIntegrity);
        }
        if old.revoked_at.is_some() {
            return Err(TokenError::AlreadyRevoked);
        }
        let mut forced = old.clone();
        forced.revocability = Revocability::Immediate;
        let revoked = revoke(&forced, clock, &self.key)?;
        let new = self.mint(&old.issuer, &old.subject, grant, clock)?;
        Ok((revoked, new))
    }

    /// Re-issues `old` without `object` in its scope.
    pub fn selectively_revoke(
        &mut self,
        old: &PermissionToken,
        object: ObjectId,
        clock: f64,
    ) -> Result<(PermissionToken, PermissionToken), TokenError> {
        let target = Selector::Object(object);
        if !old.covers(&target) {
            return Err(TokenError::NotInScope);
        }
        let mut grant = old.grant();
        grant.scope.remove(&target);
        self.escalate_or_downgrade(old, grant, clock)
    }
}

/// What happens to one held object when its encounter ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ResidueAction {
    RemoveNow,
    RemoveAt(f64),
    /// Stays, with portability fixed at the governing token's value.
    Persist { portability: Portability },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResidueEffect {
    pub object: ObjectId,
    pub holder: DeviceId,
    pub action: ResidueAction,
}

/// Residue for objects received during the session. The governing token for
/// a held object is the most recently issued token whose subject is the
/// holder and whose scope names the object; without one the object goes.
pub fn apply_residue(
    held: &[(ObjectId, DeviceId)],
    tokens: &[PermissionToken],
    termination_clock: f64,
) -> Vec<ResidueEffect> {
    held.iter()
        .map(|(object, holder)| {
            let governing = tokens
                .iter()
                .filter(|t| t.subject == *holder && t.covers_object(*object))
                .fold(None::<&PermissionToken>, |best, t| match best {
                    Some(b) if b.issued_at > t.issued_at => Some(b),
                    _ => Some(t),
                });
            let action = match governing.map(|t| (t.residue, t.portability)) {
                None | Some((Residue::None, _)) => ResidueAction::RemoveNow,
                Some((Residue::Fade(d), _)) => ResidueAction::RemoveAt(termination_clock + d),
                Some((Residue::Persist, portability)) => ResidueAction::Persist { portability },
            };
            ResidueEffect {
                object: *object,
                holder: holder.clone(),
                action,
            }
        })
        .collect()
}
