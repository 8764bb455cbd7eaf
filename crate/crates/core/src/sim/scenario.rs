//! Scenario files: devices, seeded objects and grants, a scripted gesture
//! timeline, object operations, channel faults and expectations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::alignment::Vec3;
use crate::encounter::{EncounterStage, TerminationCause};
use crate::ids::DeviceId;
use crate::permissions::{Action, Audience, Duration, Portability, Residue, Revocability};
use crate::public_layer::PickupRule;

/// One problem found while loading a scenario.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ParseError {
    /// JSON path of the offending field, e.g. `gestureScript[2].params`.
    pub field: Option<String>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ParseError {
    fn at(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            line: None,
            column: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, "line {l} column {c}: ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "{field}: ")?;
        }
        f.write_str(&self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct ScenarioError {
    pub errors: Vec<ParseError>,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl From<ParseError> for ScenarioError {
    fn from(e: ParseError) -> Self {
        Self { errors: vec![e] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub seed: u64,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSeed>,
    #[serde(default)]
    pub grants: Vec<GrantSpec>,
    pub gesture_script: Vec<ScriptEntry>,
    #[serde(default)]
    pub object_ops: Vec<ObjectOp>,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default)]
    pub sensing: SensingSpec,
    #[serde(default)]
    pub timing: TimingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expectations: Option<Expectations>,
}

pub const CAP_BEACON: &str = "beacon";
pub const CAP_HAND_TRACKING: &str = "handTracking";

fn default_capabilities() -> Vec<String> {
    vec![CAP_BEACON.into(), CAP_HAND_TRACKING.into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: DeviceId,
    pub initial_pose: Pose,
    /// Encounters need both `beacon` and `handTracking`.
    #[serde(default = "default_capabilities")]
    pub capabilities: Vec<String>,
}

impl DeviceSpec {
    pub fn has(&self, capability: &str) -> bool {
        self.capabilities.iter().any(|c| c == capability)
    }
}

/// Head position in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Pose {
    pub position: [f64; 3],
}

/// An object present at t=0. `name` becomes its payload reference and is how
/// grants and operations refer to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ObjectSeed {
    pub name: String,
    pub owner: DeviceId,
    /// World position.
    #[serde(default)]
    pub position: [f64; 3],
}

/// A grant the issuer mints when sharing starts with the subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GrantSpec {
    pub issuer: DeviceId,
    pub subject: DeviceId,
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default)]
    pub layers: Vec<String>,
    #[serde(default = "default_actions")]
    pub actions: Vec<Action>,
    #[serde(default = "default_duration")]
    pub duration: Duration,
    #[serde(default = "default_audience")]
    pub audience: Audience,
    #[serde(default)]
    pub mutability: bool,
    #[serde(default = "default_portability")]
    pub portability: Portability,
    #[serde(default = "default_revocability")]
    pub revocability: Revocability,
    #[serde(default = "default_residue")]
    pub residue: Residue,
}

fn default_actions() -> Vec<Action> {
    vec![Action::View]
}
fn default_duration() -> Duration {
    Duration::Unbounded
}
fn default_audience() -> Audience {
    Audience::ParticipantsOnly
}
fn default_portability() -> Portability {
    Portability::None
}
fn default_revocability() -> Revocability {
    Revocability::Immediate
}
fn default_residue() -> Residue {
    Residue::None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CommandKind {
    Approach,
    Handshake,
    Pull,
    Release,
    StepBack,
    Walk,
    Revoke,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScriptEntry {
    pub t: f64,
    pub kind: CommandKind,
    #[serde(default)]
    pub params: Map<String, Value>,
}

/// A parsed gesture command.
#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    /// Both walk toward each other until their heads are `separation` apart.
    Approach { devices: [DeviceId; 2], separation: f64, duration: f64 },
    /// Hands reach the meeting point in `reach_time`, grip closes on contact
    /// and holds for `duration`.
    Handshake { a: DeviceId, b: DeviceId, duration: f64, reach_time: f64 },
    /// The clasped hands move `distance` toward the puller's body.
    Pull { puller: DeviceId, distance: f64, duration: f64 },
    /// A second, farewell handshake; letting go ends the session.
    Release { a: DeviceId, b: DeviceId, duration: f64, reach_time: f64 },
    StepBack { device: DeviceId, distance: f64, duration: f64 },
    Walk { device: DeviceId, to: Vec3, duration: f64 },
    Revoke { device: DeviceId },
}

impl Command {
    /// Time after the command's start at which its motion is over.
    pub fn span(&self) -> f64 {
        match self {
            Command::Approach { duration, .. } | Command::StepBack { duration, .. } | Command::Walk { duration, .. } => {
                *duration
            }
            Command::Handshake {
                duration, reach_time, ..
            }
            | Command::Release {
                duration, reach_time, ..
            } => reach_time + duration + super::kinematics::RETRACT_S,
            Command::Pull { duration, .. } => duration + super::kinematics::RETRACT_S,
            Command::Revoke { .. } => 0.0,
        }
    }

    pub fn devices(&self) -> Vec<&DeviceId> {
        match self {
            Command::Approach { devices, .. } => devices.iter().collect(),
            Command::Handshake { a, b, .. } | Command::Release { a, b, .. } => vec![a, b],
            Command::Pull { puller, .. } => vec![puller],
            Command::StepBack { device, .. } | Command::Walk { device, .. } | Command::Revoke { device } => vec![device],
        }
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ApproachParams {
    devices: [DeviceId; 2],
    #[serde(default = "one")]
    separation: f64,
    duration: f64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct HandshakeParams {
    a: DeviceId,
    b: DeviceId,
    duration: f64,
    #[serde(default = "default_reach_time")]
    reach_time: f64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct PullParams {
    puller: DeviceId,
    #[serde(default = "default_pull_distance")]
    distance: f64,
    #[serde(default = "one")]
    duration: f64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ReleaseParams {
    a: DeviceId,
    b: DeviceId,
    #[serde(default = "default_release_hold")]
    duration: f64,
    #[serde(default = "default_reach_time")]
    reach_time: f64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct StepBackParams {
    device: DeviceId,
    #[serde(default = "default_step")]
    distance: f64,
    #[serde(default = "one")]
    duration: f64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct WalkParams {
    device: DeviceId,
    to: [f64; 3],
    duration: f64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RevokeParams {
    device: DeviceId,
}

fn one() -> f64 {
    1.0
}
fn default_reach_time() -> f64 {
    0.8
}
fn default_pull_distance() -> f64 {
    0.15
}
fn default_release_hold() -> f64 {
    0.6
}
fn default_step() -> f64 {
    0.8
}

fn params<T: DeserializeOwned>(map: &Map<String, Value>) -> Result<T, String> {
    serde_json::from_value(Value::Object(map.clone())).map_err(|e| e.to_string())
}

impl ScriptEntry {
    pub fn command(&self) -> Result<Command, String> {
        let p = &self.params;
        Ok(match self.kind {
            CommandKind::Approach => {
                let q: ApproachParams = params(p)?;
                Command::Approach {
                    devices: q.devices,
                    separation: q.separation,
                    duration: q.duration,
                }
            }
            CommandKind::Handshake => {
                let q: HandshakeParams = params(p)?;
                Command::Handshake {
                    a: q.a,
                    b: q.b,
                    duration: q.duration,
                    reach_time: q.reach_time,
                }
            }
            CommandKind::Pull => {
                let q: PullParams = params(p)?;
                Command::Pull {
                    puller: q.puller,
                    distance: q.distance,
                    duration: q.duration,
                }
            }
            CommandKind::Release => {
                let q: ReleaseParams = params(p)?;
                Command::Release {
                    a: q.a,
                    b: q.b,
                    duration: q.duration,
                    reach_time: q.reach_time,
                }
            }
            CommandKind::StepBack => {
                let q: StepBackParams = params(p)?;
                Command::StepBack {
                    device: q.device,
                    distance: q.distance,
                    duration: q.duration,
                }
            }
            CommandKind::Walk => {
                let q: WalkParams = params(p)?;
                Command::Walk {
                    device: q.device,
                    to: Vec3::from(q.to),
                    duration: q.duration,
                }
            }
            CommandKind::Revoke => {
                let q: RevokeParams = params(p)?;
                Command::Revoke { device: q.device }
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AuthorshipChoice {
    Anonymous,
    Attributed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum OpKind {
    /// Two-phase move to `to` (default: the device's sharing peer).
    Move {
        object: String,
        #[serde(default)]
        to: Option<DeviceId>,
    },
    Copy {
        object: String,
        #[serde(default)]
        to: Option<DeviceId>,
    },
    Lend {
        object: String,
        #[serde(default)]
        to: Option<DeviceId>,
    },
    Mirror {
        object: String,
        #[serde(default)]
        to: Option<DeviceId>,
    },
    CoOwn {
        object: String,
        #[serde(default)]
        to: Option<DeviceId>,
    },
    /// Sets the object's pose in world coordinates.
    Edit {
        object: String,
        position: [f64; 3],
        #[serde(default)]
        yaw: f64,
    },
    Delete {
        object: String,
    },
    /// Leaves the object in the commons at the device's position.
    Deposit {
        object: String,
        authorship: AuthorshipChoice,
        pickup_rule: PickupRule,
        #[serde(default)]
        expires_at: Option<f64>,
        #[serde(default)]
        content: String,
    },
    /// Picks up the n-th successful deposit of the run.
    Pickup {
        listing: usize,
    },
    /// A permission check against the device's tokens.
    Access {
        object: String,
        #[serde(default = "view")]
        action: Action,
    },
}

fn view() -> Action {
    Action::View
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Move { .. } => "move",
            OpKind::Copy { .. } => "copy",
            OpKind::Lend { .. } => "lend",
            OpKind::Mirror { .. } => "mirror",
            OpKind::CoOwn { .. } => "coOwn",
            OpKind::Edit { .. } => "edit",
            OpKind::Delete { .. } => "delete",
            OpKind::Deposit { .. } => "deposit",
            OpKind::Pickup { .. } => "pickup",
            OpKind::Access { .. } => "access",
        }
    }

    pub fn object(&self) -> Option<&str> {
        match self {
            OpKind::Move { object, .. }
            | OpKind::Copy { object, .. }
            | OpKind::Lend { object, .. }
            | OpKind::Mirror { object, .. }
            | OpKind::CoOwn { object, .. }
            | OpKind::Edit { object, .. }
            | OpKind::Delete { object }
            | OpKind::Deposit { object, .. }
            | OpKind::Access { object, .. } => Some(object),
            OpKind::Pickup { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObjectOp {
    pub t: f64,
    pub device: DeviceId,
    #[serde(flatten)]
    pub op: OpKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default = "default_latency")]
    pub latency: f64,
    #[serde(default)]
    pub loss_rate: f64,
    /// 0-based indices, over all transmissions, of messages to drop.
    #[serde(default)]
    pub drop_list: Vec<u64>,
    /// 0-based indices, over two-phase-commit transmissions only, of
    /// messages to drop.
    #[serde(default)]
    pub txn_drop_list: Vec<u64>,
}

fn default_latency() -> f64 {
    0.02
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            latency: default_latency(),
            loss_rate: 0.0,
            drop_list: Vec::new(),
            txn_drop_list: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SensingSpec {
    /// Standard deviation of per-axis Gaussian noise on tracked palm and
    /// head positions, meters.
    #[serde(default)]
    pub position_noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TimingSpec {
    #[serde(default = "default_fps")]
    pub frame_rate: f64,
    #[serde(default = "default_sync_hz")]
    pub sync_hz: f64,
    #[serde(default = "default_beacon_interval")]
    pub beacon_interval: f64,
    /// Frames and ticks stop here. Defaults to the end of the last scripted
    /// action plus three seconds.
    #[serde(default)]
    pub end_time: Option<f64>,
    /// Pending messages and timers are drained up to here.
    #[serde(default)]
    pub max_time: Option<f64>,
}

fn default_fps() -> f64 {
    60.0
}
fn default_sync_hz() -> f64 {
    crate::sync::replication::SYNC_HZ
}
fn default_beacon_interval() -> f64 {
    0.5
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self {
            frame_rate: default_fps(),
            sync_hz: default_sync_hz(),
            beacon_interval: default_beacon_interval(),
            end_time: None,
            max_time: None,
        }
    }
}

/// Assertions checked after a run; any mismatch is an expectation failure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Expectations {
    /// Stage of each listed device's session with its (only) peer.
    #[serde(default)]
    pub final_stage: Option<BTreeMap<DeviceId, EncounterStage>>,
    #[serde(default)]
    pub stages_visited: Option<Vec<EncounterStage>>,
    #[serde(default)]
    pub user_gesture_count: Option<u32>,
    /// Inclusive bounds.
    #[serde(default)]
    pub time_to_sharing: Option<[f64; 2]>,
    #[serde(default)]
    pub incomplete: Option<bool>,
    #[serde(default)]
    pub termination_cause: Option<TerminationCause>,
    /// Devices holding an object with this name at the end, in id order.
    #[serde(default)]
    pub holders: Option<BTreeMap<String, Vec<DeviceId>>>,
    /// Objects that must be held by exactly one device at the end.
    #[serde(default)]
    pub exactly_one_holder: Option<Vec<String>>,
    /// Event names that must appear as applied records.
    #[serde(default)]
    pub events: Option<Vec<String>>,
    #[serde(default)]
    pub absent_events: Option<Vec<String>>,
    /// Decisions of the access operations, in script order ("allow" or the
    /// deny reason).
    #[serde(default)]
    pub access: Option<Vec<String>>,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ParseError {
        field: None,
        line: None,
        column: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| ParseError {
        field: field_of(&e.to_string()),
        line: Some(e.line()),
        column: Some(e.column()),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Pulls a field name out of serde's "missing field `x`" style messages.
fn field_of(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_owned())
}

impl Scenario {
    pub fn commands(&self) -> Vec<(f64, Command)> {
        self.gesture_script
            .iter()
            .map(|e| (e.t, e.command().expect("validated scenario")))
            .collect()
    }

    pub fn device_ids(&self) -> Vec<DeviceId> {
        self.devices.iter().map(|d| d.id.clone()).collect()
    }

    /// End of the scripted activity.
    pub fn script_end(&self) -> f64 {
        let gestures = self.commands().iter().map(|(t, c)| t + c.span()).fold(0.0, f64::max);
        let ops = self.object_ops.iter().map(|o| o.t).fold(0.0, f64::max);
        gestures.max(ops)
    }

    pub fn end_time(&self) -> f64 {
        self.timing.end_time.unwrap_or_else(|| self.script_end() + 3.0)
    }

    pub fn max_time(&self) -> f64 {
        self.timing.max_time.unwrap_or_else(|| self.end_time() + 30.0)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errors = Vec::new();
        let mut err = |field: String, message: String| errors.push(ParseError::at(field, message));

        let ids = self.device_ids();
        if ids.len() < 2 {
            err("devices".into(), "at least two devices are required".into());
        }
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                err(format!("devices[{i}].id"), format!("duplicate device {id}"));
            }
            if id.as_str().is_empty() {
                err(format!("devices[{i}].id"), "empty device id".into());
            }
        }
        let known = |d: &DeviceId| ids.contains(d);

        let names: Vec<&str> = self.objects.iter().map(|o| o.name.as_str()).collect();
        for (i, o) in self.objects.iter().enumerate() {
            if names[..i].contains(&o.name.as_str()) {
                err(format!("objects[{i}].name"), format!("duplicate object {}", o.name));
            }
            if !known(&o.owner) {
                err(format!("objects[{i}].owner"), format!("unknown device {}", o.owner));
            }
        }
        for (i, g) in self.grants.iter().enumerate() {
            for (f, d) in [("issuer", &g.issuer), ("subject", &g.subject)] {
                if !known(d) {
                    err(format!("grants[{i}].{f}"), format!("unknown device {d}"));
                }
            }
            if g.issuer == g.subject {
                err(format!("grants[{i}].subject"), "issuer and subject must differ".into());
            }
            if g.objects.is_empty() && g.layers.is_empty() {
                err(format!("grants[{i}]"), "empty scope".into());
            }
            for o in &g.objects {
                if !names.contains(&o.as_str()) {
                    err(format!("grants[{i}].objects"), format!("unknown object {o}"));
                }
            }
        }

        let mut last = f64::NEG_INFINITY;
        for (i, e) in self.gesture_script.iter().enumerate() {
            let field = format!("gestureScript[{i}]");
            if !e.t.is_finite() || e.t < 0.0 {
                err(format!("{field}.t"), "time must be finite and non-negative".into());
            }
            if e.t < last {
                err(format!("{field}.t"), format!("timeline not sorted: {} after {}", e.t, last));
            }
            last = last.max(e.t);
            match e.command() {
                Err(m) => err(format!("{field}.params"), m),
                Ok(c) => {
                    for d in c.devices() {
                        if !known(d) {
                            err(format!("{field}.params"), format!("unknown device {d}"));
                        }
                    }
                    if let Some(m) = kinematic_problem(&c) {
                        err(format!("{field}.params"), m);
                    }
                }
            }
        }

        let mut last = f64::NEG_INFINITY;
        for (i, op) in self.object_ops.iter().enumerate() {
            let field = format!("objectOps[{i}]");
            if !op.t.is_finite() || op.t < 0.0 {
                err(format!("{field}.t"), "time must be finite and non-negative".into());
            }
            if op.t < last {
                err(format!("{field}.t"), format!("timeline not sorted: {} after {}", op.t, last));
            }
            last = last.max(op.t);
            if !known(&op.device) {
                err(format!("{field}.device"), format!("unknown device {}", op.device));
            }
            if let Some(o) = op.op.object() {
                if !names.contains(&o) {
                    err(format!("{field}.object"), format!("unknown object {o}"));
                }
            }
        }

        let c = &self.channel;
        if !(c.latency.is_finite() && c.latency >= 0.0) {
            err("channel.latency".into(), "latency must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&c.loss_rate) {
            err("channel.lossRate".into(), "loss rate must lie in [0, 1]".into());
        }
        if !(self.sensing.position_noise.is_finite() && self.sensing.position_noise >= 0.0) {
            err("sensing.positionNoise".into(), "noise must be non-negative".into());
        }
        let tm = &self.timing;
        for (f, v) in [("frameRate", tm.frame_rate), ("syncHz", tm.sync_hz)] {
            if !(v.is_finite() && v > 0.0) {
                err(format!("timing.{f}"), "rate must be positive".into());
            }
        }
        if !(tm.beacon_interval.is_finite() && tm.beacon_interval > 0.0) {
            err("timing.beaconInterval".into(), "interval must be positive".into());
        }
        if let (Some(end), Some(max)) = (tm.end_time, tm.max_time) {
            if max < end {
                err("timing.maxTime".into(), "maxTime precedes endTime".into());
            }
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError { errors })
        }
    }
}

fn kinematic_problem(c: &Command) -> Option<String> {
    let positive = |v: f64, what: &str| (!(v.is_finite() && v > 0.0)).then(|| format!("{what} must be positive"));
    match c {
        Command::Approach {
            devices,
            separation,
            duration,
        } => (devices[0] == devices[1])
            .then(|| "approach needs two distinct devices".to_owned())
            .or_else(|| positive(*separation, "separation"))
            .or_else(|| positive(*duration, "duration")),
        Command::Handshake {
            a,
            b,
            duration,
            reach_time,
        }
        | Command::Release {
            a,
            b,
            duration,
            reach_time,
        } => (a == b)
            .then(|| "a handshake needs two distinct devices".to_owned())
            .or_else(|| positive(*duration, "duration"))
            .or_else(|| positive(*reach_time, "reachTime")),
        Command::Pull { distance, duration, .. } | Command::StepBack { distance, duration, .. } => {
            positive(*distance, "distance").or_else(|| positive(*duration, "duration"))
        }
        Command::Walk { to, duration, .. } => (!to.iter().all(|v| v.is_finite()))
            .then(|| "target must be finite".to_owned())
            .or_else(|| positive(*duration, "duration")),
        Command::Revoke { .. } => None,
    }
}
