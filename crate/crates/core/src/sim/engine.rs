//! The discrete-event simulator.
//!
//! One seed drives everything: each device's local frame, its secrets, the
//! sensing noise and the channel. Devices only ever see their own local
//! coordinates; the world frame is harness ground truth used to synthesize
//! sensor data and to measure distances.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::channel::Channel;
use super::kinematics::World;
use super::metrics::{metrics, Metrics};
use super::scenario::{
    AuthorshipChoice, Command, Expectations, ObjectOp, OpKind, Scenario, ScenarioError, CAP_BEACON, CAP_HAND_TRACKING,
};
use super::trace::{names, Trace};
use crate::alignment::{align, AlignmentResult, AnchorObservation, Landmark, RigidTransform, Vec3};
use crate::canonical::{self, FloatStyle};
use crate::discovery::{epoch_for, make_beacon, scan, DeviceSecret, SightingRegistry, DEFAULT_RANGE_M};
use crate::encounter::{
    consent_is_bilateral, ClaspEvidence, Effect, EncounterSession, EncounterStage, ProtocolEvent, Role,
};
use crate::gesture::GestureTracker;
use crate::gesture::{GestureEvent, GestureKind, HandFrame};
use crate::ids::{DeviceId, IdSource, ObjectId, SessionId, TxnId};
use crate::permissions::{
    self, check, CheckContext, Decision, Grant, PermissionToken, Request, RevocationTrigger, Selector, SessionKey,
    TokenAuthority, DISTANCE_THRESHOLD_M,
};
use crate::public_layer::{Authorship, Commons, DepositMeta};
use crate::sync::replication::{self, Delta};
use crate::sync::transfer::{accept_offer, make_offer, Offer, TransferKind};
use crate::sync::txn::{Coordinator, Participant, TxnMessage, RETRANSMIT_S};
use crate::sync::{ObjectStore, Owner, SharedObject};

/// Time the alignment solve takes once both anchors are in hand.
pub const ALIGN_COMPUTE_S: f64 = 0.03;
/// A participant has stepped back through the portal once they are this much
/// farther from the shared origin than when sharing began.
pub const PORTAL_STEP_M: f64 = 0.5;
/// Handshake messages (evidence, anchors, hellos) are resent at the
/// transaction retransmit period, at most this many times each.
pub const MAX_RESENDS: u32 = 12;

/// Per-run substitutions for the scenario's seed and channel.
#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub latency: Option<f64>,
    pub loss_rate: Option<f64>,
    pub drop_list: Option<Vec<u64>>,
    pub txn_drop_list: Option<Vec<u64>>,
}

impl RunOverrides {
    fn apply(&self, scenario: &mut Scenario) {
        if let Some(s) = self.seed {
            scenario.seed = s;
        }
        if let Some(l) = self.latency {
            scenario.channel.latency = l;
        }
        if let Some(r) = self.loss_rate {
            scenario.channel.loss_rate = r;
        }
        if let Some(d) = &self.drop_list {
            scenario.channel.drop_list = d.clone();
        }
        if let Some(d) = &self.txn_drop_list {
            scenario.channel.txn_drop_list = d.clone();
        }
    }
}

/// Wire envelope; serialized canonically with shortest floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: String,
    pub session_id: SessionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn_id: Option<TxnId>,
    pub payload: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvidenceMsg {
    t: f64,
    reply: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorMsg {
    observation: AnchorObservation,
    reply: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HelloMsg {
    ack: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Resend {
    Evidence,
    Anchor,
    Hello,
}

#[derive(Clone, Debug)]
enum Ev {
    Prerequisite,
    Frame(u64),
    SyncTick(u64),
    BeaconTick(u64),
    Deliver { from: usize, to: usize, text: String },
    Op(usize),
    Revoke(usize),
    TxnTimer { device: usize, txn: TxnId, at: f64 },
    AlignmentDone { device: usize, peer: usize },
    Resend { device: usize, peer: usize, what: Resend },
}

#[derive(Clone, Debug)]
struct Portal {
    origin: Vec3,
    radius: [f64; 2],
    outside: [bool; 2],
}

/// One device's view of one pairwise encounter.
struct Sess {
    session: EncounterSession,
    tracker: GestureTracker,
    authority: TokenAuthority,
    last_frames: Option<(HandFrame, HandFrame)>,
    own_evidence: Option<ClaspEvidence>,
    peer_evidence: Option<ClaspEvidence>,
    pending: Vec<GestureEvent>,
    pull_midpoint: Option<(f64, Vec3)>,
    pull_applied_at: Option<f64>,
    own_anchor: Option<AnchorObservation>,
    peer_anchor: Option<AnchorObservation>,
    align_started: bool,
    align_result: Option<AlignmentResult>,
    peer_hello_seen: bool,
    hello_acked: bool,
    resends: BTreeMap<Resend, u32>,
    portal: Option<Portal>,
}

struct CoordEntry {
    coord: Coordinator,
    peer: usize,
    timer_at: Option<f64>,
    logged: (bool, bool),
}

struct Device {
    id: DeviceId,
    beacon: bool,
    hands: bool,
    to_local: RigidTransform,
    noise: ChaCha8Rng,
    secret: DeviceSecret,
    registry: SightingRegistry,
    store: ObjectStore,
    participant: Participant,
    coords: BTreeMap<TxnId, CoordEntry>,
    ids: IdSource,
    sessions: BTreeMap<usize, Sess>,
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trace: Trace,
    pub metrics: Metrics,
    /// False when events were still pending at the time limit.
    pub quiesced: bool,
    pub stores: BTreeMap<DeviceId, ObjectStore>,
    /// Keyed by (observing device, peer).
    pub sessions: BTreeMap<(DeviceId, DeviceId), EncounterSession>,
    /// Prepared but uncommitted moves still held per device.
    pub ghosts: BTreeMap<DeviceId, Vec<ObjectId>>,
    /// World-to-local transform of each device.
    pub local_frames: BTreeMap<DeviceId, RigidTransform>,
    /// Outcome of each access op: `allow` or `deny:<reason>`.
    pub access: Vec<String>,
}

impl RunOutcome {
    /// Devices whose store holds an object with this payload name.
    pub fn holders(&self, name: &str) -> Vec<DeviceId> {
        self.stores
            .iter()
            .filter(|(_, s)| s.objects().any(|o| o.payload_ref == name))
            .map(|(d, _)| d.clone())
            .collect()
    }

    /// Stage of the device's first session, by peer id.
    pub fn final_stage(&self, device: &DeviceId) -> Option<EncounterStage> {
        self.sessions
            .iter()
            .find(|((own, _), _)| own == device)
            .map(|(_, s)| s.stage())
    }

    pub fn session(&self, own: &DeviceId, peer: &DeviceId) -> Option<&EncounterSession> {
        self.sessions.get(&(own.clone(), peer.clone()))
    }
}

pub fn run(scenario: &Scenario) -> Result<RunOutcome, ScenarioError> {
    run_with(scenario, &RunOverrides::default())
}

pub fn run_with(scenario: &Scenario, overrides: &RunOverrides) -> Result<RunOutcome, ScenarioError> {
    let mut scenario = scenario.clone();
    overrides.apply(&mut scenario);
    scenario.validate()?;
    Ok(Simulator::new(scenario).run())
}

fn obj(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

fn horizontal(v: Vec3) -> Vec3 {
    Vec3::new(v.x, 0.0, v.z)
}

fn effect_name(e: &Effect) -> &'static str {
    match e {
        Effect::RolesAssigned { .. } => "RolesAssigned",
        Effect::ScopePreview { .. } => "ScopePreview",
        Effect::ConsentGranted => "ConsentGranted",
        Effect::PreviewAborted => "PreviewAborted",
        Effect::AlignmentRequested { .. } => "AlignmentRequested",
        Effect::SharedFrameEstablished => "SharedFrameEstablished",
        Effect::SharingStarted => "SharingStarted",
        Effect::PerceivedSideChanged { .. } => "PerceivedSideChanged",
        Effect::TokensRevoked { .. } => "TokensRevoked",
        Effect::ResidueApplied => "ResidueApplied",
        Effect::LentObjectsReverted => "LentObjectsReverted",
        Effect::MirrorsRemoved => "MirrorsRemoved",
        Effect::SessionEnded { .. } => "SessionEnded",
    }
}

fn event_details(ev: &ProtocolEvent) -> Map<String, Value> {
    match ev {
        ProtocolEvent::BeaconSeen { token } => obj(json!({ "token": token.to_hex() })),
        ProtocolEvent::HandExtended { by, toward } => obj(json!({ "by": by, "toward": toward })),
        ProtocolEvent::ClaspDetected { bilateral } => obj(json!({ "bilateral": bilateral })),
        ProtocolEvent::PullCompleted { puller } => obj(json!({ "puller": puller })),
        ProtocolEvent::AlignmentDone(r) => obj(json!({ "residual": r.residual, "completedIn": r.completed_in })),
        ProtocolEvent::StepBackThroughPortal { by } => obj(json!({ "by": by })),
        ProtocolEvent::RevocationTriggered(t) => obj(json!({ "trigger": t })),
        _ => Map::new(),
    }
}

struct Simulator {
    scenario: Scenario,
    world: World,
    devices: Vec<Device>,
    index: BTreeMap<DeviceId, usize>,
    seeds: BTreeMap<String, ObjectId>,
    channel: Channel,
    queue: BTreeMap<(Time, u64), Ev>,
    next_seq: u64,
    trace: Trace,
    commons: Commons,
    listings: Vec<crate::ids::ListingId>,
    access: Vec<String>,
    noise: Option<Normal<f64>>,
    end_time: f64,
    max_time: f64,
}

impl Simulator {
    fn new(scenario: Scenario) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(scenario.seed);
        let channel = Channel::new(&scenario.channel, master.next_u64());

        let commands = scenario.commands();
        let mut world = World::new(
            scenario
                .devices
                .iter()
                .map(|d| (d.id.clone(), Vec3::from(d.initial_pose.position))),
        );
        for (t, c) in &commands {
            world.apply(*t, c);
        }

        let mut devices = Vec::new();
        let mut index = BTreeMap::new();
        for (i, spec) in scenario.devices.iter().enumerate() {
            let yaw = master.gen_range(0.0..std::f64::consts::TAU);
            let offset = Vec3::new(
                master.gen_range(-5.0..5.0),
                master.gen_range(-1.0..1.0),
                master.gen_range(-5.0..5.0),
            );
            let noise = ChaCha8Rng::seed_from_u64(master.next_u64());
            let secret = DeviceSecret::generate(spec.id.clone(), &mut master);
            let ids = IdSource::seeded(master.next_u64());
            index.insert(spec.id.clone(), i);
            devices.push(Device {
                id: spec.id.clone(),
                beacon: spec.has(CAP_BEACON),
                hands: spec.has(CAP_HAND_TRACKING),
                to_local: RigidTransform::from_yaw(yaw, offset),
                noise,
                secret,
                registry: SightingRegistry::new(),
                store: ObjectStore::new(spec.id.clone()),
                participant: Participant::new(),
                coords: BTreeMap::new(),
                ids,
                sessions: BTreeMap::new(),
            });
        }

        let mut object_ids = IdSource::seeded(master.next_u64());
        let mut seeds = BTreeMap::new();
        for seed in &scenario.objects {
            let id = object_ids.object_id();
            seeds.insert(seed.name.clone(), id);
            let dev = &mut devices[index[&seed.owner]];
            let tf = RigidTransform::new(*dev.to_local.rotation(), dev.to_local.apply(&Vec3::from(seed.position)))
                .expect("rotation of a rigid transform");
            dev.store.insert(SharedObject::native(id, seed.owner.clone(), tf, seed.name.clone()));
        }

        let mut session_ids = IdSource::seeded(master.next_u64());
        let n = devices.len();
        for i in 0..n {
            for j in i + 1..n {
                let sid = SessionId::new(session_ids.next_uuid().to_string());
                let mut pair_secret = [0u8; 32];
                master.fill_bytes(&mut pair_secret);
                let key = SessionKey::derive(&pair_secret, &sid);
                let auth_seed = master.next_u64();
                let (a, b) = (devices[i].id.clone(), devices[j].id.clone());
                for (own, peer, p) in [(i, &b, j), (j, &a, i)] {
                    let own_id = devices[own].id.clone();
                    let session =
                        EncounterSession::new(sid.clone(), a.clone(), b.clone(), 0.0).expect("distinct devices");
                    let authority = TokenAuthority::new(key.clone(), [a.clone(), b.clone()], IdSource::seeded(auth_seed));
                    devices[own].sessions.insert(
                        p,
                        Sess {
                            session,
                            tracker: GestureTracker::new(own_id, peer.clone()),
                            authority,
                            last_frames: None,
                            own_evidence: None,
                            peer_evidence: None,
                            pending: Vec::new(),
                            pull_midpoint: None,
                            pull_applied_at: None,
                            own_anchor: None,
                            peer_anchor: None,
                            align_started: false,
                            align_result: None,
                            peer_hello_seen: false,
                            hello_acked: false,
                            resends: BTreeMap::new(),
                            portal: None,
                        },
                    );
                }
            }
        }
        let commons = Commons::new(IdSource::seeded(master.next_u64()));

        let sigma = scenario.sensing.position_noise;
        let end_time = scenario.end_time();
        let max_time = scenario.max_time();
        let mut sim = Self {
            scenario,
            world,
            devices,
            index,
            seeds,
            channel,
            queue: BTreeMap::new(),
            next_seq: 0,
            trace: Trace::default(),
            commons,
            listings: Vec::new(),
            access: Vec::new(),
            noise: (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite noise")),
            end_time,
            max_time,
        };
        sim.schedule(0.0, Ev::Prerequisite);
        sim.schedule(0.0, Ev::BeaconTick(0));
        sim.schedule(0.0, Ev::Frame(0));
        sim.schedule(0.0, Ev::SyncTick(0));
        for (t, c) in commands {
            if let Command::Revoke { device } = c {
                let d = sim.index[&device];
                sim.schedule(t, Ev::Revoke(d));
            }
        }
        for i in 0..sim.scenario.object_ops.len() {
            let t = sim.scenario.object_ops[i].t;
            sim.schedule(t, Ev::Op(i));
        }
        sim
    }

    fn schedule(&mut self, t: f64, ev: Ev) {
        self.queue.insert((Time(t), self.next_seq), ev);
        self.next_seq += 1;
    }

    fn run(mut self) -> RunOutcome {
        let mut quiesced = true;
        while let Some(((Time(t), seq), ev)) = self.queue.pop_first() {
            if t > self.max_time {
                self.queue.insert((Time(t), seq), ev);
                quiesced = false;
                let pending = self.queue.len();
                self.trace.push(
                    self.max_time,
                    None,
                    names::QUIESCENCE_TIMEOUT,
                    (None, None),
                    obj(json!({ "pending": pending })),
                );
                break;
            }
            self.handle(t, ev);
        }

        let metrics = metrics(&self.trace);
        let mut sessions = BTreeMap::new();
        let mut stores = BTreeMap::new();
        let mut ghosts = BTreeMap::new();
        let mut local_frames = BTreeMap::new();
        for dev in &self.devices {
            for (p, s) in &dev.sessions {
                sessions.insert((dev.id.clone(), self.devices[*p].id.clone()), s.session.clone());
            }
            stores.insert(dev.id.clone(), dev.store.clone());
            ghosts.insert(dev.id.clone(), dev.participant.ghosts().collect());
            local_frames.insert(dev.id.clone(), dev.to_local.clone());
        }
        RunOutcome {
            trace: self.trace,
            metrics,
            quiesced,
            stores,
            sessions,
            ghosts,
            local_frames,
            access: self.access,
        }
    }

    fn handle(&mut self, t: f64, ev: Ev) {
        match ev {
            Ev::Prerequisite => self.on_prerequisite(t),
            Ev::Frame(k) => {
                self.on_frame(t);
                let next = (k + 1) as f64 / self.scenario.timing.frame_rate;
                if next <= self.end_time {
                    self.schedule(next, Ev::Frame(k + 1));
                }
            }
            Ev::SyncTick(k) => {
                self.on_sync_tick(t);
                let next = (k + 1) as f64 / self.scenario.timing.sync_hz;
                if next <= self.end_time {
                    self.schedule(next, Ev::SyncTick(k + 1));
                }
            }
            Ev::BeaconTick(k) => {
                self.on_beacon_tick(t);
                let next = (k + 1) as f64 * self.scenario.timing.beacon_interval;
                if next <= self.end_time {
                    self.schedule(next, Ev::BeaconTick(k + 1));
                }
            }
            Ev::Deliver { from, to, text } => self.on_deliver(t, from, to, &text),
            Ev::Op(i) => self.on_op(t, i),
            Ev::Revoke(d) => self.on_revoke(t, d),
            Ev::TxnTimer { device, txn, at } => self.on_txn_timer(t, device, txn, at),
            Ev::AlignmentDone { device, peer } => {
                if let Some(result) = self.sess_mut(device, peer).align_result.take() {
                    let since = self.sess(device, peer).pull_applied_at.map(|p| t - p);
                    self.apply(
                        t,
                        device,
                        peer,
                        ProtocolEvent::AlignmentDone(result),
                        obj(json!({ "sincePull": since })),
                    );
                }
            }
            Ev::Resend { device, peer, what } => self.on_resend(t, device, peer, what),
        }
    }

    fn sess(&self, d: usize, p: usize) -> &Sess {
        &self.devices[d].sessions[&p]
    }

    fn sess_mut(&mut self, d: usize, p: usize) -> &mut Sess {
        self.devices[d].sessions.get_mut(&p).expect("session exists")
    }

    fn stage(&self, d: usize, p: usize) -> EncounterStage {
        self.sess(d, p).session.stage()
    }

    fn is_live(&self, d: usize, p: usize) -> bool {
        !self.sess(d, p).session.is_ended()
    }

    fn head(&self, d: usize, t: f64) -> Vec3 {
        self.world.head(&self.devices[d].id, t)
    }

    fn peers(&self, d: usize) -> Vec<usize> {
        self.devices[d].sessions.keys().copied().collect()
    }

    fn record(&mut self, t: f64, d: Option<usize>, event: &str, details: Map<String, Value>) {
        let id = d.map(|d| self.devices[d].id.clone());
        self.trace.push(t, id.as_ref(), event, (None, None), details);
    }

    /// Applies a protocol event to one device's session and carries out the
    /// effects. Rejected events are recorded too.
    fn apply(&mut self, t: f64, d: usize, p: usize, ev: ProtocolEvent, extra: Map<String, Value>) -> bool {
        let dev_id = self.devices[d].id.clone();
        let peer_id = self.devices[p].id.clone();
        let sess = self.sess_mut(d, p);
        let before = sess.session.stage();
        let mut details = event_details(&ev);
        details.extend(extra);
        details.insert("peer".into(), json!(peer_id));
        match sess.session.apply_event(&ev, t) {
            Ok(tr) => {
                let after = tr.session.stage();
                sess.session = tr.session;
                details.insert("accepted".into(), json!(true));
                details.insert(
                    "effects".into(),
                    json!(tr.effects.iter().map(effect_name).collect::<Vec<_>>()),
                );
                self.trace
                    .push(t, Some(&dev_id), ev.kind().name(), (Some(before), Some(after)), details);
                self.on_effects(t, d, p, &tr.effects);
                true
            }
            Err(e) => {
                details.insert("accepted".into(), json!(false));
                details.insert("error".into(), json!(e.to_string()));
                self.trace
                    .push(t, Some(&dev_id), ev.kind().name(), (Some(before), Some(before)), details);
                false
            }
        }
    }

    fn on_effects(&mut self, t: f64, d: usize, p: usize, effects: &[Effect]) {
        let peer_id = self.devices[p].id.clone();
        for e in effects {
            match e {
                Effect::RolesAssigned { initiator, .. } => self.sess_mut(d, p).tracker.set_initiator(initiator.clone()),
                Effect::PreviewAborted => {
                    let s = self.sess_mut(d, p);
                    s.own_evidence = None;
                    s.peer_evidence = None;
                    s.pending.clear();
                }
                Effect::AlignmentRequested { .. } => self.start_anchor(t, d, p),
                Effect::SharedFrameEstablished => {
                    self.open_portal(t, d, p);
                    let ack = self.sess(d, p).peer_hello_seen;
                    self.send_payload(t, d, p, "syncHello", &HelloMsg { ack });
                    self.arm_resend(t, d, p, Resend::Hello);
                    if ack {
                        self.apply(t, d, p, ProtocolEvent::SyncEstablished, Map::new());
                    }
                }
                Effect::SharingStarted => {
                    self.sess_mut(d, p).tracker.set_sharing(true);
                    self.mint_grants(t, d, p);
                }
                Effect::TokensRevoked { .. } => {
                    let dev = &mut self.devices[d];
                    let key = dev.sessions[&p].authority.key().clone();
                    let revoked = dev.store.revoke_tokens(&peer_id, &key, t);
                    let _ = revoked;
                }
                Effect::ResidueApplied => {
                    let report = self.devices[d].store.end_session(&peer_id, t);
                    self.record(
                        t,
                        Some(d),
                        names::TERMINATION_REPORT,
                        obj(json!({
                            "peer": peer_id,
                            "returned": report.returned,
                            "restored": report.restored,
                            "mirrorsRemoved": report.mirrors_removed,
                            "residue": report.residue.len(),
                        })),
                    );
                }
                Effect::SessionEnded { .. } => self.sess_mut(d, p).tracker.set_sharing(false),
                _ => {}
            }
        }
    }

    fn on_prerequisite(&mut self, t: f64) {
        for d in 0..self.devices.len() {
            if !(self.devices[d].beacon && self.devices[d].hands) {
                continue;
            }
            for p in self.peers(d) {
                self.apply(t, d, p, ProtocolEvent::PrerequisiteSatisfied, Map::new());
            }
        }
    }

    fn on_beacon_tick(&mut self, t: f64) {
        let epoch = epoch_for(t);
        let mut emitted = Vec::new();
        for (i, dev) in self.devices.iter().enumerate() {
            if dev.beacon {
                emitted.push((i, make_beacon(&dev.secret, epoch, t, self.world.head(&dev.id, t))));
            }
        }
        for d in 0..self.devices.len() {
            if !self.devices[d].beacon {
                continue;
            }
            let others: Vec<_> = emitted.iter().filter(|(i, _)| *i != d).map(|(_, b)| b.clone()).collect();
            for seen in scan(&self.head(d, t), &others, DEFAULT_RANGE_M) {
                // Which device sent a token is ground truth the harness knows
                // and the devices do not.
                let Some(&(e, _)) = emitted.iter().find(|(_, b)| b.token == seen.token) else {
                    continue;
                };
                if self.stage(d, e) != EncounterStage::Eligible || !self.is_live(d, e) {
                    continue;
                }
                let own = self.devices[d].id.clone();
                if let Some(ev) = self.devices[d].registry.link(&own, seen.token) {
                    self.apply(t, d, e, ev, obj(json!({ "epoch": seen.epoch })));
                }
            }
        }
    }

    /// What device `d` senses of device `s`'s hand and head, in `d`'s frame.
    fn observe(&mut self, d: usize, s: usize, t: f64) -> HandFrame {
        let w = self.world.hand_frame(&self.devices[s].id, t);
        let dev = &mut self.devices[d];
        let mut jitter = || match &self.noise {
            Some(n) => Vec3::new(n.sample(&mut dev.noise), n.sample(&mut dev.noise), n.sample(&mut dev.noise)),
            None => Vec3::zeros(),
        };
        let palm_noise = jitter();
        let head_noise = jitter();
        HandFrame {
            device_id: w.device_id,
            t,
            palm_pos: dev.to_local.apply(&w.palm_pos) + palm_noise,
            palm_normal: dev.to_local.apply_vector(&w.palm_normal),
            grip_closed: w.grip_closed,
            head_pos: dev.to_local.apply(&w.head_pos) + head_noise,
        }
    }

    fn on_frame(&mut self, t: f64) {
        for d in 0..self.devices.len() {
            if !self.devices[d].hands {
                continue;
            }
            for p in self.peers(d) {
                if !self.is_live(d, p) {
                    continue;
                }
                let own = self.observe(d, d, t);
                let peer = self.observe(d, p, t);
                let s = self.sess_mut(d, p);
                let events = s.tracker.observe(&own, &peer).unwrap_or_default();
                s.last_frames = Some((own, peer));
                for ev in events {
                    self.on_gesture(t, d, p, ev);
                }
            }
        }
        for d in 0..self.devices.len() {
            for p in self.peers(d) {
                self.check_bounds(t, d, p);
            }
        }
    }

    fn check_bounds(&mut self, t: f64, d: usize, p: usize) {
        if self.stage(d, p) != EncounterStage::Sharing {
            return;
        }
        let distance = (self.head(d, t) - self.head(p, t)).norm();
        if distance > DISTANCE_THRESHOLD_M {
            self.apply(t, d, p, ProtocolEvent::DistanceExceeded, obj(json!({ "distance": distance })));
            return;
        }
        let Some(portal) = self.sess(d, p).portal.clone() else {
            return;
        };
        for (k, who) in [d, p].into_iter().enumerate() {
            let r = horizontal(self.head(who, t) - portal.origin).norm();
            let outside = r > portal.radius[k];
            if outside == portal.outside[k] {
                continue;
            }
            if let Some(portal) = self.sess_mut(d, p).portal.as_mut() {
                portal.outside[k] = outside;
            }
            let by = self.devices[who].id.clone();
            self.apply(t, d, p, ProtocolEvent::StepBackThroughPortal { by }, obj(json!({ "distance": r })));
            if self.stage(d, p) != EncounterStage::Sharing {
                return;
            }
        }
    }

    fn on_gesture(&mut self, t: f64, d: usize, p: usize, ev: GestureEvent) {
        match ev.kind {
            GestureKind::HandExtended => {
                let (Some(by), Some(toward)) = (ev.by, ev.toward) else { return };
                self.apply(t, d, p, ProtocolEvent::HandExtended { by, toward }, Map::new());
            }
            GestureKind::ClaspDetected => {
                let own = self.devices[d].id.clone();
                let s = self.sess_mut(d, p);
                s.own_evidence = Some(ClaspEvidence { device: own, t: ev.t });
                s.pending.clear();
                self.send_payload(t, d, p, "claspEvidence", &EvidenceMsg { t: ev.t, reply: false });
                self.arm_resend(t, d, p, Resend::Evidence);
                self.try_consent(t, d, p);
            }
            _ => {
                let s = self.sess(d, p);
                if s.session.stage() == EncounterStage::Requested && s.own_evidence.is_some() {
                    self.sess_mut(d, p).pending.push(ev);
                } else {
                    self.apply_gesture(t, d, p, ev);
                }
            }
        }
    }

    fn apply_gesture(&mut self, t: f64, d: usize, p: usize, ev: GestureEvent) {
        let event = match ev.kind {
            GestureKind::GripSustained => ProtocolEvent::GripSustained,
            GestureKind::GripReleasedEarly => ProtocolEvent::GripReleasedEarly,
            GestureKind::ReleaseDetected => ProtocolEvent::ReleaseDetected,
            GestureKind::PullCompleted => {
                let Some(puller) = ev.by.clone() else { return };
                if let Some(m) = ev.clasp_midpoint {
                    self.sess_mut(d, p).pull_midpoint = Some((ev.t, m));
                }
                ProtocolEvent::PullCompleted { puller }
            }
            GestureKind::HandExtended | GestureKind::ClaspDetected => return,
        };
        let is_pull = ev.kind == GestureKind::PullCompleted;
        if self.apply(t, d, p, event, obj(json!({ "detectedAt": ev.t }))) && is_pull {
            self.sess_mut(d, p).pull_applied_at = Some(t);
        }
    }

    fn try_consent(&mut self, t: f64, d: usize, p: usize) {
        let s = self.sess(d, p);
        if s.session.stage() != EncounterStage::Requested
            || !consent_is_bilateral(&s.session, (s.own_evidence.as_ref(), s.peer_evidence.as_ref()))
        {
            return;
        }
        let (own_at, peer_at) = (
            s.own_evidence.as_ref().map(|e| e.t),
            s.peer_evidence.as_ref().map(|e| e.t),
        );
        let details = obj(json!({ "ownAt": own_at, "peerAt": peer_at }));
        if self.apply(t, d, p, ProtocolEvent::ClaspDetected { bilateral: true }, details) {
            let pending = std::mem::take(&mut self.sess_mut(d, p).pending);
            for ev in pending {
                self.apply_gesture(t, d, p, ev);
            }
        }
    }

    fn start_anchor(&mut self, t: f64, d: usize, p: usize) {
        let dev_id = self.devices[d].id.clone();
        let s = self.sess(d, p);
        let Some((obs_t, midpoint)) = s.pull_midpoint else { return };
        let Some((own, peer)) = s.last_frames.clone() else { return };
        let Some(peer_dir) = horizontal(peer.head_pos - own.head_pos).try_normalize(1e-9) else {
            return;
        };
        let mine_init = s.session.role_of(&dev_id) == Some(Role::Initiator);
        let (ip, rp, ih, rh) = if mine_init {
            (own.palm_pos, peer.palm_pos, own.head_pos, peer.head_pos)
        } else {
            (peer.palm_pos, own.palm_pos, peer.head_pos, own.head_pos)
        };
        let observation = AnchorObservation {
            t: obs_t,
            midpoint,
            peer_dir,
            up: Vec3::y(),
            landmarks: [
                (Landmark::InitiatorPalm, ip),
                (Landmark::ResponderPalm, rp),
                (Landmark::InitiatorHead, ih),
                (Landmark::ResponderHead, rh),
            ]
            .into(),
        };
        self.sess_mut(d, p).own_anchor = Some(observation.clone());
        self.send_payload(t, d, p, "anchor", &AnchorMsg { observation, reply: false });
        self.arm_resend(t, d, p, Resend::Anchor);
        self.maybe_align(t, d, p);
    }

    fn maybe_align(&mut self, t: f64, d: usize, p: usize) {
        let dev_id = self.devices[d].id.clone();
        let s = self.sess(d, p);
        if s.align_started || s.session.stage() != EncounterStage::Accepted || s.session.puller().is_none() {
            return;
        }
        let (Some(own), Some(peer)) = (&s.own_anchor, &s.peer_anchor) else {
            return;
        };
        let (init, resp) = if s.session.role_of(&dev_id) == Some(Role::Initiator) {
            (own, peer)
        } else {
            (peer, own)
        };
        let done_at = t + ALIGN_COMPUTE_S;
        match align(init, resp, done_at) {
            Ok(result) => {
                let s = self.sess_mut(d, p);
                s.align_started = true;
                s.align_result = Some(result);
                self.schedule(done_at, Ev::AlignmentDone { device: d, peer: p });
            }
            Err(e) => {
                self.sess_mut(d, p).align_started = true;
                self.record(t, Some(d), names::ALIGNMENT_FAILED, obj(json!({ "error": e.to_string() })));
            }
        }
    }

    /// World position of the shared origin and each participant's portal
    /// radius, fixed when the shared frame is established.
    fn open_portal(&mut self, t: f64, d: usize, p: usize) {
        let dev_id = self.devices[d].id.clone();
        let s = self.sess(d, p);
        let Some(result) = s.session.alignment() else { return };
        let to_shared = match s.session.role_of(&dev_id) {
            Some(Role::Initiator) => &result.to_shared_from_initiator,
            _ => &result.to_shared_from_responder,
        };
        let local = to_shared.inverse().apply(&Vec3::zeros());
        let origin = self.devices[d].to_local.inverse().apply(&local);
        let radius = [d, p].map(|k| horizontal(self.head(k, t) - origin).norm() + PORTAL_STEP_M);
        self.sess_mut(d, p).portal = Some(Portal {
            origin,
            radius,
            outside: [false; 2],
        });
    }

    fn mint_grants(&mut self, t: f64, d: usize, p: usize) {
        let (own, peer) = (self.devices[d].id.clone(), self.devices[p].id.clone());
        let specs: Vec<_> = self
            .scenario
            .grants
            .iter()
            .filter(|g| g.issuer == own && g.subject == peer)
            .cloned()
            .collect();
        for g in specs {
            let scope = g
                .objects
                .iter()
                .filter_map(|n| self.seeds.get(n).map(|id| Selector::Object(*id)))
                .chain(g.layers.iter().map(|l| Selector::Layer(l.clone())))
                .collect();
            let grant = Grant {
                scope,
                actions: g.actions.iter().copied().collect(),
                duration: g.duration,
                audience: g.audience,
                mutability: g.mutability,
                portability: g.portability,
                revocability: g.revocability,
                residue: g.residue,
            };
            match self.sess_mut(d, p).authority.mint(&own, &peer, grant, t) {
                Ok(token) => {
                    self.devices[d].store.add_token(token.clone());
                    self.record(
                        t,
                        Some(d),
                        names::GRANT_MINTED,
                        obj(json!({ "tokenId": token.token_id, "subject": peer, "scope": token.scope })),
                    );
                    self.send_payload(t, d, p, "grant", &token);
                }
                Err(e) => self.record(
                    t,
                    Some(d),
                    names::GRANT_MINTED,
                    obj(json!({ "subject": peer, "error": e.to_string() })),
                ),
            }
        }
    }

    fn send_payload<T: Serialize>(&mut self, t: f64, d: usize, p: usize, kind: &str, payload: &T) {
        let value = serde_json::to_value(payload).expect("payload serializes");
        self.send(t, d, p, kind, value, None);
    }

    fn send(&mut self, t: f64, d: usize, p: usize, kind: &str, payload: Value, txn: Option<TxnId>) {
        let msg_name = payload.get("kind").and_then(Value::as_str).map(str::to_owned);
        let env = Envelope {
            kind: kind.to_owned(),
            session_id: self.sess(d, p).session.id().clone(),
            txn_id: txn,
            payload,
        };
        let text = canonical::to_canonical_string(&env, FloatStyle::Shortest).expect("envelope serializes");
        let fate = self.channel.transmit(t, kind == "txn");
        let mut details = obj(json!({
            "type": kind,
            "to": self.devices[p].id,
            "index": fate.index,
            "dropped": fate.deliver_at.is_none(),
            "bytes": text.len(),
        }));
        if let Some(i) = fate.txn_index {
            details.insert("txnIndex".into(), json!(i));
            details.insert("txnId".into(), json!(txn));
            details.insert("message".into(), json!(msg_name));
        }
        self.record(t, Some(d), names::SEND, details);
        if let Some(at) = fate.deliver_at {
            self.schedule(at, Ev::Deliver { from: d, to: p, text });
        }
    }

    fn arm_resend(&mut self, t: f64, d: usize, p: usize, what: Resend) {
        let s = self.sess_mut(d, p);
        if s.resends.contains_key(&what) {
            return;
        }
        s.resends.insert(what, 0);
        self.schedule(t + RETRANSMIT_S, Ev::Resend { device: d, peer: p, what });
    }

    fn on_resend(&mut self, t: f64, d: usize, p: usize, what: Resend) {
        let s = self.sess(d, p);
        let stage = s.session.stage();
        let needed = !s.session.is_ended()
            && match what {
                Resend::Evidence => {
                    stage == EncounterStage::Requested && s.own_evidence.is_some() && s.peer_evidence.is_none()
                }
                Resend::Anchor => {
                    stage == EncounterStage::Accepted && s.own_anchor.is_some() && s.peer_anchor.is_none()
                }
                Resend::Hello => {
                    !s.hello_acked && matches!(stage, EncounterStage::CoLocated | EncounterStage::Sharing)
                }
            };
        let count = s.resends.get(&what).copied().unwrap_or(0);
        if !needed || count >= MAX_RESENDS {
            self.sess_mut(d, p).resends.remove(&what);
            return;
        }
        self.sess_mut(d, p).resends.insert(what, count + 1);
        match what {
            Resend::Evidence => {
                let at = self.sess(d, p).own_evidence.as_ref().map(|e| e.t).unwrap_or(t);
                self.send_payload(t, d, p, "claspEvidence", &EvidenceMsg { t: at, reply: false });
            }
            Resend::Anchor => {
                let observation = self.sess(d, p).own_anchor.clone().expect("checked above");
                self.send_payload(t, d, p, "anchor", &AnchorMsg { observation, reply: false });
            }
            Resend::Hello => {
                let ack = self.sess(d, p).peer_hello_seen;
                self.send_payload(t, d, p, "syncHello", &HelloMsg { ack });
            }
        }
        self.schedule(t + RETRANSMIT_S, Ev::Resend { device: d, peer: p, what });
    }

    fn on_deliver(&mut self, t: f64, from: usize, to: usize, text: &str) {
        let (d, p) = (to, from);
        let Ok(env) = serde_json::from_str::<Envelope>(text) else { return };
        if env.session_id != *self.sess(d, p).session.id() {
            return;
        }
        // Transfers must finish even after the session that started them.
        if env.kind != "txn" && !self.is_live(d, p) {
            return;
        }
        let stage = self.stage(d, p);
        let peer_id = self.devices[p].id.clone();
        match env.kind.as_str() {
            "claspEvidence" => {
                let Ok(m) = serde_json::from_value::<EvidenceMsg>(env.payload) else { return };
                self.sess_mut(d, p).peer_evidence = Some(ClaspEvidence { device: peer_id, t: m.t });
                let own = self.sess(d, p).own_evidence.clone();
                if let Some(own) = own {
                    if !m.reply && stage > EncounterStage::Requested {
                        self.send_payload(t, d, p, "claspEvidence", &EvidenceMsg { t: own.t, reply: true });
                    }
                }
                self.try_consent(t, d, p);
            }
            "anchor" => {
                let Ok(m) = serde_json::from_value::<AnchorMsg>(env.payload) else { return };
                self.sess_mut(d, p).peer_anchor = Some(m.observation);
                let own = self.sess(d, p).own_anchor.clone();
                if let Some(observation) = own {
                    if !m.reply && stage >= EncounterStage::CoLocated {
                        self.send_payload(t, d, p, "anchor", &AnchorMsg { observation, reply: true });
                    }
                }
                self.maybe_align(t, d, p);
            }
            "syncHello" => {
                let Ok(m) = serde_json::from_value::<HelloMsg>(env.payload) else { return };
                let s = self.sess_mut(d, p);
                s.peer_hello_seen = true;
                if m.ack {
                    s.hello_acked = true;
                }
                if stage == EncounterStage::CoLocated {
                    self.apply(t, d, p, ProtocolEvent::SyncEstablished, Map::new());
                }
                let now = self.stage(d, p);
                if !m.ack && matches!(now, EncounterStage::CoLocated | EncounterStage::Sharing) {
                    self.send_payload(t, d, p, "syncHello", &HelloMsg { ack: true });
                }
            }
            "grant" => {
                let bytes = serde_json::to_vec(&env.payload).expect("value serializes");
                let parsed = permissions::parse(&bytes, self.sess(d, p).authority.key());
                match parsed {
                    Ok(token) => {
                        let id = token.token_id;
                        self.devices[d].store.add_token(token);
                        self.record(t, Some(d), names::GRANT_RECEIVED, obj(json!({ "tokenId": id, "from": peer_id })));
                    }
                    Err(e) => self.record(
                        t,
                        Some(d),
                        names::GRANT_RECEIVED,
                        obj(json!({ "from": peer_id, "error": e.to_string() })),
                    ),
                }
            }
            "offer" => {
                let Ok(mut offer) = serde_json::from_value::<Offer>(env.payload) else { return };
                if stage != EncounterStage::Sharing {
                    return;
                }
                if let Some(map) = self.peer_to_local(d, p) {
                    offer.object.transform = map.compose(&offer.object.transform);
                }
                if let Some(rights) = &offer.rights {
                    self.devices[d].store.add_token(rights.clone());
                }
                let (kind, id) = (offer.kind, offer.object.object_id);
                let accepted = accept_offer(&mut self.devices[d].store, offer);
                self.record(
                    t,
                    Some(d),
                    names::OFFER_ACCEPTED,
                    obj(json!({ "kind": kind, "objectId": id, "from": peer_id, "accepted": accepted })),
                );
            }
            "delta" => {
                let Ok(mut delta) = serde_json::from_value::<Delta>(env.payload) else { return };
                if let Some(map) = self.peer_to_local(d, p) {
                    for o in &mut delta.updates {
                        o.transform = map.compose(&o.transform);
                    }
                }
                let n = replication::apply(&mut self.devices[d].store, &delta);
                self.record(t, Some(d), names::DELTA_APPLIED, obj(json!({ "from": peer_id, "applied": n })));
            }
            "txn" => {
                let (Some(txn), Ok(msg)) = (env.txn_id, serde_json::from_value::<TxnMessage>(env.payload)) else {
                    return;
                };
                match msg {
                    TxnMessage::Prepare { .. } | TxnMessage::Commit | TxnMessage::Abort => {
                        let dev = &mut self.devices[d];
                        let before = dev.participant.phase(txn);
                        let replies = dev.participant.on_message(txn, &msg, &mut dev.store);
                        let after = dev.participant.phase(txn);
                        if before != after {
                            self.record(
                                t,
                                Some(d),
                                names::TXN,
                                obj(json!({ "txnId": txn, "role": "participant", "phase": after })),
                            );
                        }
                        for r in replies {
                            self.send(t, d, p, "txn", serde_json::to_value(&r).expect("txn"), Some(txn));
                        }
                    }
                    _ => {
                        let dev = &mut self.devices[d];
                        let Some(entry) = dev.coords.get_mut(&txn) else { return };
                        let out = entry.coord.on_message(&msg, &mut dev.store, t);
                        self.after_coord(t, d, txn, out);
                    }
                }
            }
            _ => {}
        }
    }

    /// Maps the peer's local coordinates into ours through the shared frame.
    fn peer_to_local(&self, d: usize, p: usize) -> Option<RigidTransform> {
        let s = self.sess(d, p);
        let a = s.session.alignment()?;
        let own_is_init = s.session.role_of(&self.devices[d].id) == Some(Role::Initiator);
        let (own, peer) = if own_is_init {
            (&a.to_shared_from_initiator, &a.to_shared_from_responder)
        } else {
            (&a.to_shared_from_responder, &a.to_shared_from_initiator)
        };
        Some(own.inverse().compose(peer))
    }

    fn after_coord(&mut self, t: f64, d: usize, txn: TxnId, out: Vec<TxnMessage>) {
        let entry = self.devices[d].coords.get_mut(&txn).expect("coordinator exists");
        let p = entry.peer;
        let state = (entry.coord.is_decided(), entry.coord.is_done());
        let changed = state != entry.logged;
        entry.logged = state;
        let phase = entry.coord.phase();
        let due = entry.coord.next_timer();
        let reschedule = due != entry.timer_at;
        if reschedule {
            entry.timer_at = due;
        }
        if changed {
            self.record(
                t,
                Some(d),
                names::TXN,
                obj(json!({
                    "txnId": txn,
                    "role": "coordinator",
                    "decided": state.0,
                    "done": state.1,
                    "phase": phase,
                })),
            );
        }
        for m in out {
            self.send(t, d, p, "txn", serde_json::to_value(&m).expect("txn"), Some(txn));
        }
        if reschedule {
            if let Some(at) = due {
                self.schedule(at.max(t), Ev::TxnTimer { device: d, txn, at });
            }
        }
    }

    fn on_txn_timer(&mut self, t: f64, d: usize, txn: TxnId, at: f64) {
        let dev = &mut self.devices[d];
        let Some(entry) = dev.coords.get_mut(&txn) else { return };
        if entry.timer_at != Some(at) {
            return;
        }
        entry.timer_at = None;
        let out = entry.coord.on_timer(&mut dev.store, t);
        self.after_coord(t, d, txn, out);
    }

    fn on_sync_tick(&mut self, t: f64) {
        for d in 0..self.devices.len() {
            let swept = self.devices[d].store.sweep(t);
            if !swept.is_empty() {
                self.record(t, Some(d), names::RESIDUE_EXPIRED, obj(json!({ "objects": swept })));
            }
            for p in self.peers(d) {
                if self.stage(d, p) != EncounterStage::Sharing {
                    continue;
                }
                let peer = self.devices[p].id.clone();
                let delta = replication::tick(&mut self.devices[d].store, &peer);
                if !delta.is_empty() {
                    self.send_payload(t, d, p, "delta", &delta);
                }
            }
        }
        for id in self.commons.expire_sweep(t) {
            self.record(t, None, names::LISTING_EXPIRED, obj(json!({ "listingId": id })));
        }
    }

    fn on_revoke(&mut self, t: f64, d: usize) {
        let by = self.devices[d].id.clone();
        for p in self.peers(d) {
            if self.stage(d, p) != EncounterStage::Sharing {
                continue;
            }
            let ev = ProtocolEvent::RevocationTriggered(RevocationTrigger::Gesture);
            self.apply(t, d, p, ev.clone(), obj(json!({ "by": by })));
            if self.stage(p, d) == EncounterStage::Sharing {
                self.apply(t, p, d, ev, obj(json!({ "by": by })));
            }
        }
    }

    fn on_op(&mut self, t: f64, i: usize) {
        let op = self.scenario.object_ops[i].clone();
        let d = self.index[&op.device];
        let mut details = obj(json!({ "op": op.op.name(), "object": op.op.object() }));
        match self.run_op(t, d, &op) {
            Ok(extra) => {
                details.insert("ok".into(), json!(true));
                details.extend(extra);
            }
            Err(e) => {
                details.insert("ok".into(), json!(false));
                details.insert("error".into(), json!(e));
            }
        }
        self.record(t, Some(d), names::OBJECT_OP, details);
    }

    fn sharing_peer(&self, d: usize, to: Option<&DeviceId>) -> Result<usize, String> {
        let p = match to {
            Some(id) => self.index[id],
            None => self
                .peers(d)
                .into_iter()
                .find(|p| self.stage(d, *p) == EncounterStage::Sharing)
                .ok_or("not sharing")?,
        };
        if self.stage(d, p) != EncounterStage::Sharing {
            return Err("not sharing".into());
        }
        Ok(p)
    }

    fn held(&self, d: usize, name: &str) -> Option<ObjectId> {
        let store = &self.devices[d].store;
        let own = &self.devices[d].id;
        store
            .objects()
            .find(|o| o.payload_ref == name && o.owner.is(own))
            .or_else(|| store.objects().find(|o| o.payload_ref == name))
            .map(|o| o.object_id)
    }

    /// The newest live token `d` issued to `p` that covers `id`.
    fn issued_token(&self, d: usize, p: usize, id: ObjectId) -> Result<PermissionToken, String> {
        let (own, peer) = (&self.devices[d].id, &self.devices[p].id);
        self.devices[d]
            .store
            .tokens()
            .filter(|k| &k.issuer == own && &k.subject == peer && k.revoked_at.is_none() && k.covers_object(id))
            .fold(None::<&PermissionToken>, |best, k| match best {
                Some(b) if b.issued_at > k.issued_at => Some(b),
                _ => Some(k),
            })
            .cloned()
            .ok_or_else(|| "no grant".into())
    }

    fn run_op(&mut self, t: f64, d: usize, op: &ObjectOp) -> Result<Map<String, Value>, String> {
        let held = |sim: &Self, name: &str| sim.held(d, name).ok_or_else(|| format!("{name} not held"));
        match &op.op {
            OpKind::Move { object, to } => {
                let p = self.sharing_peer(d, to.as_ref())?;
                let id = held(self, object)?;
                let token = self.issued_token(d, p, id)?;
                // The object lands at the shared origin, in the receiver's frame.
                let handoff = self.shared_origin_local(p, d).ok_or("no shared frame")?;
                let key = self.sess(d, p).authority.key().clone();
                let txn = self.devices[d].ids.txn_id();
                let peer = self.devices[p].id.clone();
                let dev = &mut self.devices[d];
                let (coord, first) = Coordinator::start(&mut dev.store, txn, id, &peer, &token, &key, handoff, t)
                    .map_err(|e| e.to_string())?;
                dev.coords.insert(
                    txn,
                    CoordEntry {
                        coord,
                        peer: p,
                        timer_at: None,
                        logged: (false, false),
                    },
                );
                self.send(t, d, p, "txn", serde_json::to_value(&first).expect("txn"), Some(txn));
                self.after_coord(t, d, txn, Vec::new());
                Ok(obj(json!({ "txnId": txn, "to": peer })))
            }
            OpKind::Copy { object, to }
            | OpKind::Lend { object, to }
            | OpKind::Mirror { object, to }
            | OpKind::CoOwn { object, to } => {
                let kind = match &op.op {
                    OpKind::Copy { .. } => TransferKind::Copy,
                    OpKind::Lend { .. } => TransferKind::Lend,
                    OpKind::Mirror { .. } => TransferKind::Mirror,
                    _ => TransferKind::CoOwn,
                };
                let p = self.sharing_peer(d, to.as_ref())?;
                let id = held(self, object)?;
                let token = self.issued_token(d, p, id)?;
                let peer = self.devices[p].id.clone();
                let dev = &mut self.devices[d];
                let sess = dev.sessions.get_mut(&p).expect("session exists");
                let offer = make_offer(&mut dev.store, kind, id, &peer, &token, &mut sess.authority, &mut dev.ids, t)
                    .map_err(|e| e.to_string())?;
                let sent_id = offer.object.object_id;
                self.send_payload(t, d, p, "offer", &offer);
                Ok(obj(json!({ "to": peer, "objectId": sent_id })))
            }
            OpKind::Edit { object, position, yaw } => {
                let id = held(self, object)?;
                let dev = &self.devices[d];
                let rotation = dev.to_local.rotation() * RigidTransform::from_yaw(*yaw, Vec3::zeros()).rotation();
                let tf = RigidTransform::new(rotation, dev.to_local.apply(&Vec3::from(*position)))
                    .map_err(|e| e.to_string())?;
                let key = self.edit_key(d, id);
                self.devices[d].store.edit(id, tf, &key, t).map_err(|e| e.to_string())?;
                Ok(obj(json!({ "objectId": id })))
            }
            OpKind::Delete { object } => {
                let id = held(self, object)?;
                let key = self.edit_key(d, id);
                self.devices[d].store.delete(id, &key, t).map_err(|e| e.to_string())?;
                Ok(obj(json!({ "objectId": id })))
            }
            OpKind::Deposit {
                object,
                authorship,
                pickup_rule,
                expires_at,
                content,
            } => {
                let id = held(self, object)?;
                let meta = DepositMeta {
                    authorship: match authorship {
                        AuthorshipChoice::Anonymous => Authorship::Anonymous,
                        AuthorshipChoice::Attributed => Authorship::Attributed(self.devices[d].id.clone()),
                    },
                    expires_at: *expires_at,
                    pickup_rule: *pickup_rule,
                    embedded_content_ref: content.clone(),
                };
                let pos = self.head(d, t);
                let listing = self
                    .commons
                    .deposit(&mut self.devices[d].store, id, meta, pos)
                    .map_err(|e| e.to_string())?;
                self.listings.push(listing.listing_id);
                Ok(obj(json!({ "listingIndex": self.listings.len() - 1, "listingId": listing.listing_id })))
            }
            OpKind::Pickup { listing } => {
                let lid = *self.listings.get(*listing).ok_or("no such listing")?;
                let position = self.commons.get(lid).map(|l| l.position);
                let (who, pos) = (self.devices[d].id.clone(), self.head(d, t));
                let picked = self.commons.pickup(lid, &who, &pos, t).map_err(|e| e.to_string())?;
                let mut object = picked.object;
                let dev = &mut self.devices[d];
                if let Some(p) = position {
                    object.transform = RigidTransform::new(*dev.to_local.rotation(), dev.to_local.apply(&p))
                        .map_err(|e| e.to_string())?;
                }
                let id = object.object_id;
                dev.store.insert(object);
                Ok(obj(json!({ "listingId": lid, "objectId": id })))
            }
            OpKind::Access { object, action } => {
                let id = self.held(d, object).or_else(|| self.seeds.get(object).copied());
                let verdict = match id {
                    None => "deny:NoToken".to_owned(),
                    Some(id) => self.access_check(t, d, id, *action),
                };
                self.access.push(verdict.clone());
                self.record(t, Some(d), names::ACCESS, obj(json!({ "object": object, "decision": verdict })));
                Ok(obj(json!({ "decision": verdict })))
            }
        }
    }

    /// The shared origin in device `d`'s frame, via its session with `p`.
    fn shared_origin_local(&self, d: usize, p: usize) -> Option<Vec3> {
        let s = self.sess(d, p);
        let a = s.session.alignment()?;
        let to_shared = match s.session.role_of(&self.devices[d].id)? {
            Role::Initiator => &a.to_shared_from_initiator,
            Role::Responder => &a.to_shared_from_responder,
        };
        Some(to_shared.inverse().apply(&Vec3::zeros()))
    }

    /// Key of the session under which `d` may hold rights to `id`.
    fn edit_key(&self, d: usize, id: ObjectId) -> SessionKey {
        let own = &self.devices[d].id;
        let owner = self.devices[d].store.get(id).map(|o| o.owner.clone());
        let peer = self.peers(d).into_iter().find(|p| match &owner {
            Some(Owner::Device(o)) if o != own => *o == self.devices[*p].id,
            _ => self.stage(d, *p) == EncounterStage::Sharing,
        });
        let p = peer.or_else(|| self.peers(d).into_iter().next()).expect("at least one peer");
        self.sess(d, p).authority.key().clone()
    }

    fn access_check(&self, t: f64, d: usize, id: ObjectId, action: permissions::Action) -> String {
        let own = &self.devices[d].id;
        let token = self
            .devices[d]
            .store
            .tokens()
            .filter(|k| &k.subject == own && k.covers_object(id))
            .fold(None::<&PermissionToken>, |best, k| match best {
                Some(b) if b.issued_at > k.issued_at => Some(b),
                _ => Some(k),
            });
        let Some(token) = token else {
            return "deny:NoToken".into();
        };
        let Some(&issuer) = self.index.get(&token.issuer) else {
            return "deny:NoToken".into();
        };
        let ctx = CheckContext {
            clock: t,
            participant_distance: Some((self.head(d, t) - self.head(issuer, t)).norm()),
        };
        match check(token, &Request::object(action, id), ctx, self.sess(d, issuer).authority.key()) {
            Decision::Allow => "allow".into(),
            Decision::Deny(r) => format!("deny:{r:?}"),
        }
    }
}

/// Compares a run against the scenario's expectations; one message per
/// mismatch.
pub fn check_expectations(exp: &Expectations, outcome: &RunOutcome) -> Vec<String> {
    let mut failures = Vec::new();
    let m = &outcome.metrics;
    if let Some(stages) = &exp.final_stage {
        for (dev, want) in stages {
            let got = outcome.final_stage(dev);
            if got != Some(*want) {
                failures.push(format!("final stage of {dev}: expected {want}, got {got:?}"));
            }
        }
    }
    if let Some(v) = &exp.stages_visited {
        if *v != m.stages_visited {
            failures.push(format!("stages visited: expected {v:?}, got {:?}", m.stages_visited));
        }
    }
    if let Some(n) = exp.user_gesture_count {
        if n != m.user_gesture_count {
            failures.push(format!("userGestureCount: expected {n}, got {}", m.user_gesture_count));
        }
    }
    if let Some([lo, hi]) = exp.time_to_sharing {
        match m.time_to_sharing {
            Some(x) if x >= lo && x <= hi => {}
            got => failures.push(format!("timeToSharing: expected [{lo}, {hi}], got {got:?}")),
        }
    }
    if let Some(inc) = exp.incomplete {
        if inc != m.incomplete {
            failures.push(format!("incomplete: expected {inc}, got {}", m.incomplete));
        }
    }
    if let Some(cause) = exp.termination_cause {
        let ended: Vec<_> = outcome.sessions.values().filter(|s| s.is_ended()).collect();
        if ended.is_empty() || ended.iter().any(|s| s.termination_cause() != Some(cause)) {
            let got: Vec<_> = ended.iter().map(|s| s.termination_cause()).collect();
            failures.push(format!("termination cause: expected {cause:?}, got {got:?}"));
        }
    }
    if let Some(holders) = &exp.holders {
        for (name, want) in holders {
            let mut want = want.clone();
            want.sort();
            let got = outcome.holders(name);
            if got != want {
                failures.push(format!("holders of {name}: expected {want:?}, got {got:?}"));
            }
        }
    }
    if let Some(names) = &exp.exactly_one_holder {
        for name in names {
            let got = outcome.holders(name);
            if got.len() != 1 {
                failures.push(format!("{name} held by {got:?}, expected exactly one device"));
            }
        }
    }
    let applied = |name: &str| {
        outcome.trace.iter().any(|r| {
            r.event == name && (r.accepted() || crate::encounter::EventKind::from_name(&r.event).is_none())
        })
    };
    for name in exp.events.iter().flatten() {
        if !applied(name) {
            failures.push(format!("event {name} never occurred"));
        }
    }
    for name in exp.absent_events.iter().flatten() {
        if applied(name) {
            failures.push(format!("event {name} occurred"));
        }
    }
    if let Some(access) = &exp.access {
        if *access != outcome.access {
            failures.push(format!("access: expected {access:?}, got {:?}", outcome.access));
        }
    }
    if !outcome.quiesced {
        failures.push("run did not quiesce".into());
    }
    failures
}
