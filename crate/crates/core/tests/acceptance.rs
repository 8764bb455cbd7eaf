//! The acceptance criteria, one test each. Every test prints a single
//! `criterion N ... PASS|FAIL` line; run with `--nocapture` to see them.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use touchport_core::alignment::{a_to_b, align, AnchorObservation, Landmark};
use touchport_core::discovery::{make_beacon, scan, DeviceSecret, DEFAULT_RANGE_M};
use touchport_core::encounter::{EncounterStage, EventKind, TerminationCause};
use touchport_core::gesture::{
    detect_extension, detect_pull, detect_sustained, ClaspConditions, GestureKind, HandFrame, PairSample,
};
use touchport_core::permissions::{
    self, check, Action, Audience, CheckContext, Decision, Duration, Grant, Portability, Request, Residue,
    Revocability, Selector, SessionKey, TokenAuthority,
};
use touchport_core::public_layer::{Authorship, Commons, DepositMeta, PickupRule, PublicError};
use touchport_core::sim::kinematics::World;
use touchport_core::sim::model_check::{check_consent_gate, engine_step, faulty_step};
use touchport_core::sim::{self, load_scenario, RunOutcome, RunOverrides, Scenario};
use touchport_core::sync::{ObjectStore, Owner, SemanticState, SharedObject};
use touchport_core::ids::ListingId;
use touchport_core::{DeviceId, IdSource, ObjectId, RigidTransform, Vec3};

fn report(n: u32, title: &str, ok: bool, detail: &str) {
    println!("criterion {n:>2} {title}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/scenarios")
}

fn fixture(name: &str) -> Scenario {
    load_scenario(scenarios_dir().join(format!("{name}.json"))).expect("fixture loads")
}

fn shipped() -> Vec<(String, Scenario)> {
    let mut paths: Vec<_> = std::fs::read_dir(scenarios_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), load_scenario(&p).unwrap()))
        .collect()
}

#[test]
fn c01_canonical_encounter_collapses_to_two_gestures() {
    let scenario = fixture("canonical-encounter");
    let start = Instant::now();
    let out = sim::run(&scenario).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let m = &out.metrics;
    let tts = m.time_to_sharing.unwrap_or(f64::NAN);
    let ok = m.stages_visited == EncounterStage::ALL.to_vec()
        && m.user_gesture_count == 2
        && (3.0..=5.0).contains(&tts)
        && elapsed < 1.0;
    report(
        1,
        "canonical encounter",
        ok,
        &format!(
            "{} stages, userGestureCount={}, timeToSharing={tts:.3}s, runtime={elapsed:.3}s",
            m.stages_visited.len(),
            m.user_gesture_count
        ),
    );
}

fn hand(dev: &str, t: f64, palm: Vec3, normal: Vec3, closed: bool) -> HandFrame {
    HandFrame {
        device_id: DeviceId::from(dev),
        t,
        palm_pos: palm,
        palm_normal: normal,
        grip_closed: closed,
        head_pos: Vec3::new(if dev == "A" { -0.5 } else { 0.5 }, 1.6, 0.0),
    }
}

fn holds_at(gap: f64) -> bool {
    let a = hand("A", 1.0, Vec3::new(-gap / 2.0, 1.1, 0.0), Vec3::x(), true);
    let b = hand("B", 1.0, Vec3::new(gap / 2.0, 1.1, 0.0), -Vec3::x(), true);
    ClaspConditions::evaluate(&a, &b).holding()
}

fn extends_by(rise: f64) -> bool {
    let frames: Vec<HandFrame> = (0..=30)
        .map(|i| {
            let t = i as f64 / 60.0;
            let x = -0.35 + rise * (i as f64 / 30.0);
            hand("A", t, Vec3::new(x, 1.1, 0.0), Vec3::x(), false)
        })
        .collect();
    detect_extension(&frames, &Vec3::x()).is_some()
}

fn sustained_after(held: f64) -> Option<GestureKind> {
    let sample = |t: f64, valid: bool| PairSample {
        t,
        valid,
        midpoint: Vec3::new(0.0, 1.1, 0.0),
        heads: [Vec3::new(-0.5, 1.6, 0.0), Vec3::new(0.5, 1.6, 0.0)],
    };
    let onset = 1.0;
    let mut samples = vec![sample(onset, true), sample(onset + held, true)];
    samples.extend([0.001, 0.051, 0.101, 0.151].map(|d| sample(onset + held + d, false)));
    detect_sustained(&samples, onset).map(|e| e.kind)
}

fn pulls_by(distance: f64) -> bool {
    let heads = [Vec3::new(-0.5, 1.6, 0.0), Vec3::new(0.5, 1.6, 0.0)];
    let samples: Vec<PairSample> = [0.0, 0.5]
        .iter()
        .enumerate()
        .map(|(i, t)| PairSample {
            t: *t,
            valid: true,
            midpoint: Vec3::new(-distance * i as f64, 1.1, 0.0),
            heads,
        })
        .collect();
    detect_pull(&samples, &["A".into(), "B".into()]).is_some()
}

#[test]
fn c02_threshold_boundaries_are_inclusive() {
    let reach = holds_at(0.150) && !holds_at(0.151);
    let extension = extends_by(0.150) && !extends_by(0.149);
    let sustain = sustained_after(0.800) == Some(GestureKind::GripSustained)
        && sustained_after(0.799) == Some(GestureKind::GripReleasedEarly);
    let pull = pulls_by(0.100) && !pulls_by(0.099);
    report(
        2,
        "threshold boundaries",
        reach && extension && sustain && pull,
        &format!("reach 0.150/0.151 {reach}, extension {extension}, sustain 0.800/0.799 {sustain}, pull {pull}"),
    );
}

fn move_outcome(drops: Vec<u64>, latency: f64) -> RunOutcome {
    let overrides = RunOverrides {
        loss_rate: Some(0.0),
        latency: Some(latency),
        txn_drop_list: Some(drops),
        ..RunOverrides::default()
    };
    sim::run_with(&fixture("move-under-loss"), &overrides).unwrap()
}

#[test]
fn c03_two_phase_move_is_atomic_under_every_drop_pattern() {
    let start = Instant::now();
    let cases: Vec<(Vec<u64>, f64)> = [0.01, 0.2, 0.6]
        .into_iter()
        .flat_map(|lat| (0u64..64).map(move |mask| ((0..6).filter(|i| mask & (1 << i) != 0).collect(), lat)))
        .collect();
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).min(8);
    let chunk = cases.len().div_ceil(threads);
    let failures: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = cases
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .filter_map(|(drops, lat)| {
                            let out = move_outcome(drops.clone(), *lat);
                            let holders = out.holders("sculpture");
                            let ghosts = out.ghosts.values().map(Vec::len).sum::<usize>();
                            (holders.len() != 1 || ghosts != 0 || !out.quiesced)
                                .then(|| format!("drops {drops:?} latency {lat}: holders {holders:?}, ghosts {ghosts}"))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let elapsed = start.elapsed().as_secs_f64();
    report(
        3,
        "two-phase move atomicity",
        failures.is_empty() && elapsed < 10.0,
        &format!(
            "{}/{} runs with exactly one holder, {elapsed:.2}s{}",
            cases.len() - failures.len(),
            cases.len(),
            failures.first().map(|f| format!("; first failure: {f}")).unwrap_or_default()
        ),
    );
}

#[test]
fn c04_lend_reverts_for_every_termination_cause() {
    let mut passed = Vec::new();
    for (name, cause) in [
        ("lend-release", TerminationCause::Release),
        ("lend-stepback", TerminationCause::StepBack),
        ("lend-revoke", TerminationCause::Revocation),
        ("lend-walkaway", TerminationCause::DistanceExceeded),
    ] {
        let out = sim::run(&fixture(name)).unwrap();
        let lent_out = out.trace.iter().any(|r| r.event == "OfferAccepted" && r.accepted());
        let a = &out.stores[&DeviceId::from("A")];
        let restored = a
            .objects()
            .any(|o| o.payload_ref == "sculpture" && o.owner == Owner::Device("A".into()) && o.semantic_state == SemanticState::Native);
        let ended = out.sessions.values().all(|s| s.termination_cause() == Some(cause));
        if lent_out && restored && out.holders("sculpture") == vec![DeviceId::from("A")] && ended {
            passed.push(name);
        }
    }
    report(4, "lend reversion", passed.len() == 4, &format!("{}/4 causes: {passed:?}", passed.len()));
}

#[test]
fn c05_revocation_and_distance_deny_immediately() {
    // Revocation: B checks at the very instant A revokes.
    let out = sim::run(&fixture("lend-revoke")).unwrap();
    let revoke_denies = out.access == ["allow", "deny:Revoked"];
    let one_step = |out: &RunOutcome, kind: EventKind| {
        out.trace
            .iter()
            .filter(|r| r.event == kind.name() && r.accepted())
            .all(|r| r.stage_before == Some(EncounterStage::Sharing) && r.stage_after == Some(EncounterStage::Isolated))
            && out.trace.iter().any(|r| r.event == kind.name() && r.accepted())
    };
    let revoke_one_step = one_step(&out, EventKind::RevocationTriggered);

    // Distance: the session ends on the first frame past 10 m, and a check
    // at that distance denies even before the session reacts.
    let scenario = fixture("lend-walkaway");
    let walk = sim::run(&scenario).unwrap();
    let mut world = World::new(
        scenario
            .devices
            .iter()
            .map(|d| (d.id.clone(), Vec3::from(d.initial_pose.position))),
    );
    for (t, c) in scenario.commands() {
        world.apply(t, &c);
    }
    let dist = |t: f64| (world.head(&"A".into(), t) - world.head(&"B".into(), t)).norm();
    let ended_at = walk
        .trace
        .iter()
        .find(|r| r.event == EventKind::DistanceExceeded.name() && r.accepted())
        .map(|r| r.t);
    let frame = 1.0 / scenario.timing.frame_rate;
    let first_frame = ended_at.is_some_and(|t| dist(t) > 10.0 && dist(t - frame) <= 10.0);
    let distance_one_step = one_step(&walk, EventKind::DistanceExceeded);

    let key = SessionKey::new([3; 32]);
    let mut auth = TokenAuthority::new(key.clone(), ["A".into(), "B".into()], IdSource::seeded(1));
    let id = IdSource::seeded(2).object_id();
    let token = auth
        .mint(&"A".into(), &"B".into(), Grant::view_only([Selector::Object(id)], 100.0), 0.0)
        .unwrap();
    let at = |d: f64| {
        check(
            &token,
            &Request::object(Action::View, id),
            CheckContext {
                clock: 1.0,
                participant_distance: Some(d),
            },
            &key,
        )
    };
    let check_denies = at(10.0).is_allow() && !at(10.0 + 1e-9).is_allow();

    let ok = revoke_denies && revoke_one_step && first_frame && distance_one_step && check_denies;
    report(
        5,
        "revocation and distance",
        ok,
        &format!(
            "revoke: access {:?}, single transition {revoke_one_step}; distance: ended at {ended_at:?} on first frame {first_frame}, single transition {distance_one_step}, check at 10 m allow / past denies {check_denies}",
            out.access
        ),
    );
}

fn random_frame(rng: &mut ChaCha8Rng) -> RigidTransform {
    RigidTransform::from_yaw(
        rng.gen_range(0.0..std::f64::consts::TAU),
        Vec3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-2.0..2.0), rng.gen_range(-20.0..20.0)),
    )
}

#[test]
fn c06_alignment_pins_the_midpoint_and_maps_across_devices() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_origin, mut worst_map) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (to_a, to_b) = (random_frame(&mut rng), random_frame(&mut rng));
        let ha = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(1.4..1.9), rng.gen_range(-5.0..5.0));
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let sep = rng.gen_range(0.6..1.4);
        let hb = ha + Vec3::new(heading.cos() * sep, rng.gen_range(-0.3..0.3), heading.sin() * sep);
        let mid = Vec3::new((ha.x + hb.x) / 2.0, rng.gen_range(0.9..1.3), (ha.z + hb.z) / 2.0);
        let obs = |tf: &RigidTransform, own: Vec3, peer: Vec3| {
            let d = tf.apply_vector(&(peer - own));
            AnchorObservation {
                t: 5.0,
                midpoint: tf.apply(&mid),
                peer_dir: Vec3::new(d.x, 0.0, d.z).normalize(),
                up: Vec3::y(),
                landmarks: [(Landmark::InitiatorHead, tf.apply(&ha)), (Landmark::ResponderHead, tf.apply(&hb))].into(),
            }
        };
        let r = align(&obs(&to_a, ha, hb), &obs(&to_b, hb, ha), 5.03).unwrap();
        worst_origin = worst_origin
            .max(r.to_shared_from_initiator.apply(&to_a.apply(&mid)).norm())
            .max(r.to_shared_from_responder.apply(&to_b.apply(&mid)).norm());
        // Ground truth: the same world point seen from both frames.
        let a_b = a_to_b(&r);
        for _ in 0..3 {
            let p = Vec3::new(rng.gen_range(-10.0..10.0), rng.gen_range(0.0..3.0), rng.gen_range(-10.0..10.0));
            worst_map = worst_map.max((a_b.apply(&to_a.apply(&p)) - to_b.apply(&p)).norm());
        }
    }

    let mut worst_latency = 0.0f64;
    let scenario = fixture("canonical-encounter");
    for seed in 0..10 {
        let out = sim::run_with(&scenario, &RunOverrides { seed: Some(seed), ..RunOverrides::default() }).unwrap();
        for r in out.trace.iter().filter(|r| r.event == EventKind::AlignmentDone.name() && r.accepted()) {
            worst_latency = worst_latency.max(r.details["sincePull"].as_f64().unwrap_or(f64::INFINITY));
        }
    }
    let ok = worst_origin <= 1e-9 && worst_map <= 1e-6 && worst_latency <= 0.5;
    report(
        6,
        "shared-frame alignment",
        ok,
        &format!(
            "1000 poses: midpoint error {worst_origin:.2e} m, cross-device error {worst_map:.2e} m; AlignmentDone {worst_latency:.3}s after PullCompleted"
        ),
    );
}

#[derive(Clone, Debug)]
struct TokenCase {
    actions: BTreeSet<Action>,
    scope: Vec<u8>,
    duration: Option<f64>,
    grace: Option<f64>,
    revoke_at: Option<f64>,
    tamper: bool,
    request_object: u8,
    request_action: Action,
    clock: f64,
    distance: f64,
}

fn token_case() -> impl Strategy<Value = TokenCase> {
    let action = prop_oneof![Just(Action::View), Just(Action::Manipulate), Just(Action::Record)];
    (
        proptest::collection::btree_set(action.clone(), 0..=3),
        proptest::collection::vec(0u8..6, 1..4),
        proptest::option::of(0.5f64..30.0),
        proptest::option::of(0.1f64..5.0),
        proptest::option::of(0.0f64..20.0),
        proptest::bool::weighted(0.1),
        0u8..6,
        action,
        0.0f64..40.0,
        0.0f64..12.0,
    )
        .prop_map(
            |(actions, scope, duration, grace, revoke_at, tamper, request_object, request_action, clock, distance)| TokenCase {
                actions,
                scope,
                duration,
                grace,
                revoke_at,
                tamper,
                request_object,
                request_action,
                clock,
                distance,
            },
        )
}

fn object(n: u8) -> ObjectId {
    ObjectId(uuid::Uuid::from_bytes([n; 16]))
}

#[test]
fn c07_every_allow_satisfies_all_conjuncts() {
    const CASES: u32 = 100_000;
    let key = SessionKey::new([7; 32]);
    let issued = 1.0;
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let allows = std::cell::Cell::new(0u32);
    let result = runner.run(&token_case(), |c| {
        let mut auth = TokenAuthority::new(key.clone(), ["A".into(), "B".into()], IdSource::seeded(1));
        let grant = Grant {
            scope: c.scope.iter().map(|n| Selector::Object(object(*n))).collect(),
            actions: c.actions.clone(),
            duration: c.duration.map_or(Duration::Unbounded, Duration::Bounded),
            audience: Audience::ParticipantsOnly,
            mutability: false,
            portability: Portability::None,
            revocability: c.grace.map_or(Revocability::Immediate, Revocability::Grace),
            residue: Residue::None,
        };
        let mut token = auth.mint(&"A".into(), &"B".into(), grant, issued).unwrap();
        if let Some(at) = c.revoke_at {
            token = auth.revoke(&token, issued + at).unwrap();
        }
        if c.tamper {
            token.actions.insert(Action::Record);
            token.actions.insert(Action::Manipulate);
        }
        let target = object(c.request_object);
        let decision = check(
            &token,
            &Request::object(c.request_action, target),
            CheckContext {
                clock: c.clock,
                participant_distance: Some(c.distance),
            },
            &key,
        );
        // The tampered token only differs if it gained an action.
        let intact = !c.tamper || c.actions.is_superset(&[Action::Record, Action::Manipulate].into());
        let live = c.revoke_at.is_none_or(|r| c.clock < issued + r + c.grace.unwrap_or(0.0))
            && c.distance <= 10.0;
        let unexpired = c.duration.is_none_or(|d| c.clock < issued + d);
        let in_scope = c.scope.contains(&c.request_object);
        let permitted = c.actions.contains(&c.request_action);
        let all = intact && live && unexpired && in_scope && permitted;
        if decision == Decision::Allow {
            allows.set(allows.get() + 1);
            prop_assert!(all, "allowed without every conjunct: {c:?}");
        } else {
            prop_assert!(!all, "denied with every conjunct: {c:?} -> {decision:?}");
        }
        Ok(())
    });

    let golden = golden_tokens();
    report(
        7,
        "token soundness",
        result.is_ok() && golden.is_ok() && allows.get() > 0,
        &format!(
            "{CASES} random (token, request, context) triples, {} allowed, each with all five conjuncts; golden vectors: {}",
            allows.get(),
            match &golden {
                Ok(n) => format!("{n} byte-exact"),
                Err(e) => e.clone(),
            }
        ),
    );
    result.unwrap();
}

fn golden_tokens() -> Result<usize, String> {
    use hmac::{Hmac, KeyInit, Mac};
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/tokens.json");
    let vectors: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    for v in &vectors {
        let name = v["name"].as_str().unwrap();
        let key_bytes: [u8; 32] = hex::decode(v["key"].as_str().unwrap()).unwrap().try_into().unwrap();
        let canonical = v["canonical"].as_str().unwrap();
        let mut mac = Hmac::<sha2::Sha256>::new_from_slice(&key_bytes).unwrap();
        mac.update(b"touchport/token/v1");
        mac.update(v["signingBytes"].as_str().unwrap().as_bytes());
        let tag = hex::encode(&mac.finalize().into_bytes()[..16]);
        if tag != v["integrity"].as_str().unwrap() {
            return Err(format!("{name}: fixture tag mismatch"));
        }
        let key = SessionKey::new(key_bytes);
        let token = permissions::parse(canonical.as_bytes(), &key).map_err(|e| format!("{name}: {e}"))?;
        if permissions::serialize(&token) != canonical.as_bytes() {
            return Err(format!("{name}: re-serialization differs"));
        }
        let tampered = canonical.replacen("\"subject\":\"", "\"subject\":\"X", 1);
        if permissions::parse(tampered.as_bytes(), &key).is_ok() {
            return Err(format!("{name}: tampered copy verified"));
        }
    }
    Ok(vectors.len())
}

#[test]
fn c08_beacons_are_unlinkable_and_range_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ids = ["alice-headset", "bob-headset", "carol-headset"];
    let secrets: Vec<DeviceSecret> = ids.iter().map(|d| DeviceSecret::generate((*d).into(), &mut rng)).collect();
    let mut tokens = BTreeSet::new();
    let mut leaks = Vec::new();
    for (id, secret) in ids.iter().zip(&secrets) {
        for epoch in 0..5u64 {
            let clock = epoch as f64 * 900.0 + 1.0;
            let b = make_beacon(secret, epoch, clock, Vec3::zeros());
            let wire = b.to_wire();
            let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&wire)
                .unwrap()
                .keys()
                .cloned()
                .collect();
            if wire.contains(id) || wire.contains("headset") || keys != ["epoch", "token"] {
                leaks.push(wire.clone());
            }
            tokens.insert(b.token);
        }
    }
    let emitter = make_beacon(&secrets[0], 0, 0.0, Vec3::new(10.0, 0.0, 0.0));
    let far = make_beacon(&secrets[1], 0, 0.0, Vec3::new(10.0 + 1e-9, 0.0, 0.0));
    let heard = scan(&Vec3::zeros(), &[emitter.clone(), far], DEFAULT_RANGE_M);
    let range_exact = heard.len() == 1 && heard[0].token == emitter.token;
    let ok = leaks.is_empty() && tokens.len() == 15 && range_exact;
    report(
        8,
        "discovery privacy and range",
        ok,
        &format!(
            "{} distinct tokens over 3 devices x 5 epochs, {} identifying beacons, 10 m heard / 10 m + 1e-9 not: {range_exact}",
            tokens.len(),
            leaks.len()
        ),
    );
}

fn commons_with_listing(rule: PickupRule, authorship: Authorship, expires_at: Option<f64>) -> (Commons, ListingId) {
    let mut store = ObjectStore::new("alice-headset".into());
    let id = IdSource::seeded(9).object_id();
    store.insert(SharedObject::native(id, "alice-headset".into(), RigidTransform::identity(), "lantern"));
    let mut commons = Commons::new(IdSource::seeded(10));
    let listing = commons
        .deposit(
            &mut store,
            id,
            DepositMeta {
                authorship,
                expires_at,
                pickup_rule: rule,
                embedded_content_ref: "note-1".into(),
            },
            Vec3::zeros(),
        )
        .unwrap();
    (commons, listing.listing_id)
}

#[test]
fn c09_public_layer_pickup_anonymity_and_expiry() {
    let (mut commons, lid) = commons_with_listing(PickupRule::Single, Authorship::Attributed("alice-headset".into()), None);
    let attempts: Vec<(DeviceId, Vec3)> = (0..8).map(|i| (DeviceId::new(format!("p{i}")), Vec3::new(0.5, 0.0, 0.0))).collect();
    let results = commons.pickup_concurrent(lid, &attempts, 3.0);
    let winners = results.iter().filter(|(_, r)| r.is_ok()).count();
    let losers_taken = results
        .iter()
        .filter(|(_, r)| matches!(r, Err(PublicError::AlreadyTaken)))
        .count();
    let single = winners == 1 && losers_taken == 7;

    let (anon, alid) = commons_with_listing(PickupRule::Unlimited, Authorship::Anonymous, Some(10.0));
    let listing = anon.get(alid).unwrap();
    let anonymous = !listing.to_canonical().contains("alice")
        && listing.object_snapshot.owner == Owner::Unowned
        && !serde_json::to_string(&listing.view()).unwrap().contains("alice");

    let mut anon = anon;
    let before = anon.discover_nearby(&Vec3::zeros(), 2.0, 10.0 - 1e-9).len() == 1;
    let at = anon.discover_nearby(&Vec3::zeros(), 2.0, 10.0).is_empty();
    let pickup = matches!(anon.pickup(alid, &"bob".into(), &Vec3::zeros(), 10.0), Err(PublicError::Expired));
    let expiry = before && at && pickup;
    report(
        9,
        "public layer",
        single && anonymous && expiry,
        &format!("single-pickup winners {winners}/8, anonymous listing clean {anonymous}, expiry inclusive {expiry}"),
    );
}

#[test]
fn c10_no_sharing_without_bilateral_clasp_and_sustained_grip() {
    let start = Instant::now();
    let real = check_consent_gate(engine_step);
    let elapsed = start.elapsed().as_secs_f64();
    let faulty = check_consent_gate(faulty_step);
    let ok = real.counterexample.is_none() && elapsed < 1.0 && faulty.counterexample.is_some();
    report(
        10,
        "consent reachability",
        ok,
        &format!(
            "{} states / {} transitions explored in {elapsed:.3}s, no unconsented path; faulty machine caught via {:?}",
            real.states, real.transitions, faulty.counterexample
        ),
    );
}

#[test]
fn c11_shipped_scenarios_are_deterministic() {
    let mut same = Vec::new();
    let all = shipped();
    for (name, s) in &all {
        let a = sim::run(s).unwrap().trace.to_jsonl();
        let b = sim::run(s).unwrap().trace.to_jsonl();
        if a == b && !a.is_empty() {
            same.push(name.clone());
        }
    }
    let golden_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/canonical-encounter.jsonl");
    let golden = std::fs::read_to_string(golden_path).unwrap();
    let canonical = sim::run(&fixture("canonical-encounter")).unwrap().trace.to_jsonl();
    let golden_ok = canonical == golden;
    report(
        11,
        "determinism",
        same.len() == all.len() && golden_ok,
        &format!("{}/{} scenarios byte-identical across runs, canonical trace matches golden file: {golden_ok}", same.len(), all.len()),
    );
}
