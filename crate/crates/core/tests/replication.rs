//! Co-owned replicas converge under any interleaving, reordering and
//! duplication of deltas, and deletes are never undone.

use proptest::prelude::*;
use touchport_core::permissions::{Action, Duration, Grant, Selector, SessionKey, TokenAuthority};
use touchport_core::sync::replication::{apply, tick, Delta};
use touchport_core::sync::transfer::{accept_offer, make_offer, TransferKind};
use touchport_core::sync::{ObjectStore, SharedObject};
use touchport_core::{DeviceId, IdSource, ObjectId, RigidTransform, Vec3};

fn pair() -> (ObjectStore, ObjectStore, ObjectId, SessionKey) {
    let key = SessionKey::new([4; 32]);
    let mut auth = TokenAuthority::new(key.clone(), ["A".into(), "B".into()], IdSource::seeded(1));
    let mut a = ObjectStore::new("A".into());
    let mut b = ObjectStore::new("B".into());
    let id = IdSource::seeded(3).object_id();
    a.insert(SharedObject::native(id, "A".into(), RigidTransform::identity(), "vase"));
    let mut g = Grant::view_only([Selector::Object(id)], 0.0);
    g.duration = Duration::Unbounded;
    g.actions.insert(Action::Manipulate);
    g.mutability = true;
    let token = auth.mint(&"A".into(), &"B".into(), g, 0.0).unwrap();
    let offer = make_offer(&mut a, TransferKind::CoOwn, id, &"B".into(), &token, &mut auth, &mut IdSource::seeded(2), 0.0)
        .unwrap();
    accept_offer(&mut b, offer);
    b.add_token(token);
    (a, b, id, key)
}

#[derive(Clone, Debug)]
enum Op {
    Edit { on_a: bool, yaw: f64 },
    Delete { on_a: bool },
    Tick { on_a: bool },
    /// Deliver the pending delta at `pick` (mod queue length); keep a copy
    /// when `duplicate`.
    Deliver { to_a: bool, pick: usize, duplicate: bool },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (any::<bool>(), -3.0f64..3.0).prop_map(|(on_a, yaw)| Op::Edit { on_a, yaw }),
        1 => any::<bool>().prop_map(|on_a| Op::Delete { on_a }),
        4 => any::<bool>().prop_map(|on_a| Op::Tick { on_a }),
        4 => (any::<bool>(), any::<usize>(), any::<bool>())
            .prop_map(|(to_a, pick, duplicate)| Op::Deliver { to_a, pick, duplicate }),
    ]
}

fn run(ops: &[Op], with_deletes: bool) -> (ObjectStore, ObjectStore, ObjectId, bool) {
    let (mut a, mut b, id, key) = pair();
    let (mut to_a, mut to_b): (Vec<Delta>, Vec<Delta>) = (Vec::new(), Vec::new());
    let mut deleted = false;
    for (i, op) in ops.iter().enumerate() {
        let clock = 1.0 + i as f64 * 0.01;
        match op {
            Op::Edit { on_a, yaw } => {
                let s = if *on_a { &mut a } else { &mut b };
                let _ = s.edit(id, RigidTransform::from_yaw(*yaw, Vec3::new(*yaw, 0.0, 1.0)), &key, clock);
            }
            Op::Delete { on_a } if with_deletes => {
                let s = if *on_a { &mut a } else { &mut b };
                deleted |= s.delete(id, &key, clock).is_ok();
            }
            Op::Delete { .. } => {}
            Op::Tick { on_a: true } => to_b.push(tick(&mut a, &"B".into())),
            Op::Tick { on_a: false } => to_a.push(tick(&mut b, &"A".into())),
            Op::Deliver { to_a: dest_a, pick, duplicate } => {
                let (queue, store) = if *dest_a { (&mut to_a, &mut a) } else { (&mut to_b, &mut b) };
                if !queue.is_empty() {
                    let k = pick % queue.len();
                    let d = if *duplicate { queue[k].clone() } else { queue.remove(k) };
                    apply(store, &d);
                }
            }
        }
    }
    // Flush: final ticks, then everything still in flight, newest first.
    to_b.push(tick(&mut a, &"B".into()));
    to_a.push(tick(&mut b, &"A".into()));
    for d in to_b.iter().rev() {
        apply(&mut b, d);
    }
    for d in to_a.iter().rev() {
        apply(&mut a, d);
    }
    (a, b, id, deleted)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn co_owned_replicas_converge(ops in proptest::collection::vec(op(), 0..60)) {
        let (a, b, id, _) = run(&ops, false);
        prop_assert_eq!(a.snapshot(), b.snapshot());
        let (va, vb) = (&a.get(id).unwrap().version, &b.get(id).unwrap().version);
        prop_assert_eq!(va, vb);
    }

    #[test]
    fn deletes_win_and_stay_deleted(ops in proptest::collection::vec(op(), 0..60)) {
        let (a, b, id, deleted) = run(&ops, true);
        prop_assert_eq!(a.snapshot(), b.snapshot());
        if deleted {
            prop_assert!(!a.contains(id) && !b.contains(id));
            prop_assert!(a.is_tombstoned(id) && b.is_tombstoned(id));
        } else {
            prop_assert!(a.contains(id) && b.contains(id));
        }
    }

    #[test]
    fn lamport_clocks_never_go_back(ops in proptest::collection::vec(op(), 0..40)) {
        let (mut a, _, id, key) = pair();
        let mut last = a.lamport();
        for (i, op) in ops.iter().enumerate() {
            if let Op::Edit { yaw, .. } = op {
                a.edit(id, RigidTransform::from_yaw(*yaw, Vec3::zeros()), &key, 1.0 + i as f64).unwrap();
                prop_assert!(a.lamport() > last);
                last = a.lamport();
            }
        }
    }
}

#[test]
fn stores_report_their_device() {
    let (a, b, _, _) = pair();
    assert_eq!(a.device(), &DeviceId::from("A"));
    assert_eq!(b.device(), &DeviceId::from("B"));
}
