//! Scripted body motion. Each device has a head track, a palm track and a
//! grip track in world coordinates, built from gesture commands and sampled
//! into [`HandFrame`]s.

use std::collections::BTreeMap;

use super::scenario::Command;
use crate::alignment::Vec3;
use crate::gesture::HandFrame;
use crate::ids::DeviceId;

/// Resting palm: this far below the head and this far in front of it.
pub const REST_DROP_M: f64 = 0.6;
pub const REST_REACH_M: f64 = 0.15;
/// Meeting point of a handshake relative to the midpoint between heads.
pub const HANDSHAKE_DROP_M: f64 = 0.5;
/// Palm gap while clasped.
pub const CLASP_GAP_M: f64 = 0.04;
/// Time for a hand to return to rest after letting go.
pub const RETRACT_S: f64 = 0.4;
/// The grip opens this long after a hold ends, so the hold covers its
/// nominal duration inclusively.
const GRIP_SLACK_S: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Palm {
    Rest,
    At(Vec3),
}

#[derive(Clone, Debug)]
struct Body {
    head: Vec<(f64, Vec3)>,
    palm: Vec<(f64, Palm)>,
    grip: Vec<(f64, bool)>,
}

fn horizontal_unit(v: Vec3) -> Option<Vec3> {
    Vec3::new(v.x, 0.0, v.z).try_normalize(1e-12)
}

fn segment<T: Copy>(keys: &[(f64, T)], t: f64) -> (T, T, f64) {
    let i = keys.partition_point(|(kt, _)| *kt <= t);
    if i == 0 {
        return (keys[0].1, keys[0].1, 0.0);
    }
    if i == keys.len() {
        let v = keys[i - 1].1;
        return (v, v, 0.0);
    }
    let (t0, v0) = keys[i - 1];
    let (t1, v1) = keys[i];
    let a = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
    (v0, v1, a)
}

fn truncate<T>(keys: &mut Vec<(f64, T)>, at: f64, current: T) {
    keys.retain(|(t, _)| *t <= at);
    keys.push((at, current));
}

/// World-space motion of every device.
#[derive(Clone, Debug)]
pub struct World {
    bodies: BTreeMap<DeviceId, Body>,
}

impl World {
    pub fn new(initial: impl IntoIterator<Item = (DeviceId, Vec3)>) -> Self {
        let bodies = initial
            .into_iter()
            .map(|(id, head)| {
                (
                    id,
                    Body {
                        head: vec![(0.0, head)],
                        palm: vec![(0.0, Palm::Rest)],
                        grip: vec![(0.0, false)],
                    },
                )
            })
            .collect();
        Self { bodies }
    }

    fn body(&self, d: &DeviceId) -> &Body {
        self.bodies.get(d).unwrap_or_else(|| panic!("unknown device {d}"))
    }

    fn body_mut(&mut self, d: &DeviceId) -> &mut Body {
        self.bodies.get_mut(d).unwrap_or_else(|| panic!("unknown device {d}"))
    }

    pub fn head(&self, d: &DeviceId, t: f64) -> Vec3 {
        let (a, b, s) = segment(&self.body(d).head, t);
        a + (b - a) * s
    }

    fn nearest_other(&self, d: &DeviceId, t: f64) -> Option<Vec3> {
        let own = self.head(d, t);
        self.bodies
            .keys()
            .filter(|k| *k != d)
            .map(|k| self.head(k, t))
            .min_by(|a, b| (a - own).norm().total_cmp(&(b - own).norm()))
    }

    /// Horizontal direction the device faces: toward the nearest other head.
    pub fn facing(&self, d: &DeviceId, t: f64) -> Vec3 {
        self.nearest_other(d, t)
            .and_then(|o| horizontal_unit(o - self.head(d, t)))
            .unwrap_or_else(Vec3::z)
    }

    fn resolve(&self, d: &DeviceId, p: Palm, t: f64) -> Vec3 {
        match p {
            Palm::At(v) => v,
            Palm::Rest => self.head(d, t) + Vec3::new(0.0, -REST_DROP_M, 0.0) + self.facing(d, t) * REST_REACH_M,
        }
    }

    pub fn palm(&self, d: &DeviceId, t: f64) -> Vec3 {
        let (a, b, s) = segment(&self.body(d).palm, t);
        let (a, b) = (self.resolve(d, a, t), self.resolve(d, b, t));
        a + (b - a) * s
    }

    pub fn grip(&self, d: &DeviceId, t: f64) -> bool {
        let keys = &self.body(d).grip;
        let i = keys.partition_point(|(kt, _)| *kt <= t);
        keys[i.saturating_sub(1)].1
    }

    /// World-space hand frame; the palm faces the device's facing direction.
    pub fn hand_frame(&self, d: &DeviceId, t: f64) -> HandFrame {
        HandFrame {
            device_id: d.clone(),
            t,
            palm_pos: self.palm(d, t),
            palm_normal: self.facing(d, t),
            grip_closed: self.grip(d, t),
            head_pos: self.head(d, t),
        }
    }

    fn cut_head(&mut self, d: &DeviceId, at: f64) {
        let now = self.head(d, at);
        truncate(&mut self.body_mut(d).head, at, now);
    }

    fn cut_hand(&mut self, d: &DeviceId, at: f64) {
        let keys = &self.body(d).palm;
        let (a, b, _) = segment(keys, at);
        let now = if a == Palm::Rest && b == Palm::Rest {
            Palm::Rest
        } else {
            Palm::At(self.palm(d, at))
        };
        let grip = self.grip(d, at);
        let body = self.body_mut(d);
        truncate(&mut body.palm, at, now);
        truncate(&mut body.grip, at, grip);
    }

    fn handshake(&mut self, s: f64, a: &DeviceId, b: &DeviceId, hold: f64, reach: f64) {
        let (ha, hb) = (self.head(a, s), self.head(b, s));
        let meet = (ha + hb) / 2.0 - Vec3::new(0.0, HANDSHAKE_DROP_M, 0.0);
        let dir = horizontal_unit(hb - ha).unwrap_or_else(Vec3::x);
        let contact = s + reach;
        let end = contact + hold;
        for (d, p) in [(a, meet - dir * (CLASP_GAP_M / 2.0)), (b, meet + dir * (CLASP_GAP_M / 2.0))] {
            self.cut_hand(d, s);
            let body = self.body_mut(d);
            body.palm.extend([(contact, Palm::At(p)), (end, Palm::At(p)), (end + RETRACT_S, Palm::Rest)]);
            body.grip.extend([(contact, true), (end + GRIP_SLACK_S, false)]);
        }
    }

    /// Device whose closed grip is within clasp reach of `d`'s at `t`.
    fn grip_partner(&self, d: &DeviceId, t: f64) -> Option<DeviceId> {
        let own = self.palm(d, t);
        self.bodies
            .keys()
            .filter(|k| *k != d && self.grip(k, t))
            .find(|k| (self.palm(k, t) - own).norm() <= crate::gesture::CLASP_REACH_M + 1e-9)
            .cloned()
    }

    /// Expands one command into keyframes. Commands must be applied in time
    /// order; each one overrides the later keyframes of the limbs it moves.
    pub fn apply(&mut self, s: f64, command: &Command) {
        match command {
            Command::Approach {
                devices: [a, b],
                separation,
                duration,
            } => {
                let (ha, hb) = (self.head(a, s), self.head(b, s));
                let mid = (ha + hb) / 2.0;
                let dir = horizontal_unit(hb - ha).unwrap_or_else(Vec3::x);
                for (d, h, sign) in [(a, ha, -1.0), (b, hb, 1.0)] {
                    let target = Vec3::new(mid.x, h.y, mid.z) + dir * (sign * separation / 2.0);
                    self.cut_head(d, s);
                    self.body_mut(d).head.push((s + duration, target));
                }
            }
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
            } => self.handshake(s, a, b, *duration, *reach_time),
            Command::Pull {
                puller,
                distance,
                duration,
            } => {
                let partner = self.grip_partner(puller, s);
                let from = match &partner {
                    Some(p) => (self.palm(puller, s) + self.palm(p, s)) / 2.0,
                    None => self.palm(puller, s),
                };
                let dir = horizontal_unit(self.head(puller, s) - from).unwrap_or_else(Vec3::x);
                let end = s + duration;
                for d in std::iter::once(puller.clone()).chain(partner) {
                    let start = self.palm(&d, s);
                    let grip = self.grip(&d, s);
                    self.cut_hand(&d, s);
                    let body = self.body_mut(&d);
                    body.palm.extend([(end, Palm::At(start + dir * *distance)), (end + RETRACT_S, Palm::Rest)]);
                    if grip {
                        body.grip.push((end + GRIP_SLACK_S, false));
                    }
                }
            }
            Command::StepBack {
                device,
                distance,
                duration,
            } => {
                let h = self.head(device, s);
                let away = -self.facing(device, s);
                self.cut_head(device, s);
                self.body_mut(device).head.push((s + duration, h + away * *distance));
            }
            Command::Walk { device, to, duration } => {
                self.cut_head(device, s);
                self.body_mut(device).head.push((s + duration, *to));
            }
            Command::Revoke { .. } => {}
        }
    }
}

/// Frames of one device's hand for `command` applied to a world at rest,
/// sampled at `fps` over the command's span. For inspection and tests.
pub fn synthesize_gestures(world: &World, start: f64, command: &Command, device: &DeviceId, fps: f64) -> Vec<HandFrame> {
    let mut w = world.clone();
    w.apply(start, command);
    let n = (command.span() * fps).ceil() as u64;
    (0..=n).map(|k| w.hand_frame(device, start + k as f64 / fps)).collect()
}
