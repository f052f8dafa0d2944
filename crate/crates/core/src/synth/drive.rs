//! 10 Hz kinematic simulation of one vehicle on the network.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Archetype;
use crate::geo::{bearing_delta_deg, LatLon};
use crate::network::{RoadClass, RoadNetwork, SegmentId};

pub const SIM_DT: f64 = 0.1;
pub const DEFAULT_TURN_RADIUS_M: f64 = 12.0;
/// Junctions whose heading change is at least this are driven as turns.
const TURN_THRESHOLD_DEG: f64 = 30.0;
const BEND_LAT_ACCEL_MPS2: f64 = 2.0;
const LOOKAHEAD_M: f64 = 450.0;
/// Fraction of the archetype's braking rate at which anticipatory braking starts.
const BRAKE_MARGIN: f64 = 0.85;
/// Vehicles stop this far before the centre of an intersection.
const STOP_LINE_M: f64 = 7.0;
const HARD_BRAKE_MPS2: f64 = 4.5;
const HARD_BRAKE_MAX_S: f64 = 2.0;
const HARD_ACCEL_MPS2: f64 = 3.5;
const HARD_ACCEL_MAX_S: f64 = 3.0;
/// Shape of the gamma spacing between planted events; higher is more regular.
const EVENT_SPACING_SHAPE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    HardBrake,
    HardAccel,
    SharpTurn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub kind: EventKind,
    pub t_start: f64,
    pub t_end: f64,
}

/// True vehicle state at one simulation tick. `yaw_rate` is counter-clockwise
/// positive (rad/s) and `lat_accel` positive to the left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub t: f64,
    pub pos: LatLon,
    pub heading_deg: f64,
    pub speed: f64,
    pub lon_accel: f64,
    pub lat_accel: f64,
    pub yaw_rate: f64,
    pub segment: Option<SegmentId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveTrace {
    pub states: Vec<KinematicState>,
    pub route: Vec<SegmentId>,
    pub events: Vec<PlantedEvent>,
    pub distance_m: f64,
}

/// How the route is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum RoutePlan {
    /// Random walk from a random segment, never reversing unless at a dead end.
    Random,
    /// Drive these segments in order (`true` = digitised direction), then stop.
    Fixed(Vec<(SegmentId, bool)>),
}

#[derive(Debug, Clone)]
struct Leg {
    seg: usize,
    forward: bool,
    start_s: f64,
    len: f64,
    cruise: f64,
    head_in: f64,
    head_out: f64,
    end_node: usize,
}

#[derive(Debug, Clone, Copy)]
struct Junction {
    /// Signed compass heading change, negative = left.
    delta: f64,
    zone: f64,
    speed: f64,
    dwell: Option<f64>,
    sharp: bool,
}

struct Route<'a> {
    net: &'a RoadNetwork,
    legs: Vec<Leg>,
    junctions: Vec<Junction>,
    fixed: Option<Vec<(usize, bool)>>,
    ended: bool,
}

fn cruise_speed(net: &RoadNetwork, seg: usize, arch: &Archetype) -> f64 {
    let limit = net.segment(seg).speed_limit.unwrap_or(super::LOCAL_LIMIT_MPS);
    let v = arch.target_speed_ratio * limit;
    arch.speed_cap.map_or(v, |c| v.min(c))
}

impl<'a> Route<'a> {
    fn leg(&self, seg: usize, forward: bool, start_s: f64, arch: &Archetype) -> Leg {
        let net = self.net;
        let (a, b) = net.ends(seg);
        let flip = |h: f64| (h + 180.0).rem_euclid(360.0);
        let (head_in, head_out, end_node) = if forward {
            (net.bearing_at(seg, 0.0), net.bearing_at(seg, 1.0), b)
        } else {
            (flip(net.bearing_at(seg, 1.0)), flip(net.bearing_at(seg, 0.0)), a)
        };
        Leg {
            seg,
            forward,
            start_s,
            len: net.length_m(seg),
            cruise: cruise_speed(net, seg, arch),
            head_in,
            head_out,
            end_node,
        }
    }

    fn extend(&mut self, arch: &Archetype, turn_radius: f64, rng: &mut impl Rng) {
        let last = self.legs.last().expect("route starts with a leg").clone();
        let next = match &self.fixed {
            Some(plan) => match plan.get(self.legs.len()) {
                Some(&n) => n,
                None => {
                    self.ended = true;
                    return;
                }
            },
            None => {
                let options: Vec<(usize, usize)> = self
                    .net
                    .incident(last.end_node)
                    .iter()
                    .copied()
                    .filter(|&(s, _)| s != last.seg)
                    .collect();
                if options.is_empty() {
                    (last.seg, !last.forward)
                } else {
                    let (s, _) = options[rng.random_range(0..options.len())];
                    (s, self.net.ends(s).0 == last.end_node)
                }
            }
        };
        let leg = self.leg(next.0, next.1, last.start_s + last.len, arch);
        let delta = bearing_delta_deg(last.head_out, leg.head_in);
        let max_zone = 0.8 * last.len.min(leg.len);
        let through = last.cruise.min(leg.cruise);
        // nodes joining exactly two segments are bends in one road, not intersections
        let bend = self.net.incident(last.end_node).len() == 2;
        let junction = if bend && delta.abs() >= TURN_THRESHOLD_DEG {
            // widest curve that fits, taken at a comfortable lateral acceleration
            let radius = max_zone / delta.abs().to_radians();
            Junction {
                delta,
                zone: max_zone,
                speed: (BEND_LAT_ACCEL_MPS2 * radius).sqrt().min(through),
                dwell: None,
                sharp: false,
            }
        } else if delta.abs() >= TURN_THRESHOLD_DEG {
            let sharp = rng.random::<f64>() < arch.sharp_turn_prob;
            let v = if sharp { arch.sharp_turn_speed } else { arch.turn_speed };
            Junction {
                delta,
                zone: (turn_radius * delta.abs().to_radians()).min(max_zone),
                speed: v.min(through),
                dwell: None,
                sharp,
            }
        } else {
            let stop = rng.random::<f64>() < arch.stop_prob;
            // ramps merge into the highway without a stop line
            let hw = |l: &Leg| self.net.segment(l.seg).road_class == RoadClass::Highway;
            let free_flow = bend || (hw(&last) && hw(&leg));
            let dwell = (stop && !free_flow).then(|| rng.random_range(1.0..4.0));
            Junction {
                delta,
                zone: (turn_radius * delta.abs().to_radians()).min(max_zone),
                speed: through,
                dwell,
                sharp: false,
            }
        };
        self.legs.push(leg);
        self.junctions.push(junction);
    }

    fn end_s(&self) -> f64 {
        let l = self.legs.last().unwrap();
        l.start_s + l.len
    }

    fn leg_at(&self, s: f64, hint: usize) -> usize {
        let mut k = hint.min(self.legs.len() - 1);
        while k + 1 < self.legs.len() && s >= self.legs[k + 1].start_s {
            k += 1;
        }
        k
    }

    /// Heading (deg), curvature (rad/m, CCW positive) and the junction whose
    /// turn zone contains route position `s`, if any.
    fn heading(&self, k: usize, s: f64) -> (f64, f64, Option<usize>) {
        let leg = &self.legs[k];
        let u = s - leg.start_s;
        let blend = |m: usize, base: f64, frac: f64| {
            let j = &self.junctions[m];
            let h = (base + j.delta * frac).rem_euclid(360.0);
            (h, -j.delta.to_radians() / j.zone, Some(m))
        };
        if k > 0 {
            let j = &self.junctions[k - 1];
            if j.zone > 0.0 && u < j.zone / 2.0 {
                return blend(k - 1, self.legs[k - 1].head_out, (u + j.zone / 2.0) / j.zone);
            }
        }
        if let Some(j) = self.junctions.get(k) {
            if j.zone > 0.0 && u > leg.len - j.zone / 2.0 {
                return blend(k, leg.head_out, (u - (leg.len - j.zone / 2.0)) / j.zone);
            }
        }
        let along = if leg.len > 0.0 { u / leg.len } else { 0.0 };
        let f = if leg.forward { along } else { 1.0 - along };
        let h = self.net.bearing_at(leg.seg, f);
        (if leg.forward { h } else { (h + 180.0).rem_euclid(360.0) }, 0.0, None)
    }

    fn position(&self, k: usize, s: f64) -> LatLon {
        let leg = &self.legs[k];
        let along = ((s - leg.start_s) / leg.len).clamp(0.0, 1.0);
        self.net
            .point_at(leg.seg, if leg.forward { along } else { 1.0 - along })
    }
}

fn spacing(rate_per_100km: f64, rng: &mut impl Rng) -> f64 {
    if rate_per_100km <= 0.0 {
        return f64::INFINITY;
    }
    let mean = 100_000.0 / rate_per_100km;
    Gamma::new(EVENT_SPACING_SHAPE, mean / EVENT_SPACING_SHAPE)
        .expect("valid gamma parameters")
        .sample(rng)
}

#[derive(Debug, Clone, Copy)]
struct Active {
    kind: EventKind,
    start: f64,
    elapsed: f64,
}

/// Simulates `duration_s` seconds of driving. Events are planted as renewal
/// processes in distance driven: once the next event's distance is reached it
/// stays pending until the vehicle is in a state where it can be executed.
pub fn simulate_drive(
    net: &RoadNetwork,
    arch: &Archetype,
    plan: &RoutePlan,
    duration_s: f64,
    turn_radius: f64,
    rng: &mut impl Rng,
) -> DriveTrace {
    let mut route = Route {
        net,
        legs: Vec::new(),
        junctions: Vec::new(),
        fixed: None,
        ended: false,
    };
    let first = match plan {
        RoutePlan::Random => {
            let s = rng.random_range(0..net.len());
            (s, rng.random::<bool>())
        }
        RoutePlan::Fixed(list) => {
            let idx: Vec<(usize, bool)> = list
                .iter()
                .map(|(id, f)| (net.index_of(*id).expect("route segment exists"), *f))
                .collect();
            let first = idx[0];
            route.fixed = Some(idx);
            first
        }
    };
    let leg = route.leg(first.0, first.1, 0.0, arch);
    route.legs.push(leg);

    let steps = (duration_s / SIM_DT).round() as usize;
    let mut states = Vec::with_capacity(steps);
    let mut events = Vec::new();
    let (mut s, mut v) = (0.0f64, 0.0f64);
    let mut k = 0usize;
    let mut dwell = 0.0f64;
    // junctions before this index need no further stop
    let mut stops_done = 0usize;
    let mut next_brake = spacing(arch.hard_brake_per_100km, rng);
    let mut next_accel = spacing(arch.hard_accel_per_100km, rng);
    let mut active: Option<Active> = None;
    let mut sharp_logged: Option<usize> = None;

    for i in 0..steps {
        let t = i as f64 * SIM_DT;
        while !route.ended && route.end_s() < s + LOOKAHEAD_M {
            route.extend(arch, turn_radius, rng);
        }
        k = route.leg_at(s, k);
        let leg = route.legs[k].clone();
        let (heading, curvature, zone_of) = route.heading(k, s);
        let cap = zone_of.map_or(leg.cruise, |m| leg.cruise.min(route.junctions[m].speed));
        if let Some(m) = zone_of {
            let j = route.junctions[m];
            if j.sharp && sharp_logged != Some(m) {
                sharp_logged = Some(m);
                events.push(PlantedEvent {
                    kind: EventKind::SharpTurn,
                    t_start: t,
                    t_end: t + j.zone / j.speed.max(0.1),
                });
            }
        }

        // upcoming constraints as (distance, speed)
        let mut ahead: Vec<(f64, f64)> = Vec::new();
        for (m, j) in route.junctions.iter().enumerate().skip(k) {
            let d = route.legs[m].start_s + route.legs[m].len - s;
            if d > LOOKAHEAD_M {
                break;
            }
            if j.dwell.is_some() && m >= stops_done {
                ahead.push((d - STOP_LINE_M.min(0.5 * route.legs[m].len), 0.0));
            } else {
                ahead.push((d - j.zone / 2.0, j.speed));
            }
        }
        if route.ended {
            ahead.push((route.end_s() - s, 0.0));
        }
        let envelope = ahead
            .iter()
            .filter(|(d, _)| *d > 0.0)
            .map(|&(d, vt)| (vt * vt + 2.0 * BRAKE_MARGIN * arch.decel * d).sqrt())
            .fold(f64::INFINITY, f64::min);
        let a_req = ahead
            .iter()
            .filter(|&&(d, vt)| d > 1e-6 && v > vt)
            .map(|&(d, vt)| (vt * vt - v * v) / (2.0 * d))
            .fold(f64::INFINITY, f64::min);
        let near_constraint = ahead.iter().any(|&(d, vt)| d < 30.0 && vt < v + 1.0);
        let in_turn = zone_of.is_some();
        let target = cap.min(envelope);

        let a = if dwell > 0.0 {
            dwell -= SIM_DT;
            0.0
        } else if let Some(mut ev) = active {
            ev.elapsed += SIM_DT;
            let (a, done) = match ev.kind {
                EventKind::HardBrake => (
                    -HARD_BRAKE_MPS2,
                    ev.elapsed >= HARD_BRAKE_MAX_S || v - HARD_BRAKE_MPS2 * SIM_DT < 2.0,
                ),
                _ => {
                    let a = HARD_ACCEL_MPS2.min((target - v) / SIM_DT);
                    (a, ev.elapsed >= HARD_ACCEL_MAX_S || v + a * SIM_DT >= target - 0.05)
                }
            };
            if done {
                events.push(PlantedEvent {
                    kind: ev.kind,
                    t_start: ev.start,
                    t_end: t + SIM_DT,
                });
                active = None;
            } else {
                active = Some(ev);
            }
            a
        } else if a_req <= -BRAKE_MARGIN * arch.decel {
            a_req.max(-8.0)
        } else if v > cap + 0.05 {
            (-arch.decel).max((cap - v) / SIM_DT)
        } else if s >= next_brake && v > 7.0 && !in_turn && !near_constraint {
            next_brake = s + spacing(arch.hard_brake_per_100km, rng);
            active = Some(Active {
                kind: EventKind::HardBrake,
                start: t,
                elapsed: 0.0,
            });
            -HARD_BRAKE_MPS2
        } else if s >= next_accel && v < target - 4.0 && !in_turn {
            next_accel = s + spacing(arch.hard_accel_per_100km, rng);
            active = Some(Active {
                kind: EventKind::HardAccel,
                start: t,
                elapsed: 0.0,
            });
            HARD_ACCEL_MPS2.min((target - v) / SIM_DT)
        } else {
            arch.accel.min((target - v) / SIM_DT).max(-arch.decel)
        };

        let yaw = curvature * v;
        states.push(KinematicState {
            t,
            pos: route.position(k, s),
            heading_deg: heading,
            speed: v,
            lon_accel: a,
            lat_accel: v * yaw,
            yaw_rate: yaw,
            segment: Some(net.segment(leg.seg).segment_id),
        });

        // integrate, never running past a pending stop or the end of a fixed route
        let mut v_new = v + a * SIM_DT;
        let mut ds = if v_new < 0.0 {
            v_new = 0.0;
            v * (v / -a) / 2.0
        } else {
            (v + v_new) / 2.0 * SIM_DT
        };
        let pending_stop = route
            .junctions
            .iter()
            .enumerate()
            .skip(stops_done.max(k))
            .find(|(_, j)| j.dwell.is_some())
            .map(|(m, j)| {
                let node_s = route.legs[m].start_s + route.legs[m].len;
                (m, node_s - STOP_LINE_M.min(0.5 * route.legs[m].len), j.dwell.unwrap())
            });
        if let Some((m, stop_s, d)) = pending_stop {
            if s + ds >= stop_s || (stop_s - s - ds < 0.02 && v_new < 0.05) {
                ds = (stop_s - s).max(0.0);
                v_new = 0.0;
                dwell = d;
                stops_done = m + 1;
            }
        }
        if route.ended && s + ds >= route.end_s() {
            ds = (route.end_s() - s).max(0.0);
            v_new = 0.0;
        }
        // record the acceleration actually realised over the tick
        if let Some(last) = states.last_mut() {
            last.lon_accel = (v_new - v) / SIM_DT;
        }
        s += ds;
        v = v_new;
    }
    let distance_m = s;
    let mut seen = Vec::new();
    for st in &states {
        if let Some(id) = st.segment {
            if seen.last() != Some(&id) {
                seen.push(id);
            }
        }
    }
    if let Some(ev) = active {
        events.push(PlantedEvent {
            kind: ev.kind,
            t_start: ev.start,
            t_end: duration_s,
        });
    }
    events.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    DriveTrace {
        states,
        route: seen,
        events,
        distance_m,
    }
}

/// Integrates a scripted profile of `(lon_accel, yaw_rate)` pairs, one per
/// simulation tick, from rest-or-moving state `v0` off the road network.
/// Useful for controlled manoeuvres such as a fixed-radius turn.
pub fn integrate_profile(start: LatLon, heading_deg: f64, v0: f64, profile: &[(f64, f64)]) -> DriveTrace {
    let mut states = Vec::with_capacity(profile.len());
    let (mut pos, mut heading, mut v) = (start, heading_deg, v0);
    let mut distance = 0.0;
    for (i, &(a, yaw)) in profile.iter().enumerate() {
        states.push(KinematicState {
            t: i as f64 * SIM_DT,
            pos,
            heading_deg: heading.rem_euclid(360.0),
            speed: v,
            lon_accel: a,
            lat_accel: v * yaw,
            yaw_rate: yaw,
            segment: None,
        });
        let v_new = (v + a * SIM_DT).max(0.0);
        let ds = (v + v_new) / 2.0 * SIM_DT;
        // advance along the mid-tick heading
        let mid = heading - (yaw * SIM_DT / 2.0).to_degrees();
        pos = crate::geo::destination(pos, mid, ds);
        heading -= (yaw * SIM_DT).to_degrees();
        distance += ds;
        v = v_new;
    }
    DriveTrace {
        states,
        route: Vec::new(),
        events: Vec::new(),
        distance_m: distance,
    }
}
