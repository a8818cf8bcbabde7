//! Builders for the two bundled maps: a signalized four-way intersection and
//! a four-arm single-lane roundabout. Every arm ends in a balloon loop so
//! that roaming vehicles can circulate indefinitely.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use super::map::{Lane, LightCycle, MapData, Marking, RoadMap, SpawnPoint, TrafficLight};
use crate::geometry::{Polyline, Vec2};

pub const LANE_WIDTH: f64 = 4.0;
/// Lateral offset of each lane centerline from its road axis.
const HALF_SEP: f64 = LANE_WIDTH / 2.0;
/// Sampling step for curved centerlines.
const ARC_STEP: f64 = 0.5;

/// Intersection stop lines sit this far from the center.
pub const STOP_LINE: f64 = 9.0;
const INTERSECTION_ARM_END: f64 = 60.0;

pub const RING_RADIUS: f64 = 20.0;
/// Angular half-spacing between a ring exit and the following entry.
const RING_SPLIT: f64 = 25.0 * PI / 180.0;
const RING_ARM_START: f64 = 28.0;
const RING_ARM_END: f64 = 70.0;

/// Split-phase signal: each approach gets green in turn.
const GREEN: f64 = 6.0;
const YELLOW: f64 = 2.0;
const ALL_RED: f64 = 1.5;

const ARMS: [&str; 4] = ["s", "e", "n", "w"];

fn arc(center: Vec2, radius: f64, from: f64, to: f64) -> Vec<Vec2> {
    let n = ((to - from).abs() * radius / ARC_STEP).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| center + Vec2::from_angle(from + (to - from) * i as f64 / n as f64) * radius)
        .collect()
}

fn line(a: Vec2, b: Vec2) -> Vec<Vec2> {
    vec![a, b]
}

fn bezier(p0: Vec2, d0: Vec2, p3: Vec2, d3: Vec2, k: f64) -> Vec<Vec2> {
    let p1 = p0 + d0 * k;
    let p2 = p3 - d3 * k;
    let n = 40;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let u = 1.0 - t;
            p0 * (u * u * u) + p1 * (3.0 * u * u * t) + p2 * (3.0 * u * t * t) + p3 * (t * t * t)
        })
        .collect()
}

/// Rounds to a nanometer grid so that the bundled JSON stays readable.
fn snap(p: Vec2) -> Vec2 {
    Vec2::new((p.x * 1e9).round() / 1e9 + 0.0, (p.y * 1e9).round() / 1e9 + 0.0)
}

fn polyline(points: Vec<Vec2>) -> Polyline {
    Polyline::dedup(points.into_iter().map(snap)).expect("builder geometry is valid")
}

fn lane(id: String, points: Vec<Vec2>, left: Marking, right: Marking, successors: Vec<String>) -> Lane {
    Lane { id, centerline: polyline(points), width: LANE_WIDTH, marking_left: left, marking_right: right, successors }
}

/// Arm-local frame: `r` outward along the arm axis, `t` to its left.
struct ArmFrame {
    u: Vec2,
    n: Vec2,
}

impl ArmFrame {
    fn new(axis: f64) -> Self {
        let u = Vec2::from_angle(axis);
        Self { u, n: u.perp() }
    }

    fn at(&self, r: f64, t: f64) -> Vec2 {
        self.u * r + self.n * t
    }

    fn map(&self, pts: &[Vec2]) -> Vec<Vec2> {
        pts.iter().map(|p| self.at(p.x, p.y)).collect()
    }
}

/// Turnaround from the outbound lane end `(end, −w)` back to the inbound
/// lane start `(end, +w)`, drawn in the arm frame: a right fillet of radius
/// 8 m, three quarters-and-more of a 12 m circle, and the mirrored fillet.
fn balloon(end: f64) -> Vec<Vec2> {
    let (w, r1, r2) = (HALF_SEP, 8.0, 12.0);
    let gamma = ((w + r1) / (r1 + r2)).acos();
    let c1 = Vec2::new(end, -(w + r1));
    let c2 = Vec2::new(end + (r1 + r2) * gamma.sin(), 0.0);
    let mut first = arc(c1, r1, FRAC_PI_2, FRAC_PI_2 - gamma);
    let tangent_angle = PI + (FRAC_PI_2 - gamma);
    first.extend(arc(c2, r2, tangent_angle, TAU));
    let mut pts = first.clone();
    pts.extend(first.iter().rev().map(|p| Vec2::new(p.x, -p.y)));
    pts
}

fn arm_lanes(id: &str, frame: &ArmFrame, start: f64, end: f64, inbound_next: Vec<String>) -> Vec<Lane> {
    let w = HALF_SEP;
    vec![
        lane(
            format!("{id}_in"),
            line(frame.at(end, w), frame.at(start, w)),
            Marking::Yellow,
            Marking::White,
            inbound_next,
        ),
        lane(
            format!("{id}_out"),
            line(frame.at(start, -w), frame.at(end, -w)),
            Marking::Yellow,
            Marking::White,
            vec![format!("{id}_loop")],
        ),
        lane(
            format!("{id}_loop"),
            frame.map(&balloon(end)),
            Marking::White,
            Marking::White,
            vec![format!("{id}_in")],
        ),
    ]
}

fn spawn(lane: String, arclengths: &[f64]) -> Vec<SpawnPoint> {
    arclengths.iter().map(|&s| SpawnPoint { lane: lane.clone(), arclength: s }).collect()
}

fn rotate_all(pts: Vec<Vec2>, angle: f64) -> Vec<Vec2> {
    pts.into_iter().map(|p| p.rotate(angle)).collect()
}

/// Four-way signalized intersection centred at the origin. Arm `k` points
/// along `−π/2 + k·π/2` (south, east, north, west); right-hand traffic.
pub fn intersection_data() -> MapData {
    let w = HALF_SEP;
    let d = STOP_LINE;
    let slot = GREEN + YELLOW + ALL_RED;
    let cycle = LightCycle { green: GREEN, yellow: YELLOW, red: 4.0 * slot - GREEN - YELLOW };
    let mut lanes = Vec::new();
    let mut lights = Vec::new();
    let mut spawns = Vec::new();
    for (k, id) in ARMS.iter().enumerate() {
        let rot = k as f64 * FRAC_PI_2;
        let frame = ArmFrame::new(-FRAC_PI_2 + rot);
        let right = ARMS[(k + 1) % 4];
        let straight = ARMS[(k + 2) % 4];
        let left = ARMS[(k + 3) % 4];
        let turns = vec![format!("{id}_{right}"), format!("{id}_{straight}"), format!("{id}_{left}")];
        lanes.extend(arm_lanes(id, &frame, d, INTERSECTION_ARM_END, turns));
        // connectors drawn for the south approach and rotated into place
        let connectors = [
            (right, arc(Vec2::new(d, -d), d - w, PI, FRAC_PI_2)),
            (straight, line(Vec2::new(w, -d), Vec2::new(w, d))),
            (left, arc(Vec2::new(-d, -d), d + w, 0.0, FRAC_PI_2)),
        ];
        for (to, pts) in connectors {
            lanes.push(lane(
                format!("{id}_{to}"),
                rotate_all(pts, rot),
                Marking::None,
                Marking::None,
                vec![format!("{to}_out")],
            ));
        }
        lights.push(TrafficLight {
            id: format!("{id}_light"),
            stop_point: snap(frame.at(d, w)),
            governed_lanes: vec![format!("{id}_in")],
            cycle,
            phase_offset: (cycle.period() - k as f64 * slot) % cycle.period(),
        });
        spawns.extend(spawn(format!("{id}_in"), &[6.0, 21.0, 36.0]));
        spawns.extend(spawn(format!("{id}_out"), &[8.0, 23.0, 38.0]));
    }
    MapData { lanes, traffic_lights: lights, spawn_points: spawns }
}

/// Single-lane counter-clockwise roundabout of radius 20 m with arms along
/// the axes. The ring is split at every entry merge and exit diverge.
pub fn roundabout_data() -> MapData {
    let w = HALF_SEP;
    let mut lanes = Vec::new();
    let mut spawns = Vec::new();
    let ring_point = |a: f64| Vec2::from_angle(a) * RING_RADIUS;
    let ring_dir = |a: f64| Vec2::from_angle(a + FRAC_PI_2);
    for k in 0..4 {
        let psi = k as f64 * FRAC_PI_2;
        let id = format!("r{k}");
        let next = (k + 1) % 4;
        let frame = ArmFrame::new(psi);
        lanes.extend(arm_lanes(&id, &frame, RING_ARM_START, RING_ARM_END, vec![format!("{id}_entry")]));
        let merge = psi + RING_SPLIT;
        let diverge = psi - RING_SPLIT;
        lanes.push(lane(
            format!("{id}_entry"),
            bezier(frame.at(RING_ARM_START, w), -frame.u, ring_point(merge), ring_dir(merge), 5.0),
            Marking::None,
            Marking::None,
            vec![format!("ring_b{k}")],
        ));
        lanes.push(lane(
            format!("{id}_exit"),
            bezier(ring_point(diverge), ring_dir(diverge), frame.at(RING_ARM_START, -w), frame.u, 5.0),
            Marking::None,
            Marking::None,
            vec![format!("{id}_out")],
        ));
        lanes.push(lane(
            format!("ring_a{k}"),
            arc(Vec2::ZERO, RING_RADIUS, diverge, merge),
            Marking::White,
            Marking::White,
            vec![format!("ring_b{k}")],
        ));
        let next_diverge = psi + FRAC_PI_2 - RING_SPLIT;
        lanes.push(lane(
            format!("ring_b{k}"),
            arc(Vec2::ZERO, RING_RADIUS, merge, next_diverge),
            Marking::White,
            Marking::White,
            vec![format!("ring_a{next}"), format!("r{next}_exit")],
        ));
        spawns.extend(spawn(format!("{id}_in"), &[4.0, 19.0, 34.0]));
        spawns.extend(spawn(format!("{id}_out"), &[6.0, 21.0, 36.0]));
    }
    MapData { lanes, traffic_lights: Vec::new(), spawn_points: spawns }
}

pub fn intersection() -> RoadMap {
    RoadMap::new(intersection_data()).expect("intersection builder is valid")
}

pub fn roundabout() -> RoadMap {
    RoadMap::new(roundabout_data()).expect("roundabout builder is valid")
}

/// JSON text of a bundled map by name.
pub fn bundled_json(name: &str) -> Option<&'static str> {
    match name {
        "intersection" => Some(include_str!("../../maps/intersection.json")),
        "roundabout" => Some(include_str!("../../maps/roundabout.json")),
        _ => None,
    }
}
