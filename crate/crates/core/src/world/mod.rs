//! The simulated environment: map, routes, lights, kinematic vehicles and
//! scripted traffic, advanced in fixed ticks from immutable snapshots.

pub mod behavior;
pub mod map;
pub mod maps;
pub mod route;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, OrientedBox, Pose2D, Projection};
pub use behavior::DrivingParams;
pub use map::{light_state, LightState, MapData, RoadMap};
pub use route::{plan_route, Route};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("unknown lane {0}")]
    UnknownLane(String),
    #[error("goal is unreachable from the start")]
    NoRoute,
    #[error("could not place {wanted} vehicles, only {placed} spawn points are free")]
    NoSpawn { wanted: usize, placed: usize },
}

/// Commanded acceleration (m/s²) and front-wheel steering angle (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub accel: f64,
    pub steer: f64,
}

/// The control box `|a| ≤ accel_max`, `|δ| ≤ steer_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits {
    pub accel_max: f64,
    pub steer_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self { accel_max: 4.0, steer_max: 0.6 }
    }
}

impl ControlLimits {
    pub fn clamp(&self, u: Control) -> Control {
        Control {
            accel: u.accel.clamp(-self.accel_max, self.accel_max),
            steer: u.steer.clamp(-self.steer_max, self.steer_max),
        }
    }

    pub fn contains(&self, u: Control) -> bool {
        u.accel.abs() <= self.accel_max && u.steer.abs() <= self.steer_max
    }

    pub fn full_brake(&self) -> Control {
        Control { accel: -self.accel_max, steer: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub dt: f64,
    pub wheelbase: f64,
    pub limits: ControlLimits,
    pub half_length: f64,
    pub half_width: f64,
    pub driving: DrivingParams,
    /// Roaming vehicles keep at least this much route ahead of them.
    pub route_horizon: f64,
    /// Minimum spacing between spawned vehicles.
    pub spawn_clearance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            wheelbase: 2.5,
            limits: ControlLimits::default(),
            half_length: 2.25,
            half_width: 1.0,
            driving: DrivingParams::default(),
            route_horizon: 60.0,
            spawn_clearance: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    /// 0 is the ego; scripted vehicles count up from 1.
    pub id: u32,
    pub pose: Pose2D,
    pub speed: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub route: Arc<Route>,
    /// Arclength of the pose's foot point on the route.
    pub route_progress: f64,
    /// Roaming vehicles extend their route at random branches; fixed-route
    /// vehicles stop at its end.
    pub roaming: bool,
    /// Number of branch decisions drawn so far.
    pub branch_draws: u64,
}

impl VehicleState {
    /// A vehicle placed on its route at arclength `s`, aligned with it.
    pub fn on_route(id: u32, route: Arc<Route>, s: f64, speed: f64, cfg: &WorldConfig) -> Self {
        let p = route.path().point_at(s);
        let yaw = route.path().heading_at(s);
        Self {
            id,
            pose: Pose2D::new(p.x, p.y, yaw),
            speed,
            half_length: cfg.half_length,
            half_width: cfg.half_width,
            route,
            route_progress: s,
            roaming: false,
            branch_draws: 0,
        }
    }

    pub fn bbox(&self) -> OrientedBox {
        OrientedBox::new(self.pose.position(), self.pose.yaw, self.half_length, self.half_width)
    }

    /// Projection onto the route near the current progress.
    pub fn route_projection(&self) -> Projection {
        let s = self.route_progress;
        self.route.path().project_window(self.pose.position(), s - 10.0, s + 10.0)
    }

    pub fn remaining_route(&self) -> f64 {
        self.route.length() - self.route_progress
    }
}

/// Explicit-Euler kinematic bicycle step. Speed is clamped at zero.
pub fn step_kinematics(pose: Pose2D, speed: f64, u: Control, dt: f64, wheelbase: f64) -> (Pose2D, f64) {
    let (s, c) = pose.yaw.sin_cos();
    let x = pose.x + speed * c * dt;
    let y = pose.y + speed * s * dt;
    let yaw = normalize_angle(pose.yaw + speed * u.steer.tan() / wheelbase * dt);
    let v = (speed + u.accel * dt).max(0.0);
    (Pose2D { x, y, yaw }, v)
}

/// Advances one vehicle and re-projects its route progress.
pub fn step_vehicle(state: &VehicleState, u: Control, dt: f64, wheelbase: f64) -> VehicleState {
    let (pose, speed) = step_kinematics(state.pose, state.speed, u, dt, wheelbase);
    let mut next = state.clone();
    next.pose = pose;
    next.speed = speed;
    if pose != state.pose {
        let s = state.route_progress;
        let reach = state.speed * dt + 2.0;
        next.route_progress = state.route.path().project_window(pose.position(), s - reach, s + reach).arclength;
    }
    next
}

/// Uniform pick among `successors`.
pub fn choose_branch<R: Rng>(rng: &mut R, successors: &[usize]) -> usize {
    assert!(!successors.is_empty(), "choose_branch needs at least one successor");
    successors[rng.random_range(0..successors.len())]
}

/// Stateless 64-bit mixer used to derive per-decision seeds.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one branch decision of one vehicle. Seeding per decision
/// keeps results independent of the order in which vehicles are processed.
pub fn branch_rng(world_seed: u64, vehicle: u32, draw: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(world_seed) ^ vehicle as u64) ^ draw))
}

/// Extends a roaming vehicle's route until `horizon` meters remain ahead.
pub fn extend_route(v: &mut VehicleState, map: &RoadMap, world_seed: u64, horizon: f64) {
    if !v.roaming {
        return;
    }
    let mut route: Option<Route> = None;
    loop {
        let current = route.as_ref().unwrap_or(&v.route);
        if current.length() - v.route_progress >= horizon {
            break;
        }
        let succ = map.successors(current.last_lane());
        if succ.is_empty() {
            break;
        }
        let mut rng = branch_rng(world_seed, v.id, v.branch_draws);
        v.branch_draws += 1;
        let lane = choose_branch(&mut rng, succ);
        match current.extended(map, lane) {
            Ok(r) => route = Some(r),
            Err(_) => break,
        }
    }
    if let Some(r) = route {
        v.route = Arc::new(r);
    }
}

/// A roaming route starting on `lane` at arclength `s`.
pub fn roaming_route(map: &RoadMap, lane: usize, s: f64, id: u32, seed: u64, cfg: &WorldConfig) -> Result<VehicleState, WorldError> {
    let len = map.lane(lane).centerline.length();
    let base = Route::from_lanes(map, &[(lane, s, len)])?;
    let mut v = VehicleState::on_route(id, Arc::new(base), 0.0, cfg.driving.v_cruise, cfg);
    v.roaming = true;
    extend_route(&mut v, map, seed, cfg.route_horizon);
    Ok(v)
}

/// Complete simulation state. Cloning is cheap: the map and routes are shared.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub ego: VehicleState,
    pub npcs: Vec<VehicleState>,
    pub light_states: Vec<LightState>,
    pub map: Arc<RoadMap>,
    pub rng_seed: u64,
    pub config: Arc<WorldConfig>,
}

impl PartialEq for RoadMap {
    fn eq(&self, other: &Self) -> bool {
        self.data() == other.data()
    }
}

impl WorldState {
    /// World with the given ego and no traffic.
    pub fn new(map: Arc<RoadMap>, config: Arc<WorldConfig>, ego: VehicleState, seed: u64) -> Self {
        let light_states = map.light_states(0.0);
        Self { tick: 0, ego, npcs: Vec::new(), light_states, map, rng_seed: seed, config }
    }

    /// Places `count` roaming vehicles at seeded-random spawn points that are
    /// clear of the ego and of each other.
    pub fn spawn_npcs(&mut self, count: usize) -> Result<(), WorldError> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.rng_seed ^ 0x53_5041_574e));
        let mut candidates: Vec<usize> = (0..self.map.spawn_points().len()).collect();
        candidates.shuffle(&mut rng);
        let clearance = self.config.spawn_clearance;
        let next_id = self.npcs.iter().map(|v| v.id).max().unwrap_or(0) + 1;
        let mut placed = 0;
        for idx in candidates {
            if placed == count {
                break;
            }
            let sp = &self.map.spawn_points()[idx];
            let lane = self.map.lane_index(&sp.lane)?;
            let p = self.map.lane(lane).centerline.point_at(sp.arclength);
            let clear = self.vehicles().all(|v| v.pose.position().distance(p) >= clearance);
            if !clear {
                continue;
            }
            let id = next_id + placed as u32;
            let v = roaming_route(&self.map, lane, sp.arclength, id, self.rng_seed, &self.config)?;
            self.npcs.push(v);
            placed += 1;
        }
        if placed < count {
            return Err(WorldError::NoSpawn { wanted: count, placed });
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    /// Ego first, then the scripted vehicles.
    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        std::iter::once(&self.ego).chain(self.npcs.iter())
    }

    /// Scripted control for `npcs[index]`, computed from this snapshot.
    pub fn npc_control(&self, index: usize) -> Control {
        behavior::vehicle_control(self, &self.npcs[index])
    }
}

/// One synchronous tick: every scripted control is computed from the
/// pre-step snapshot, then all vehicles advance together.
pub fn step_world(world: &WorldState, ego_u: Control) -> WorldState {
    let cfg = &world.config;
    let controls: Vec<Control> = (0..world.npcs.len()).map(|i| world.npc_control(i)).collect();
    let advance = |v: &VehicleState, u: Control| {
        let mut next = step_vehicle(v, cfg.limits.clamp(u), cfg.dt, cfg.wheelbase);
        extend_route(&mut next, &world.map, world.rng_seed, cfg.route_horizon);
        next
    };
    let ego = advance(&world.ego, ego_u);
    let npcs = world.npcs.iter().zip(controls).map(|(v, u)| advance(v, u)).collect();
    let tick = world.tick + 1;
    WorldState {
        tick,
        ego,
        npcs,
        light_states: world.map.light_states(tick as f64 * cfg.dt),
        map: world.map.clone(),
        rng_seed: world.rng_seed,
        config: world.config.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use proptest::prelude::*;

    fn example_world(seed: u64, npcs: usize) -> WorldState {
        let map = Arc::new(maps::intersection());
        let cfg = Arc::new(WorldConfig::default());
        let lane = map.lane_index("s_in").unwrap();
        let ego = roaming_route(&map, lane, 5.0, 0, seed, &cfg).unwrap();
        let mut w = WorldState::new(map, cfg, ego, seed);
        w.spawn_npcs(npcs).unwrap();
        w
    }

    #[test]
    fn kinematics_examples() {
        let p = Pose2D::new(0.0, 0.0, 0.0);
        assert_eq!(step_kinematics(p, 0.0, Control::default(), 0.1, 2.5), (p, 0.0));
        let (q, v) = step_kinematics(p, 10.0, Control::default(), 0.1, 2.5);
        assert!((q.x - 1.0).abs() < 1e-12 && q.y == 0.0 && q.yaw == 0.0 && v == 10.0);
        let (q, _) = step_kinematics(p, 10.0, Control { accel: 0.0, steer: 0.1 }, 0.1, 2.5);
        let expected = 10.0 * 0.1f64.tan() / 2.5 * 0.1;
        assert!((q.yaw - expected).abs() < 1e-15);
        assert!((q.yaw - 0.04013).abs() < 1e-5);
        // braking below zero clamps
        let (_, v) = step_kinematics(p, 0.2, Control { accel: -4.0, steer: 0.0 }, 0.1, 2.5);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn choose_branch_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(choose_branch(&mut rng, &[7]), 7);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| choose_branch(&mut rng, &[1, 2, 3])).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ones = (0..10_000).filter(|_| choose_branch(&mut rng, &[0, 1]) == 1).count();
        let f = ones as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&f), "{f}");
    }

    #[test]
    fn empty_world_matches_single_vehicle_step() {
        let w = example_world(3, 0);
        let u = Control { accel: 0.0, steer: 0.05 };
        let next = step_world(&w, u);
        let alone = step_vehicle(&w.ego, u, 0.1, 2.5);
        assert_eq!(next.ego.pose, alone.pose);
        assert_eq!(next.ego.speed, alone.speed);
        assert_eq!(next.tick, 1);
    }

    #[test]
    fn zero_control_from_rest_is_fixed_point() {
        let mut w = example_world(5, 0);
        w.ego.speed = 0.0;
        let start = w.ego.pose;
        for _ in 0..100 {
            w = step_world(&w, Control::default());
        }
        assert_eq!(w.ego.pose, start);
        assert_eq!(w.ego.speed, 0.0);
    }

    #[test]
    fn npc_permutation_invariance() {
        let w = example_world(11, 6);
        let mut shuffled = w.clone();
        shuffled.npcs.reverse();
        let mut a = w;
        let mut b = shuffled;
        for _ in 0..200 {
            a = step_world(&a, Control::default());
            b = step_world(&b, Control::default());
        }
        let mut bn = b.npcs.clone();
        bn.sort_by_key(|v| v.id);
        assert_eq!(a.npcs, bn);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut w = example_world(21, 8);
            let mut trace = Vec::new();
            for k in 0..600 {
                let u = Control { accel: if k % 50 < 25 { 0.5 } else { -0.5 }, steer: 0.0 };
                w = step_world(&w, u);
                trace.push(w.vehicles().map(|v| (v.pose, v.speed.to_bits())).collect::<Vec<_>>());
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn spawn_respects_clearance() {
        let w = example_world(8, 8);
        let vs: Vec<_> = w.vehicles().collect();
        for (i, a) in vs.iter().enumerate() {
            for b in &vs[i + 1..] {
                assert!(a.pose.position().distance(b.pose.position()) >= 15.0);
            }
        }
    }

    #[test]
    fn roaming_routes_stay_ahead() {
        let mut w = example_world(2, 8);
        for _ in 0..1200 {
            w = step_world(&w, Control::default());
            for v in &w.npcs {
                assert!(v.remaining_route() > 30.0, "vehicle {} ran out of route", v.id);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn speed_nonnegative_and_yaw_normalized(seed in 0u64..1000, accels in prop::collection::vec(-4.0..4.0f64, 50)) {
            let mut w = example_world(seed, 4);
            for a in accels {
                w = step_world(&w, Control { accel: a, steer: 0.3 });
                for v in w.vehicles() {
                    prop_assert!(v.speed >= 0.0);
                    prop_assert!(v.pose.yaw > -std::f64::consts::PI && v.pose.yaw <= std::f64::consts::PI);
                }
            }
        }
    }

    #[test]
    fn box_center_is_pose() {
        let w = example_world(1, 0);
        assert_eq!(w.ego.bbox().center, Vec2::new(w.ego.pose.x, w.ego.pose.y));
    }
}
