//! Rule-based driving shared by the scripted vehicles and the expert:
//! cruise, car following, red-light stopping and yielding at conflict
//! points where two routes meet.

use serde::{Deserialize, Serialize};

use super::map::LightState;
use super::route::Route;
use super::{Control, VehicleState, WorldState};
use crate::geometry::{normalize_angle, to_local};
use crate::tracking::signed_heading_error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrivingParams {
    pub v_cruise: f64,
    /// Proportional gain of the cruise-speed regulator (1/s).
    pub k_speed: f64,
    /// Leaders closer than this bumper-to-bumper gap are followed.
    pub d_follow: f64,
    /// Bumper-to-bumper standoff kept behind a stopped leader.
    pub standoff: f64,
    pub k_gap: f64,
    pub k_rel: f64,
    /// Time headway added to the standoff when moving (s).
    pub headway: f64,
    /// Comfortable braking used for the stop-line envelope.
    pub a_brake: f64,
    /// Distance kept between the front bumper and a stop point.
    pub stop_standoff: f64,
    /// Steering aims at the route point this far ahead.
    pub lookahead: f64,
    pub k_steer: f64,
    pub window_behind: f64,
    pub window_ahead: f64,
    /// Maximum lateral offset for another vehicle to count as on my route.
    pub lane_match: f64,
    /// Maximum heading difference for the same.
    pub heading_match: f64,
    /// Two routes conflict where they pass within this distance.
    pub conflict_radius: f64,
    /// How far along another vehicle's route conflicts are searched.
    pub conflict_horizon: f64,
    /// A yielding vehicle waits this far before a conflict point.
    pub conflict_margin: f64,
}

impl Default for DrivingParams {
    fn default() -> Self {
        Self {
            v_cruise: 6.0,
            k_speed: 1.0,
            d_follow: 8.0,
            standoff: 2.0,
            k_gap: 0.5,
            k_rel: 1.0,
            headway: 0.8,
            a_brake: 3.0,
            stop_standoff: 1.0,
            lookahead: 5.0,
            k_steer: 2.0,
            window_behind: 15.0,
            window_ahead: 40.0,
            lane_match: 1.5,
            heading_match: 60f64.to_radians(),
            conflict_radius: 1.0,
            conflict_horizon: 30.0,
            conflict_margin: 1.5,
        }
    }
}

/// Something to stay behind: `s` is the route arclength the front bumper
/// must not pass, `speed` its velocity along the route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub s: f64,
    pub speed: f64,
    pub vehicle: u32,
}

/// Whether a light in `state` requires stopping when the front bumper is
/// `d_front` before the stop point at speed `v`. Yellow is run only when
/// stopping would need more than `accel_max`.
pub fn must_stop(state: LightState, d_front: f64, v: f64, accel_max: f64) -> bool {
    match state {
        LightState::Green => false,
        LightState::Red => true,
        LightState::Yellow => d_front >= v * v / (2.0 * accel_max),
    }
}

fn arrival_time(dist: f64, v: f64) -> f64 {
    dist / v.max(1.0)
}

/// Obstacles on `me`'s route: vehicles ahead on it, and conflict points where
/// another vehicle has priority.
pub fn perceive(world: &WorldState, me: &VehicleState) -> Vec<Obstacle> {
    let p = &world.config.driving;
    let path = me.route.path();
    let s = me.route_progress;
    let mut out = Vec::new();
    for o in world.vehicles() {
        if o.id == me.id {
            continue;
        }
        let pos = o.pose.position();
        if pos.distance(me.pose.position()) > p.window_ahead + p.conflict_horizon + 10.0 {
            continue;
        }
        let proj = path.project_window(pos, s - p.window_behind, s + p.window_ahead);
        let rel = normalize_angle(o.pose.yaw - path.heading_at(proj.arclength));
        if proj.offset.abs() < p.lane_match && rel.abs() < p.heading_match {
            if proj.arclength > s {
                out.push(Obstacle { s: proj.arclength - o.half_length, speed: o.speed * rel.cos(), vehicle: o.id });
            }
            continue;
        }
        if let Some(ob) = conflict(world, me, o) {
            out.push(ob);
        }
    }
    out
}

/// First point of `o`'s upcoming route that comes within the conflict radius
/// of my route ahead, resolved by first-come-first-served with id tie-break.
fn conflict(world: &WorldState, me: &VehicleState, o: &VehicleState) -> Option<Obstacle> {
    let p = &world.config.driving;
    let accel_max = world.config.limits.accel_max;
    let path = me.route.path();
    let s = me.route_progress;
    let o_path = o.route.path();
    let so = o.route_progress;
    let reach = p.window_ahead + 5.0;
    let steps = (p.conflict_horizon + 3.0).ceil() as usize;
    let mut hit = None;
    for k in 0..=steps {
        let sk = (so - 3.0 + k as f64).clamp(0.0, o_path.length());
        let pt = o_path.point_at(sk);
        if pt.distance(me.pose.position()) > reach {
            continue;
        }
        let pr = path.project_window(pt, s, s + p.window_ahead);
        if pr.offset.abs() < p.conflict_radius {
            hit = Some((sk, pr.arclength));
            break;
        }
    }
    let (sk, sc) = hit?;
    let d_me = sc - s;
    if d_me < me.half_length + 1.0 {
        // already at the conflict point: the others wait for me
        return None;
    }
    let d_o = sk - so;
    let same_dir = normalize_angle(o_path.heading_at(sk) - path.heading_at(sc)).abs() < p.heading_match;
    if d_o <= 0.0 {
        // the other vehicle is in the conflict zone now
        if same_dir {
            let rel = normalize_angle(o.pose.yaw - path.heading_at(sc));
            return Some(Obstacle { s: sc - d_o - o.half_length, speed: o.speed * rel.cos().max(0.0), vehicle: o.id });
        }
        return Some(Obstacle { s: sc - p.conflict_margin, speed: 0.0, vehicle: o.id });
    }
    // a light that will hold the other vehicle before the conflict point
    for stop in o.route.stops() {
        let d_front = stop.s - (so + o.half_length);
        if d_front < 0.0 || stop.s > sk {
            continue;
        }
        if must_stop(world.light_states[stop.light], d_front, o.speed, accel_max) {
            return None;
        }
        break;
    }
    let t_o = arrival_time(d_o, o.speed);
    let t_me = arrival_time(d_me, me.speed);
    if (t_o, o.id) < (t_me, me.id) {
        Some(Obstacle { s: sc - p.conflict_margin, speed: 0.0, vehicle: o.id })
    } else {
        None
    }
}

/// Longitudinal law: the minimum of the cruise regulator, the following
/// terms for every obstacle within range, and the stop-line envelope,
/// clamped to `±accel_max`.
#[allow(clippy::too_many_arguments)]
pub fn longitudinal_accel(
    route: &Route,
    s: f64,
    v: f64,
    half_length: f64,
    obstacles: &[Obstacle],
    lights: &[LightState],
    p: &DrivingParams,
    accel_max: f64,
) -> f64 {
    let front = s + half_length;
    let mut a = p.k_speed * (p.v_cruise - v);
    for ob in obstacles {
        let gap = ob.s - front;
        if gap >= p.d_follow {
            continue;
        }
        let g_des = p.standoff + p.headway * v;
        a = a.min(p.k_gap * (gap - g_des) + p.k_rel * (ob.speed - v));
        if v > ob.speed {
            let room = gap - p.standoff;
            let kin = if room > 0.0 { -(v * v - ob.speed * ob.speed) / (2.0 * room) } else { -accel_max };
            a = a.min(kin);
        }
    }
    if let Some(stop) = route.stops().iter().find(|st| st.s >= front) {
        let d_front = stop.s - front;
        if d_front <= p.window_ahead && must_stop(lights[stop.light], d_front, v, accel_max) {
            let d_eff = d_front - p.stop_standoff;
            if d_eff <= 0.0 {
                a = -accel_max;
            } else if d_eff <= v * v / (2.0 * p.a_brake) {
                a = a.min(-v * v / (2.0 * d_eff));
            }
        }
    }
    a.clamp(-accel_max, accel_max)
}

/// Proportional steering toward the route point `lookahead` ahead.
pub fn route_steer(me: &VehicleState, p: &DrivingParams, steer_max: f64) -> f64 {
    let target = me.route.path().point_at(me.route_progress + p.lookahead);
    let local = to_local(&me.pose, target);
    match signed_heading_error(local, 0.05) {
        Ok(e) => (p.k_steer * e).clamp(-steer_max, steer_max),
        Err(_) => 0.0,
    }
}

/// Control of a scripted vehicle from a world snapshot.
pub fn vehicle_control(world: &WorldState, me: &VehicleState) -> Control {
    let cfg = &world.config;
    let obstacles = perceive(world, me);
    let accel = longitudinal_accel(
        &me.route,
        me.route_progress,
        me.speed,
        me.half_length,
        &obstacles,
        &world.light_states,
        &cfg.driving,
        cfg.limits.accel_max,
    );
    Control { accel, steer: route_steer(me, &cfg.driving, cfg.limits.steer_max) }
}
