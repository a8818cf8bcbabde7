//! Decoupled trajectory tracking: a speed PID on the finite-difference
//! target speed and a steering PID on the heading error to a target waypoint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::trajectory::Trajectory;
use crate::world::{Control, ControlLimits};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("target waypoint lies within {0} m of the ego")]
    DegenerateTarget(f64),
    #[error("trajectory of {len} points is too short for target index {m}")]
    TooShort { len: usize, m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

/// PID channel with a clamped integrator. The derivative term is zero on the
/// first update.
#[derive(Debug, Clone, PartialEq)]
pub struct Pid {
    pub gains: PidGains,
    pub integral_max: f64,
    integral: f64,
    prev_error: Option<f64>,
}

impl Pid {
    pub fn new(gains: PidGains, integral_max: f64) -> Self {
        Self { gains, integral_max, integral: 0.0, prev_error: None }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// Unclamped command for error `e`.
    pub fn update(&mut self, e: f64, dt: f64) -> f64 {
        self.integral = (self.integral + e * dt).clamp(-self.integral_max, self.integral_max);
        let de = self.prev_error.map_or(0.0, |p| (e - p) / dt);
        self.prev_error = Some(e);
        self.gains.kp * e + self.gains.ki * self.integral + self.gains.kd * de
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Target waypoint index (1-based).
    pub m: usize,
    pub dt: f64,
    pub longitudinal: PidGains,
    pub lateral: PidGains,
    pub integral_max: f64,
    /// Targets closer than this are treated as "stay put".
    pub degenerate_eps: f64,
    /// Deceleration commanded on a degenerate target.
    pub hold_brake: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            m: 5,
            dt: 0.1,
            longitudinal: PidGains { kp: 1.5, ki: 0.2, kd: 0.0 },
            lateral: PidGains { kp: 2.0, ki: 0.0, kd: 0.3 },
            integral_max: 2.0,
            degenerate_eps: 0.05,
            hold_brake: 1.0,
        }
    }
}

/// Speed implied by the spacing of waypoints `m` and `m + 1`.
pub fn target_speed(traj: &Trajectory, m: usize, dt: f64) -> Result<f64, TrackingError> {
    if m == 0 || m + 1 > traj.horizon() {
        return Err(TrackingError::TooShort { len: traj.horizon(), m });
    }
    Ok(traj.at(m + 1).distance(traj.at(m)) / dt)
}

/// Signed angle between the ego heading `(1, 0)` and the direction to a
/// local-frame target, positive to the left.
pub fn signed_heading_error(target: Vec2, eps: f64) -> Result<f64, TrackingError> {
    let n = target.norm();
    if n <= eps {
        return Err(TrackingError::DegenerateTarget(eps));
    }
    let magnitude = (target.x / n).clamp(-1.0, 1.0).acos();
    Ok(if target.y < 0.0 { -magnitude } else { magnitude })
}

pub fn heading_error(traj: &Trajectory, m: usize, eps: f64) -> Result<f64, TrackingError> {
    if m == 0 || m > traj.horizon() {
        return Err(TrackingError::TooShort { len: traj.horizon(), m });
    }
    signed_heading_error(traj.at(m), eps)
}

/// Speed loop: PID on `v_d − v`, clamped to `±accel_max`.
pub fn longitudinal(v_d: f64, v: f64, pid: &mut Pid, dt: f64, accel_max: f64) -> f64 {
    pid.update(v_d - v, dt).clamp(-accel_max, accel_max)
}

/// Stateful tracking controller for one ego vehicle.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub config: TrackerConfig,
    pub limits: ControlLimits,
    lon: Pid,
    lat: Pid,
}

impl Tracker {
    pub fn new(config: TrackerConfig, limits: ControlLimits) -> Self {
        Self {
            config,
            limits,
            lon: Pid::new(config.longitudinal, config.integral_max),
            lat: Pid::new(config.lateral, config.integral_max),
        }
    }

    pub fn reset(&mut self) {
        self.lon.reset();
        self.lat.reset();
    }

    /// Converts a planned trajectory into a control inside the control box.
    /// A degenerate target or malformed trajectory yields a gentle hold brake.
    pub fn track(&mut self, traj: &Trajectory, ego_speed: f64) -> Control {
        let cfg = self.config;
        let planned = target_speed(traj, cfg.m, cfg.dt)
            .and_then(|v_d| heading_error(traj, cfg.m, cfg.degenerate_eps).map(|e| (v_d, e)));
        match planned {
            Ok((v_d, e_yaw)) => {
                let accel = longitudinal(v_d, ego_speed, &mut self.lon, cfg.dt, self.limits.accel_max);
                let steer = self.lat.update(e_yaw, cfg.dt);
                self.limits.clamp(Control { accel, steer })
            }
            Err(_) => self.brake(),
        }
    }

    /// Hold command used when there is nothing sensible to track.
    pub fn brake(&mut self) -> Control {
        self.lat.reset();
        self.limits.clamp(Control { accel: -self.config.hold_brake, steer: 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2D;
    use crate::world::step_kinematics;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn traj(points: &[(f64, f64)]) -> Trajectory {
        Trajectory::new(points.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).unwrap()
    }

    fn straight(step: f64) -> Trajectory {
        traj(&(1..=10).map(|k| (k as f64 * step, 0.0)).collect::<Vec<_>>())
    }

    #[test]
    fn target_speed_examples() {
        let mut pts = vec![(0.0, 0.0); 10];
        assert_eq!(target_speed(&traj(&pts), 5, 0.1).unwrap(), 0.0);
        pts[4] = (5.0, 0.0);
        pts[5] = (6.0, 0.0);
        assert!((target_speed(&traj(&pts), 5, 0.1).unwrap() - 10.0).abs() < 1e-12);
        pts[5] = (5.6, 0.8);
        assert!((target_speed(&traj(&pts), 5, 0.1).unwrap() - 10.0).abs() < 1e-12);
        assert!(target_speed(&traj(&pts[..5]), 5, 0.1).is_err());
    }

    #[test]
    fn heading_error_examples() {
        assert_eq!(signed_heading_error(Vec2::new(5.0, 0.0), 0.05).unwrap(), 0.0);
        assert!((signed_heading_error(Vec2::new(1.0, 1.0), 0.05).unwrap() - FRAC_PI_4).abs() < 1e-12);
        assert!((signed_heading_error(Vec2::new(1.0, -1.0), 0.05).unwrap() + FRAC_PI_4).abs() < 1e-12);
        assert!(matches!(signed_heading_error(Vec2::new(0.01, 0.0), 0.05), Err(TrackingError::DegenerateTarget(_))));
    }

    #[test]
    fn longitudinal_examples() {
        let mut pid = Pid::new(PidGains { kp: 1.0, ki: 0.0, kd: 0.0 }, 2.0);
        assert_eq!(longitudinal(10.0, 8.0, &mut pid, 0.1, 4.0), 2.0);
        let mut pid = Pid::new(PidGains { kp: 1.5, ki: 0.2, kd: 0.0 }, 2.0);
        assert_eq!(longitudinal(6.0, 6.0, &mut pid, 0.1, 4.0), 0.0);
    }

    #[test]
    fn integral_is_clamped() {
        let mut pid = Pid::new(PidGains { kp: 0.0, ki: 1.0, kd: 0.0 }, 2.0);
        for _ in 0..1000 {
            pid.update(10.0, 0.1);
        }
        assert_eq!(pid.integral(), 2.0);
    }

    #[test]
    fn degenerate_trajectory_brakes() {
        let mut t = Tracker::new(TrackerConfig::default(), ControlLimits::default());
        let u = t.track(&Trajectory::stationary(10), 3.0);
        assert_eq!(u, Control { accel: -1.0, steer: 0.0 });
    }

    #[test]
    fn straight_at_current_speed_is_equilibrium() {
        let mut t = Tracker::new(TrackerConfig::default(), ControlLimits::default());
        let u = t.track(&straight(0.6), 6.0);
        assert!(u.accel.abs() < 1e-9 && u.steer.abs() < 1e-12);
    }

    /// Closed-loop 1 m/s speed step with the bicycle model as plant.
    #[test]
    fn speed_step_settles_within_three_seconds() {
        let cfg = TrackerConfig::default();
        let mut t = Tracker::new(cfg, ControlLimits::default());
        let (mut pose, mut v) = (Pose2D::default(), 5.0);
        let plan = straight(0.6);
        let mut settled_at = None;
        for tick in 0..100 {
            let u = t.track(&plan, v);
            (pose, v) = step_kinematics(pose, v, u, 0.1, 2.5);
            if (6.0 - v).abs() < 0.1 {
                settled_at.get_or_insert(tick);
            } else {
                settled_at = None;
            }
        }
        assert!(settled_at.is_some_and(|k| k < 30), "{settled_at:?}");
    }

    fn arb_traj() -> impl Strategy<Value = Trajectory> {
        prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64), 10)
            .prop_map(|v| traj(&v))
    }

    proptest! {
        #[test]
        fn mirror_negates_steer(t in arb_traj(), v in 0.0..12.0f64) {
            let mut a = Tracker::new(TrackerConfig::default(), ControlLimits::default());
            let mut b = a.clone();
            let u = a.track(&t, v);
            let w = b.track(&t.mirrored(), v);
            prop_assert_eq!(u.accel, w.accel);
            prop_assert_eq!(u.steer, -w.steer);
        }

        #[test]
        fn target_speed_rotation_invariant(t in arb_traj(), angle in -3.2..3.2f64) {
            let rotated = Trajectory::new(t.points().iter().map(|p| p.rotate(angle)).collect()).unwrap();
            let a = target_speed(&t, 5, 0.1).unwrap();
            let b = target_speed(&rotated, 5, 0.1).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }

        #[test]
        fn outputs_stay_in_control_box(ts in prop::collection::vec(arb_traj(), 1..20), v in 0.0..20.0f64) {
            let limits = ControlLimits::default();
            let mut tr = Tracker::new(TrackerConfig::default(), limits);
            for t in &ts {
                let u = tr.track(t, v);
                prop_assert!(u.accel.abs() <= limits.accel_max && u.steer.abs() <= limits.steer_max);
            }
        }
    }
}
