//! Safe-set safety filter.
//!
//! The safety index `φ = D − d² − α·ḋ` uses an ellipse-shaped distance `d`
//! aligned with the obstacle heading. Whenever `φ ≥ 0` the command must keep
//! `φ̇ ≤ −η`, which is linear in the control for the control-affine bicycle
//! model; the tracker's command is projected onto the intersection of those
//! half-planes and the control box in a weighted norm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::world::{Control, ControlLimits, VehicleState, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("ego and obstacle positions coincide")]
    CoincidentPositions,
    #[error("the control safe set is empty")]
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyParams {
    /// Safe level `D` in squared shaped-distance units.
    #[serde(rename = "D")]
    pub d_safe: f64,
    /// Weight of the distance rate (s).
    pub alpha: f64,
    /// Ellipse aspect ratio.
    pub beta: f64,
    /// Ellipse semi-major axis (m).
    pub ell: f64,
    /// Required decrease rate of φ when unsafe (1/s).
    pub eta: f64,
    /// Projection weight on (accel, steer).
    #[serde(rename = "W")]
    pub w: [[f64; 2]; 2],
    pub wheelbase: f64,
    /// Obstacles farther than this are ignored.
    pub sensing_radius: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            d_safe: 2.0,
            alpha: 0.5,
            beta: 2.0,
            ell: 5.0,
            eta: 0.1,
            w: [[1.0, 0.0], [0.0, 10.0]],
            wheelbase: 2.5,
            sensing_radius: 30.0,
        }
    }
}

/// Planar agent state `(x, y, θ, v)` for the safety computations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub pos: Vec2,
    pub yaw: f64,
    pub speed: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, yaw: f64, speed: f64) -> Self {
        Self { pos: Vec2::new(x, y), yaw, speed }
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.yaw) * self.speed
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.pos.x, self.pos.y, self.yaw, self.speed]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<&VehicleState> for AgentState {
    fn from(v: &VehicleState) -> Self {
        Self { pos: v.pose.position(), yaw: v.pose.yaw, speed: v.speed }
    }
}

/// Symmetric 2×2 matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Sym2 {
    a: f64,
    b: f64,
    c: f64,
}

impl Sym2 {
    fn mul(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.a * v.x + self.b * v.y, self.b * v.x + self.c * v.y)
    }

    fn quad(&self, u: Vec2, v: Vec2) -> f64 {
        u.dot(self.mul(v))
    }
}

/// `Q = R(θ)·diag(1/ℓ², β²/ℓ²)·R(θ)ᵀ` and its derivative in `θ`.
fn shape_matrix(yaw: f64, p: &SafetyParams) -> (Sym2, Sym2) {
    let l1 = 1.0 / (p.ell * p.ell);
    let l2 = p.beta * p.beta / (p.ell * p.ell);
    let (s, c) = yaw.sin_cos();
    let q = Sym2 { a: l1 * c * c + l2 * s * s, b: (l1 - l2) * s * c, c: l1 * s * s + l2 * c * c };
    let dq = Sym2 {
        a: 2.0 * (l2 - l1) * s * c,
        b: (l1 - l2) * (c * c - s * s),
        c: 2.0 * (l1 - l2) * s * c,
    };
    (q, dq)
}

pub fn shaped_distance(ego: &AgentState, obs: &AgentState, p: &SafetyParams) -> Result<f64, SafetyError> {
    let g = ego.pos - obs.pos;
    if g.norm() < 1e-12 {
        return Err(SafetyError::CoincidentPositions);
    }
    let (q, _) = shape_matrix(obs.yaw, p);
    Ok(q.quad(g, g).sqrt())
}

/// Safety index with its gradients in the ego and obstacle states
/// `(x, y, θ, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexEval {
    pub phi: f64,
    pub d: f64,
    pub d_dot: f64,
    pub grad_ego: [f64; 4],
    pub grad_obs: [f64; 4],
}

pub fn evaluate_index(ego: &AgentState, obs: &AgentState, p: &SafetyParams) -> Result<IndexEval, SafetyError> {
    let g = ego.pos - obs.pos;
    if g.norm() < 1e-12 {
        return Err(SafetyError::CoincidentPositions);
    }
    let (q, dq) = shape_matrix(obs.yaw, p);
    let h = ego.velocity() - obs.velocity();
    let qg = q.mul(g);
    let qh = q.mul(h);
    let d2 = g.dot(qg);
    let d = d2.sqrt();
    let n = g.dot(qh);
    let d_dot = n / d;
    let phi = p.d_safe - d2 - p.alpha * d_dot;

    // position: ∂φ/∂p₀ = −2Qg − α(Qh/d − (gᵀQh)·Qg/d³)
    let dp = qg * (-2.0) - (qh * (1.0 / d) - qg * (n / (d2 * d))) * p.alpha;
    let (s0, c0) = ego.yaw.sin_cos();
    let dh_dyaw = Vec2::new(-s0, c0) * ego.speed;
    let dh_dv = Vec2::new(c0, s0);
    let d_yaw = -p.alpha * qg.dot(dh_dyaw) / d;
    let d_v = -p.alpha * qg.dot(dh_dv) / d;

    let (sj, cj) = obs.yaw.sin_cos();
    let dhj_dyaw = Vec2::new(-sj, cj) * (-obs.speed);
    let dhj_dv = Vec2::new(-cj, -sj);
    let dd2_dyaw = dq.quad(g, g);
    let dn_dyaw = dq.quad(g, h) + qg.dot(dhj_dyaw);
    let dd_dyaw = dd2_dyaw / (2.0 * d);
    let dddot_dyaw = dn_dyaw / d - n * dd_dyaw / d2;
    let dj_yaw = -dd2_dyaw - p.alpha * dddot_dyaw;
    let dj_v = -p.alpha * qg.dot(dhj_dv) / d;

    Ok(IndexEval {
        phi,
        d,
        d_dot,
        grad_ego: [dp.x, dp.y, d_yaw, d_v],
        grad_obs: [-dp.x, -dp.y, dj_yaw, dj_v],
    })
}

pub fn safety_index(ego: &AgentState, obs: &AgentState, p: &SafetyParams) -> f64 {
    match evaluate_index(ego, obs, p) {
        Ok(e) => e.phi,
        Err(_) => f64::INFINITY,
    }
}

/// The linear constraint `l·u ≤ s` on `u = (accel, steer)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub l: [f64; 2],
    pub s: f64,
}

impl HalfPlane {
    pub fn new(l: [f64; 2], s: f64) -> Self {
        Self { l, s }
    }

    pub fn value(&self, u: Control) -> f64 {
        self.l[0] * u.accel + self.l[1] * u.steer
    }

    pub fn slack(&self, u: Control) -> f64 {
        self.s - self.value(u)
    }

    pub fn normalized(&self) -> Option<HalfPlane> {
        let n = self.l[0].hypot(self.l[1]);
        (n > 1e-12).then(|| HalfPlane { l: [self.l[0] / n, self.l[1] / n], s: self.s / n })
    }

    /// Satisfaction with the projection tolerance `1e-9·(1 + |s|)` on the
    /// normalized row.
    pub fn satisfied(&self, u: Control) -> bool {
        match self.normalized() {
            Some(r) => r.value(u) <= r.s + 1e-9 * (1.0 + r.s.abs()),
            None => self.s >= -1e-9,
        }
    }
}

/// Outcome of the per-obstacle constraint construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintOutcome {
    /// `φ < 0`: no restriction.
    Inactive,
    Row(HalfPlane),
    /// No control direction can reduce φ: brake fully.
    Brake,
}

/// Control-affine drift `f(x₀)` and input matrix columns used by the filter.
fn affine_parts(ego: &AgentState, wheelbase: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let (s, c) = ego.yaw.sin_cos();
    let f = [ego.speed * c, ego.speed * s, 0.0, 0.0];
    let b = [[0.0, 0.0], [0.0, 0.0], [0.0, ego.speed / wheelbase], [1.0, 0.0]];
    (f, b)
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn constraint(ego: &AgentState, obs: &AgentState, p: &SafetyParams) -> ConstraintOutcome {
    let eval = match evaluate_index(ego, obs, p) {
        Ok(e) => e,
        Err(_) => return ConstraintOutcome::Brake,
    };
    if eval.phi < 0.0 {
        return ConstraintOutcome::Inactive;
    }
    let (f, b) = affine_parts(ego, p.wheelbase);
    let gx = eval.grad_ego;
    let l = [
        (0..4).map(|i| gx[i] * b[i][0]).sum::<f64>(),
        (0..4).map(|i| gx[i] * b[i][1]).sum::<f64>(),
    ];
    let obs_rate = [obs.speed * obs.yaw.cos(), obs.speed * obs.yaw.sin(), 0.0, 0.0];
    let s = -p.eta - dot4(&eval.grad_obs, &obs_rate) - dot4(&gx, &f);
    if l[0].hypot(l[1]) >= 1e-9 {
        return ConstraintOutcome::Row(HalfPlane { l, s });
    }
    // Acceleration has no first-order authority (typically at rest). Moving
    // forward would change φ at the rate of its position gradient along the
    // heading: forbid acceleration if that rate is positive.
    let heading = Vec2::from_angle(ego.yaw);
    let g_a = Vec2::new(gx[0], gx[1]).dot(heading);
    if g_a > 1e-9 {
        ConstraintOutcome::Row(HalfPlane { l: [1.0, 0.0], s: 0.0 })
    } else if g_a < -1e-9 {
        ConstraintOutcome::Inactive
    } else {
        ConstraintOutcome::Brake
    }
}

fn objective(w: &[[f64; 2]; 2], u: Control, v: Control) -> f64 {
    let da = v.accel - u.accel;
    let ds = v.steer - u.steer;
    0.5 * (w[0][0] * da * da + (w[0][1] + w[1][0]) * da * ds + w[1][1] * ds * ds)
}

/// Weighted projection `argmin ½(v−u)ᵀW(v−u)` over the control box and the
/// given half-planes, by exhaustive enumeration of the 2D active sets.
pub fn qp_project(
    u: Control,
    constraints: &[HalfPlane],
    limits: &ControlLimits,
    w: &[[f64; 2]; 2],
) -> Result<Control, SafetyError> {
    let mut rows: Vec<HalfPlane> = vec![
        HalfPlane::new([1.0, 0.0], limits.accel_max),
        HalfPlane::new([-1.0, 0.0], limits.accel_max),
        HalfPlane::new([0.0, 1.0], limits.steer_max),
        HalfPlane::new([0.0, -1.0], limits.steer_max),
    ];
    for c in constraints {
        match c.normalized() {
            Some(r) => rows.push(r),
            None if c.s >= -1e-9 => {}
            None => return Err(SafetyError::Infeasible),
        }
    }
    let feasible = |v: Control| rows.iter().all(|r| r.satisfied(v));
    if feasible(u) {
        return Ok(u);
    }
    let det = w[0][0] * w[1][1] - w[0][1] * w[1][0];
    let winv = [[w[1][1] / det, -w[0][1] / det], [-w[1][0] / det, w[0][0] / det]];
    let mut best: Option<(f64, Control)> = None;
    let mut consider = |v: Control| {
        if v.accel.is_finite() && v.steer.is_finite() && feasible(v) {
            let obj = objective(w, u, v);
            if best.is_none_or(|(b, _)| obj < b) {
                best = Some((obj, v));
            }
        }
    };
    for r in &rows {
        // single active row: u − W⁻¹lᵀ(l·u − s)/(l W⁻¹ lᵀ)
        let wl = [winv[0][0] * r.l[0] + winv[0][1] * r.l[1], winv[1][0] * r.l[0] + winv[1][1] * r.l[1]];
        let denom = r.l[0] * wl[0] + r.l[1] * wl[1];
        let k = (r.value(u) - r.s) / denom;
        consider(Control { accel: u.accel - wl[0] * k, steer: u.steer - wl[1] * k });
    }
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            let det = a.l[0] * b.l[1] - a.l[1] * b.l[0];
            if det.abs() < 1e-12 {
                continue;
            }
            let x = (a.s * b.l[1] - a.l[1] * b.s) / det;
            let y = (a.l[0] * b.s - a.s * b.l[0]) / det;
            consider(Control { accel: x, steer: y });
        }
    }
    best.map(|(_, v)| limits.clamp(v)).ok_or(SafetyError::Infeasible)
}

/// Result of filtering one command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutput {
    pub control: Control,
    /// At least one obstacle constrained the command.
    pub active: bool,
    /// The safe set was empty and full braking was commanded.
    pub infeasible: bool,
    /// Largest safety index among sensed obstacles (−∞ when none).
    pub phi_max: f64,
}

/// Constraint rows for an ego against a set of obstacles.
pub fn collect_constraints(ego: &AgentState, obstacles: &[AgentState], p: &SafetyParams) -> (Vec<HalfPlane>, bool, f64) {
    let mut rows = Vec::new();
    let mut brake = false;
    let mut phi_max = f64::NEG_INFINITY;
    for obs in obstacles {
        if obs.pos.distance(ego.pos) > p.sensing_radius {
            continue;
        }
        phi_max = phi_max.max(safety_index(ego, obs, p));
        match constraint(ego, obs, p) {
            ConstraintOutcome::Inactive => {}
            ConstraintOutcome::Row(r) => rows.push(r),
            ConstraintOutcome::Brake => brake = true,
        }
    }
    (rows, brake, phi_max)
}

/// Filters `u` against every sensed obstacle.
pub fn filter_control(
    ego: &AgentState,
    obstacles: &[AgentState],
    u: Control,
    limits: &ControlLimits,
    p: &SafetyParams,
) -> FilterOutput {
    let (rows, brake, phi_max) = collect_constraints(ego, obstacles, p);
    if brake {
        return FilterOutput { control: limits.full_brake(), active: true, infeasible: false, phi_max };
    }
    if rows.is_empty() {
        return FilterOutput { control: u, active: false, infeasible: false, phi_max };
    }
    match qp_project(u, &rows, limits, &p.w) {
        Ok(control) => FilterOutput { control, active: true, infeasible: false, phi_max },
        Err(_) => FilterOutput { control: limits.full_brake(), active: true, infeasible: true, phi_max },
    }
}

/// Filters the ego command against all scripted vehicles of `world`.
pub fn safe_control(world: &WorldState, u: Control, p: &SafetyParams) -> FilterOutput {
    let ego = AgentState::from(&world.ego);
    let obstacles: Vec<AgentState> = world.npcs.iter().map(AgentState::from).collect();
    filter_control(&ego, &obstacles, u, &world.config.limits, p)
}

/// Explicit-Euler step of the control-affine model the filter reasons
/// about: small-angle steering and no speed clamp.
pub fn affine_step(x: &AgentState, u: Control, dt: f64, wheelbase: f64) -> AgentState {
    let (f, b) = affine_parts(x, wheelbase);
    let a = x.as_array();
    let mut next = [0.0; 4];
    for i in 0..4 {
        next[i] = a[i] + (f[i] + b[i][0] * u.accel + b[i][1] * u.steer) * dt;
    }
    AgentState::from_array(next)
}

/// Constant-velocity obstacle motion.
pub fn coast(x: &AgentState, dt: f64) -> AgentState {
    AgentState { pos: x.pos + x.velocity() * dt, ..*x }
}
