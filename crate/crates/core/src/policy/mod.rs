//! Planner interfaces, the trajectory imitation loss and open-loop metrics,
//! and simple reference planners.

pub mod toy;
pub mod wire;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::birdview::RasterImage;
use crate::expert::{expert_plan, DatasetFrame, ExpertOptions};
use crate::geometry::Vec2;
use crate::trajectory::Trajectory;
use crate::world::WorldState;

pub use toy::{downsample_features, train_toy, ToyPolicy};
pub use wire::RemotePolicy;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dataset has no usable frames")]
    EmptyDataset,
    #[error("planner did not answer in time")]
    Timeout,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("expected horizon {expected}, got {got}")]
    Horizon { expected: usize, got: usize },
    #[error("normal equations are not positive definite")]
    Singular,
    #[error("planner failed: {0}")]
    Planner(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("policy file: {0}")]
    Format(String),
}

/// Distance between the i-th (1-based) points of two trajectories.
pub fn displacement_error(pred: &Trajectory, truth: &Trajectory, i: usize) -> f64 {
    pred.at(i).distance(truth.at(i))
}

/// Mean squared displacement over the horizon.
pub fn loss(pred: &Trajectory, truth: &Trajectory) -> f64 {
    assert_eq!(pred.horizon(), truth.horizon(), "loss needs equal horizons");
    let h = pred.horizon();
    (1..=h).map(|i| displacement_error(pred, truth, i).powi(2)).sum::<f64>() / h as f64
}

/// Mean over the horizon of the displacement errors.
pub fn mean_displacement(pred: &Trajectory, truth: &Trajectory) -> f64 {
    let h = truth.horizon();
    (1..=h).map(|i| displacement_error(pred, truth, i)).sum::<f64>() / h as f64
}

/// A learned planner: bird-view raster and speed in, ego-frame trajectory out.
pub trait RasterPolicy {
    fn horizon(&self) -> usize;
    fn plan(&mut self, raster: &RasterImage, ego_speed: f64) -> Result<Trajectory, PolicyError>;
}

impl<T: RasterPolicy + ?Sized> RasterPolicy for Box<T> {
    fn horizon(&self) -> usize {
        (**self).horizon()
    }

    fn plan(&mut self, raster: &RasterImage, ego_speed: f64) -> Result<Trajectory, PolicyError> {
        (**self).plan(raster, ego_speed)
    }
}

/// Average displacement error of `policy` over the untainted frames.
pub fn average_displacement<'a>(
    policy: &mut dyn RasterPolicy,
    frames: impl IntoIterator<Item = &'a DatasetFrame>,
) -> Result<f64, PolicyError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for f in frames.into_iter().filter(|f| !f.noise_tainted) {
        let pred = policy.plan(&f.raster, f.ego_speed)?;
        if pred.horizon() != f.label.horizon() {
            return Err(PolicyError::Horizon { expected: f.label.horizon(), got: pred.horizon() });
        }
        total += mean_displacement(&pred, &f.label);
        n += 1;
    }
    if n == 0 {
        return Err(PolicyError::EmptyDataset);
    }
    Ok(total / n as f64)
}

/// Keeps the current speed and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantVelocity {
    pub h: usize,
    pub dt: f64,
}

impl RasterPolicy for ConstantVelocity {
    fn horizon(&self) -> usize {
        self.h
    }

    fn plan(&mut self, _raster: &RasterImage, ego_speed: f64) -> Result<Trajectory, PolicyError> {
        let pts = (1..=self.h).map(|k| Vec2::new(ego_speed * self.dt * k as f64, 0.0)).collect();
        Trajectory::new(pts).map_err(|e| PolicyError::Planner(e.to_string()))
    }
}

fn observation_key(raster: &RasterImage, ego_speed: f64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(raster.as_bytes());
    h.update(ego_speed.to_le_bytes());
    h.finalize().into()
}

/// Looks up the recorded label of an observation: the perfect oracle.
/// Identical observations (e.g. waiting at a red light) can carry different
/// labels; those are handed out in recording order, cycling.
#[derive(Debug, Clone, Default)]
pub struct LabelReplay {
    labels: HashMap<[u8; 32], (Vec<Trajectory>, usize)>,
    h: usize,
}

impl LabelReplay {
    pub fn new<'a>(frames: impl IntoIterator<Item = &'a DatasetFrame>) -> Self {
        let mut out = Self::default();
        for f in frames {
            out.h = f.label.horizon();
            out.labels.entry(observation_key(&f.raster, f.ego_speed)).or_default().0.push(f.label.clone());
        }
        out
    }
}

impl RasterPolicy for LabelReplay {
    fn horizon(&self) -> usize {
        self.h
    }

    fn plan(&mut self, raster: &RasterImage, ego_speed: f64) -> Result<Trajectory, PolicyError> {
        let (labels, next) = self
            .labels
            .get_mut(&observation_key(raster, ego_speed))
            .ok_or_else(|| PolicyError::Planner("observation not in the replay table".into()))?;
        let label = labels[*next].clone();
        *next = (*next + 1) % labels.len();
        Ok(label)
    }
}

/// Anything that can drive the ego in closed loop. Learned planners only see
/// the raster and speed; the expert uses the world directly.
pub trait Planner {
    /// Whether `plan` needs the rendered raster; rendering is skipped otherwise.
    fn needs_raster(&self) -> bool {
        true
    }

    /// Called at the start of every episode.
    fn reset(&mut self, _seed: u64) {}

    fn plan(&mut self, world: &WorldState, raster: Option<&RasterImage>) -> Result<Trajectory, PolicyError>;
}

/// The model-based expert as a closed-loop planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertPlanner {
    pub h: usize,
    pub options: ExpertOptions,
}

impl ExpertPlanner {
    pub fn new(h: usize) -> Self {
        Self { h, options: ExpertOptions::default() }
    }
}

impl Planner for ExpertPlanner {
    fn needs_raster(&self) -> bool {
        false
    }

    fn plan(&mut self, world: &WorldState, _raster: Option<&RasterImage>) -> Result<Trajectory, PolicyError> {
        expert_plan(world, self.h, &self.options).map_err(|e| PolicyError::Planner(e.to_string()))
    }
}

/// A deliberately poor planner: the expert with seeded uniform noise of
/// ±`noise` meters on every planned coordinate, optionally blind to other
/// vehicles.
#[derive(Debug, Clone)]
pub struct DegradedPlanner {
    pub h: usize,
    pub noise: f64,
    pub options: ExpertOptions,
    rng: ChaCha8Rng,
}

impl DegradedPlanner {
    pub fn new(h: usize, noise: f64, options: ExpertOptions) -> Self {
        Self { h, noise, options, rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl Planner for DegradedPlanner {
    fn needs_raster(&self) -> bool {
        false
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4445_4752);
    }

    fn plan(&mut self, world: &WorldState, _raster: Option<&RasterImage>) -> Result<Trajectory, PolicyError> {
        let clean = expert_plan(world, self.h, &self.options)
            .map_err(|e| PolicyError::Planner(e.to_string()))?;
        let pts = clean
            .points()
            .iter()
            .map(|p| *p + Vec2::new(self.rng.random_range(-1.0..=1.0), self.rng.random_range(-1.0..=1.0)) * self.noise)
            .collect();
        Trajectory::new(pts).map_err(|e| PolicyError::Planner(e.to_string()))
    }
}

/// Adapter running a raster policy in closed loop.
#[derive(Debug, Clone)]
pub struct Learned<P>(pub P);

impl<P: RasterPolicy> Planner for Learned<P> {
    fn plan(&mut self, world: &WorldState, raster: Option<&RasterImage>) -> Result<Trajectory, PolicyError> {
        let raster = raster.ok_or_else(|| PolicyError::Planner("raster required".into()))?;
        let t = self.0.plan(raster, world.ego.speed)?;
        if t.horizon() != self.0.horizon() {
            return Err(PolicyError::Horizon { expected: self.0.horizon(), got: t.horizon() });
        }
        Ok(t)
    }
}

impl<T: Planner + ?Sized> Planner for Box<T> {
    fn needs_raster(&self) -> bool {
        (**self).needs_raster()
    }

    fn reset(&mut self, seed: u64) {
        (**self).reset(seed)
    }

    fn plan(&mut self, world: &WorldState, raster: Option<&RasterImage>) -> Result<Trajectory, PolicyError> {
        (**self).plan(world, raster)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(pts: &[(f64, f64)]) -> Trajectory {
        Trajectory::new(pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).unwrap()
    }

    fn line(h: usize, dx: f64, dy: f64) -> Trajectory {
        traj(&(1..=h).map(|k| (k as f64 + dx, dy)).collect::<Vec<_>>())
    }

    #[test]
    fn displacement_examples() {
        let t = line(10, 0.0, 0.0);
        assert_eq!(displacement_error(&t, &t, 3), 0.0);
        let shifted = line(10, 1.0, 0.0);
        for i in 1..=10 {
            assert!((displacement_error(&shifted, &t, i) - 1.0).abs() < 1e-12);
        }
        let mut pts: Vec<_> = t.points().to_vec();
        pts[1] += Vec2::new(3.0, 4.0);
        assert!((displacement_error(&Trajectory::new(pts).unwrap(), &t, 2) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let t = line(10, 0.0, 0.0);
        assert_eq!(loss(&t, &t), 0.0);
        assert!((loss(&line(10, 0.0, 1.0), &t) - 1.0).abs() < 1e-12);
        let half: Vec<_> = t.points().iter().enumerate().map(|(i, p)| if i % 2 == 0 { *p + Vec2::new(0.0, 2.0) } else { *p }).collect();
        assert!((loss(&Trajectory::new(half).unwrap(), &t) - 2.0).abs() < 1e-12);
    }

    fn frame(speed: f64, label: Trajectory, tainted: bool, pixel: u8) -> DatasetFrame {
        let mut raster = RasterImage::default();
        raster.set(0, 0, [pixel, 0, 0]);
        DatasetFrame { raster, ego_speed: speed, label, t: 0.0, noise_tainted: tainted }
    }

    #[test]
    fn replay_oracle_has_zero_ade() {
        let frames: Vec<_> = (0..20).map(|i| frame(i as f64, line(10, i as f64, 0.5), false, i as u8)).collect();
        let mut oracle = LabelReplay::new(&frames);
        assert_eq!(average_displacement(&mut oracle, &frames).unwrap(), 0.0);
    }

    #[test]
    fn replay_oracle_keeps_duplicate_observations_apart() {
        // same raster and speed, different futures
        let frames: Vec<_> = (0..4).map(|i| frame(0.0, line(10, i as f64, 0.5), false, 7)).collect();
        let mut oracle = LabelReplay::new(&frames);
        assert_eq!(average_displacement(&mut oracle, &frames).unwrap(), 0.0);
    }

    #[test]
    fn constant_velocity_on_straight_corpus() {
        let frames: Vec<_> = (0..5)
            .map(|i| {
                let v = 4.0 + i as f64;
                frame(v, traj(&(1..=10).map(|k| (v * 0.1 * k as f64, 0.0)).collect::<Vec<_>>()), false, 0)
            })
            .collect();
        let mut cv = ConstantVelocity { h: 10, dt: 0.1 };
        assert!(average_displacement(&mut cv, &frames).unwrap() < 1e-12);
    }

    #[test]
    fn tainted_frames_are_skipped() {
        let frames = vec![frame(1.0, line(10, 0.0, 0.0), true, 0)];
        let mut cv = ConstantVelocity { h: 10, dt: 0.1 };
        assert!(matches!(average_displacement(&mut cv, &frames), Err(PolicyError::EmptyDataset)));
    }

    fn arb_traj() -> impl Strategy<Value = Trajectory> {
        prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 10).prop_map(|v| traj(&v))
    }

    proptest! {
        #[test]
        fn loss_symmetric_and_zero_iff_equal(a in arb_traj(), b in arb_traj()) {
            prop_assert_eq!(loss(&a, &b), loss(&b, &a));
            prop_assert_eq!(loss(&a, &a), 0.0);
            prop_assert_eq!(loss(&a, &b) == 0.0, a == b);
        }
    }
}
