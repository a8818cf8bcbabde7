use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

/// Preview horizon used throughout: one second at 10 Hz.
pub const DEFAULT_HORIZON: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory has no points")]
    Empty,
    #[error("trajectory point {0} is not finite")]
    NonFinite(usize),
    #[error("expected {expected} trajectory points, got {got}")]
    WrongLength { expected: usize, got: usize },
}

/// Future ego waypoints in the ego's local frame; `points[k]` is the pose
/// `k + 1` ticks ahead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct Trajectory {
    points: Vec<Vec2>,
}

impl TryFrom<Vec<Vec2>> for Trajectory {
    type Error = TrajectoryError;

    fn try_from(points: Vec<Vec2>) -> Result<Self, Self::Error> {
        Self::new(points)
    }
}

impl From<Trajectory> for Vec<Vec2> {
    fn from(t: Trajectory) -> Self {
        t.points
    }
}

impl Trajectory {
    pub fn new(points: Vec<Vec2>) -> Result<Self, TrajectoryError> {
        if points.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(TrajectoryError::NonFinite(i));
        }
        Ok(Self { points })
    }

    /// Builds from interleaved `x1, y1, x2, y2, ...` values.
    pub fn from_flat(values: &[f64]) -> Result<Self, TrajectoryError> {
        Self::new(values.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect())
    }

    /// `horizon` copies of the origin: stand still.
    pub fn stationary(horizon: usize) -> Self {
        Self { points: vec![Vec2::ZERO; horizon.max(1)] }
    }

    pub fn horizon(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    /// Waypoint `k` ticks ahead, 1-based.
    pub fn at(&self, k: usize) -> Vec2 {
        self.points[k - 1]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn expect_horizon(self, h: usize) -> Result<Self, TrajectoryError> {
        if self.points.len() == h {
            Ok(self)
        } else {
            Err(TrajectoryError::WrongLength { expected: h, got: self.points.len() })
        }
    }

    /// Reflection across the local x axis.
    pub fn mirrored(&self) -> Self {
        Self { points: self.points.iter().map(|p| Vec2::new(p.x, -p.y)).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_and_flat_round_trip() {
        assert_eq!(Trajectory::new(vec![]), Err(TrajectoryError::Empty));
        assert_eq!(
            Trajectory::new(vec![Vec2::ZERO, Vec2::new(f64::NAN, 0.0)]),
            Err(TrajectoryError::NonFinite(1))
        );
        let t = Trajectory::from_flat(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(2), Vec2::new(3.0, 4.0));
        assert_eq!(t.flat(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(t.clone().expect_horizon(3).is_err());
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<Trajectory>(&json).unwrap(), t);
    }
}
