//! Deterministic 2D urban driving: a kinematic traffic world, bird-view
//! rasters, an expert data collector, PID trajectory tracking, a safe-set
//! QP safety filter, learned-policy plumbing and closed-loop evaluation.

pub mod birdview;
pub mod evaluation;
pub mod expert;
pub mod geometry;
pub mod policy;
pub mod safety;
pub mod tracking;
pub mod trajectory;
pub mod world;
