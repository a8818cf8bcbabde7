//! Linear ridge-regression trajectory predictor on block-pooled rasters: a
//! closed-form, deterministic stand-in for a learned network.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{PolicyError, RasterPolicy};
use crate::birdview::{RasterImage, RASTER_SIDE};
use crate::expert::DatasetFrame;
use crate::trajectory::Trajectory;

pub const POOL: usize = 8;
pub const POOLED_SIDE: usize = RASTER_SIDE / POOL;
/// Pooled colors plus the speed entry.
pub const FEATURE_DIM: usize = POOLED_SIDE * POOLED_SIDE * 3 + 1;
/// Features plus the bias entry.
pub const INPUT_DIM: usize = FEATURE_DIM + 1;
pub const DEFAULT_L2: f64 = 1e-3;

/// 8×8 block means scaled to [0, 1] (block row, block column, channel
/// order), then the speed, then a constant 1.
pub fn downsample_features(raster: &RasterImage, ego_speed: f64) -> Vec<f64> {
    let bytes = raster.as_bytes();
    let mut sums = vec![0u32; POOLED_SIDE * POOLED_SIDE * 3];
    for row in 0..RASTER_SIDE {
        let br = row / POOL;
        for col in 0..RASTER_SIDE {
            let base = (br * POOLED_SIDE + col / POOL) * 3;
            let px = (row * RASTER_SIDE + col) * 3;
            for ch in 0..3 {
                sums[base + ch] += bytes[px + ch] as u32;
            }
        }
    }
    let scale = 1.0 / (255.0 * (POOL * POOL) as f64);
    let mut f: Vec<f64> = sums.into_iter().map(|s| s as f64 * scale).collect();
    f.push(ego_speed);
    f.push(1.0);
    f
}

/// Minimizes `Σ‖x·W − y‖²/N + l2‖W‖²` through the normal equations
/// `(XᵀX/N + l2·I) W = XᵀY/N`.
pub fn fit_ridge(xs: &[Vec<f64>], ys: &[Vec<f64>], l2: f64) -> Result<DMatrix<f64>, PolicyError> {
    let n = xs.len();
    if n == 0 || ys.len() != n {
        return Err(PolicyError::EmptyDataset);
    }
    let d = xs[0].len();
    let k = ys[0].len();
    let x = DMatrix::from_row_iterator(n, d, xs.iter().flat_map(|r| r.iter().copied()));
    let y = DMatrix::from_row_iterator(n, k, ys.iter().flat_map(|r| r.iter().copied()));
    let xt = x.transpose();
    let inv_n = 1.0 / n as f64;
    let mut a = &xt * &x * inv_n;
    for i in 0..d {
        a[(i, i)] += l2;
    }
    let b = &xt * &y * inv_n;
    let chol = a.cholesky().ok_or(PolicyError::Singular)?;
    Ok(chol.solve(&b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub h: usize,
    /// Row-major `INPUT_DIM × 2H`.
    pub weights: Vec<f64>,
}

impl ToyPolicy {
    pub fn new(h: usize, weights: Vec<f64>) -> Result<Self, PolicyError> {
        if weights.len() != INPUT_DIM * 2 * h {
            return Err(PolicyError::Format(format!("expected {} weights, got {}", INPUT_DIM * 2 * h, weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(PolicyError::Format("non-finite weight".into()));
        }
        Ok(Self { h, weights })
    }

    pub fn predict_features(&self, f: &[f64]) -> Trajectory {
        let k = 2 * self.h;
        let mut out = vec![0.0; k];
        for (fi, row) in f.iter().zip(self.weights.chunks_exact(k)) {
            if *fi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += fi * w;
                }
            }
        }
        Trajectory::from_flat(&out).expect("finite weights give finite outputs")
    }

    pub fn predict(&self, raster: &RasterImage, ego_speed: f64) -> Trajectory {
        self.predict_features(&downsample_features(raster, ego_speed))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        let json = serde_json::to_string(self).map_err(|e| PolicyError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let raw: ToyPolicy =
            serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| PolicyError::Format(e.to_string()))?;
        Self::new(raw.h, raw.weights)
    }
}

impl RasterPolicy for ToyPolicy {
    fn horizon(&self) -> usize {
        self.h
    }

    fn plan(&mut self, raster: &RasterImage, ego_speed: f64) -> Result<Trajectory, PolicyError> {
        Ok(self.predict(raster, ego_speed))
    }
}

/// Ridge fit on the untainted frames. Examples are sorted and exact
/// duplicates dropped first, so the weights do not depend on frame order or
/// repetition.
pub fn train_toy<'a>(frames: impl IntoIterator<Item = &'a DatasetFrame>, l2: f64) -> Result<ToyPolicy, PolicyError> {
    let mut examples: Vec<(Vec<f64>, Vec<f64>)> = frames
        .into_iter()
        .filter(|f| !f.noise_tainted)
        .map(|f| (downsample_features(&f.raster, f.ego_speed), f.label.flat()))
        .collect();
    let h = examples.first().ok_or(PolicyError::EmptyDataset)?.1.len() / 2;
    if examples.iter().any(|(_, y)| y.len() != 2 * h) {
        return Err(PolicyError::Horizon { expected: h, got: examples.iter().map(|(_, y)| y.len() / 2).find(|&g| g != h).unwrap_or(h) });
    }
    let key = |(x, y): &(Vec<f64>, Vec<f64>)| -> Vec<u64> { x.iter().chain(y).map(|v| v.to_bits()).collect() };
    examples.sort_by_cached_key(key);
    examples.dedup();
    let (xs, ys): (Vec<_>, Vec<_>) = examples.into_iter().unzip();
    let w = fit_ridge(&xs, &ys, l2)?;
    // nalgebra is column-major; store row-major
    let weights = w.transpose().as_slice().to_vec();
    ToyPolicy::new(h, weights)
}
