//! The model-based expert, periodic control-noise injection, and 10 Hz
//! dataset recording with future-trajectory labels.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::birdview::{BirdviewError, HistoryBuffer, RasterImage, RenderConfig, RASTER_BYTES};
use crate::geometry::{to_local, Pose2D};
use crate::safety::{safe_control, SafetyParams};
use crate::tracking::{Tracker, TrackerConfig};
use crate::trajectory::{Trajectory, DEFAULT_HORIZON};
use crate::world::behavior::{longitudinal_accel, perceive};
use crate::world::{mix, roaming_route, step_world, Control, ControlLimits, RoadMap, WorldConfig, WorldError, WorldState};

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("ego is {0:.2} m from its route")]
    OffRoute(f64),
    #[error("need {needed} future poses, have {available}")]
    InsufficientFuture { needed: usize, available: usize },
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Render(#[from] BirdviewError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset format: {0}")]
    Format(String),
}

/// Lateral offset beyond which the expert refuses to plan.
pub const MAX_ROUTE_OFFSET: f64 = 5.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertOptions {
    /// Plan as if the road were empty (lights are still obeyed). Used to
    /// build a deliberately unsafe planner.
    pub ignore_vehicles: bool,
}

/// H future points along the ego's route, spaced by a rollout of the same
/// longitudinal law the scripted vehicles use, in the ego frame.
pub fn expert_plan(world: &WorldState, h: usize, opts: &ExpertOptions) -> Result<Trajectory, ExpertError> {
    let ego = &world.ego;
    let proj = ego.route_projection();
    if proj.offset.abs() >= MAX_ROUTE_OFFSET {
        return Err(ExpertError::OffRoute(proj.offset.abs()));
    }
    let cfg = &world.config;
    let dt = cfg.dt;
    let mut obstacles = if opts.ignore_vehicles { Vec::new() } else { perceive(world, ego) };
    let path = ego.route.path();
    let (mut s, mut v) = (proj.arclength, ego.speed);
    let mut points = Vec::with_capacity(h);
    for _ in 0..h {
        let a = longitudinal_accel(
            &ego.route,
            s,
            v,
            ego.half_length,
            &obstacles,
            &world.light_states,
            &cfg.driving,
            cfg.limits.accel_max,
        );
        v = (v + a * dt).max(0.0);
        s += v * dt;
        for ob in &mut obstacles {
            ob.s += ob.speed.max(0.0) * dt;
        }
        points.push(to_local(&ego.pose, path.point_at(s)));
    }
    Ok(Trajectory::new(points).expect("route points are finite"))
}

/// Ego-frame label from the next H global poses.
pub fn make_label(future: &[Pose2D], current: &Pose2D, h: usize) -> Result<Trajectory, ExpertError> {
    if future.len() < h {
        return Err(ExpertError::InsufficientFuture { needed: h, available: future.len() });
    }
    let points = future[..h].iter().map(|p| to_local(current, p.position())).collect();
    Trajectory::new(points).map_err(|e| ExpertError::Format(e.to_string()))
}

/// Periodic control noise. Window `k` (k ≥ 1) covers
/// `[k·period, k·period + duration)`; the start of the run is left clean so
/// the expert settles first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSchedule {
    pub period: f64,
    pub duration: f64,
    pub steer_amplitude: f64,
    pub accel_amplitude: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { period: 8.0, duration: 1.0, steer_amplitude: 0.25, accel_amplitude: 1.0 }
    }
}

/// Slack for float error in `tick · dt` window arithmetic.
const WINDOW_EPS: f64 = 1e-9;

impl NoiseSchedule {
    /// Schedule that never perturbs.
    pub fn disabled() -> Self {
        Self { steer_amplitude: 0.0, accel_amplitude: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ExpertError> {
        if !(self.duration > 0.0 && self.duration < self.period) {
            return Err(ExpertError::InvalidSchedule(format!(
                "need 0 < duration < period, got {} and {}",
                self.duration, self.period
            )));
        }
        if !(self.steer_amplitude >= 0.0 && self.accel_amplitude >= 0.0) {
            return Err(ExpertError::InvalidSchedule("amplitudes must be non-negative".into()));
        }
        Ok(())
    }

    pub fn is_disabled(&self) -> bool {
        self.steer_amplitude == 0.0 && self.accel_amplitude == 0.0
    }

    /// Index of the noise window containing `t`, if any.
    pub fn window(&self, t: f64) -> Option<u64> {
        if self.is_disabled() {
            return None;
        }
        let k = ((t + WINDOW_EPS) / self.period).floor();
        let phase = t - k * self.period;
        (k >= 1.0 && phase < self.duration - WINDOW_EPS).then_some(k as u64)
    }

    pub fn active(&self, t: f64) -> bool {
        self.window(t).is_some()
    }
}

/// Seeded source of per-window constant control offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseGenerator {
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

impl NoiseGenerator {
    pub fn new(schedule: NoiseSchedule, seed: u64) -> Self {
        Self { schedule, seed }
    }

    /// Offset `(accel, steer)` of window `k`.
    pub fn offset(&self, k: u64) -> Control {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(self.seed ^ 0x4e_4f49_5345) ^ k));
        let s = &self.schedule;
        let accel = s.accel_amplitude * rng.random_range(-1.0..=1.0);
        let steer = s.steer_amplitude * rng.random_range(-1.0..=1.0);
        Control { accel, steer }
    }

    /// Adds the window offset when noise is active at `t`, then clamps.
    pub fn perturb(&self, u: Control, t: f64, limits: &ControlLimits) -> (Control, bool) {
        match self.schedule.window(t) {
            Some(k) => {
                let o = self.offset(k);
                (limits.clamp(Control { accel: u.accel + o.accel, steer: u.steer + o.steer }), true)
            }
            None => (u, false),
        }
    }
}

/// One recorded tick.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrame {
    pub raster: RasterImage,
    pub ego_speed: f64,
    pub label: Trajectory,
    pub t: f64,
    pub noise_tainted: bool,
}

impl DatasetFrame {
    pub fn record_bytes(h: usize) -> usize {
        RASTER_BYTES + 8 + 16 * h + 8 + 1
    }

    fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(self.raster.as_bytes())?;
        out.write_all(&self.ego_speed.to_le_bytes())?;
        for v in self.label.flat() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.t.to_le_bytes())?;
        out.write_all(&[self.noise_tainted as u8])
    }

    fn parse(rec: &[u8], h: usize) -> Result<Self, ExpertError> {
        let f64_at = |i: usize| f64::from_le_bytes(rec[i..i + 8].try_into().expect("8-byte slice"));
        let raster = RasterImage::from_bytes(rec[..RASTER_BYTES].to_vec())?;
        let mut at = RASTER_BYTES;
        let ego_speed = f64_at(at);
        at += 8;
        let flat: Vec<f64> = (0..2 * h).map(|i| f64_at(at + 8 * i)).collect();
        at += 16 * h;
        let label = Trajectory::from_flat(&flat).map_err(|e| ExpertError::Format(e.to_string()))?;
        let t = f64_at(at);
        let noise_tainted = match rec[at + 8] {
            0 => false,
            1 => true,
            b => return Err(ExpertError::Format(format!("bad taint flag {b}"))),
        };
        Ok(Self { raster, ego_speed, label, t, noise_tainted })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    /// Frames with a complete label (all kept in `frames.bin`).
    pub recorded: usize,
    pub tainted: usize,
    pub exported: usize,
    /// Tail ticks without H future poses.
    pub dropped_tail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub map: String,
    pub seed: u64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub h: usize,
    pub dt: f64,
    /// Collections in the order their frames appear.
    pub sources: Vec<DataSource>,
    pub schedule: NoiseSchedule,
    pub counts: DatasetCounts,
    pub record_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub frames: Vec<DatasetFrame>,
}

impl Dataset {
    /// Frames allowed into training and open-loop evaluation.
    pub fn exported(&self) -> impl Iterator<Item = &DatasetFrame> {
        self.frames.iter().filter(|f| !f.noise_tainted)
    }

    /// Appends `other` (same H and dt) after `self`.
    pub fn concat(mut self, other: Dataset) -> Result<Dataset, ExpertError> {
        if self.meta.h != other.meta.h || self.meta.dt != other.meta.dt {
            return Err(ExpertError::Format("cannot concatenate datasets with different H or dt".into()));
        }
        self.meta.sources.extend(other.meta.sources);
        let (a, b) = (self.meta.counts, other.meta.counts);
        self.meta.counts = DatasetCounts {
            recorded: a.recorded + b.recorded,
            tainted: a.tainted + b.tainted,
            exported: a.exported + b.exported,
            dropped_tail: a.dropped_tail + b.dropped_tail,
        };
        self.frames.extend(other.frames);
        Ok(self)
    }

    /// Writes `meta.json` and `frames.bin` into `dir` (created if missing).
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), ExpertError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let meta = serde_json::to_string_pretty(&self.meta).map_err(|e| ExpertError::Format(e.to_string()))?;
        fs::write(dir.join("meta.json"), meta)?;
        let mut out = BufWriter::new(fs::File::create(dir.join("frames.bin"))?);
        for f in &self.frames {
            f.write_to(&mut out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Dataset, ExpertError> {
        let dir = dir.as_ref();
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)
            .map_err(|e| ExpertError::Format(e.to_string()))?;
        let size = DatasetFrame::record_bytes(meta.h);
        if meta.record_bytes != size {
            return Err(ExpertError::Format(format!("record size {} does not match H = {}", meta.record_bytes, meta.h)));
        }
        let mut input = BufReader::new(fs::File::open(dir.join("frames.bin"))?);
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() % size != 0 {
            return Err(ExpertError::Format(format!("frames.bin holds {} bytes, not a multiple of {size}", bytes.len())));
        }
        let frames = bytes.chunks_exact(size).map(|rec| DatasetFrame::parse(rec, meta.h)).collect::<Result<Vec<_>, _>>()?;
        if frames.len() != meta.counts.recorded {
            return Err(ExpertError::Format(format!("meta lists {} frames, file has {}", meta.counts.recorded, frames.len())));
        }
        Ok(Dataset { meta, frames })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub h: usize,
    pub npcs: usize,
    pub schedule: NoiseSchedule,
    pub tracker: TrackerConfig,
    /// Filter the (noisy) expert command through the safety controller.
    pub safety: Option<SafetyParams>,
    pub render: RenderConfig,
    pub world: WorldConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            h: DEFAULT_HORIZON,
            npcs: 6,
            schedule: NoiseSchedule::default(),
            tracker: TrackerConfig::default(),
            safety: Some(SafetyParams::default()),
            render: RenderConfig::default(),
            world: WorldConfig::default(),
        }
    }
}

/// Per-tick trace of a collection run, kept for label audits.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectTrace {
    pub poses: Vec<Pose2D>,
    pub noise_active: Vec<bool>,
}

/// Initial world of a collection run: roaming ego at a seeded spawn point
/// plus `npcs` roaming vehicles.
pub fn initial_world(map: Arc<RoadMap>, seed: u64, cfg: &CollectConfig) -> Result<WorldState, ExpertError> {
    let world_cfg = Arc::new(cfg.world.clone());
    let spawns = map.spawn_points();
    if spawns.is_empty() {
        return Err(WorldError::NoSpawn { wanted: 1, placed: 0 }.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x45_474f));
    let sp = &spawns[rng.random_range(0..spawns.len())];
    let lane = map.lane_index(&sp.lane)?;
    let ego = roaming_route(&map, lane, sp.arclength, 0, seed, &world_cfg)?;
    let mut world = WorldState::new(map, world_cfg, ego, seed);
    world.spawn_npcs(cfg.npcs)?;
    Ok(world)
}

/// Runs the expert with noise injection for `duration` seconds and records
/// one frame per tick. Frames whose own tick or any label tick lies in a
/// noise window are flagged tainted; the last H ticks have no label and are
/// dropped.
pub fn collect(map: Arc<RoadMap>, map_name: &str, seed: u64, duration: f64, cfg: &CollectConfig) -> Result<(Dataset, CollectTrace), ExpertError> {
    collect_with(map, map_name, seed, duration, cfg, |_| {})
}

/// `collect` with a callback observing every world state.
pub fn collect_with(
    map: Arc<RoadMap>,
    map_name: &str,
    seed: u64,
    duration: f64,
    cfg: &CollectConfig,
    mut observe: impl FnMut(&WorldState),
) -> Result<(Dataset, CollectTrace), ExpertError> {
    cfg.schedule.validate()?;
    let h = cfg.h;
    let dt = cfg.world.dt;
    let ticks = (duration / dt).round() as usize;
    if ticks <= h {
        return Err(ExpertError::InsufficientFuture { needed: h + 1, available: ticks });
    }
    let limits = cfg.world.limits;
    let noise = NoiseGenerator::new(cfg.schedule, seed);
    let mut tracker = Tracker::new(cfg.tracker, limits);
    let mut history = HistoryBuffer::new(&cfg.render);
    let mut world = initial_world(map, seed, cfg)?;

    let mut rasters = Vec::with_capacity(ticks);
    let mut speeds = Vec::with_capacity(ticks);
    let mut poses = Vec::with_capacity(ticks);
    let mut noise_active = Vec::with_capacity(ticks);
    for tick in 0..ticks {
        observe(&world);
        history.push(world.clone());
        rasters.push(history.render(&cfg.render)?);
        speeds.push(world.ego.speed);
        poses.push(world.ego.pose);
        let t = world.time();
        noise_active.push(cfg.schedule.active(t));
        if tick + 1 == ticks {
            break;
        }
        let u = match expert_plan(&world, h, &ExpertOptions::default()) {
            Ok(plan) => tracker.track(&plan, world.ego.speed),
            Err(_) => tracker.brake(),
        };
        let (u, _) = noise.perturb(u, t, &limits);
        let u = match &cfg.safety {
            Some(p) => safe_control(&world, u, p).control,
            None => u,
        };
        world = step_world(&world, u);
    }

    let mut frames = Vec::with_capacity(ticks - h);
    for (i, raster) in rasters.into_iter().enumerate().take(ticks - h) {
        let label = make_label(&poses[i + 1..], &poses[i], h)?;
        let noise_tainted = noise_active[i..=i + h].iter().any(|&a| a);
        frames.push(DatasetFrame { raster, ego_speed: speeds[i], label, t: i as f64 * dt, noise_tainted });
    }
    let tainted = frames.iter().filter(|f| f.noise_tainted).count();
    let counts = DatasetCounts { recorded: frames.len(), tainted, exported: frames.len() - tainted, dropped_tail: h };
    let meta = DatasetMeta {
        h,
        dt,
        sources: vec![DataSource { map: map_name.to_string(), seed, duration }],
        schedule: cfg.schedule,
        counts,
        record_bytes: DatasetFrame::record_bytes(h),
    };
    Ok((Dataset { meta, frames }, CollectTrace { poses, noise_active }))
}
