//! Ego-aligned bird-view raster: lane markings, the route (purple when the
//! next light ahead is red), and fading boxes for past vehicle states.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{to_global, to_local, OrientedBox, Pose2D, Vec2};
use crate::world::map::{LightState, Marking};
use crate::world::route::Route;
use crate::world::WorldState;

pub const RASTER_SIDE: usize = 192;
pub const RASTER_BYTES: usize = RASTER_SIDE * RASTER_SIDE * 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BirdviewError {
    #[error("render needs at least one world state")]
    EmptyHistory,
    #[error("raster must hold {RASTER_BYTES} bytes, got {0}")]
    WrongSize(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub marking_white: [u8; 3],
    pub marking_yellow: [u8; 3],
    pub route_blue: [u8; 3],
    pub route_purple: [u8; 3],
    pub npc_green: [u8; 3],
    pub ego_red: [u8; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            marking_white: [255, 255, 255],
            marking_yellow: [255, 255, 0],
            route_blue: [0, 0, 255],
            route_purple: [160, 32, 240],
            npc_green: [0, 255, 0],
            ego_red: [255, 0, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Pixels per side.
    pub px: usize,
    /// Meters per side.
    pub fov: f64,
    /// Ego position: lateral meters from the left edge, and meters from the
    /// bottom edge.
    pub ego_anchor: (f64, f64),
    pub history_steps: usize,
    /// Ticks between history snapshots.
    pub history_stride: usize,
    pub colors: Palette,
    pub brightness_decay: f64,
    pub route_width_px: usize,
    /// A red light farther ahead than this does not recolor the route.
    pub light_lookahead: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            px: RASTER_SIDE,
            fov: 40.0,
            ego_anchor: (20.0, 8.0),
            history_steps: 4,
            history_stride: 2,
            colors: Palette::default(),
            brightness_decay: 0.75,
            route_width_px: 3,
            light_lookahead: 40.0,
        }
    }
}

impl RenderConfig {
    pub fn scale(&self) -> f64 {
        self.px as f64 / self.fov
    }

    /// Number of consecutive world states `render` looks back over.
    pub fn history_len(&self) -> usize {
        self.history_steps * self.history_stride + 1
    }
}

/// 192×192 RGB, row-major, row 0 at the far (forward) edge.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    data: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RasterImage({} bytes)", self.data.len())
    }
}

impl Default for RasterImage {
    fn default() -> Self {
        Self { data: vec![0; RASTER_BYTES] }
    }
}

impl RasterImage {
    pub fn from_bytes(data: Vec<u8>) -> Result<Self, BirdviewError> {
        if data.len() != RASTER_BYTES {
            return Err(BirdviewError::WrongSize(data.len()));
        }
        Ok(Self { data })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn width(&self) -> usize {
        RASTER_SIDE
    }

    pub fn height(&self) -> usize {
        RASTER_SIDE
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * RASTER_SIDE + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * RASTER_SIDE + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Number of pixels with exactly this color.
    pub fn count(&self, rgb: [u8; 3]) -> usize {
        self.data.chunks_exact(3).filter(|p| *p == rgb).count()
    }

    fn set_signed(&mut self, row: i64, col: i64, rgb: [u8; 3]) {
        if (0..RASTER_SIDE as i64).contains(&row) && (0..RASTER_SIDE as i64).contains(&col) {
            self.set(row as usize, col as usize, rgb);
        }
    }
}

/// Continuous pixel coordinates `(row, col)` of a global point.
pub fn world_to_pixel_f(ego: &Pose2D, p: Vec2, cfg: &RenderConfig) -> (f64, f64) {
    let local = to_local(ego, p);
    let k = cfg.scale();
    let col = (cfg.ego_anchor.0 - local.y) * k;
    let row = (cfg.fov - cfg.ego_anchor.1 - local.x) * k;
    (row, col)
}

/// Pixel of a global point, `None` when off-canvas. Rounds half away from zero.
pub fn world_to_pixel(ego: &Pose2D, p: Vec2, cfg: &RenderConfig) -> Option<(usize, usize)> {
    let (row, col) = world_to_pixel_f(ego, p, cfg);
    let (row, col) = (row.round(), col.round());
    let n = cfg.px as f64;
    ((0.0..n).contains(&row) && (0.0..n).contains(&col)).then_some((row as usize, col as usize))
}

/// Global point at the centre of pixel `(row, col)`.
pub fn pixel_to_world(ego: &Pose2D, row: f64, col: f64, cfg: &RenderConfig) -> Vec2 {
    let k = cfg.scale();
    let local = Vec2::new(cfg.fov - cfg.ego_anchor.1 - row / k, cfg.ego_anchor.0 - col / k);
    to_global(ego, local)
}

fn scale_color(c: [u8; 3], f: f64) -> [u8; 3] {
    c.map(|v| (v as f64 * f).round() as u8)
}

struct Canvas<'a> {
    img: RasterImage,
    ego: Pose2D,
    cfg: &'a RenderConfig,
}

impl Canvas<'_> {
    /// Distance beyond which geometry cannot touch the canvas.
    fn reach(&self) -> f64 {
        self.cfg.fov * std::f64::consts::SQRT_2 + 5.0
    }

    /// Polyline drawn by dense sampling at quarter-pixel steps; `brush` is
    /// the side of the square stamped at each sample.
    fn polyline(&mut self, pts: &[Vec2], brush: usize, rgb: [u8; 3]) {
        let center = self.ego.position();
        let reach = self.reach();
        let half = (brush as i64 - 1) / 2;
        for w in pts.windows(2) {
            let seg_len = w[0].distance(w[1]);
            if w[0].distance(center) > reach + seg_len {
                continue;
            }
            let a = world_to_pixel_f(&self.ego, w[0], self.cfg);
            let b = world_to_pixel_f(&self.ego, w[1], self.cfg);
            let span = (b.0 - a.0).abs().max((b.1 - a.1).abs());
            let n = (span / 0.25).ceil().max(1.0) as usize;
            for i in 0..=n {
                let t = i as f64 / n as f64;
                let r = (a.0 + (b.0 - a.0) * t).round() as i64;
                let c = (a.1 + (b.1 - a.1) * t).round() as i64;
                for dr in -half..=half {
                    for dc in -half..=half {
                        self.img.set_signed(r + dr, c + dc, rgb);
                    }
                }
            }
        }
    }

    /// Fills every pixel whose centre lies inside the box.
    fn fill_box(&mut self, b: &OrientedBox, rgb: [u8; 3]) {
        if b.center.distance(self.ego.position()) > self.reach() + b.half_length {
            return;
        }
        let corners = b.corners().map(|p| world_to_pixel_f(&self.ego, p, self.cfg));
        let n = self.cfg.px as i64;
        let r0 = (corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min).floor() as i64).max(0);
        let r1 = (corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max).ceil() as i64).min(n - 1);
        let c0 = (corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min).floor() as i64).max(0);
        let c1 = (corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max).ceil() as i64).min(n - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                if b.contains(pixel_to_world(&self.ego, r as f64, c as f64, self.cfg)) {
                    self.img.set(r as usize, c as usize, rgb);
                }
            }
        }
    }
}

/// Whether the next stop line on `route` within the lookahead is red.
pub fn route_light_red(state: &WorldState, route: &Route, cfg: &RenderConfig) -> bool {
    let front = state.ego.route_progress + state.ego.half_length;
    route
        .stops()
        .iter()
        .find(|st| st.s >= front)
        .is_some_and(|st| st.s - front <= cfg.light_lookahead && state.light_states[st.light] == LightState::Red)
}

/// Renders the current (last) state of `history` with the ego's own route.
pub fn render(history: &[WorldState], cfg: &RenderConfig) -> Result<RasterImage, BirdviewError> {
    let current = history.last().ok_or(BirdviewError::EmptyHistory)?;
    render_with_route(history, &current.ego.route, cfg)
}

/// Renders `history` (oldest first, consecutive ticks) as seen from the
/// ego pose of its last element.
pub fn render_with_route(history: &[WorldState], route: &Route, cfg: &RenderConfig) -> Result<RasterImage, BirdviewError> {
    let current = history.last().ok_or(BirdviewError::EmptyHistory)?;
    let mut canvas = Canvas { img: RasterImage::default(), ego: current.ego.pose, cfg };
    let pal = cfg.colors;

    for lane in current.map.lanes() {
        let half = lane.width / 2.0;
        for (marking, offset) in [(lane.marking_left, half), (lane.marking_right, -half)] {
            let rgb = match marking {
                Marking::White => pal.marking_white,
                Marking::Yellow => pal.marking_yellow,
                Marking::None => continue,
            };
            canvas.polyline(&lane.centerline.offset_points(offset), 1, rgb);
        }
    }

    let route_rgb = if route_light_red(current, route, cfg) { pal.route_purple } else { pal.route_blue };
    canvas.polyline(route.path().points(), cfg.route_width_px, route_rgb);

    // history step k (k snapshots back) is drawn before step k − 1
    let last = history.len() - 1;
    let steps: Vec<(usize, &WorldState)> = (0..=cfg.history_steps)
        .rev()
        .filter_map(|k| last.checked_sub(k * cfg.history_stride).map(|i| (k, &history[i])))
        .collect();
    for &(k, state) in &steps {
        let rgb = scale_color(pal.npc_green, cfg.brightness_decay.powi(k as i32));
        for npc in &state.npcs {
            canvas.fill_box(&npc.bbox(), rgb);
        }
    }
    for &(k, state) in &steps {
        let rgb = scale_color(pal.ego_red, cfg.brightness_decay.powi(k as i32));
        canvas.fill_box(&state.ego.bbox(), rgb);
    }
    Ok(canvas.img)
}

/// Rolling buffer of the most recent world states needed for rendering.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    states: VecDeque<WorldState>,
    capacity: usize,
}

impl HistoryBuffer {
    pub fn new(cfg: &RenderConfig) -> Self {
        let capacity = cfg.history_len();
        Self { states: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, state: WorldState) {
        if self.states.len() == self.capacity {
            self.states.pop_front();
        }
        self.states.push_back(state);
    }

    pub fn clear(&mut self) {
        self.states.clear();
    }

    pub fn states(&mut self) -> &[WorldState] {
        self.states.make_contiguous()
    }

    pub fn render(&mut self, cfg: &RenderConfig) -> Result<RasterImage, BirdviewError> {
        render(self.states.make_contiguous(), cfg)
    }
}
