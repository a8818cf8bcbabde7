//! Closed-loop episodes (render → plan → track → filter → step), infraction
//! detection and the aggregate metrics reported for a batch of episodes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::birdview::{BirdviewError, HistoryBuffer, RenderConfig};
use crate::geometry::boxes_overlap;
use crate::policy::Planner;
use crate::safety::{safe_control, SafetyParams};
use crate::tracking::{Tracker, TrackerConfig};
use crate::trajectory::{Trajectory, DEFAULT_HORIZON};
use crate::world::{maps, plan_route, step_world, Control, LightState, RoadMap, VehicleState, WorldConfig, WorldError, WorldState};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Render(#[from] BirdviewError),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("no episodes to aggregate")]
    NoEpisodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePoint {
    pub lane: String,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub start: LanePoint,
    pub goal: LanePoint,
}

/// A family of episodes on one map. Episode `i` drives `routes[i % len]`
/// with world seed `seed + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    /// A bundled map name (`intersection`, `roundabout`) or a JSON path,
    /// relative to the scenario file.
    pub map: String,
    pub seed: u64,
    pub routes: Vec<RouteSpec>,
    pub npcs: usize,
    pub time_limit: f64,
    /// Success once the remaining route is at most this long.
    pub success_window: f64,
    /// Initial lateral displacement of the ego from its route (left positive).
    pub start_offset: f64,
    /// Initial ego speed.
    pub start_speed: f64,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: String::new(),
            map: "intersection".into(),
            seed: 0,
            routes: Vec::new(),
            npcs: 0,
            time_limit: 120.0,
            success_window: 10.0,
            start_offset: 0.0,
            start_speed: 0.0,
            base_dir: None,
        }
    }
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Self, EvalError> {
        serde_json::from_str(json).map_err(|e| EvalError::Scenario(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let mut s = Self::from_json(&std::fs::read_to_string(path)?)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    /// Scenario files shipped with the crate.
    pub fn bundled(name: &str) -> Option<Self> {
        let json = match name {
            "intersection" => include_str!("../scenarios/intersection.json"),
            "roundabout" => include_str!("../scenarios/roundabout.json"),
            "recovery" => include_str!("../scenarios/recovery.json"),
            _ => return None,
        };
        Some(Self::from_json(json).expect("bundled scenarios parse"))
    }

    pub fn load_map(&self) -> Result<RoadMap, EvalError> {
        if let Some(json) = maps::bundled_json(&self.map) {
            return Ok(RoadMap::from_json(json)?);
        }
        let path = match &self.base_dir {
            Some(dir) => dir.join(&self.map),
            None => PathBuf::from(&self.map),
        };
        Ok(RoadMap::load(path)?)
    }

    pub fn episode_seed(&self, episode: usize) -> u64 {
        self.seed.wrapping_add(episode as u64)
    }

    /// Initial world of episode `episode`.
    pub fn episode_world(&self, map: Arc<RoadMap>, episode: usize, cfg: &WorldConfig) -> Result<WorldState, EvalError> {
        if self.routes.is_empty() {
            return Err(EvalError::Scenario(format!("scenario {:?} has no routes", self.name)));
        }
        let spec = &self.routes[episode % self.routes.len()];
        let start = (map.lane_index(&spec.start.lane)?, spec.start.s);
        let goal = (map.lane_index(&spec.goal.lane)?, spec.goal.s);
        let route = Arc::new(plan_route(&map, start, goal)?);
        let cfg = Arc::new(cfg.clone());
        let mut ego = VehicleState::on_route(0, route, 0.0, self.start_speed, &cfg);
        let normal = ego.pose.heading().perp();
        ego.pose.x += normal.x * self.start_offset;
        ego.pose.y += normal.y * self.start_offset;
        let mut world = WorldState::new(map, cfg, ego, self.episode_seed(episode));
        world.spawn_npcs(self.npcs)?;
        Ok(world)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfractionConfig {
    /// Allowed lateral excess beyond the lane half-width.
    pub margin: f64,
    /// Consecutive ticks beyond the margin before out-of-lane fires.
    pub debounce: u32,
    /// Clear ticks before an event type can fire again.
    pub rearm: u32,
}

impl Default for InfractionConfig {
    fn default() -> Self {
        Self { margin: 1.0, debounce: 5, rearm: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Collision,
    OutOfLane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Channel {
    /// Fired and not yet re-armed.
    blocked: bool,
    streak: u32,
    clear: u32,
}

impl Channel {
    /// Feeds one tick of the raw condition; true when an event fires.
    fn update(&mut self, raw: bool, debounce: u32, rearm: u32) -> bool {
        if raw {
            self.clear = 0;
            self.streak += 1;
            if !self.blocked && self.streak >= debounce {
                self.blocked = true;
                return true;
            }
        } else {
            self.streak = 0;
            self.clear += 1;
            if self.clear >= rearm {
                self.blocked = false;
            }
        }
        false
    }
}

/// Stateful per-episode collision and out-of-lane detector.
#[derive(Debug, Clone, PartialEq)]
pub struct InfractionDetector {
    pub config: InfractionConfig,
    collision: Channel,
    out_of_lane: Channel,
}

impl InfractionDetector {
    pub fn new(config: InfractionConfig) -> Self {
        Self { config, collision: Channel::default(), out_of_lane: Channel::default() }
    }

    /// Raw (undebounced) conditions for a world state.
    pub fn conditions(&self, world: &WorldState) -> (bool, bool) {
        let ego_box = world.ego.bbox();
        let collision = world.npcs.iter().any(|n| boxes_overlap(&ego_box, &n.bbox()));
        let proj = world.ego.route_projection();
        let limit = world.ego.route.half_width_at(proj.arclength) + self.config.margin;
        (collision, proj.offset.abs() > limit)
    }

    /// Feeds raw conditions and returns the events firing this tick.
    pub fn update_raw(&mut self, tick: u64, collision: bool, out_of_lane: bool) -> Vec<Event> {
        let c = self.config;
        let mut out = Vec::new();
        if self.collision.update(collision, 1, c.rearm) {
            out.push(Event { tick, kind: EventKind::Collision });
        }
        if self.out_of_lane.update(out_of_lane, c.debounce, c.rearm) {
            out.push(Event { tick, kind: EventKind::OutOfLane });
        }
        out
    }

    pub fn update(&mut self, world: &WorldState) -> Vec<Event> {
        let (c, o) = self.conditions(world);
        self.update_raw(world.tick, c, o)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    OutOfLane,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    /// Digest of the world snapshot the tick started from.
    pub world_digest: String,
    /// `None` when the planner failed and the ego braked.
    pub plan: Option<Trajectory>,
    pub raw: Control,
    pub filtered: Control,
    pub phi_max: f64,
    pub filter_active: bool,
    pub infeasible: bool,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scenario: String,
    pub episode: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub ticks: u64,
    /// Meters.
    pub distance_driven: f64,
    pub records: Vec<TickRecord>,
}

impl EpisodeLog {
    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.records.iter().flat_map(|r| r.events.iter())
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events().filter(|e| e.kind == kind).count()
    }

    /// Hash over every logged record.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.records).expect("records serialize"));
        h.update(serde_json::to_vec(&self.outcome).expect("outcome serializes"));
        hex(&h.finalize())
    }

    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            episode: self.episode,
            seed: self.seed,
            outcome: self.outcome,
            ticks: self.ticks,
            distance_driven: self.distance_driven,
            collisions: self.count(EventKind::Collision),
            out_of_lane: self.count(EventKind::OutOfLane),
            filter_active_ticks: self.records.iter().filter(|r| r.filter_active).count(),
            infeasible_ticks: self.records.iter().filter(|r| r.infeasible).count(),
            planner_failures: self.records.iter().filter(|r| r.plan.is_none()).count(),
            digest: self.digest(),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the dynamic state of a world snapshot.
pub fn world_digest(world: &WorldState) -> String {
    let mut h = Sha256::new();
    h.update(world.tick.to_le_bytes());
    for v in world.vehicles() {
        h.update(v.id.to_le_bytes());
        for x in [v.pose.x, v.pose.y, v.pose.yaw, v.speed, v.route_progress, v.route.length()] {
            h.update(x.to_le_bytes());
        }
    }
    for l in &world.light_states {
        h.update([match l {
            LightState::Green => 0u8,
            LightState::Yellow => 1,
            LightState::Red => 2,
        }]);
    }
    hex(&h.finalize())
}

/// Everything tunable in a closed-loop evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub h: usize,
    pub tracker: TrackerConfig,
    pub safety: SafetyParams,
    pub world: WorldConfig,
    pub render: RenderConfig,
    pub infractions: InfractionConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            h: DEFAULT_HORIZON,
            tracker: TrackerConfig::default(),
            safety: SafetyParams::default(),
            world: WorldConfig::default(),
            render: RenderConfig::default(),
            infractions: InfractionConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| EvalError::Scenario(e.to_string()))
    }
}

/// Runs one episode to its terminal condition.
pub fn run_episode(
    scenario: &Scenario,
    map: Arc<RoadMap>,
    episode: usize,
    planner: &mut dyn Planner,
    cfg: &EvalConfig,
    safety_on: bool,
) -> Result<EpisodeLog, EvalError> {
    let mut world = scenario.episode_world(map, episode, &cfg.world)?;
    let seed = scenario.episode_seed(episode);
    planner.reset(seed);
    let mut tracker = Tracker::new(cfg.tracker, cfg.world.limits);
    let mut history = HistoryBuffer::new(&cfg.render);
    let mut detector = InfractionDetector::new(cfg.infractions);
    let max_ticks = (scenario.time_limit / cfg.world.dt).round() as u64;
    let mut records = Vec::new();
    let mut distance = 0.0;
    let outcome = loop {
        let world_digest = world_digest(&world);
        history.push(world.clone());
        let raster = if planner.needs_raster() { Some(history.render(&cfg.render)?) } else { None };
        let plan = planner.plan(&world, raster.as_ref()).ok();
        let raw = match &plan {
            Some(t) => tracker.track(t, world.ego.speed),
            None => tracker.brake(),
        };
        let filter = safe_control(&world, raw, &cfg.safety);
        let (filtered, filter_active, infeasible) =
            if safety_on { (filter.control, filter.active, filter.infeasible) } else { (raw, false, false) };
        let tick = world.tick;
        let next = step_world(&world, filtered);
        distance += next.ego.pose.position().distance(world.ego.pose.position());
        world = next;
        let events = detector.update(&world);
        let done = if events.iter().any(|e| e.kind == EventKind::Collision) {
            Some(Outcome::Collision)
        } else if events.iter().any(|e| e.kind == EventKind::OutOfLane) {
            Some(Outcome::OutOfLane)
        } else if world.ego.remaining_route() <= scenario.success_window {
            Some(Outcome::Success)
        } else if world.tick >= max_ticks {
            Some(Outcome::Timeout)
        } else {
            None
        };
        records.push(TickRecord { tick, world_digest, plan, raw, filtered, phi_max: filter.phi_max, filter_active, infeasible, events });
        if let Some(o) = done {
            break o;
        }
    };
    Ok(EpisodeLog {
        scenario: scenario.name.clone(),
        episode,
        seed,
        outcome,
        ticks: world.tick,
        distance_driven: distance,
        records,
    })
}

/// Runs episodes `0..episodes` in order.
pub fn run_suite(
    scenario: &Scenario,
    planner: &mut dyn Planner,
    cfg: &EvalConfig,
    safety_on: bool,
    episodes: usize,
) -> Result<Vec<EpisodeLog>, EvalError> {
    let map = Arc::new(scenario.load_map()?);
    (0..episodes).map(|i| run_episode(scenario, map.clone(), i, planner, cfg, safety_on)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub ticks: u64,
    pub distance_driven: f64,
    pub collisions: usize,
    pub out_of_lane: usize,
    pub filter_active_ticks: usize,
    pub infeasible_ticks: usize,
    pub planner_failures: usize,
    pub digest: String,
}

pub fn success_rate(episodes: &[EpisodeSummary]) -> Result<f64, EvalError> {
    if episodes.is_empty() {
        return Err(EvalError::NoEpisodes);
    }
    let ok = episodes.iter().filter(|e| e.outcome == Outcome::Success).count();
    Ok(ok as f64 / episodes.len() as f64)
}

/// Kilometers driven per event; `NoInfraction` when nothing happened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KmPerEvent {
    Km(f64),
    NoInfraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfractionDistance {
    pub collision: KmPerEvent,
    pub out_of_lane: KmPerEvent,
}

pub fn infraction_distance(episodes: &[EpisodeSummary]) -> Result<InfractionDistance, EvalError> {
    if episodes.is_empty() {
        return Err(EvalError::NoEpisodes);
    }
    let km: f64 = episodes.iter().map(|e| e.distance_driven).sum::<f64>() / 1000.0;
    let per = |n: usize| if n == 0 { KmPerEvent::NoInfraction } else { KmPerEvent::Km(km / n as f64) };
    Ok(InfractionDistance {
        collision: per(episodes.iter().map(|e| e.collisions).sum()),
        out_of_lane: per(episodes.iter().map(|e| e.out_of_lane).sum()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub policy: String,
    pub safety: bool,
    pub success_rate: f64,
    pub collisions: usize,
    pub out_of_lane: usize,
    pub distance_km: f64,
    pub infraction_distance: InfractionDistance,
    pub episodes: Vec<EpisodeSummary>,
}

impl Report {
    pub fn new(scenario: &str, policy: &str, safety: bool, logs: &[EpisodeLog]) -> Result<Self, EvalError> {
        let episodes: Vec<EpisodeSummary> = logs.iter().map(EpisodeLog::summary).collect();
        Ok(Self {
            scenario: scenario.to_string(),
            policy: policy.to_string(),
            safety,
            success_rate: success_rate(&episodes)?,
            collisions: episodes.iter().map(|e| e.collisions).sum(),
            out_of_lane: episodes.iter().map(|e| e.out_of_lane).sum(),
            distance_km: episodes.iter().map(|e| e.distance_driven).sum::<f64>() / 1000.0,
            infraction_distance: infraction_distance(&episodes)?,
            episodes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::birdview::RasterImage;
    use crate::geometry::{Polyline, Vec2};
    use crate::policy::{ExpertPlanner, PolicyError};
    use crate::world::map::{Lane, MapData, Marking};

    fn summary(outcome: Outcome, km: f64, collisions: usize, out_of_lane: usize) -> EpisodeSummary {
        EpisodeSummary {
            episode: 0,
            seed: 0,
            outcome,
            ticks: 0,
            distance_driven: km * 1000.0,
            collisions,
            out_of_lane,
            filter_active_ticks: 0,
            infeasible_ticks: 0,
            planner_failures: 0,
            digest: String::new(),
        }
    }

    #[test]
    fn metric_examples() {
        let all: Vec<_> = (0..5).map(|_| summary(Outcome::Success, 1.0, 0, 0)).collect();
        assert_eq!(success_rate(&all).unwrap(), 1.0);
        let d = infraction_distance(&all).unwrap();
        assert_eq!(d.collision, KmPerEvent::NoInfraction);
        let mixed: Vec<_> = (0..50).map(|i| summary(if i < 48 { Outcome::Success } else { Outcome::Timeout }, 0.2, 0, 0)).collect();
        assert!((success_rate(&mixed).unwrap() - 0.96).abs() < 1e-12);
        let two = vec![summary(Outcome::Collision, 4.0, 1, 0), summary(Outcome::Collision, 6.0, 1, 0)];
        assert_eq!(infraction_distance(&two).unwrap().collision, KmPerEvent::Km(5.0));
        assert!(success_rate(&[]).is_err());
        assert_eq!(serde_json::to_string(&KmPerEvent::NoInfraction).unwrap(), "\"no-infraction\"");
    }

    #[test]
    fn debounce_counting() {
        let mut d = InfractionDetector::new(InfractionConfig::default());
        let fired: usize = (0..3).map(|t| d.update_raw(t, false, true).len()).sum();
        assert_eq!(fired, 0, "3-tick excursion is ignored");
        let mut d = InfractionDetector::new(InfractionConfig::default());
        let events: Vec<_> = (0..5).flat_map(|t| d.update_raw(t, false, true)).collect();
        assert_eq!(events, vec![Event { tick: 4, kind: EventKind::OutOfLane }]);
        // sustained excursion counts once; after 10 clear ticks it can fire again
        let more: usize = (5..40).map(|t| d.update_raw(t, false, true).len()).sum();
        assert_eq!(more, 0);
        let clear: usize = (40..50).map(|t| d.update_raw(t, false, false).len()).sum();
        assert_eq!(clear, 0);
        let again: Vec<_> = (50..55).flat_map(|t| d.update_raw(t, false, true)).collect();
        assert_eq!(again.len(), 1);
        // collisions are not debounced
        let mut d = InfractionDetector::new(InfractionConfig::default());
        assert_eq!(d.update_raw(0, true, false), vec![Event { tick: 0, kind: EventKind::Collision }]);
    }

    fn curved_scenario() -> (Scenario, Arc<RoadMap>) {
        let mut pts: Vec<Vec2> = (0..=30).map(|i| Vec2::new(i as f64 * 2.0 - 60.0, 0.0)).collect();
        pts.extend((1..=40).map(|i| {
            let a = i as f64 / 40.0 * std::f64::consts::FRAC_PI_2;
            Vec2::new(30.0 * a.sin(), 30.0 - 30.0 * a.cos())
        }));
        let data = MapData {
            lanes: vec![Lane {
                id: "a".into(),
                centerline: Polyline::new(pts).unwrap(),
                width: 4.0,
                marking_left: Marking::White,
                marking_right: Marking::White,
                successors: vec![],
            }],
            traffic_lights: vec![],
            spawn_points: vec![],
        };
        let map = Arc::new(RoadMap::new(data).unwrap());
        let len = map.lane(0).centerline.length();
        let scenario = Scenario {
            name: "curve".into(),
            routes: vec![RouteSpec { start: LanePoint { lane: "a".into(), s: 0.0 }, goal: LanePoint { lane: "a".into(), s: len } }],
            ..Scenario::default()
        };
        (scenario, map)
    }

    struct Straight;

    impl Planner for Straight {
        fn plan(&mut self, _: &WorldState, _: Option<&RasterImage>) -> Result<Trajectory, PolicyError> {
            Ok(Trajectory::new((1..=10).map(|k| Vec2::new(0.6 * k as f64, 0.0)).collect()).unwrap())
        }
    }

    #[test]
    fn expert_on_empty_road_succeeds() {
        let (scenario, map) = curved_scenario();
        let log = run_episode(&scenario, map, 0, &mut ExpertPlanner::new(10), &EvalConfig::default(), true).unwrap();
        assert_eq!(log.outcome, Outcome::Success);
        assert_eq!(log.events().count(), 0);
        assert!(log.distance_driven > 80.0);
    }

    #[test]
    fn straight_planner_leaves_a_curved_road() {
        let (scenario, map) = curved_scenario();
        let log = run_episode(&scenario, map, 0, &mut Straight, &EvalConfig::default(), false).unwrap();
        assert_eq!(log.outcome, Outcome::OutOfLane);
    }

    #[test]
    fn episodes_are_deterministic() {
        let scenario = Scenario::bundled("intersection").unwrap();
        let map = Arc::new(scenario.load_map().unwrap());
        let cfg = EvalConfig::default();
        let a = run_episode(&scenario, map.clone(), 3, &mut ExpertPlanner::new(10), &cfg, true).unwrap();
        let b = run_episode(&scenario, map, 3, &mut ExpertPlanner::new(10), &cfg, true).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a, b);
    }

    #[test]
    fn report_recount_matches() {
        let (scenario, map) = curved_scenario();
        let cfg = EvalConfig::default();
        let logs = vec![
            run_episode(&scenario, map.clone(), 0, &mut Straight, &cfg, false).unwrap(),
            run_episode(&scenario, map, 0, &mut ExpertPlanner::new(10), &cfg, false).unwrap(),
        ];
        let r = Report::new("curve", "mixed", false, &logs).unwrap();
        assert_eq!(r.success_rate, 0.5);
        assert_eq!(r.out_of_lane, logs.iter().flat_map(|l| l.events()).filter(|e| e.kind == EventKind::OutOfLane).count());
        let total_km: f64 = logs.iter().map(|l| l.distance_driven).sum::<f64>() / 1000.0;
        assert_eq!(r.infraction_distance.out_of_lane, KmPerEvent::Km(total_km / r.out_of_lane as f64));
    }
}
