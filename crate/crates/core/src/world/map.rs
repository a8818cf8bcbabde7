use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WorldError;
use crate::geometry::{Polyline, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marking {
    White,
    Yellow,
    /// No painted line (junction interiors).
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: String,
    pub centerline: Polyline,
    pub width: f64,
    pub marking_left: Marking,
    pub marking_right: Marking,
    #[serde(default)]
    pub successors: Vec<String>,
}

/// Green, yellow and red durations in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct LightCycle {
    pub green: f64,
    pub yellow: f64,
    pub red: f64,
}

impl From<[f64; 3]> for LightCycle {
    fn from(a: [f64; 3]) -> Self {
        Self { green: a[0], yellow: a[1], red: a[2] }
    }
}

impl From<LightCycle> for [f64; 3] {
    fn from(c: LightCycle) -> Self {
        [c.green, c.yellow, c.red]
    }
}

impl LightCycle {
    pub fn period(&self) -> f64 {
        self.green + self.yellow + self.red
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub id: String,
    pub stop_point: Vec2,
    pub governed_lanes: Vec<String>,
    pub cycle: LightCycle,
    #[serde(default)]
    pub phase_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightState {
    Green,
    Yellow,
    Red,
}

/// Phase of `(time + phase_offset) mod period`, in green → yellow → red order.
pub fn light_state(light: &TrafficLight, time: f64) -> LightState {
    let c = light.cycle;
    // snap to nanoseconds so tick-accumulated times land on phase boundaries
    let t = ((time + light.phase_offset) * 1e9).round() / 1e9;
    let phase = t.rem_euclid(c.period());
    if phase < c.green {
        LightState::Green
    } else if phase < c.green + c.yellow {
        LightState::Yellow
    } else {
        LightState::Red
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpawnPoint {
    pub lane: String,
    pub arclength: f64,
}

/// The on-disk map document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapData {
    pub lanes: Vec<Lane>,
    #[serde(default)]
    pub traffic_lights: Vec<TrafficLight>,
    #[serde(default)]
    pub spawn_points: Vec<SpawnPoint>,
}

/// A stop line located on a lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneStop {
    pub light: usize,
    /// Arclength of the stop point along the lane centerline.
    pub lane_s: f64,
}

/// Validated, index-resolved map.
#[derive(Debug, Clone)]
pub struct RoadMap {
    data: MapData,
    index: HashMap<String, usize>,
    successors: Vec<Vec<usize>>,
    stops: Vec<Vec<LaneStop>>,
}

impl RoadMap {
    pub fn new(data: MapData) -> Result<Self, WorldError> {
        let mut index = HashMap::new();
        for (i, lane) in data.lanes.iter().enumerate() {
            if index.insert(lane.id.clone(), i).is_some() {
                return Err(WorldError::InvalidMap(format!("duplicate lane id {}", lane.id)));
            }
            if lane.width.is_nan() || lane.width <= 0.0 {
                return Err(WorldError::InvalidMap(format!("lane {} has non-positive width", lane.id)));
            }
        }
        let resolve = |id: &str| -> Result<usize, WorldError> {
            index.get(id).copied().ok_or_else(|| WorldError::UnknownLane(id.to_string()))
        };
        let successors = data
            .lanes
            .iter()
            .map(|l| l.successors.iter().map(|s| resolve(s)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let mut stops = vec![Vec::new(); data.lanes.len()];
        for (li, light) in data.traffic_lights.iter().enumerate() {
            let c = light.cycle;
            if !(c.green > 0.0 && c.yellow > 0.0 && c.red > 0.0) {
                return Err(WorldError::InvalidMap(format!("light {} has a non-positive cycle", light.id)));
            }
            for lane_id in &light.governed_lanes {
                let lane = resolve(lane_id)?;
                let proj = data.lanes[lane].centerline.project(light.stop_point);
                stops[lane].push(LaneStop { light: li, lane_s: proj.arclength });
            }
        }
        for s in &mut stops {
            s.sort_by(|a, b| a.lane_s.total_cmp(&b.lane_s));
        }
        for sp in &data.spawn_points {
            let lane = resolve(&sp.lane)?;
            let len = data.lanes[lane].centerline.length();
            if !(0.0..=len).contains(&sp.arclength) {
                return Err(WorldError::InvalidMap(format!("spawn point beyond lane {}", sp.lane)));
            }
        }
        Ok(Self { data, index, successors, stops })
    }

    pub fn from_json(json: &str) -> Result<Self, WorldError> {
        let data: MapData = serde_json::from_str(json).map_err(|e| WorldError::InvalidMap(e.to_string()))?;
        Self::new(data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| WorldError::InvalidMap(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn data(&self) -> &MapData {
        &self.data
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.data.lanes
    }

    pub fn lane(&self, idx: usize) -> &Lane {
        &self.data.lanes[idx]
    }

    pub fn lane_index(&self, id: &str) -> Result<usize, WorldError> {
        self.index.get(id).copied().ok_or_else(|| WorldError::UnknownLane(id.to_string()))
    }

    pub fn successors(&self, lane: usize) -> &[usize] {
        &self.successors[lane]
    }

    pub fn lane_stops(&self, lane: usize) -> &[LaneStop] {
        &self.stops[lane]
    }

    pub fn lights(&self) -> &[TrafficLight] {
        &self.data.traffic_lights
    }

    pub fn light_states(&self, time: f64) -> Vec<LightState> {
        self.lights().iter().map(|l| light_state(l, time)).collect()
    }

    pub fn spawn_points(&self) -> &[SpawnPoint] {
        &self.data.spawn_points
    }
}
