use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::map::RoadMap;
use super::WorldError;
use crate::geometry::{Polyline, Vec2};

/// Waypoint spacing of route paths.
pub const ROUTE_SPACING: f64 = 1.0;

/// The part of a route lying on one lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneSpan {
    pub lane: usize,
    pub route_start: f64,
    pub route_end: f64,
    /// Lane-local arclength corresponding to `route_start`.
    pub lane_start: f64,
    pub half_width: f64,
}

/// A traffic-light stop line located on the route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopMarker {
    pub light: usize,
    pub s: f64,
}

/// A drivable path through the lane graph together with the lanes and stop
/// lines it passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    path: Polyline,
    spans: Vec<LaneSpan>,
    stops: Vec<StopMarker>,
}

impl Route {
    /// Route covering `lane` from `s0` to `s1` followed by the full `rest` lanes.
    pub fn from_lanes(map: &RoadMap, lanes: &[(usize, f64, f64)]) -> Result<Route, WorldError> {
        let mut pts: Vec<Vec2> = Vec::new();
        let mut spans = Vec::new();
        let mut stops = Vec::new();
        let mut s_acc = 0.0;
        for &(lane, a, b) in lanes {
            let Some(piece) = map.lane(lane).centerline.slice(a, b) else {
                continue;
            };
            let piece = piece.resample(ROUTE_SPACING);
            append_piece(&mut pts, &piece, &mut s_acc, &mut spans, &mut stops, map, lane, a);
        }
        let path = Polyline::dedup(pts).map_err(|_| WorldError::NoRoute)?;
        // rounding of the joins can move the total by a hair
        let scale = path.length() / s_acc;
        for sp in &mut spans {
            sp.route_start *= scale;
            sp.route_end *= scale;
        }
        for st in &mut stops {
            st.s *= scale;
        }
        Ok(Route { path, spans, stops })
    }

    pub fn path(&self) -> &Polyline {
        &self.path
    }

    pub fn length(&self) -> f64 {
        self.path.length()
    }

    pub fn spans(&self) -> &[LaneSpan] {
        &self.spans
    }

    pub fn stops(&self) -> &[StopMarker] {
        &self.stops
    }

    pub fn last_lane(&self) -> usize {
        self.spans.last().expect("route has at least one span").lane
    }

    pub fn lanes(&self) -> impl Iterator<Item = usize> + '_ {
        self.spans.iter().map(|s| s.lane)
    }

    pub fn span_at(&self, s: f64) -> &LaneSpan {
        let i = self.spans.partition_point(|sp| sp.route_end <= s);
        &self.spans[i.min(self.spans.len() - 1)]
    }

    pub fn half_width_at(&self, s: f64) -> f64 {
        self.span_at(s).half_width
    }

    /// First stop line at or beyond arclength `s`.
    pub fn next_stop(&self, s: f64) -> Option<&StopMarker> {
        self.stops.iter().find(|st| st.s >= s)
    }

    /// Appends the full centerline of `lane`, which must succeed the last lane.
    pub fn extended(&self, map: &RoadMap, lane: usize) -> Result<Route, WorldError> {
        if !map.successors(self.last_lane()).contains(&lane) {
            return Err(WorldError::NoRoute);
        }
        let mut pts = self.path.points().to_vec();
        let mut spans = self.spans.clone();
        let mut stops = self.stops.clone();
        let mut s_acc = self.path.length();
        let piece = map.lane(lane).centerline.resample(ROUTE_SPACING);
        append_piece(&mut pts, &piece, &mut s_acc, &mut spans, &mut stops, map, lane, 0.0);
        let path = Polyline::dedup(pts).map_err(|_| WorldError::NoRoute)?;
        let start = self.path.length();
        let scale = (path.length() - start) / (s_acc - start);
        let fix = |s: f64| start + (s - start) * scale;
        for sp in spans.iter_mut().skip(self.spans.len()) {
            sp.route_start = fix(sp.route_start);
            sp.route_end = fix(sp.route_end);
        }
        for st in stops.iter_mut().skip(self.stops.len()) {
            st.s = fix(st.s);
        }
        Ok(Route { path, spans, stops })
    }
}

#[allow(clippy::too_many_arguments)]
fn append_piece(
    pts: &mut Vec<Vec2>,
    piece: &Polyline,
    s_acc: &mut f64,
    spans: &mut Vec<LaneSpan>,
    stops: &mut Vec<StopMarker>,
    map: &RoadMap,
    lane: usize,
    lane_start: f64,
) {
    let mut iter = piece.points().iter().copied();
    if let Some(&last) = pts.last() {
        let first = piece.first();
        if last.distance(first) < 1e-6 {
            iter.next();
        } else {
            // bridge a gap between non-touching lanes
            *s_acc += last.distance(first);
        }
    }
    pts.extend(iter);
    let start = *s_acc;
    let len = piece.length();
    for stop in map.lane_stops(lane) {
        let rel = stop.lane_s - lane_start;
        if (-1e-6..=len + 1e-6).contains(&rel) {
            stops.push(StopMarker { light: stop.light, s: start + rel });
        }
    }
    spans.push(LaneSpan {
        lane,
        route_start: start,
        route_end: start + len,
        lane_start,
        half_width: map.lane(lane).width / 2.0,
    });
    *s_acc += len;
}

#[derive(PartialEq)]
struct Frontier {
    cost: f64,
    lane: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then on lane index for determinism
        other.cost.total_cmp(&self.cost).then_with(|| other.lane.cmp(&self.lane))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lane sequence of the shortest centerline path from `start` to `goal`.
pub fn shortest_lane_path(
    map: &RoadMap,
    start: (usize, f64),
    goal: (usize, f64),
) -> Result<Vec<usize>, WorldError> {
    let (start_lane, start_s) = start;
    let (goal_lane, goal_s) = goal;
    if start_lane == goal_lane && start_s < goal_s {
        return Ok(vec![start_lane]);
    }
    let n = map.lanes().len();
    // cost to reach the beginning of each lane
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    let head = map.lane(start_lane).centerline.length() - start_s;
    for &succ in map.successors(start_lane) {
        if head < dist[succ] {
            dist[succ] = head;
            prev[succ] = start_lane;
            heap.push(Frontier { cost: head, lane: succ });
        }
    }
    while let Some(Frontier { cost, lane }) = heap.pop() {
        if cost > dist[lane] {
            continue;
        }
        if lane == goal_lane {
            break;
        }
        let next_cost = cost + map.lane(lane).centerline.length();
        for &succ in map.successors(lane) {
            if next_cost < dist[succ] {
                dist[succ] = next_cost;
                prev[succ] = lane;
                heap.push(Frontier { cost: next_cost, lane: succ });
            }
        }
    }
    if !dist[goal_lane].is_finite() {
        return Err(WorldError::NoRoute);
    }
    let mut seq = vec![goal_lane];
    let mut cur = goal_lane;
    loop {
        let p = prev[cur];
        if p == start_lane {
            seq.push(start_lane);
            break;
        }
        seq.push(p);
        cur = p;
    }
    seq.reverse();
    Ok(seq)
}

/// Shortest route (by centerline length) between two lane positions,
/// clipped to the start and goal arclengths.
pub fn plan_route(map: &RoadMap, start: (usize, f64), goal: (usize, f64)) -> Result<Route, WorldError> {
    let seq = shortest_lane_path(map, start, goal)?;
    let last = seq.len() - 1;
    let pieces: Vec<(usize, f64, f64)> = seq
        .iter()
        .enumerate()
        .map(|(i, &lane)| {
            let len = map.lane(lane).centerline.length();
            let a = if i == 0 { start.1 } else { 0.0 };
            let b = if i == last { goal.1 } else { len };
            (lane, a, b)
        })
        .collect();
    Route::from_lanes(map, &pieces)
}
