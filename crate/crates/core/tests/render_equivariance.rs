//! Renders are ego-centric: moving the whole map and world rigidly must not
//! change the image beyond pixel-boundary rounding.

use std::sync::Arc;

use urbandrive::birdview::{render, RenderConfig, RASTER_SIDE};
use urbandrive::expert::{initial_world, CollectConfig};
use urbandrive::geometry::{Polyline, Vec2};
use urbandrive::world::{maps, step_world, Control, MapData, RoadMap, WorldState};

fn transform(data: &MapData, angle: f64, shift: Vec2) -> MapData {
    let f = |p: Vec2| p.rotate(angle) + shift;
    let mut out = data.clone();
    for lane in &mut out.lanes {
        lane.centerline = Polyline::new(lane.centerline.points().iter().map(|&p| f(p)).collect()).unwrap();
    }
    for light in &mut out.traffic_lights {
        light.stop_point = f(light.stop_point);
    }
    out
}

fn scene(data: MapData, seed: u64, ticks: usize) -> Vec<WorldState> {
    let cfg = CollectConfig::default();
    let mut world = initial_world(Arc::new(RoadMap::new(data).unwrap()), seed, &cfg).unwrap();
    let mut states = vec![world.clone()];
    for _ in 0..ticks {
        world = step_world(&world, Control { accel: 0.5, steer: 0.0 });
        states.push(world.clone());
    }
    states
}

fn agreement(data: MapData, angle: f64, shift: Vec2, seed: u64) -> f64 {
    let cfg = RenderConfig::default();
    let a = scene(data.clone(), seed, 12);
    let b = scene(transform(&data, angle, shift), seed, 12);
    let (ra, rb) = (render(&a, &cfg).unwrap(), render(&b, &cfg).unwrap());
    let same = (0..RASTER_SIDE)
        .flat_map(|r| (0..RASTER_SIDE).map(move |c| (r, c)))
        .filter(|&(r, c)| ra.get(r, c) == rb.get(r, c))
        .count();
    same as f64 / (RASTER_SIDE * RASTER_SIDE) as f64
}

#[test]
fn rigid_motion_keeps_the_raster() {
    for (seed, angle, shift) in [(1, 0.7, Vec2::new(130.0, -55.0)), (2, -2.1, Vec2::new(-40.0, 310.0)), (3, 3.0, Vec2::new(5.0, 5.0))] {
        for data in [maps::intersection_data(), maps::roundabout_data()] {
            let a = agreement(data, angle, shift, seed);
            assert!(a >= 0.99, "seed {seed}: {a}");
        }
    }
}
