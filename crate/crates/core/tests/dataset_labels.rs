use std::sync::Arc;

use urbandrive::expert::{collect, CollectConfig, Dataset, DatasetFrame};
use urbandrive::world::maps;

fn small_collection(seed: u64) -> (Dataset, urbandrive::expert::CollectTrace) {
    collect(Arc::new(maps::roundabout()), "roundabout", seed, 20.0, &CollectConfig::default()).unwrap()
}

#[test]
fn labels_rederive_from_the_pose_trace() {
    let (ds, trace) = small_collection(11);
    let h = ds.meta.h;
    assert_eq!(trace.poses.len(), 200);
    for (i, frame) in ds.frames.iter().enumerate() {
        let p0 = trace.poses[i];
        let (s, c) = p0.yaw.sin_cos();
        for k in 1..=h {
            let p = trace.poses[i + k];
            let (dx, dy) = (p.x - p0.x, p.y - p0.y);
            let expected = (c * dx + s * dy, -s * dx + c * dy);
            let got = frame.label.at(k);
            assert!((got.x - expected.0).abs() < 1e-12 && (got.y - expected.1).abs() < 1e-12, "frame {i} point {k}");
        }
        assert_eq!(frame.t, i as f64 * ds.meta.dt);
        assert_eq!(frame.noise_tainted, trace.noise_active[i..=i + h].iter().any(|&a| a));
    }
}

#[test]
fn dataset_files_round_trip_bit_exact() {
    let (ds, _) = small_collection(12);
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let size = std::fs::metadata(dir.path().join("frames.bin")).unwrap().len() as usize;
    assert_eq!(size, ds.frames.len() * DatasetFrame::record_bytes(ds.meta.h));
    let back = Dataset::read(dir.path()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn collection_is_deterministic() {
    let (a, _) = small_collection(13);
    let (b, _) = small_collection(13);
    assert_eq!(a, b);
    let (c, _) = small_collection(14);
    assert_ne!(a.frames[50].raster, c.frames[50].raster);
}
