//! Shared fixtures for the benchmarks.

use pingtrace::geometry::{Detection2D, Rig};
use pingtrace::simulator::{generate_rally_retrying, random_labels, render_detections, ScenarioConfig, SimConfig, TableGeometry};
use pingtrace::trajectory::Trajectory3D;

/// One random rally with its rendered detections on the standard rig.
pub fn rally_fixture(seed: u64) -> (Rig, Trajectory3D, Vec<Detection2D>) {
    let rig = Rig::standard();
    let labels = random_labels(4, seed);
    let (_, truth) = generate_rally_retrying(&labels, seed, &TableGeometry::default(), &SimConfig::default(), &ScenarioConfig::default())
        .expect("rally generates");
    let dets = render_detections(&truth, &rig.cameras, 0.5, 0.0, seed).into_iter().flat_map(|s| s.detections).collect();
    (rig, truth, dets)
}
