use std::path::Path;

use pingtrace::geometry::{Detection2D, Rig};
use pingtrace::simulator::derive_seed;
use pingtrace::spin::{analyze_rally, ClusterCounts, SpinRecord};
use pingtrace::tracker::{track_detections, trajectories_from_records, TrackPositions, TrackRecord};
use pingtrace::trajectory::{detect_bounces, detect_returns, segment_rally, SegmentConfig, Trajectory3D, TrajectoryRecord};

use crate::config::PipelineConfig;
use crate::{read_checked, CliError, Outputs};

/// Reads detection streams, rejecting cameras the rig does not know and
/// non-finite values. The result is ordered by frame, then camera.
pub fn read_detections(paths: &[impl AsRef<Path>], rig: &Rig) -> Result<Vec<Detection2D>, CliError> {
    let mut all = Vec::new();
    for path in paths {
        all.extend(read_checked(path.as_ref(), |d: &Detection2D| {
            if rig.camera(&d.camera_id).is_none() {
                return Err(format!("unknown camera '{}'", d.camera_id));
            }
            if !(d.pixel.iter().all(|v| v.is_finite()) && d.time.is_finite() && d.confidence.is_finite()) {
                return Err("non-finite detection".into());
            }
            Ok(())
        })?);
    }
    all.sort_by(|a, b| a.frame_index.cmp(&b.frame_index).then_with(|| a.camera_id.cmp(&b.camera_id)));
    Ok(all)
}

pub fn resolve_rig(calibration: Option<&Path>, cfg: &PipelineConfig) -> Result<Rig, CliError> {
    match calibration {
        Some(p) => Rig::load(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
        None => cfg.rig(),
    }
}

pub fn cmd_track(detections: &[impl AsRef<Path>], calibration: Option<&Path>, cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    let rig = resolve_rig(calibration, cfg)?;
    let dets = read_detections(detections, &rig)?;
    let tracks = track_detections(&dets, &rig, &cfg.tracker).map_err(|e| CliError::Analysis(e.to_string()))?;
    let records: Vec<TrackRecord> = tracks.iter().flat_map(|t| t.to_records()).collect();
    let mut out = Outputs::default();
    out.jsonl("tracks.jsonl", &records);
    out.summary = format!("{} detections -> {} tracks, {} tracked frames\n", dets.len(), tracks.len(), records.len());
    Ok(out)
}

/// Reads either a tracks stream (recognised by its `measured` field) or a
/// trajectory stream.
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory3D>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let first = text.lines().position(|l| !l.trim().is_empty());
    let is_tracks = first
        .and_then(|i| serde_json::from_str::<serde_json::Value>(text.lines().nth(i).expect("line exists")).ok())
        .is_some_and(|v| v.get("measured").is_some());
    let bad = |m: String| CliError::Schema(format!("{}: {m}", path.display()));
    if is_tracks {
        let records: Vec<TrackRecord> = read_checked(path, |_| Ok(()))?;
        trajectories_from_records(&records, TrackPositions::Measured).map_err(bad)
    } else {
        let records: Vec<TrajectoryRecord> = read_checked(path, |_| Ok(()))?;
        Trajectory3D::from_records(&records).map_err(bad)
    }
}

/// Event annotation and, when enabled, smoothing of every trajectory. Each
/// trajectory's smoothing seed derives from the run seed and its position.
pub fn segment_all(trajs: &[Trajectory3D], cfg: &PipelineConfig) -> Vec<Trajectory3D> {
    trajs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if cfg.stages.smoothing {
                let mut seg: SegmentConfig = cfg.segment;
                seg.smooth.seed = derive_seed(cfg.seed ^ cfg.segment.smooth.seed, i as u64);
                segment_rally(t, &cfg.table, &seg)
            } else {
                let bounces = detect_bounces(t, &cfg.table, &cfg.segment.inflection);
                let hits = detect_returns(t, &bounces, &cfg.segment.inflection);
                let mut events = bounces;
                events.extend(hits);
                events.sort_by(|a, b| a.frame.cmp(&b.frame).then(a.time.total_cmp(&b.time)));
                Trajectory3D { events, ..t.clone() }
            }
        })
        .collect()
}

pub fn cmd_segment(input: &Path, cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    let trajs = read_trajectories(input)?;
    let segmented = segment_all(&trajs, cfg);
    let records: Vec<TrajectoryRecord> = segmented.iter().flat_map(|t| t.to_records()).collect();
    let events: usize = segmented.iter().map(|t| t.events.len()).sum();
    let mut out = Outputs::default();
    out.jsonl("segmented.jsonl", &records);
    out.summary = format!("{} trajectories, {events} events\n", segmented.len());
    Ok(out)
}

/// `hit_frame,track_id,delta_v_xy,z_accel,label` for every hit with features.
pub fn scatter_csv(records: &[SpinRecord]) -> String {
    let mut csv = String::from("hit_frame,track_id,delta_v_xy,z_accel,label\n");
    for r in records {
        if let (Some(dv), Some(za)) = (r.delta_v_xy, r.z_accel) {
            let id = r.track_id.map(|i| i.to_string()).unwrap_or_default();
            csv.push_str(&format!("{},{id},{dv},{za},{}\n", r.hit_frame, r.label.as_str()));
        }
    }
    csv
}

pub fn spin_records(trajs: &[Trajectory3D], cfg: &PipelineConfig) -> Vec<SpinRecord> {
    trajs.iter().flat_map(|t| analyze_rally(t, &cfg.spin).into_iter().map(|a| SpinRecord::from_analysis(&a, t.track_id))).collect()
}

pub fn cmd_spin(input: &Path, cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    let records: Vec<TrajectoryRecord> = read_checked(input, |_| Ok(()))?;
    let trajs = Trajectory3D::from_records(&records).map_err(|m| CliError::Schema(format!("{}: {m}", input.display())))?;
    let spins = spin_records(&trajs, cfg);
    let counts = ClusterCounts::tally(spins.iter().map(|r| &r.label));
    let mut out = Outputs::default();
    out.jsonl("spin.jsonl", &spins);
    out.text("scatter.csv", scatter_csv(&spins));
    out.text("clusters.txt", counts.table());
    out.summary = counts.table();
    Ok(out)
}
