use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use pingtrace::geometry::{frame_time, Detection2D, Point3D, Rig};
use pingtrace::simulator::render_scene;
use pingtrace::tracker::{match_stereo, TrackPositions, Tracker};
use pingtrace::trajectory::{segment_rally, Trajectory3D};

use crate::config::PipelineConfig;
use crate::simulate::{random_rally, shift_frames, stream_seed, RENDER_STREAM};
use crate::stages::{read_detections, resolve_rig};
use crate::{CliError, Outputs};

/// Frames between the two balls' first serves in the generated corpus.
const BALL_STAGGER_FRAMES: u64 = 150;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

impl StageLatency {
    /// Nearest-rank percentiles.
    pub fn from_samples(ms: &[f64]) -> Self {
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |p: f64| sorted[((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        StageLatency { mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64, p50_ms: rank(0.5), p99_ms: rank(0.99) }
    }
}

/// Per stereo frame latencies of the analytic pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Frames timed, after warm-up.
    pub frames: usize,
    pub detections: usize,
    pub tracks: usize,
    pub stereo: StageLatency,
    pub tracking: StageLatency,
    /// Segmentation of each finished track, spread evenly over its frames.
    pub segmentation: StageLatency,
    pub total: StageLatency,
    pub frames_per_second: f64,
    pub budget_ms: f64,
    pub pass: bool,
}

/// Two balls in play at once, each a run of random rallies, until at least
/// `cfg.bench.frames` frames carry a ball.
pub fn generate_corpus(cfg: &PipelineConfig, rig: &Rig) -> Result<Vec<Detection2D>, CliError> {
    let balls = cfg.bench.balls as u64;
    let mut next_start: Vec<u64> = (0..balls).map(|b| b * BALL_STAGGER_FRAMES).collect();
    let mut covered = BTreeSet::new();
    let mut truths: Vec<Trajectory3D> = Vec::new();
    let mut index = 0u64;
    while (covered.len() as u64) < cfg.bench.frames {
        let ball = (index % balls) as usize;
        let (_, mut truth) = random_rally(cfg, index, cfg.simulate.hits_per_rally)?;
        shift_frames(&mut truth, next_start[ball]);
        covered.extend(truth.samples.iter().map(|s| s.frame));
        next_start[ball] = truth.samples.last().map_or(next_start[ball], |s| s.frame + 1) + cfg.simulate.gap_frames;
        truths.push(truth);
        index += 1;
    }
    let seed = stream_seed(cfg.seed, RENDER_STREAM, u64::MAX);
    let mut dets: Vec<Detection2D> = render_scene(&truths, &rig.cameras, cfg.simulate.noise_px, cfg.simulate.dropout, seed)
        .into_iter()
        .flat_map(|s| s.detections)
        .collect();
    dets.sort_by_key(|d| d.frame_index);
    Ok(dets)
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Replays detections frame by frame through stereo matching, tracking and
/// segmentation of tracks as they finish.
pub fn bench_detections(dets: &[Detection2D], rig: &Rig, cfg: &PipelineConfig) -> Result<BenchReport, CliError> {
    let (cam_l, cam_r) = rig.stereo_pair();
    let mut frames: BTreeMap<u64, (Vec<Detection2D>, Vec<Detection2D>)> = BTreeMap::new();
    for d in dets {
        let e = frames.entry(d.frame_index).or_default();
        if d.camera_id == cam_l.camera_id {
            e.0.push(d.clone());
        } else if d.camera_id == cam_r.camera_id {
            e.1.push(d.clone());
        }
    }
    let (Some(&first), Some(&last)) = (frames.keys().next(), frames.keys().next_back()) else {
        return Err(CliError::Usage("benchmark corpus has no detections".into()));
    };
    let n = (last - first + 1) as usize;
    let (mut stereo, mut tracking, mut segmentation) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tracker = Tracker::new(cfg.tracker);
    let mut open: Vec<usize> = Vec::new();
    let mut seen = 0usize;
    let empty = (Vec::new(), Vec::new());

    let segment = |traj: Trajectory3D, segmentation: &mut [f64]| {
        let start = Instant::now();
        std::hint::black_box(segment_rally(&traj, &cfg.table, &cfg.segment));
        let cost = elapsed_ms(start);
        if let (Some(a), Some(b)) = (traj.samples.first(), traj.samples.last()) {
            let span = (b.frame - a.frame + 1) as f64;
            for f in a.frame..=b.frame {
                segmentation[(f - first) as usize] += cost / span;
            }
        }
    };

    for frame in first..=last {
        let i = (frame - first) as usize;
        let (l, r) = frames.get(&frame).unwrap_or(&empty);
        let start = Instant::now();
        let points: Vec<Point3D> = match_stereo(l, r, cam_l, cam_r, cfg.tracker.reproj_gate_px)
            .into_iter()
            .map(|m| Point3D::new(m.triangulation.point.position, frame_time(frame)))
            .collect();
        stereo[i] = elapsed_ms(start);

        let start = Instant::now();
        tracker.step(frame, &points).map_err(|e| CliError::Analysis(e.to_string()))?;
        open.extend(seen..tracker.tracks().len());
        seen = tracker.tracks().len();
        tracking[i] = elapsed_ms(start);

        let tracks = tracker.tracks();
        let (done, alive): (Vec<usize>, Vec<usize>) = open.iter().partition(|&&k| !tracks[k].is_alive());
        open = alive;
        for k in done {
            segment(tracks[k].to_trajectory(TrackPositions::Measured), &mut segmentation);
        }
    }
    for &k in &open {
        segment(tracker.tracks()[k].to_trajectory(TrackPositions::Measured), &mut segmentation);
    }

    let skip = (cfg.bench.warmup_frames as usize).min(n.saturating_sub(1));
    let total: Vec<f64> = (skip..n).map(|i| stereo[i] + tracking[i] + segmentation[i]).collect();
    let total_stats = StageLatency::from_samples(&total);
    let seconds: f64 = total.iter().sum::<f64>() / 1e3;
    Ok(BenchReport {
        frames: total.len(),
        detections: dets.len(),
        tracks: tracker.tracks().len(),
        stereo: StageLatency::from_samples(&stereo[skip..]),
        tracking: StageLatency::from_samples(&tracking[skip..]),
        segmentation: StageLatency::from_samples(&segmentation[skip..]),
        total: total_stats,
        frames_per_second: total.len() as f64 / seconds.max(f64::MIN_POSITIVE),
        budget_ms: cfg.bench.budget_ms,
        pass: total_stats.p99_ms <= cfg.bench.budget_ms,
    })
}

fn row(name: &str, s: &StageLatency) -> String {
    format!("{name:<13} mean {:>8.4} ms  p50 {:>8.4} ms  p99 {:>8.4} ms\n", s.mean_ms, s.p50_ms, s.p99_ms)
}

pub fn cmd_bench(detections: &[impl AsRef<Path>], calibration: Option<&Path>, cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    let rig = resolve_rig(calibration, cfg)?;
    let dets = if detections.is_empty() {
        if cfg.bench.frames == 0 {
            return Err(CliError::Usage("benchmark corpus has no frames".into()));
        }
        generate_corpus(cfg, &rig)?
    } else {
        read_detections(detections, &rig)?
    };
    let report = bench_detections(&dets, &rig, cfg)?;
    let mut out = Outputs::default();
    out.json("bench.json", &report);
    out.summary = format!(
        "{} frames, {} detections, {} tracks\n{}{}{}{}{:.0} frames/s, budget {} ms: {}\n",
        report.frames,
        report.detections,
        report.tracks,
        row("stereo", &report.stereo),
        row("tracking", &report.tracking),
        row("segmentation", &report.segmentation),
        row("total", &report.total),
        report.frames_per_second,
        report.budget_ms,
        if report.pass { "PASS" } else { "FAIL" }
    );
    if !report.pass {
        out.failure = Some(CliError::BudgetExceeded { p99_ms: report.total.p99_ms, budget_ms: report.budget_ms });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let ms: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = StageLatency::from_samples(&ms);
        assert_eq!((s.p50_ms, s.p99_ms, s.mean_ms), (50.0, 99.0, 50.5));
        assert_eq!(StageLatency::from_samples(&[3.0]).p99_ms, 3.0);
    }

    #[test]
    fn empty_corpus_is_a_usage_error() {
        let err = bench_detections(&[], &Rig::standard(), &PipelineConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
