use serde::{Deserialize, Serialize};

use pingtrace::simulator::{render_detections, SpinLabel};
use pingtrace::spin::{analyze_rally, SpinCluster};
use pingtrace::tracker::{track_detections, TrackPositions};
use pingtrace::trajectory::{EventKind, Trajectory3D};

use crate::config::PipelineConfig;
use crate::simulate::{random_rally, stream_seed, RENDER_STREAM};
use crate::stages::segment_all;
use crate::{CliError, Outputs};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EventScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub max_frame_error: u64,
}

impl EventScore {
    fn finish(mut self) -> Self {
        let tp = self.true_positives as f64;
        self.precision = tp / (self.true_positives + self.false_positives).max(1) as f64;
        self.recall = tp / (self.true_positives + self.false_negatives).max(1) as f64;
        self
    }
}

/// Scripted class (rows) against assigned cluster (columns); the last
/// column counts scripted hits that were never detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinConfusion {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    /// Fraction of detected, classified hits whose cluster matches the script.
    pub agreement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingScore {
    pub raw_rmse_m: f64,
    pub smoothed_rmse_m: f64,
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub rallies: usize,
    pub noise_px: f64,
    pub tolerance_frames: u64,
    pub bounce: EventScore,
    #[serde(rename = "return")]
    pub hit: EventScore,
    pub spin: SpinConfusion,
    pub smoothing: SmoothingScore,
}

const CLUSTERS: [SpinCluster; 4] = [SpinCluster::NoSpin, SpinCluster::LightTopspin, SpinCluster::HeavyTopspin, SpinCluster::NoCluster];

/// Greedy one-to-one matching of detected to true frames within `tol`.
/// Returns the index of the matched truth for every detection.
fn match_frames(truth: &[u64], found: &[u64], tol: u64) -> Vec<Option<usize>> {
    let mut pairs: Vec<(u64, usize, usize)> = Vec::new();
    for (j, f) in found.iter().enumerate() {
        for (i, t) in truth.iter().enumerate() {
            if t.abs_diff(*f) <= tol {
                pairs.push((t.abs_diff(*f), j, i));
            }
        }
    }
    pairs.sort();
    let mut used = vec![false; truth.len()];
    let mut out = vec![None; found.len()];
    for (_, j, i) in pairs {
        if out[j].is_none() && !used[i] {
            used[i] = true;
            out[j] = Some(i);
        }
    }
    out
}

fn score(score: &mut EventScore, truth: &[u64], found: &[u64], tol: u64) -> Vec<Option<usize>> {
    let m = match_frames(truth, found, tol);
    for (j, i) in m.iter().enumerate() {
        match i {
            Some(i) => {
                score.true_positives += 1;
                score.max_frame_error = score.max_frame_error.max(truth[*i].abs_diff(found[j]));
            }
            None => score.false_positives += 1,
        }
    }
    score.false_negatives += truth.len() - m.iter().flatten().count();
    m
}

pub fn e2e_report(cfg: &PipelineConfig) -> Result<E2eReport, CliError> {
    let rig = cfg.rig()?;
    let rs = &cfg.report;
    let tol = rs.event_tolerance_frames;
    let (mut bounce, mut hit) = (EventScore::default(), EventScore::default());
    let mut confusion = vec![vec![0usize; CLUSTERS.len() + 1]; 3];
    let (mut raw_sq, mut smooth_sq, mut n) = (0.0, 0.0, 0usize);

    for r in 0..rs.rallies as u64 {
        let (script, truth) = random_rally(cfg, r, rs.hits_per_rally)?;
        let seed = stream_seed(cfg.seed, RENDER_STREAM, r);
        let dets: Vec<_> = render_detections(&truth, &rig.cameras, rs.noise_px, 0.0, seed).into_iter().flat_map(|s| s.detections).collect();
        let tracks = track_detections(&dets, &rig, &cfg.tracker).map_err(|e| CliError::Analysis(e.to_string()))?;
        let raw: Vec<Trajectory3D> = tracks.iter().map(|t| t.to_trajectory(TrackPositions::Measured)).collect();
        let segmented = segment_all(&raw, cfg);

        for (before, after) in raw.iter().zip(&segmented) {
            for (a, b) in before.samples.iter().zip(&after.samples) {
                if let Some(k) = truth.index_of_frame(a.frame) {
                    let t = truth.samples[k].position;
                    raw_sq += (a.position - t).norm_squared();
                    smooth_sq += (b.position - t).norm_squared();
                    n += 1;
                }
            }
        }

        let frames_of = |kind| -> Vec<u64> {
            let mut f: Vec<u64> = segmented.iter().flat_map(|t| t.events_of(kind).map(|e| e.frame)).collect();
            f.sort_unstable();
            f
        };
        let truth_bounces: Vec<u64> = truth.events_of(EventKind::Bounce).map(|e| e.frame).collect();
        score(&mut bounce, &truth_bounces, &frames_of(EventKind::Bounce), tol);

        let labels = script.hit_labels();
        let truth_hits: Vec<u64> = labels.iter().map(|(f, _)| *f).collect();
        let analyses: Vec<_> = segmented.iter().flat_map(|t| analyze_rally(t, &cfg.spin)).collect();
        let found_hits: Vec<u64> = analyses.iter().map(|a| a.hit.frame).collect();
        let matched = score(&mut hit, &truth_hits, &found_hits, tol);
        let mut detected = vec![false; labels.len()];
        for (a, m) in analyses.iter().zip(&matched) {
            if let Some(i) = *m {
                detected[i] = true;
                let row = SpinLabel::ALL.iter().position(|l| *l == labels[i].1).expect("known label");
                let col = CLUSTERS.iter().position(|c| *c == a.class.label).expect("known cluster");
                confusion[row][col] += 1;
            }
        }
        for (i, d) in detected.iter().enumerate() {
            if !d {
                let row = SpinLabel::ALL.iter().position(|l| *l == labels[i].1).expect("known label");
                confusion[row][CLUSTERS.len()] += 1;
            }
        }
    }

    let classified: usize = confusion.iter().map(|r| r[..3].iter().sum::<usize>()).sum();
    let agree: usize = (0..3).map(|i| confusion[i][i]).sum();
    let raw_rmse = (raw_sq / n.max(1) as f64).sqrt();
    let smoothed_rmse = (smooth_sq / n.max(1) as f64).sqrt();
    Ok(E2eReport {
        rallies: rs.rallies,
        noise_px: rs.noise_px,
        tolerance_frames: tol,
        bounce: bounce.finish(),
        hit: hit.finish(),
        spin: SpinConfusion {
            rows: SpinLabel::ALL.iter().map(|l| SpinCluster::from(*l).as_str().to_string()).collect(),
            columns: CLUSTERS.iter().map(|c| c.as_str().to_string()).chain(["undetected".to_string()]).collect(),
            counts: confusion,
            agreement: agree as f64 / classified.max(1) as f64,
        },
        smoothing: SmoothingScore {
            raw_rmse_m: raw_rmse,
            smoothed_rmse_m: smoothed_rmse,
            reduction: if raw_rmse > 0.0 { 1.0 - smoothed_rmse / raw_rmse } else { 0.0 },
        },
    })
}

fn event_line(name: &str, s: &EventScore) -> String {
    format!(
        "{name:<7} precision {:.3}  recall {:.3}  tp {} fp {} fn {}  max frame error {}\n",
        s.precision, s.recall, s.true_positives, s.false_positives, s.false_negatives, s.max_frame_error
    )
}

pub fn cmd_e2e_report(cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    let report = e2e_report(cfg)?;
    let mut summary = format!("{} rallies at {} px noise\n", report.rallies, report.noise_px);
    summary += &event_line("bounce", &report.bounce);
    summary += &event_line("return", &report.hit);
    summary += &format!("spin agreement {:.3}\n{:<14}", report.spin.agreement, "");
    summary += &report.spin.columns.iter().map(|c| format!("{c:>14}")).collect::<String>();
    summary.push('\n');
    for (name, row) in report.spin.rows.iter().zip(&report.spin.counts) {
        summary += &format!("{name:<14}{}\n", row.iter().map(|c| format!("{c:>14}")).collect::<String>());
    }
    summary += &format!(
        "smoothing rmse {:.5} m -> {:.5} m ({:.1}% lower)\n",
        report.smoothing.raw_rmse_m,
        report.smoothing.smoothed_rmse_m,
        100.0 * report.smoothing.reduction
    );
    let mut out = Outputs::default();
    out.json("report.json", &report);
    out.summary = summary;
    Ok(out)
}
