//! End-to-end acceptance checks. Everything runs inside one test so the
//! latency measurement never shares the CPU with the other checks.

use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use pingtrace::gatedcell::{
    render_toy_dataset, sequence_loss, sequence_loss_and_grad, train_toy_tracker, CellKind, FeatureMap, NetworkParams, TrainConfig,
};
use pingtrace::geometry::{project, triangulate, Detection2D, Rig};
use pingtrace::simulator::{
    generate_rally_retrying, random_labels, render_detections, render_scene, simulate_rally, RallyScript, ScenarioConfig, SimConfig,
    SpinLabel, Strike, TableGeometry,
};
use pingtrace::spin::{analyze_rally, SpinCentroids, SpinCluster, SpinConfig};
use pingtrace::tracker::{track_detections, TrackPositions, TrackerConfig};
use pingtrace::trajectory::{bootstrap_smooth, detect_bounces, detect_returns, EventKind, InflectionConfig, Sample};
use pingtrace_cli::{execute, Command, PipelineConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Spread of the reference centroids along each feature axis.
const AXIS_RANGE: [f64; 2] = [0.916, 14.5];

fn cluster_reproduction() -> Outcome {
    let table = TableGeometry::default();
    let sim = SimConfig::default();
    let scenario = ScenarioConfig::default();
    let spin = SpinConfig::default();
    let mut worst_rel = 0.0f64;
    let (mut agree, mut total) = (0usize, 0usize);
    let mut counts = Vec::new();
    for (c, label) in SpinLabel::ALL.into_iter().enumerate() {
        let mut feats: Vec<[f64; 2]> = Vec::new();
        let mut r = 0u64;
        while feats.len() < 100 {
            r += 1;
            let seed = 1000 * (c as u64 + 1) + r;
            let Ok((script, truth)) = generate_rally_retrying(&[label; 3], seed, &table, &sim, &scenario) else { continue };
            let scripted = script.hit_labels();
            for a in analyze_rally(&truth, &spin) {
                let Some(f) = a.features else { continue };
                let want = scripted.iter().find(|(fr, _)| *fr == a.hit.frame).map(|(_, l)| SpinCluster::from(*l));
                total += 1;
                agree += usize::from(want == Some(a.class.label));
                feats.push([f.delta_v_xy, f.z_accel]);
            }
        }
        let n = feats.len() as f64;
        let mean = [0, 1].map(|k| feats.iter().map(|f| f[k]).sum::<f64>() / n);
        let target = SpinCentroids::OBSERVED.get(SpinCluster::from(label)).unwrap();
        for k in 0..2 {
            worst_rel = worst_rel.max((mean[k] - target[k]).abs() / AXIS_RANGE[k]);
        }
        counts.push(format!("{}=({:.3}, {:.2}) n={}", label_name(label), mean[0], mean[1], feats.len()));
    }
    let agreement = agree as f64 / total as f64;
    outcome(
        worst_rel <= 0.20 && agreement >= 0.95,
        format!("{}; worst relative error {worst_rel:.3}; agreement {agreement:.3}", counts.join(" ")),
    )
}

fn label_name(l: SpinLabel) -> &'static str {
    SpinCluster::from(l).as_str()
}

fn gravity_anchor() -> Outcome {
    let table = TableGeometry::default();
    let sim = SimConfig { physics: SimConfig::default().physics.without_magnus(), ..SimConfig::default() };
    let spin = SpinConfig::default();
    let mut accels = Vec::new();
    let mut r = 0u64;
    while accels.len() < 60 {
        r += 1;
        let labels = random_labels(3, 500 + r);
        let Ok((_, truth)) = generate_rally_retrying(&labels, 7000 + r, &table, &sim, &ScenarioConfig::default()) else { continue };
        accels.extend(analyze_rally(&truth, &spin).iter().filter_map(|a| a.features.map(|f| f.z_accel)));
    }
    let mean = accels.iter().sum::<f64>() / accels.len() as f64;
    let rel = (mean + 9.8).abs() / 9.8;
    outcome(rel <= 0.05, format!("mean {mean:.3} m/s² over {} flights, {:.1}% from -9.8", accels.len(), 100.0 * rel))
}

fn inflection_accuracy() -> Outcome {
    let table = TableGeometry::default();
    let sim = SimConfig::default();
    let rig = Rig::standard();
    let infl = InflectionConfig::default();
    let mut stats = [[0usize; 3]; 2];
    let mut worst = 0u64;
    for r in 0..100u64 {
        let labels = random_labels(2 + (r % 4) as usize, 11 + r);
        let Ok((_, truth)) = generate_rally_retrying(&labels, 11 * 7919 + r, &table, &sim, &ScenarioConfig::default()) else { continue };
        let dets: Vec<_> = render_detections(&truth, &rig.cameras, 0.5, 0.0, r).into_iter().flat_map(|s| s.detections).collect();
        let mut found = Vec::new();
        for t in track_detections(&dets, &rig, &TrackerConfig::default()).unwrap() {
            let traj = t.to_trajectory(TrackPositions::Measured);
            let b = detect_bounces(&traj, &table, &infl);
            found.extend(detect_returns(&traj, &b, &infl));
            found.extend(b);
        }
        for (k, kind) in [EventKind::Bounce, EventKind::Hit].into_iter().enumerate() {
            let mut want: Vec<u64> = truth.events_of(kind).map(|e| e.frame).collect();
            for g in found.iter().filter(|e| e.kind == kind).map(|e| e.frame) {
                match want.iter().position(|w| w.abs_diff(g) <= 2) {
                    Some(i) => {
                        worst = worst.max(want[i].abs_diff(g));
                        want.remove(i);
                        stats[k][0] += 1;
                    }
                    None => stats[k][1] += 1,
                }
            }
            stats[k][2] += want.len();
        }
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, name) in ["bounce", "return"].iter().enumerate() {
        let [tp, fp, fn_] = stats[k];
        let p = tp as f64 / (tp + fp).max(1) as f64;
        let rc = tp as f64 / (tp + fn_).max(1) as f64;
        pass &= p >= 0.95 && rc >= 0.95;
        parts.push(format!("{name} precision {p:.3} recall {rc:.3}"));
    }
    outcome(pass && worst <= 2, format!("{}; worst frame error {worst}", parts.join(", ")))
}

fn smoothing() -> Outcome {
    let table = TableGeometry::default();
    let sim = SimConfig::default();
    let noise = Normal::new(0.0, 0.005).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut raw, mut smooth, mut segments) = (0.0, 0.0, 0usize);
    let mut r = 0;
    while segments < 200 {
        r += 1;
        let Ok((_, truth)) = generate_rally_retrying(&random_labels(3, 11 + r), 341 + r, &table, &sim, &ScenarioConfig::default()) else {
            continue;
        };
        let cuts: Vec<usize> = truth.events.iter().filter_map(|e| truth.index_of_frame(e.frame)).collect();
        for w in cuts.windows(2) {
            let seg: &[Sample] = &truth.samples[w[0] + 1..w[1]];
            if seg.len() < 20 || segments >= 200 {
                continue;
            }
            let noisy: Vec<Sample> =
                seg.iter().map(|s| Sample { position: s.position + Vector3::from_fn(|_, _| noise.sample(&mut rng)), ..*s }).collect();
            let out = bootstrap_smooth(&noisy, segments as u64);
            let rmse = |a: &[Sample]| {
                (a.iter().zip(seg).map(|(x, t)| (x.position - t.position).norm_squared()).sum::<f64>() / seg.len() as f64).sqrt()
            };
            raw += rmse(&noisy);
            smooth += rmse(&out);
            segments += 1;
        }
    }
    let reduction = 1.0 - smooth / raw;

    // A drag-free, spin-free flight is an exact parabola.
    let script = RallyScript {
        strikes: vec![Strike {
            time: 0.0,
            position: Some(Vector3::new(0.1, -1.6, 1.0)),
            velocity: Vector3::new(0.2, 5.0, 1.5),
            spin: Vector3::zeros(),
            label: SpinLabel::NoSpin,
        }],
        rng_seed: 0,
        detection_noise_sigma: 0.0,
        dropout_probability: 0.0,
    };
    let ballistic = SimConfig { physics: pingtrace::simulator::BallPhysics::ballistic(), ..SimConfig::default() };
    let flight = simulate_rally(&script, &table, &ballistic).unwrap();
    let end = flight.events.first().and_then(|e| flight.index_of_frame(e.frame)).unwrap_or(flight.len());
    let clean = &flight.samples[..end];
    let passed = bootstrap_smooth(clean, 3);
    let max_dev = clean.iter().zip(&passed).map(|(a, b)| (a.position - b.position).norm()).fold(0.0, f64::max);
    outcome(
        reduction >= 0.30 && max_dev <= 1e-9,
        format!("RMSE reduction {:.1}% over {segments} segments; noiseless deviation {max_dev:.2e} m", 100.0 * reduction),
    )
}

fn stereo_tracking() -> Outcome {
    let rig = Rig::standard();
    let (cl, cr) = rig.stereo_pair();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_round_trip = 0.0f64;
    for i in 0..1000 {
        let p = Vector3::new(rng.random_range(-0.8..0.8), rng.random_range(-1.6..1.6), rng.random_range(0.77..1.8));
        let l = Detection2D::new("left", i, project(&p, cl).unwrap(), 1.0);
        let r = Detection2D::new("right", i, project(&p, cr).unwrap(), 1.0);
        let t = triangulate(&l, &r, cl, cr).unwrap();
        worst_round_trip = worst_round_trip.max((t.point.position - p).norm());
    }

    // Filtered against raw error on noisy rallies.
    let table = TableGeometry::default();
    let sim = SimConfig::default();
    let (mut raw_sq, mut kf_sq, mut n) = (0.0, 0.0, 0usize);
    for r in 0..10u64 {
        let Ok((_, truth)) = generate_rally_retrying(&random_labels(3, 90 + r), 900 + r, &table, &sim, &ScenarioConfig::default()) else {
            continue;
        };
        let dets: Vec<_> = render_detections(&truth, &rig.cameras, 1.0, 0.0, r).into_iter().flat_map(|s| s.detections).collect();
        for t in track_detections(&dets, &rig, &TrackerConfig::default()).unwrap() {
            for rec in t.to_records() {
                let Some(k) = truth.index_of_frame(rec.frame_index) else { continue };
                let truth_p = truth.samples[k].position;
                raw_sq += (rec.measured - truth_p).norm_squared();
                kf_sq += (rec.position - truth_p).norm_squared();
                n += 1;
            }
        }
    }
    let (raw_rms, kf_rms) = ((raw_sq / n as f64).sqrt(), (kf_sq / n as f64).sqrt());

    // Two balls crossing the table in opposite directions 0.3 m apart.
    let ball = |x: f64, y: f64, vy: f64| RallyScript {
        strikes: vec![Strike {
            time: 0.0,
            position: Some(Vector3::new(x, y, 1.1)),
            velocity: Vector3::new(0.0, vy, 0.8),
            spin: Vector3::zeros(),
            label: SpinLabel::NoSpin,
        }],
        rng_seed: 0,
        detection_noise_sigma: 0.0,
        dropout_probability: 0.0,
    };
    let short = SimConfig { tail_frames: 90, ..SimConfig::default() };
    let a = simulate_rally(&ball(-0.15, -1.3, 5.0), &table, &short).unwrap();
    let b = simulate_rally(&ball(0.15, 1.3, -5.0), &table, &short).unwrap();
    let min_sep = a
        .samples
        .iter()
        .filter_map(|s| b.index_of_frame(s.frame).map(|k| (s.position - b.samples[k].position).norm()))
        .fold(f64::INFINITY, f64::min);
    let dets: Vec<_> = render_scene(&[a.clone(), b.clone()], &rig.cameras, 0.5, 0.0, 17).into_iter().flat_map(|s| s.detections).collect();
    let tracks = track_detections(&dets, &rig, &TrackerConfig::default()).unwrap();
    let mut swaps = 0usize;
    let mut owners = Vec::new();
    for t in &tracks {
        let mut seen = [false; 2];
        for rec in t.to_records() {
            let d = [&a, &b].map(|truth| {
                truth.index_of_frame(rec.frame_index).map_or(f64::INFINITY, |k| (rec.measured - truth.samples[k].position).norm())
            });
            seen[usize::from(d[1] < d[0])] = true;
        }
        swaps += usize::from(seen[0] && seen[1]);
        owners.push(seen);
    }
    let covered = [0, 1].map(|i| owners.iter().filter(|s| s[i]).count());
    outcome(
        worst_round_trip < 1e-6 && kf_rms < raw_rms && swaps == 0 && min_sep >= 0.3 - 1e-9 && covered == [1, 1],
        format!(
            "round trip {worst_round_trip:.2e} m; RMS raw {:.2} mm, filtered {:.2} mm; crossing at {min_sep:.3} m: {} tracks, {swaps} swaps",
            raw_rms * 1e3,
            kf_rms * 1e3,
            tracks.len()
        ),
    )
}

fn gradient_error(params: &NetworkParams, frames: &[FeatureMap], targets: &[(usize, usize)]) -> f64 {
    let (_, grads) = sequence_loss_and_grad(params, frames, targets).unwrap();
    let eps = 1e-5;
    let analytic: Vec<DMatrix<f64>> = grads.tensors().into_iter().map(|(_, t)| t.clone()).collect();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let mut fd = DMatrix::zeros(a.nrows(), a.ncols());
        for i in 0..a.len() {
            let mut p = params.clone();
            p.tensors_mut()[k][i] += eps;
            let up = sequence_loss(&p, frames, targets).unwrap();
            p.tensors_mut()[k][i] -= 2.0 * eps;
            let down = sequence_loss(&p, frames, targets).unwrap();
            fd[i] = (up - down) / (2.0 * eps);
        }
        let scale = a.norm().max(fd.norm());
        if scale > 0.0 {
            worst = worst.max((a - &fd).norm() / scale);
        }
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let kinds = [CellKind::Gated, CellKind::ConvLstm, CellKind::SingleFrame];
    let mut worst = 0.0f64;
    let draws = 21;
    for d in 0..draws {
        let kind = kinds[d % 3];
        let hidden = rng.random_range(1..4);
        let params = NetworkParams::random(kind, hidden, &mut rng);
        let len = rng.random_range(1..4);
        let frames: Vec<FeatureMap> = (0..len).map(|_| FeatureMap::from_fn(1, 6, 8, |_, _, _| rng.random_range(0.0..1.0))).collect();
        let targets: Vec<(usize, usize)> = (0..len).map(|_| (rng.random_range(0..6), rng.random_range(0..8))).collect();
        worst = worst.max(gradient_error(&params, &frames, &targets));
    }
    outcome(worst < 1e-5, format!("worst relative error {worst:.2e} over {draws} draws"))
}

fn toy_training() -> Outcome {
    let cfg = PipelineConfig::default();
    let train = render_toy_dataset(&cfg.toy_data);
    let eval = render_toy_dataset(&pingtrace::gatedcell::ToyDataConfig {
        sequences: cfg.toy_eval_sequences,
        seed: cfg.toy_data.seed + 99,
        ..cfg.toy_data
    });
    let gated = train_toy_tracker(&train, &eval, &TrainConfig { kind: CellKind::Gated, ..cfg.train }).unwrap();
    let single = train_toy_tracker(&train, &eval, &TrainConfig { kind: CellKind::SingleFrame, ..cfg.train }).unwrap();
    let (first, last) = (gated.smoothed[0], *gated.smoothed.last().unwrap());
    outcome(
        last <= 0.5 * first && gated.auc5 >= single.auc5,
        format!(
            "gated smoothed loss {first:.3} -> {last:.3}; AUC@5 gated {:.3} vs single-frame {:.3} (AUC@2 {:.3} vs {:.3})",
            gated.auc5, single.auc5, gated.auc2, single.auc2
        ),
    )
}

fn realtime_budget() -> Outcome {
    let cfg = PipelineConfig::default();
    let command = Command::Bench { detections: Vec::new(), calibration: None, budget_ms: None, frames: None };
    let out = execute(&command, &cfg).unwrap();
    let report: pingtrace_cli::BenchReport = serde_json::from_slice(out.get("bench.json").unwrap()).unwrap();
    outcome(
        report.pass && report.total.p99_ms <= 6.6 && report.frames >= 9_800 && out.failure.is_none(),
        format!(
            "p99 {:.4} ms (mean {:.4} ms) over {} frames with {} detections",
            report.total.p99_ms, report.total.mean_ms, report.frames, report.detections
        ),
    )
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut cfg = PipelineConfig::default();
    cfg.simulate.rallies = 2;
    cfg.report.rallies = 4;
    cfg.train.steps = 10;
    cfg.toy_data.sequences = 20;
    cfg.toy_eval_sequences = 5;
    let mut runs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for dir in &dirs {
        let d = dir.path();
        let mut files = Vec::new();
        let mut step = |command: Command| {
            let out = execute(&command, &cfg).unwrap();
            out.write(d).unwrap();
            files.extend(out.files);
        };
        step(Command::Simulate);
        step(Command::Track {
            detections: vec![d.join("detections_left.jsonl"), d.join("detections_right.jsonl")],
            calibration: Some(d.join("rig.json")),
        });
        step(Command::Segment { input: d.join("tracks.jsonl") });
        step(Command::Spin { input: d.join("segmented.jsonl") });
        step(Command::Plot { input: d.join("scatter.csv") });
        step(Command::Report);
        step(Command::TrainToy { steps: None });
        runs.push(files);
    }
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = runs[0].iter().zip(&runs[1]).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
    outcome(
        differing.is_empty() && runs[0].len() == runs[1].len(),
        format!("{} files compared ({}); differing: {:?}", names.len(), names.join(" "), differing),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("cluster reproduction", cluster_reproduction),
        ("gravity anchor", gravity_anchor),
        ("inflection accuracy", inflection_accuracy),
        ("smoothing", smoothing),
        ("stereo and tracking", stereo_tracking),
        ("gradient correctness", gradient_correctness),
        ("toy training", toy_training),
        ("real-time budget", realtime_budget),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        println!(
            "criterion {} {}: {} ({:.1} s) {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
