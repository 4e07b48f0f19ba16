//! Event detection and tracking accuracy on random simulated rallies.
//!
//! Usage: cargo run --release -p pingtrace-core --example evaluate_pipeline -- [rallies] [noise_px] [seed]

use pingtrace::geometry::Rig;
use pingtrace::simulator::{generate_rally_retrying, random_labels, render_detections, ScenarioConfig, SimConfig, TableGeometry};
use pingtrace::tracker::{track_detections, TrackPositions, TrackerConfig};
use pingtrace::trajectory::{bootstrap_smooth, detect_bounces, detect_returns, EventKind, InflectionConfig, Sample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let rallies: u64 = args.first().map_or(100, |a| a.parse().unwrap());
    let noise: f64 = args.get(1).map_or(0.5, |a| a.parse().unwrap());
    let seed: u64 = args.get(2).map_or(11, |a| a.parse().unwrap());
    let table = TableGeometry::default();
    let sim = SimConfig::default();
    let rig = Rig::standard();
    let infl = InflectionConfig::default();
    let mut stats = [[0usize; 3]; 2]; // [kind][tp, fp, fn]
    let mut worst = [0u64; 2];
    let mut tracks_per_rally = Vec::new();
    for r in 0..rallies {
        let labels = random_labels(2 + (r % 4) as usize, seed + r);
        let (_, truth) = generate_rally_retrying(&labels, seed * 7919 + r, &table, &sim, &ScenarioConfig::default()).unwrap();
        let streams = render_detections(&truth, &rig.cameras, noise, 0.0, r);
        let dets: Vec<_> = streams.into_iter().flat_map(|s| s.detections).collect();
        let tracks = track_detections(&dets, &rig, &TrackerConfig::default()).unwrap();
        tracks_per_rally.push(tracks.iter().filter(|t| t.points.len() > 5).count());
        let mut found = Vec::new();
        for t in &tracks {
            let traj = t.to_trajectory(TrackPositions::Measured);
            let b = detect_bounces(&traj, &table, &infl);
            let h = detect_returns(&traj, &b, &infl);
            found.extend(b);
            found.extend(h);
        }
        for (k, kind) in [EventKind::Bounce, EventKind::Hit].into_iter().enumerate() {
            let mut want: Vec<u64> = truth.events_of(kind).map(|e| e.frame).collect();
            let got: Vec<u64> = found.iter().filter(|e| e.kind == kind).map(|e| e.frame).collect();
            for g in got {
                if let Some(i) = want.iter().position(|w| w.abs_diff(g) <= 2) {
                    worst[k] = worst[k].max(want[i].abs_diff(g));
                    want.remove(i);
                    stats[k][0] += 1;
                } else {
                    stats[k][1] += 1;
                    if rallies <= 20 {
                        println!("rally {r}: false {kind:?} at {g}");
                    }
                }
            }
            stats[k][2] += want.len();
            if rallies <= 20 && !want.is_empty() {
                println!("rally {r}: missed {kind:?} at {want:?}");
            }
        }
    }
    for (k, name) in ["bounce", "return"].iter().enumerate() {
        let [tp, fp, fn_] = stats[k];
        println!(
            "{name}: tp={tp} fp={fp} fn={fn_} precision={:.3} recall={:.3} worst_frame_error={}",
            tp as f64 / (tp + fp).max(1) as f64,
            tp as f64 / (tp + fn_).max(1) as f64,
            worst[k]
        );
    }
    smoothing(seed, &table, &sim);
    let multi = tracks_per_rally.iter().filter(|&&n| n != 1).count();
    println!("rallies with != 1 track: {multi}/{rallies}");
}

/// RMSE of bootstrap-smoothed flight segments against truth at 5 mm noise.
fn smoothing(seed: u64, table: &TableGeometry, sim: &SimConfig) {
    let noise = Normal::new(0.0, 0.005).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut raw, mut smooth, mut segments) = (0.0, 0.0, 0usize);
    let mut r = 0;
    while segments < 200 {
        let labels = random_labels(3, seed + r);
        let (_, truth) = generate_rally_retrying(&labels, seed * 31 + r, table, sim, &ScenarioConfig::default()).unwrap();
        r += 1;
        let cuts: Vec<usize> = truth.events.iter().filter_map(|e| truth.index_of_frame(e.frame)).collect();
        for w in cuts.windows(2) {
            let seg: &[Sample] = &truth.samples[w[0] + 1..w[1]];
            if seg.len() < 20 || segments >= 200 {
                continue;
            }
            let noisy: Vec<Sample> = seg
                .iter()
                .map(|s| {
                    let mut n = *s;
                    n.position += nalgebra::Vector3::from_fn(|_, _| noise.sample(&mut rng));
                    n
                })
                .collect();
            let out = bootstrap_smooth(&noisy, segments as u64);
            let rmse = |a: &[Sample]| {
                (a.iter().zip(seg).map(|(x, t)| (x.position - t.position).norm_squared()).sum::<f64>() / seg.len() as f64).sqrt()
            };
            raw += rmse(&noisy);
            smooth += rmse(&out);
            segments += 1;
        }
    }
    println!("smoothing: raw_rmse={:.5} smoothed_rmse={:.5} reduction={:.3}", raw / 200.0, smooth / 200.0, 1.0 - smooth / raw);
}
