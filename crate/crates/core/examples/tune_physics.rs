//! Feature means per strike class on simulated truth.
//!
//! Usage: cargo run --release -p pingtrace-core --example tune_physics -- [key=value ...]
//! Keys: rallies, seed, magnus, coupling, friction, retention, restitution,
//! drag, and <class>_speed / <class>_spin as lo:hi (class = no, light, heavy).

use pingtrace::simulator::{generate_rally_retrying, ScenarioConfig, SimConfig, SpinLabel, TableGeometry};
use pingtrace::spin::{analyze_rally, SpinCentroids, SpinCluster, SpinConfig};

fn range(v: &str) -> (f64, f64) {
    let (a, b) = v.split_once(':').expect("range as lo:hi");
    (a.parse().unwrap(), b.parse().unwrap())
}

fn main() {
    let mut rallies = 40usize;
    let mut seed = 1u64;
    let mut table = TableGeometry::default();
    let mut sim = SimConfig::default();
    let mut cfg = ScenarioConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        let x = || v.parse::<f64>().unwrap();
        match k {
            "rallies" => rallies = v.parse().unwrap(),
            "seed" => seed = v.parse().unwrap(),
            "magnus" => sim.physics.magnus_coefficient = x(),
            "drag" => sim.physics.drag_coefficient = x(),
            "coupling" => table.spin_coupling = x(),
            "friction" => table.friction_coefficient = x(),
            "retention" => table.spin_retention = x(),
            "restitution" => table.restitution_normal = x(),
            "no_speed" => cfg.no_spin.speed = range(v),
            "light_speed" => cfg.light_topspin.speed = range(v),
            "heavy_speed" => cfg.heavy_topspin.speed = range(v),
            "light_spin" => cfg.light_topspin.spin = range(v),
            "heavy_spin" => cfg.heavy_topspin.spin = range(v),
            _ => panic!("unknown key {k}"),
        }
    }

    let spin_cfg = SpinConfig::default();
    let span = [0.916, 14.5];
    let mut agree = 0usize;
    let mut total = 0usize;
    for label in SpinLabel::ALL {
        let mut feats = Vec::new();
        let mut failed = 0;
        for r in 0..rallies {
            let labels = [label, label, label];
            let Ok((script, truth)) = generate_rally_retrying(&labels, seed * 1000 + r as u64, &table, &sim, &cfg) else {
                failed += 1;
                continue;
            };
            let scripted = script.hit_labels();
            for a in analyze_rally(&truth, &spin_cfg) {
                let Some(f) = a.features else { continue };
                let want = scripted.iter().find(|(fr, _)| *fr == a.hit.frame).map(|(_, l)| SpinCluster::from(*l));
                total += 1;
                agree += usize::from(want == Some(a.class.label));
                feats.push([f.delta_v_xy, f.z_accel]);
            }
        }
        let n = feats.len().max(1) as f64;
        let mean = [feats.iter().map(|f| f[0]).sum::<f64>() / n, feats.iter().map(|f| f[1]).sum::<f64>() / n];
        let sd = [0, 1].map(|k| (feats.iter().map(|f| (f[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt());
        let target = SpinCentroids::OBSERVED.get(SpinCluster::from(label)).unwrap();
        let err = [0, 1].map(|k| (mean[k] - target[k]).abs() / span[k]);
        println!(
            "{label:?}: n={} failed_rallies={failed} mean=({:.3}, {:.2}) sd=({:.3}, {:.2}) target=({}, {}) rel_err=({:.2}, {:.2})",
            feats.len(),
            mean[0],
            mean[1],
            sd[0],
            sd[1],
            target[0],
            target[1],
            err[0],
            err[1]
        );
    }
    println!("agreement {agree}/{total} = {:.3}", agree as f64 / total.max(1) as f64);
}
