//! Trains the gated cell and the single-frame baseline on occluded clips
//! and prints loss reduction and AUC.
//!
//! Usage: cargo run --release -p pingtrace-core --example train_toy -- [steps] [lr] [batch]

use std::time::Instant;

use pingtrace::gatedcell::{chance_rate, render_toy_dataset, train_toy_tracker, CellKind, ToyDataConfig, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = TrainConfig::default();
    if let Some(s) = args.first() {
        cfg.steps = s.parse().unwrap();
    }
    if let Some(s) = args.get(1) {
        cfg.learning_rate = s.parse().unwrap();
    }
    if let Some(s) = args.get(2) {
        cfg.batch_size = s.parse().unwrap();
    }
    let t = Instant::now();
    let data = ToyDataConfig { occlusion_frames: 3, ..ToyDataConfig::default() };
    let train = render_toy_dataset(&data);
    let eval = render_toy_dataset(&ToyDataConfig { sequences: 60, seed: 99, ..data });
    println!("rendered in {:.2?}; chance@2={:.4} chance@5={:.4}", t.elapsed(), chance_rate(&eval, 2.0), chance_rate(&eval, 5.0));
    for kind in [CellKind::Gated, CellKind::SingleFrame, CellKind::ConvLstm] {
        let t = Instant::now();
        let r = train_toy_tracker(&train, &eval, &TrainConfig { kind, ..cfg }).unwrap();
        println!(
            "{kind:?}: {:.2?} loss {:.3} -> smoothed {:.3} (ratio {:.3}) auc2={:.3} auc5={:.3}",
            t.elapsed(),
            r.losses[0],
            r.smoothed.last().unwrap(),
            r.smoothed.last().unwrap() / r.smoothed[0],
            r.auc2,
            r.auc5
        );
    }
}
