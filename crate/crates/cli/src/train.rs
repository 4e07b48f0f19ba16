use serde::Serialize;

use pingtrace::gatedcell::{chance_rate, params_to_bytes, render_toy_dataset, train_toy_tracker, CellKind, TrainConfig, TrainReport};

use crate::config::PipelineConfig;
use crate::{CliError, Outputs};

/// Seed offset separating the held-out clips from the training clips.
const EVAL_SEED_OFFSET: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainSummary {
    pub kind: CellKind,
    pub initial_smoothed_loss: f64,
    pub final_smoothed_loss: f64,
    pub auc2: f64,
    pub auc5: f64,
}

impl TrainSummary {
    fn of(kind: CellKind, r: &TrainReport) -> Self {
        TrainSummary {
            kind,
            initial_smoothed_loss: r.smoothed.first().copied().unwrap_or(f64::NAN),
            final_smoothed_loss: r.smoothed.last().copied().unwrap_or(f64::NAN),
            auc2: r.auc2,
            auc5: r.auc5,
        }
    }
}

/// Trains the configured cell and, when the baseline stage is on, the
/// single-frame network on the same clips.
pub fn cmd_train_toy(cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    let mut data_cfg = cfg.toy_data;
    data_cfg.seed ^= cfg.seed;
    let train = render_toy_dataset(&data_cfg);
    let eval_cfg = pingtrace::gatedcell::ToyDataConfig {
        sequences: cfg.toy_eval_sequences.max(1),
        seed: data_cfg.seed.wrapping_add(EVAL_SEED_OFFSET),
        ..data_cfg
    };
    let eval = render_toy_dataset(&eval_cfg);

    let mut kinds = vec![cfg.train.kind];
    if cfg.stages.baseline && cfg.train.kind != CellKind::SingleFrame {
        kinds.push(CellKind::SingleFrame);
    }
    let mut out = Outputs::default();
    let mut auc = String::from("kind,auc2,auc5,chance2,chance5\n");
    let (c2, c5) = (chance_rate(&eval, 2.0), chance_rate(&eval, 5.0));
    let mut summaries = Vec::new();
    for (i, kind) in kinds.into_iter().enumerate() {
        let tc = TrainConfig { kind, seed: cfg.train.seed ^ cfg.seed, ..cfg.train };
        let report = train_toy_tracker(&train, &eval, &tc).map_err(|e| CliError::Analysis(format!("{}: {e}", kind.as_str())))?;
        let (bytes, manifest) = params_to_bytes(&report.params);
        let prefix = if i == 0 { String::new() } else { format!("{}_", kind.as_str()) };
        out.bytes(&format!("{prefix}params.bin"), bytes);
        out.json(&format!("{prefix}params.json"), &manifest);
        out.text(&format!("{prefix}loss.csv"), report.loss_csv());
        auc.push_str(&format!("{},{},{},{c2},{c5}\n", kind.as_str(), report.auc2, report.auc5));
        summaries.push(TrainSummary::of(kind, &report));
    }
    out.text("auc.csv", auc);
    out.summary = summaries
        .iter()
        .map(|s| {
            format!(
                "{:<12} smoothed loss {:.4} -> {:.4}  AUC@2 {:.3}  AUC@5 {:.3}\n",
                s.kind.as_str(),
                s.initial_smoothed_loss,
                s.final_smoothed_loss,
                s.auc2,
                s.auc5
            )
        })
        .collect::<String>()
        + &format!("chance      AUC@2 {c2:.3}  AUC@5 {c5:.3}\n");
    out.json("train_summary.json", &summaries);
    Ok(out)
}
