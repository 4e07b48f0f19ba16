use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::ToySequence;
use super::network::{forward_sequence, sequence_loss_and_grad, CellKind, NetworkParams};
use super::GatedError;
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: CellKind,
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Gradients with a larger global norm are rescaled to this norm.
    pub clip_norm: f64,
    /// Trailing window of the smoothed loss curve.
    pub smoothing_window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: CellKind::Gated,
            hidden: 8,
            steps: 300,
            batch_size: 2,
            learning_rate: 0.5,
            clip_norm: 2.0,
            smoothing_window: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub params: NetworkParams,
    pub losses: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub auc2: f64,
    pub auc5: f64,
}

impl TrainReport {
    /// `step,loss,smoothed` rows.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss,smoothed\n");
        for (i, (l, s)) in self.losses.iter().zip(&self.smoothed).enumerate() {
            out.push_str(&format!("{i},{l},{s}\n"));
        }
        out
    }
}

/// Trailing moving average.
pub fn smooth_curve(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut sum = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            sum += v;
            if i >= w {
                sum -= values[i - w];
            }
            sum / (i + 1).min(w) as f64
        })
        .collect()
}

/// Minibatch gradient descent with a fixed step on the mean per-frame
/// cross-entropy, then AUC on `eval`.
pub fn train_toy_tracker(train: &[ToySequence], eval: &[ToySequence], config: &TrainConfig) -> Result<TrainReport, GatedError> {
    if train.is_empty() || config.batch_size == 0 {
        return Err(GatedError::ShapeMismatch("training needs at least one sequence and a non-empty batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = NetworkParams::random(config.kind, config.hidden, &mut rng);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut grad = params.zeros_like();
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            let s = &train[rng.random_range(0..train.len())];
            let (l, g) = sequence_loss_and_grad(&params, &s.frames, &s.targets)?;
            loss += l;
            grad.add_scaled(&g, 1.0);
        }
        loss /= config.batch_size as f64;
        let norm = grad.norm() / config.batch_size as f64;
        if !loss.is_finite() || !norm.is_finite() {
            return Err(GatedError::DivergedLoss { step });
        }
        let scale = if norm > config.clip_norm { config.clip_norm / norm } else { 1.0 };
        params.add_scaled(&grad, -config.learning_rate * scale / config.batch_size as f64);
        losses.push(loss);
    }
    let smoothed = smooth_curve(&losses, config.smoothing_window);
    let (auc2, auc5) = evaluate_auc(&params, eval)?;
    Ok(TrainReport { params, losses, smoothed, auc2, auc5 })
}

/// One scored detection: the heatmap argmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDetection {
    pub log_prob: f64,
    pub error_px: f64,
}

pub fn detections(params: &NetworkParams, data: &[ToySequence]) -> Result<Vec<ScoredDetection>, GatedError> {
    let mut out = Vec::new();
    for s in data {
        for (h, &(tr, tc)) in forward_sequence(params, &s.frames)?.iter().zip(&s.targets) {
            let ((r, c), p) = h.argmax();
            let error_px = ((r as f64 - tr as f64).powi(2) + (c as f64 - tc as f64).powi(2)).sqrt();
            out.push(ScoredDetection { log_prob: p.ln(), error_px });
        }
    }
    Ok(out)
}

/// Area under the precision-recall curve traced by sweeping a threshold on
/// detection log-probability; a detection is correct within `radius_px`.
/// Every frame has a ball, so recall is relative to the number of frames.
pub fn pr_auc(dets: &[ScoredDetection], radius_px: f64) -> f64 {
    if dets.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<&ScoredDetection> = dets.iter().collect();
    sorted.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
    let total = dets.len() as f64;
    let (mut tp, mut area, mut last_recall) = (0usize, 0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].log_prob == sorted[i].log_prob {
            tp += usize::from(sorted[j].error_px <= radius_px);
            j += 1;
        }
        let precision = tp as f64 / j as f64;
        let recall = tp as f64 / total;
        area += precision * (recall - last_recall);
        last_recall = recall;
        i = j;
    }
    area
}

/// AUC at 2 and 5 pixels.
pub fn evaluate_auc(params: &NetworkParams, data: &[ToySequence]) -> Result<(f64, f64), GatedError> {
    let d = detections(params, data)?;
    Ok((pr_auc(&d, 2.0), pr_auc(&d, 5.0)))
}

/// Fraction of pixels within `radius_px` of the target, averaged over
/// frames: the hit rate of a uniformly random guess.
pub fn chance_rate(data: &[ToySequence], radius_px: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in data {
        for (f, &(tr, tc)) in s.frames.iter().zip(&s.targets) {
            let mut hits = 0usize;
            for r in 0..f.rows {
                for c in 0..f.cols {
                    hits += usize::from(((r as f64 - tr as f64).powi(2) + (c as f64 - tc as f64).powi(2)).sqrt() <= radius_px);
                }
            }
            sum += hits as f64 / (f.rows * f.cols) as f64;
            n += 1;
        }
    }
    sum / n.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset in values (not bytes) into the flat file.
    pub offset: usize,
}

/// Describes the flat little-endian `f64` parameter file. Each tensor is
/// stored column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub kind: CellKind,
    pub hidden: usize,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn params_to_bytes(params: &NetworkParams) -> (Vec<u8>, ParamManifest) {
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in params.tensors() {
        tensors.push(TensorEntry { name, rows: t.nrows(), cols: t.ncols(), offset });
        offset += t.len();
        for v in t.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = ParamManifest { kind: params.kind(), hidden: params.hidden(), dtype: "f64le".into(), tensors };
    (bytes, manifest)
}

pub fn params_from_bytes(bytes: &[u8], manifest: &ParamManifest) -> Result<NetworkParams, GatedError> {
    let bad = |m: String| GatedError::Manifest(m);
    if manifest.dtype != "f64le" {
        return Err(bad(format!("unsupported dtype '{}'", manifest.dtype)));
    }
    if !bytes.len().is_multiple_of(8) {
        return Err(bad(format!("file length {} is not a multiple of 8", bytes.len())));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut params = NetworkParams::zeros(manifest.kind, manifest.hidden);
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    if names.len() != manifest.tensors.len() {
        return Err(bad(format!("expected {} tensors, manifest lists {}", names.len(), manifest.tensors.len())));
    }
    for ((slot, name), entry) in params.tensors_mut().into_iter().zip(&names).zip(&manifest.tensors) {
        if &entry.name != name || (entry.rows, entry.cols) != slot.shape() {
            return Err(bad(format!(
                "tensor '{}' {}x{} does not match expected '{}' {}x{}",
                entry.name,
                entry.rows,
                entry.cols,
                name,
                slot.nrows(),
                slot.ncols()
            )));
        }
        let end = entry.offset + entry.rows * entry.cols;
        let data = values.get(entry.offset..end).ok_or_else(|| bad(format!("tensor '{name}' runs past the end of the file")))?;
        *slot = DMatrix::from_column_slice(entry.rows, entry.cols, data);
    }
    Ok(params)
}

pub fn save_params(params: &NetworkParams, bin_path: &Path, manifest_path: &Path) -> Result<(), GatedError> {
    let (bytes, manifest) = params_to_bytes(params);
    io::write_bytes(bin_path, &bytes).map_err(|e| GatedError::Io(e.to_string()))?;
    io::write_json(manifest_path, &manifest).map_err(|e| GatedError::Io(e.to_string()))
}

pub fn load_params(bin_path: &Path, manifest_path: &Path) -> Result<NetworkParams, GatedError> {
    let manifest: ParamManifest = io::read_json(manifest_path).map_err(|e| GatedError::Io(e.to_string()))?;
    let bytes = std::fs::read(bin_path).map_err(|e| GatedError::Io(format!("{}: {e}", bin_path.display())))?;
    params_from_bytes(&bytes, &manifest)
}
