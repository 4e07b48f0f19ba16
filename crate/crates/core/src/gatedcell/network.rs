use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cell::{
    conv_lstm_step_backward, conv_lstm_step_cached, gated_step_backward, gated_step_cached, heatmap_loss, heatmap_loss_grad,
    spatial_softmax, ConvLstmParams, GatedCache, GatedCellParams, Heatmap, LstmCache,
};
use super::tensor::{Conv2d, FeatureMap};
use super::GatedError;

const ENCODER_KERNEL: usize = 4;
const CELL_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Gated,
    ConvLstm,
    /// One convolution per frame with no state carried between frames.
    SingleFrame,
}

impl CellKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellKind::Gated => "gated",
            CellKind::ConvLstm => "conv_lstm",
            CellKind::SingleFrame => "single_frame",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum RecurrentParams {
    Gated(GatedCellParams),
    ConvLstm(ConvLstmParams),
    SingleFrame(Conv2d),
}

/// Strided encoder, recurrent cell and transposed-convolution decoder
/// producing one single-channel logit map per frame at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub encoder: Conv2d,
    pub cell: RecurrentParams,
    /// Applied transposed: hidden channels back to one full-size channel.
    pub decoder: Conv2d,
}

impl NetworkParams {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        let encoder = Conv2d::zeros(hidden, 1, ENCODER_KERNEL, 2, 1, true);
        let decoder = Conv2d::zeros(hidden, 1, ENCODER_KERNEL, 2, 1, false);
        let cell = match kind {
            CellKind::Gated => RecurrentParams::Gated(GatedCellParams::zeros(hidden, hidden, CELL_KERNEL)),
            CellKind::ConvLstm => RecurrentParams::ConvLstm(ConvLstmParams::zeros(hidden, hidden, CELL_KERNEL)),
            CellKind::SingleFrame => RecurrentParams::SingleFrame(Conv2d::same(hidden, hidden, CELL_KERNEL, true)),
        };
        Self { encoder, cell, decoder }
    }

    pub fn random(kind: CellKind, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(kind, hidden);
        p.encoder = p.encoder.randomized(rng);
        p.decoder = p.decoder.randomized(rng);
        match &mut p.cell {
            RecurrentParams::Gated(g) => {
                g.w_z = g.w_z.clone().randomized(rng);
                g.w_c = g.w_c.clone().randomized(rng);
            }
            RecurrentParams::ConvLstm(l) => {
                for gate in l.gates_mut() {
                    *gate = gate.clone().randomized(rng);
                }
                // Start by remembering.
                l.w_f.bias.as_mut().expect("lstm bias").fill(1.0);
            }
            RecurrentParams::SingleFrame(c) => *c = c.clone().randomized(rng),
        }
        p
    }

    pub fn kind(&self) -> CellKind {
        match self.cell {
            RecurrentParams::Gated(_) => CellKind::Gated,
            RecurrentParams::ConvLstm(_) => CellKind::ConvLstm,
            RecurrentParams::SingleFrame(_) => CellKind::SingleFrame,
        }
    }

    pub fn hidden(&self) -> usize {
        self.encoder.out_channels()
    }

    /// Every trainable tensor with a stable name, in serialization order.
    pub fn tensors(&self) -> Vec<(String, &DMatrix<f64>)> {
        let mut out = vec![("encoder.weight".to_string(), &self.encoder.weights)];
        out.push(("encoder.bias".into(), self.encoder.bias.as_ref().expect("encoder bias")));
        match &self.cell {
            RecurrentParams::Gated(g) => {
                out.push(("cell.w_z".into(), &g.w_z.weights));
                out.push(("cell.w_c".into(), &g.w_c.weights));
            }
            RecurrentParams::ConvLstm(l) => {
                for (name, gate) in ["i", "f", "o", "g"].iter().zip(l.gates()) {
                    out.push((format!("cell.w_{name}.weight"), &gate.weights));
                    out.push((format!("cell.w_{name}.bias"), gate.bias.as_ref().expect("lstm bias")));
                }
            }
            RecurrentParams::SingleFrame(c) => {
                out.push(("cell.conv.weight".into(), &c.weights));
                out.push(("cell.conv.bias".into(), c.bias.as_ref().expect("conv bias")));
            }
        }
        out.push(("decoder.weight".into(), &self.decoder.weights));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut out = vec![&mut self.encoder.weights];
        out.push(self.encoder.bias.as_mut().expect("encoder bias"));
        match &mut self.cell {
            RecurrentParams::Gated(g) => {
                out.push(&mut g.w_z.weights);
                out.push(&mut g.w_c.weights);
            }
            RecurrentParams::ConvLstm(l) => {
                for gate in l.gates_mut() {
                    out.push(&mut gate.weights);
                    out.push(gate.bias.as_mut().expect("lstm bias"));
                }
            }
            RecurrentParams::SingleFrame(c) => {
                out.push(&mut c.weights);
                out.push(c.bias.as_mut().expect("conv bias"));
            }
        }
        out.push(&mut self.decoder.weights);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Same structure with every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        let theirs: Vec<DMatrix<f64>> = other.tensors().into_iter().map(|(_, t)| t.clone()).collect();
        for (mine, t) in self.tensors_mut().into_iter().zip(theirs) {
            *mine += t * scale;
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.norm_squared()).sum::<f64>().sqrt()
    }
}

#[allow(clippy::large_enum_variant)]
enum StepCache {
    Gated(GatedCache),
    Lstm(LstmCache),
    Single { input_cols: DMatrix<f64>, h: FeatureMap },
}

impl StepCache {
    fn h(&self) -> &FeatureMap {
        match self {
            StepCache::Gated(c) => &c.h,
            StepCache::Lstm(c) => &c.h,
            StepCache::Single { h, .. } => h,
        }
    }
}

struct FrameCache {
    frame_cols: DMatrix<f64>,
    encoded: FeatureMap,
    step: StepCache,
    heatmap: Heatmap,
}

fn check_frames(params: &NetworkParams, frames: &[FeatureMap]) -> Result<(usize, usize), GatedError> {
    let first = frames.first().ok_or_else(|| GatedError::ShapeMismatch("empty sequence".into()))?;
    let shape = first.shape();
    if shape.0 != 1 || shape.1 % 2 != 0 || shape.2 % 2 != 0 {
        return Err(GatedError::ShapeMismatch(format!(
            "frames must be single-channel with even size, got {}x{}x{}",
            shape.0, shape.1, shape.2
        )));
    }
    if let Some(f) = frames.iter().find(|f| f.shape() != shape) {
        return Err(GatedError::ShapeMismatch(format!("frame {:?} differs from first frame {:?}", f.shape(), shape)));
    }
    if params.hidden() == 0 {
        return Err(GatedError::ShapeMismatch("network has no hidden channels".into()));
    }
    Ok((shape.1, shape.2))
}

fn run(params: &NetworkParams, frames: &[FeatureMap]) -> Result<Vec<FrameCache>, GatedError> {
    let (rows, cols) = check_frames(params, frames)?;
    let hidden = params.hidden();
    let (hr, hc) = (rows / 2, cols / 2);
    let mut h = FeatureMap::zeros(hidden, hr, hc);
    let mut cell = FeatureMap::zeros(hidden, hr, hc);
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let (pre, frame_cols) = params.encoder.forward(frame)?;
        let encoded = pre.map(f64::tanh);
        let step = match &params.cell {
            RecurrentParams::Gated(g) => StepCache::Gated(gated_step_cached(&encoded, &h, g)?),
            RecurrentParams::ConvLstm(l) => {
                let c = conv_lstm_step_cached(&encoded, &h, &cell, l)?;
                cell = c.cell.clone();
                StepCache::Lstm(c)
            }
            RecurrentParams::SingleFrame(conv) => {
                let (a, input_cols) = conv.forward(&encoded)?;
                StepCache::Single { input_cols, h: a.map(f64::tanh) }
            }
        };
        h = step.h().clone();
        let logits = params.decoder.transpose_forward(&h, rows, cols)?;
        let heatmap = spatial_softmax(&logits)?;
        out.push(FrameCache { frame_cols, encoded, step, heatmap });
    }
    Ok(out)
}

/// Heatmap for every frame of a sequence, starting from a zero state.
pub fn forward_sequence(params: &NetworkParams, frames: &[FeatureMap]) -> Result<Vec<Heatmap>, GatedError> {
    Ok(run(params, frames)?.into_iter().map(|c| c.heatmap).collect())
}

fn check_targets(frames: &[FeatureMap], targets: &[(usize, usize)]) -> Result<(), GatedError> {
    if frames.len() != targets.len() {
        return Err(GatedError::ShapeMismatch(format!("{} frames but {} targets", frames.len(), targets.len())));
    }
    Ok(())
}

/// Mean cross-entropy over the frames of a sequence.
pub fn sequence_loss(params: &NetworkParams, frames: &[FeatureMap], targets: &[(usize, usize)]) -> Result<f64, GatedError> {
    check_targets(frames, targets)?;
    let caches = run(params, frames)?;
    let mut total = 0.0;
    for (c, &t) in caches.iter().zip(targets) {
        total += heatmap_loss(&c.heatmap, t)?;
    }
    Ok(total / frames.len() as f64)
}

/// Mean cross-entropy and its gradient by backpropagation through time.
pub fn sequence_loss_and_grad(
    params: &NetworkParams,
    frames: &[FeatureMap],
    targets: &[(usize, usize)],
) -> Result<(f64, NetworkParams), GatedError> {
    check_targets(frames, targets)?;
    let caches = run(params, frames)?;
    let n = frames.len() as f64;
    let (rows, cols) = (frames[0].rows, frames[0].cols);
    let hidden = params.hidden();
    let (hr, hc) = (rows / 2, cols / 2);
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut dh_next = FeatureMap::zeros(hidden, hr, hc);
    let mut dcell_next = FeatureMap::zeros(hidden, hr, hc);

    for (t, cache) in caches.iter().enumerate().rev() {
        loss += heatmap_loss(&cache.heatmap, targets[t])?;
        let mut dlogits = heatmap_loss_grad(&cache.heatmap, targets[t])?;
        dlogits.data /= n;
        let h = cache.step.h();
        let (dh_out, d_dec) = params.decoder.transpose_backward(h, &dlogits);
        grads.decoder.weights += d_dec;
        let mut dh = dh_out;
        dh.data += &dh_next.data;

        let d_encoded = match (&params.cell, &cache.step, &mut grads.cell) {
            (RecurrentParams::Gated(p), StepCache::Gated(c), RecurrentParams::Gated(g)) => {
                let r = gated_step_backward(c, &dh, p, hidden);
                g.w_z.weights += r.w_z;
                g.w_c.weights += r.w_c;
                dh_next = r.h_prev;
                r.x
            }
            (RecurrentParams::ConvLstm(p), StepCache::Lstm(c), RecurrentParams::ConvLstm(g)) => {
                let r = conv_lstm_step_backward(c, &dh, &dcell_next, p, hidden);
                for ((gate, w), b) in g.gates_mut().into_iter().zip(r.weights).zip(r.biases) {
                    gate.weights += w;
                    *gate.bias.as_mut().expect("lstm bias") += b;
                }
                dh_next = r.h_prev;
                dcell_next = r.cell_prev;
                r.x
            }
            (RecurrentParams::SingleFrame(p), StepCache::Single { input_cols, h }, RecurrentParams::SingleFrame(g)) => {
                let da = FeatureMap::from_data(hr, hc, dh.data.zip_map(&h.data, |d, v| d * (1.0 - v * v)));
                let (dx, dw, db) = p.backward(input_cols, &da, (hr, hc));
                g.weights += dw;
                *g.bias.as_mut().expect("conv bias") += db.expect("conv bias");
                dx
            }
            _ => unreachable!("cache kind follows parameter kind"),
        };

        let da_enc = FeatureMap::from_data(hr, hc, d_encoded.data.zip_map(&cache.encoded.data, |d, e| d * (1.0 - e * e)));
        let (_, dw, db) = params.encoder.backward(&cache.frame_cols, &da_enc, (rows, cols));
        grads.encoder.weights += dw;
        *grads.encoder.bias.as_mut().expect("encoder bias") += db.expect("encoder bias");
    }
    Ok((loss / n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sequence(rng: &mut ChaCha8Rng, len: usize, rows: usize, cols: usize) -> (Vec<FeatureMap>, Vec<(usize, usize)>) {
        let frames = (0..len).map(|_| FeatureMap::from_fn(1, rows, cols, |_, _, _| rng.random_range(0.0..1.0))).collect();
        let targets = (0..len).map(|_| (rng.random_range(0..rows), rng.random_range(0..cols))).collect();
        (frames, targets)
    }

    /// Largest per-tensor relative error between analytic and central
    /// finite-difference gradients.
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

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [CellKind::Gated, CellKind::ConvLstm, CellKind::SingleFrame] {
            let params = NetworkParams::random(kind, 3, &mut rng);
            let (frames, targets) = sequence(&mut rng, 3, 6, 8);
            let err = gradient_error(&params, &frames, &targets);
            assert!(err < 1e-5, "{kind:?}: {err}");
        }
    }

    #[test]
    fn forward_is_deterministic_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = NetworkParams::random(CellKind::Gated, 4, &mut rng);
        let (frames, _) = sequence(&mut rng, 4, 8, 10);
        let a = forward_sequence(&params, &frames).unwrap();
        assert_eq!(a, forward_sequence(&params, &frames).unwrap());
        for h in &a {
            assert!((h.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(h.probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn tensor_names_are_unique() {
        for kind in [CellKind::Gated, CellKind::ConvLstm, CellKind::SingleFrame] {
            let p = NetworkParams::zeros(kind, 2);
            let names: Vec<_> = p.tensors().into_iter().map(|(n, _)| n).collect();
            let mut dedup = names.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(names.len(), dedup.len());
            assert_eq!(names.len(), p.zeros_like().tensors_mut().len());
        }
    }

    #[test]
    fn odd_frames_are_rejected() {
        let p = NetworkParams::zeros(CellKind::Gated, 2);
        let frames = vec![FeatureMap::zeros(1, 7, 8)];
        assert!(matches!(forward_sequence(&p, &frames), Err(GatedError::ShapeMismatch(_))));
        assert!(matches!(forward_sequence(&p, &[]), Err(GatedError::ShapeMismatch(_))));
    }
}
