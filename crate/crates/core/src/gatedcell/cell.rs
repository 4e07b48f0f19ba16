use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::tensor::{Conv2d, FeatureMap};
use super::GatedError;

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Kernels of the gated recurrence `h = σ(W_z * u) ⊙ tanh(W_c * u)` where `u`
/// is the input stacked on the previous hidden state along channels.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedCellParams {
    pub w_z: Conv2d,
    pub w_c: Conv2d,
}

impl GatedCellParams {
    pub fn zeros(input_channels: usize, hidden: usize, size: usize) -> Self {
        let conv = Conv2d::same(hidden, input_channels + hidden, size, false);
        Self { w_z: conv.clone(), w_c: conv }
    }

    pub fn hidden(&self) -> usize {
        self.w_z.out_channels()
    }

    fn check(&self, x: &FeatureMap, h_prev: &FeatureMap) -> Result<(), GatedError> {
        let (wz, wc) = (&self.w_z, &self.w_c);
        if wz.weights.shape() != wc.weights.shape() || wz.size != wc.size || wz.stride != 1 || wc.stride != 1 {
            return Err(GatedError::ShapeMismatch("gate and candidate kernels differ".into()));
        }
        if h_prev.channels() != self.hidden() || x.channels() + h_prev.channels() != wz.in_channels {
            return Err(GatedError::ShapeMismatch(format!(
                "cell takes {} input + {} hidden channels, got {} + {}",
                wz.in_channels.saturating_sub(self.hidden()),
                self.hidden(),
                x.channels(),
                h_prev.channels()
            )));
        }
        Ok(())
    }
}

/// Intermediate values of one gated step.
#[derive(Debug, Clone)]
pub struct GatedCache {
    pub input_cols: DMatrix<f64>,
    pub z: FeatureMap,
    pub c: FeatureMap,
    pub h: FeatureMap,
}

pub fn gated_step_cached(x: &FeatureMap, h_prev: &FeatureMap, params: &GatedCellParams) -> Result<GatedCache, GatedError> {
    params.check(x, h_prev)?;
    let u = FeatureMap::concat(x, h_prev)?;
    let (az, input_cols) = params.w_z.forward(&u)?;
    let ac = FeatureMap::from_data(u.rows, u.cols, &params.w_c.weights * &input_cols);
    let z = az.map(sigmoid);
    let c = ac.map(f64::tanh);
    let h = FeatureMap::from_data(u.rows, u.cols, z.data.component_mul(&c.data));
    Ok(GatedCache { input_cols, z, c, h })
}

/// One step of the gated convolutional recurrence.
pub fn gated_step(x: &FeatureMap, h_prev: &FeatureMap, params: &GatedCellParams) -> Result<FeatureMap, GatedError> {
    Ok(gated_step_cached(x, h_prev, params)?.h)
}

pub struct GatedGrads {
    pub x: FeatureMap,
    pub h_prev: FeatureMap,
    pub w_z: DMatrix<f64>,
    pub w_c: DMatrix<f64>,
}

pub fn gated_step_backward(cache: &GatedCache, grad_h: &FeatureMap, params: &GatedCellParams, input_channels: usize) -> GatedGrads {
    let (rows, cols) = (grad_h.rows, grad_h.cols);
    let dz = grad_h.data.component_mul(&cache.c.data);
    let dc = grad_h.data.component_mul(&cache.z.data);
    let daz = dz.zip_map(&cache.z.data, |g, z| g * z * (1.0 - z));
    let dac = dc.zip_map(&cache.c.data, |g, c| g * (1.0 - c * c));
    let w_z = &daz * cache.input_cols.transpose();
    let w_c = &dac * cache.input_cols.transpose();
    let du_cols = params.w_z.weights.transpose() * &daz + params.w_c.weights.transpose() * &dac;
    let du = params.w_z.col2im(&du_cols, rows, cols, (rows, cols));
    GatedGrads { x: du.channel_slice(0, input_channels), h_prev: du.channel_slice(input_channels, params.hidden()), w_z, w_c }
}

/// Convolutional LSTM kernels with biases: input, forget and output gates
/// and the candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmParams {
    pub w_i: Conv2d,
    pub w_f: Conv2d,
    pub w_o: Conv2d,
    pub w_g: Conv2d,
}

impl ConvLstmParams {
    pub fn zeros(input_channels: usize, hidden: usize, size: usize) -> Self {
        let conv = Conv2d::same(hidden, input_channels + hidden, size, true);
        Self { w_i: conv.clone(), w_f: conv.clone(), w_o: conv.clone(), w_g: conv }
    }

    pub fn hidden(&self) -> usize {
        self.w_i.out_channels()
    }

    pub fn gates(&self) -> [&Conv2d; 4] {
        [&self.w_i, &self.w_f, &self.w_o, &self.w_g]
    }

    pub fn gates_mut(&mut self) -> [&mut Conv2d; 4] {
        [&mut self.w_i, &mut self.w_f, &mut self.w_o, &mut self.w_g]
    }
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    pub input_cols: DMatrix<f64>,
    pub cell_prev: FeatureMap,
    pub i: FeatureMap,
    pub f: FeatureMap,
    pub o: FeatureMap,
    pub g: FeatureMap,
    pub cell: FeatureMap,
    pub tanh_cell: FeatureMap,
    pub h: FeatureMap,
}

pub fn conv_lstm_step_cached(
    x: &FeatureMap,
    h_prev: &FeatureMap,
    cell_prev: &FeatureMap,
    params: &ConvLstmParams,
) -> Result<LstmCache, GatedError> {
    let hidden = params.hidden();
    if h_prev.channels() != hidden || cell_prev.shape() != h_prev.shape() {
        return Err(GatedError::ShapeMismatch(format!("hidden and cell state need {hidden} channels of matching size")));
    }
    if params.gates().iter().any(|g| g.weights.shape() != params.w_i.weights.shape() || g.stride != 1) {
        return Err(GatedError::ShapeMismatch("LSTM gate kernels differ".into()));
    }
    let u = FeatureMap::concat(x, h_prev)?;
    let (ai, input_cols) = params.w_i.forward(&u)?;
    let pre = |conv: &Conv2d| {
        let mut a = &conv.weights * &input_cols;
        if let Some(b) = &conv.bias {
            for mut col in a.column_iter_mut() {
                col += b.column(0);
            }
        }
        FeatureMap::from_data(u.rows, u.cols, a)
    };
    let i = ai.map(sigmoid);
    let f = pre(&params.w_f).map(sigmoid);
    let o = pre(&params.w_o).map(sigmoid);
    let g = pre(&params.w_g).map(f64::tanh);
    let cell_data = f.data.component_mul(&cell_prev.data) + i.data.component_mul(&g.data);
    let cell = FeatureMap::from_data(u.rows, u.cols, cell_data);
    let tanh_cell = cell.map(f64::tanh);
    let h = FeatureMap::from_data(u.rows, u.cols, o.data.component_mul(&tanh_cell.data));
    Ok(LstmCache { input_cols, cell_prev: cell_prev.clone(), i, f, o, g, cell, tanh_cell, h })
}

/// One convolutional LSTM step; returns the hidden and cell states.
pub fn conv_lstm_step(
    x: &FeatureMap,
    h_prev: &FeatureMap,
    cell_prev: &FeatureMap,
    params: &ConvLstmParams,
) -> Result<(FeatureMap, FeatureMap), GatedError> {
    let c = conv_lstm_step_cached(x, h_prev, cell_prev, params)?;
    Ok((c.h, c.cell))
}

pub struct LstmGrads {
    pub x: FeatureMap,
    pub h_prev: FeatureMap,
    pub cell_prev: FeatureMap,
    /// Weight and bias gradients in `i, f, o, g` order.
    pub weights: [DMatrix<f64>; 4],
    pub biases: [DMatrix<f64>; 4],
}

pub fn conv_lstm_step_backward(
    cache: &LstmCache,
    grad_h: &FeatureMap,
    grad_cell: &FeatureMap,
    params: &ConvLstmParams,
    input_channels: usize,
) -> LstmGrads {
    let (rows, cols) = (grad_h.rows, grad_h.cols);
    let dh = &grad_h.data;
    let d_o = dh.component_mul(&cache.tanh_cell.data);
    let dcell = &grad_cell.data + dh.component_mul(&cache.o.data).zip_map(&cache.tanh_cell.data, |v, t| v * (1.0 - t * t));
    let di = dcell.component_mul(&cache.g.data);
    let dg = dcell.component_mul(&cache.i.data);
    let df = dcell.component_mul(&cache.cell_prev.data);
    let dcell_prev = dcell.component_mul(&cache.f.data);
    let sig = |d: DMatrix<f64>, s: &FeatureMap| d.zip_map(&s.data, |v, s| v * s * (1.0 - s));
    let pre = [sig(di, &cache.i), sig(df, &cache.f), sig(d_o, &cache.o), dg.zip_map(&cache.g.data, |v, g| v * (1.0 - g * g))];
    let weights = pre.clone().map(|a| &a * cache.input_cols.transpose());
    let biases = pre.clone().map(|a| {
        let sums: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
        DMatrix::from_vec(sums.len(), 1, sums)
    });
    let mut du_cols = DMatrix::zeros(cache.input_cols.nrows(), cache.input_cols.ncols());
    for (conv, a) in params.gates().iter().zip(&pre) {
        du_cols += conv.weights.transpose() * a;
    }
    let du = params.w_i.col2im(&du_cols, rows, cols, (rows, cols));
    LstmGrads {
        x: du.channel_slice(0, input_channels),
        h_prev: du.channel_slice(input_channels, params.hidden()),
        cell_prev: FeatureMap::from_data(rows, cols, dcell_prev),
        weights,
        biases,
    }
}

/// Probability map over pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major probabilities.
    pub probs: Vec<f64>,
}

impl Heatmap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.probs[row * self.cols + col]
    }

    /// Most probable pixel `(row, col)` and its probability; earliest wins ties.
    pub fn argmax(&self) -> ((usize, usize), f64) {
        let (i, p) = self.probs.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        ((i / self.cols, i % self.cols), p)
    }
}

/// Softmax over every pixel of a single-channel map.
pub fn spatial_softmax(logits: &FeatureMap) -> Result<Heatmap, GatedError> {
    if logits.channels() != 1 {
        return Err(GatedError::ShapeMismatch(format!("softmax needs one channel, got {}", logits.channels())));
    }
    let max = logits.data.max();
    let exps: Vec<f64> = logits.data.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Heatmap { rows: logits.rows, cols: logits.cols, probs: exps.into_iter().map(|e| e / total).collect() })
}

fn check_target(pred: &Heatmap, target: (usize, usize)) -> Result<(), GatedError> {
    if target.0 >= pred.rows || target.1 >= pred.cols {
        return Err(GatedError::OutOfBounds { row: target.0, col: target.1, rows: pred.rows, cols: pred.cols });
    }
    Ok(())
}

/// Cross-entropy `-log p[target]`.
pub fn heatmap_loss(pred: &Heatmap, target: (usize, usize)) -> Result<f64, GatedError> {
    check_target(pred, target)?;
    Ok(-pred.at(target.0, target.1).ln())
}

/// Gradient of [`heatmap_loss`] with respect to the softmax logits.
pub fn heatmap_loss_grad(pred: &Heatmap, target: (usize, usize)) -> Result<FeatureMap, GatedError> {
    check_target(pred, target)?;
    let mut g = FeatureMap::from_data(pred.rows, pred.cols, DMatrix::from_row_slice(1, pred.probs.len(), &pred.probs));
    let t = target.0 * pred.cols + target.1;
    g.data[(0, t)] -= 1.0;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, c: usize, r: usize, q: usize) -> FeatureMap {
        FeatureMap::from_fn(c, r, q, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_gated(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> GatedCellParams {
        let p = GatedCellParams::zeros(input, hidden, 3);
        GatedCellParams { w_z: p.w_z.randomized(rng), w_c: p.w_c.randomized(rng) }
    }

    /// Independent direct-summation evaluation of the gated step.
    fn naive_gated(x: &FeatureMap, h: &FeatureMap, p: &GatedCellParams) -> FeatureMap {
        let input = |c: usize, r: isize, q: isize| {
            if r < 0 || q < 0 || r as usize >= x.rows || q as usize >= x.cols {
                0.0
            } else if c < x.channels() {
                x.get(c, r as usize, q as usize)
            } else {
                h.get(c - x.channels(), r as usize, q as usize)
            }
        };
        let conv = |w: &Conv2d, o: usize, i: usize, j: usize| {
            let mut acc = 0.0;
            for c in 0..w.in_channels {
                for a in 0..3 {
                    for b in 0..3 {
                        acc += w.weight(o, c, a, b) * input(c, i as isize + a as isize - 1, j as isize + b as isize - 1);
                    }
                }
            }
            acc
        };
        FeatureMap::from_fn(p.hidden(), x.rows, x.cols, |o, i, j| sigmoid(conv(&p.w_z, o, i, j)) * conv(&p.w_c, o, i, j).tanh())
    }

    #[test]
    fn zero_candidate_gives_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_gated(&mut rng, 2, 3);
        p.w_c.weights.fill(0.0);
        let h = gated_step(&random_map(&mut rng, 2, 8, 10), &random_map(&mut rng, 3, 8, 10), &p).unwrap();
        assert!(h.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gate_halves_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = random_gated(&mut rng, 2, 3);
        p.w_z.weights.fill(0.0);
        let x = random_map(&mut rng, 2, 8, 10);
        let hp = random_map(&mut rng, 3, 8, 10);
        let h = gated_step(&x, &hp, &p).unwrap();
        let u = FeatureMap::concat(&x, &hp).unwrap();
        let (c, _) = p.w_c.forward(&u).unwrap();
        assert!((h.data - c.data.map(|v| 0.5 * v.tanh())).amax() < 1e-15);
    }

    #[test]
    fn gated_step_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_gated(&mut rng, 2, 4);
        let x = random_map(&mut rng, 2, 8, 10);
        let hp = random_map(&mut rng, 4, 8, 10);
        let h = gated_step(&x, &hp, &p).unwrap();
        assert!((&h.data - naive_gated(&x, &hp, &p).data).amax() < 1e-12);
        assert!(h.data.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn gated_step_rejects_bad_shapes() {
        let p = GatedCellParams::zeros(2, 3, 3);
        let r = gated_step(&FeatureMap::zeros(1, 4, 4), &FeatureMap::zeros(3, 4, 4), &p);
        assert!(matches!(r, Err(GatedError::ShapeMismatch(_))));
        let r = gated_step(&FeatureMap::zeros(2, 4, 4), &FeatureMap::zeros(3, 4, 5), &p);
        assert!(matches!(r, Err(GatedError::ShapeMismatch(_))));
    }

    #[test]
    fn zero_lstm_gives_zero_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ConvLstmParams::zeros(2, 3, 3);
        let (h, c) = conv_lstm_step(&random_map(&mut rng, 2, 6, 6), &FeatureMap::zeros(3, 6, 6), &FeatureMap::zeros(3, 6, 6), &p).unwrap();
        assert!(h.data.iter().all(|&v| v == 0.0));
        assert!(c.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ConvLstmParams::zeros(2, 3, 3);
        p.w_f.bias.as_mut().unwrap().fill(1e3);
        p.w_i.bias.as_mut().unwrap().fill(-1e3);
        let cell_prev = random_map(&mut rng, 3, 6, 6);
        let (_, c) = conv_lstm_step(&random_map(&mut rng, 2, 6, 6), &random_map(&mut rng, 3, 6, 6), &cell_prev, &p).unwrap();
        assert!((c.data - cell_prev.data).amax() < 1e-12);
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let h = spatial_softmax(&FeatureMap::from_fn(1, 32, 40, |_, _, _| 0.7)).unwrap();
        assert!(h.probs.iter().all(|&p| (p - 1.0 / 1280.0).abs() < 1e-15));
        assert!((heatmap_loss(&h, (3, 4)).unwrap() - 1280f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_saturates() {
        let mut logits = FeatureMap::zeros(1, 32, 40);
        logits.set(0, 10, 20, 100.0);
        let h = spatial_softmax(&logits).unwrap();
        assert!(h.at(10, 20) >= 1.0 - 1e-30);
        assert_eq!(h.argmax().0, (10, 20));
        assert!(heatmap_loss(&h, (10, 20)).unwrap().abs() < 1e-40);
    }

    #[test]
    fn softmax_matches_direct_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logits = random_map(&mut rng, 1, 8, 10).map(|v| 5.0 * v);
        let h = spatial_softmax(&logits).unwrap();
        let total: f64 = logits.data.iter().map(|v| v.exp()).sum();
        for (p, l) in h.probs.iter().zip(logits.data.iter()) {
            assert!((p - l.exp() / total).abs() < 1e-12);
        }
        assert!((h.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_outside_target() {
        let h = spatial_softmax(&FeatureMap::zeros(1, 4, 5)).unwrap();
        assert_eq!(heatmap_loss(&h, (4, 0)), Err(GatedError::OutOfBounds { row: 4, col: 0, rows: 4, cols: 5 }));
        assert!(heatmap_loss_grad(&h, (0, 5)).is_err());
        assert!(matches!(spatial_softmax(&FeatureMap::zeros(2, 4, 5)), Err(GatedError::ShapeMismatch(_))));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let logits = random_map(&mut rng, 1, 6, 7);
        let target = (2, 5);
        let g = heatmap_loss_grad(&spatial_softmax(&logits).unwrap(), target).unwrap();
        let eps = 1e-5;
        let mut fd = g.clone();
        for i in 0..logits.data.len() {
            let mut a = logits.clone();
            let mut b = logits.clone();
            a.data[i] += eps;
            b.data[i] -= eps;
            let la = heatmap_loss(&spatial_softmax(&a).unwrap(), target).unwrap();
            let lb = heatmap_loss(&spatial_softmax(&b).unwrap(), target).unwrap();
            fd.data[i] = (la - lb) / (2.0 * eps);
        }
        let rel = (&g.data - &fd.data).norm() / g.data.norm().max(fd.data.norm());
        assert!(rel < 1e-6, "{rel}");
    }
}
