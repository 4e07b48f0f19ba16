use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::GatedError;

/// A `(channel, row, col)` tensor stored as a `channels × (rows·cols)`
/// matrix, one column per pixel in row-major pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub rows: usize,
    pub cols: usize,
    pub data: DMatrix<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: DMatrix::zeros(channels, rows * cols) }
    }

    pub fn from_fn(channels: usize, rows: usize, cols: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let data = DMatrix::from_fn(channels, rows * cols, |c, p| f(c, p / cols, p % cols));
        Self { rows, cols, data }
    }

    pub fn from_data(rows: usize, cols: usize, data: DMatrix<f64>) -> Self {
        assert_eq!(data.ncols(), rows * cols, "pixel count");
        Self { rows, cols, data }
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels(), self.rows, self.cols)
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c, r * self.cols + col)]
    }

    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f64) {
        let cols = self.cols;
        self.data[(c, r * cols + col)] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl FnMut(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.map(f) }
    }

    /// Channel-axis concatenation.
    pub fn concat(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap, GatedError> {
        if (a.rows, a.cols) != (b.rows, b.cols) {
            return Err(GatedError::ShapeMismatch(format!("cannot concatenate {}x{} with {}x{}", a.rows, a.cols, b.rows, b.cols)));
        }
        let (ca, cb) = (a.channels(), b.channels());
        let mut data = DMatrix::zeros(ca + cb, a.data.ncols());
        data.rows_mut(0, ca).copy_from(&a.data);
        data.rows_mut(ca, cb).copy_from(&b.data);
        Ok(FeatureMap { rows: a.rows, cols: a.cols, data })
    }

    /// Channels `[start, start + n)`.
    pub fn channel_slice(&self, start: usize, n: usize) -> FeatureMap {
        FeatureMap { rows: self.rows, cols: self.cols, data: self.data.rows(start, n).into_owned() }
    }
}

/// A 2D convolution with square kernels and zero padding.
///
/// `weights` is `out_channels × (size·size·in_channels)`; column
/// `(a·size + b)·in_channels + c` holds the tap at kernel row `a`, column `b`
/// of input channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub size: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: DMatrix<f64>,
    /// `out_channels × 1` when present.
    pub bias: Option<DMatrix<f64>>,
}

impl Conv2d {
    pub fn zeros(out_channels: usize, in_channels: usize, size: usize, stride: usize, padding: usize, bias: bool) -> Self {
        Self {
            in_channels,
            size,
            stride,
            padding,
            weights: DMatrix::zeros(out_channels, size * size * in_channels),
            bias: bias.then(|| DMatrix::zeros(out_channels, 1)),
        }
    }

    /// Stride-1 convolution that preserves spatial size (odd `size`).
    pub fn same(out_channels: usize, in_channels: usize, size: usize, bias: bool) -> Self {
        Self::zeros(out_channels, in_channels, size, 1, size / 2, bias)
    }

    /// Uniform initialization scaled by fan-in and fan-out; biases stay zero.
    pub fn randomized(mut self, rng: &mut impl Rng) -> Self {
        let fan = (self.weights.nrows() + self.weights.ncols()) as f64;
        let limit = (6.0 / fan).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        self.weights.iter_mut().for_each(|w| *w = dist.sample(rng));
        self
    }

    pub fn out_channels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, o: usize, c: usize, a: usize, b: usize) -> f64 {
        self.weights[(o, (a * self.size + b) * self.in_channels + c)]
    }

    pub fn set_weight(&mut self, o: usize, c: usize, a: usize, b: usize, v: f64) {
        let col = (a * self.size + b) * self.in_channels + c;
        self.weights[(o, col)] = v;
    }

    pub fn output_size(&self, rows: usize, cols: usize) -> Option<(usize, usize)> {
        let span = |n: usize| (n + 2 * self.padding).checked_sub(self.size).map(|d| d / self.stride + 1);
        Some((span(rows)?, span(cols)?))
    }

    fn check_input(&self, x: &FeatureMap) -> Result<(usize, usize), GatedError> {
        if x.channels() != self.in_channels {
            return Err(GatedError::ShapeMismatch(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        self.output_size(x.rows, x.cols)
            .ok_or_else(|| GatedError::ShapeMismatch(format!("{}x{} input is smaller than the kernel", x.rows, x.cols)))
    }

    /// Lowered input: one column of kernel taps per output pixel.
    pub fn im2col(&self, x: &FeatureMap, out: (usize, usize)) -> DMatrix<f64> {
        let (k, s, p, c_in) = (self.size, self.stride, self.padding as isize, self.in_channels);
        let mut cols = DMatrix::zeros(k * k * c_in, out.0 * out.1);
        for i in 0..out.0 {
            for j in 0..out.1 {
                let mut column = cols.column_mut(i * out.1 + j);
                for a in 0..k {
                    let r = (i * s + a) as isize - p;
                    if r < 0 || r >= x.rows as isize {
                        continue;
                    }
                    for b in 0..k {
                        let q = (j * s + b) as isize - p;
                        if q < 0 || q >= x.cols as isize {
                            continue;
                        }
                        let src = x.data.column(r as usize * x.cols + q as usize);
                        column.rows_mut((a * k + b) * c_in, c_in).copy_from(&src);
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Conv2d::im2col`]: scatters tap columns back onto a
    /// `rows × cols` input grid, summing overlaps.
    pub fn col2im(&self, cols: &DMatrix<f64>, rows: usize, width: usize, out: (usize, usize)) -> FeatureMap {
        let (k, s, p, c_in) = (self.size, self.stride, self.padding as isize, self.in_channels);
        let mut x = FeatureMap::zeros(c_in, rows, width);
        for i in 0..out.0 {
            for j in 0..out.1 {
                let column = cols.column(i * out.1 + j);
                for a in 0..k {
                    let r = (i * s + a) as isize - p;
                    if r < 0 || r >= rows as isize {
                        continue;
                    }
                    for b in 0..k {
                        let q = (j * s + b) as isize - p;
                        if q < 0 || q >= width as isize {
                            continue;
                        }
                        let mut dst = x.data.column_mut(r as usize * width + q as usize);
                        dst += column.rows((a * k + b) * c_in, c_in);
                    }
                }
            }
        }
        x
    }

    /// Returns the output and the lowered input for the backward pass.
    pub fn forward(&self, x: &FeatureMap) -> Result<(FeatureMap, DMatrix<f64>), GatedError> {
        let out = self.check_input(x)?;
        let cols = self.im2col(x, out);
        let mut y = &self.weights * &cols;
        if let Some(b) = &self.bias {
            for mut column in y.column_iter_mut() {
                column += b.column(0);
            }
        }
        Ok((FeatureMap::from_data(out.0, out.1, y), cols))
    }

    /// Gradients of a forward pass: input, weights and bias (if any).
    pub fn backward(
        &self,
        cols: &DMatrix<f64>,
        grad_y: &FeatureMap,
        input_shape: (usize, usize),
    ) -> (FeatureMap, DMatrix<f64>, Option<DMatrix<f64>>) {
        let grad_w = &grad_y.data * cols.transpose();
        let grad_b = self.bias.as_ref().map(|_| {
            let sums: Vec<f64> = grad_y.data.row_iter().map(|r| r.sum()).collect();
            DMatrix::from_vec(sums.len(), 1, sums)
        });
        let grad_cols = self.weights.transpose() * &grad_y.data;
        let grad_x = self.col2im(&grad_cols, input_shape.0, input_shape.1, (grad_y.rows, grad_y.cols));
        (grad_x, grad_w, grad_b)
    }

    /// Transposed convolution: the adjoint of this convolution applied to
    /// `z`, producing an `in_channels × rows × cols` map. The bias, if any,
    /// is ignored.
    pub fn transpose_forward(&self, z: &FeatureMap, rows: usize, cols: usize) -> Result<FeatureMap, GatedError> {
        let out = self.output_size(rows, cols).ok_or_else(|| GatedError::ShapeMismatch("output smaller than kernel".into()))?;
        if out != (z.rows, z.cols) || z.channels() != self.out_channels() {
            return Err(GatedError::ShapeMismatch(format!(
                "transposed convolution to {rows}x{cols} expects a {}x{}x{} input, got {}x{}x{}",
                self.out_channels(),
                out.0,
                out.1,
                z.channels(),
                z.rows,
                z.cols
            )));
        }
        Ok(self.col2im(&(self.weights.transpose() * &z.data), rows, cols, out))
    }

    /// Gradients of [`Conv2d::transpose_forward`] with respect to `z` and the
    /// weights.
    pub fn transpose_backward(&self, z: &FeatureMap, grad_y: &FeatureMap) -> (FeatureMap, DMatrix<f64>) {
        let out = (z.rows, z.cols);
        let cols = self.im2col(grad_y, out);
        let grad_z = FeatureMap::from_data(out.0, out.1, &self.weights * &cols);
        let grad_w = &z.data * cols.transpose();
        (grad_z, grad_w)
    }
}
