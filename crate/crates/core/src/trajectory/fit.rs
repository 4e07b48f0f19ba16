use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::Point3D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("rank deficient fit: {distinct} distinct times, need {needed}")]
    RankDeficient { distinct: usize, needed: usize },
}

/// Ballistic window model: linear in `x` and `y`, quadratic in `z`, all in
/// local time `τ = t - t_ref`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyFit {
    /// `x(τ) = c0 + c1 τ`
    pub coeffs_x: [f64; 2],
    pub coeffs_y: [f64; 2],
    /// `z(τ) = a τ² + b τ + c`, stored as `[a, b, c]`.
    pub coeffs_z: [f64; 3],
    pub t_ref: f64,
    pub residual_rms: f64,
}

impl PolyFit {
    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        let tau = t - self.t_ref;
        let [a, b, c] = self.coeffs_z;
        Vector3::new(self.coeffs_x[0] + self.coeffs_x[1] * tau, self.coeffs_y[0] + self.coeffs_y[1] * tau, (a * tau + b) * tau + c)
    }

    /// Vertical acceleration of the fitted parabola (`2a`).
    pub fn z_accel(&self) -> f64 {
        2.0 * self.coeffs_z[0]
    }

    /// `z` coefficients re-expressed in absolute time: `z(t) = a t² + b t + c`.
    pub fn coeffs_z_absolute(&self) -> [f64; 3] {
        let [a, b, c] = self.coeffs_z;
        let r = self.t_ref;
        [a, b - 2.0 * a * r, (a * r - b) * r + c]
    }
}

/// Analytic velocity of the window model at time `t`.
pub fn end_velocity(fit: &PolyFit, t: f64) -> Vector3<f64> {
    let tau = t - fit.t_ref;
    Vector3::new(fit.coeffs_x[1], fit.coeffs_y[1], 2.0 * fit.coeffs_z[0] * tau + fit.coeffs_z[1])
}

fn distinct_times(points: &[Point3D]) -> usize {
    let mut times: Vec<f64> = points.iter().map(|p| p.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times.len()
}

/// Independent least-squares fits per axis, with time centred on the window
/// mean and scaled to unit half-width for conditioning.
pub fn fit_window(points: &[Point3D]) -> Result<PolyFit, FitError> {
    let distinct = distinct_times(points);
    if distinct < 3 {
        return Err(FitError::RankDeficient { distinct, needed: 3 });
    }
    let n = points.len() as f64;
    let t_ref = points.iter().map(|p| p.time).sum::<f64>() / n;
    let scale = points.iter().map(|p| (p.time - t_ref).abs()).fold(0.0, f64::max);

    // Moments of the scaled time s = τ / scale.
    let mut s_pow = [0.0f64; 5];
    let mut rhs_lin = [0.0f64; 2]; // Σ x s, Σ y s
    let mut mean = Vector3::zeros();
    let mut rhs_z = Vector3::zeros(); // Σ z s², Σ z s, Σ z
    for p in points {
        let s = (p.time - t_ref) / scale;
        let mut pw = 1.0;
        for m in s_pow.iter_mut() {
            *m += pw;
            pw *= s;
        }
        rhs_lin[0] += p.position.x * s;
        rhs_lin[1] += p.position.y * s;
        mean += p.position;
        rhs_z += Vector3::new(p.position.z * s * s, p.position.z * s, p.position.z);
    }
    mean /= n;

    // Σ s is zero up to rounding, so the linear fits decouple: the intercept
    // is the mean and the slope Σ(v s)/Σ s², after removing the Σ s term.
    let s1 = s_pow[1];
    let s2 = s_pow[2] - s1 * s1 / n;
    let slope_x = (rhs_lin[0] - s1 * mean.x) / s2;
    let slope_y = (rhs_lin[1] - s1 * mean.y) / s2;
    let cx = [mean.x - slope_x * s1 / n, slope_x / scale];
    let cy = [mean.y - slope_y * s1 / n, slope_y / scale];

    let normal = Matrix3::new(
        s_pow[4], s_pow[3], s_pow[2], //
        s_pow[3], s_pow[2], s_pow[1], //
        s_pow[2], s_pow[1], s_pow[0],
    );
    let sol = normal.lu().solve(&rhs_z).ok_or(FitError::RankDeficient { distinct, needed: 3 })?;
    let cz = [sol[0] / (scale * scale), sol[1] / scale, sol[2]];

    let mut fit = PolyFit { coeffs_x: cx, coeffs_y: cy, coeffs_z: cz, t_ref, residual_rms: 0.0 };
    let sq: f64 = points.iter().map(|p| (p.position - fit.position_at(p.time)).norm_squared()).sum();
    fit.residual_rms = (sq / n).sqrt();
    Ok(fit)
}
