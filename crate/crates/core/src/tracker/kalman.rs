use nalgebra::{Matrix3, Matrix3x6, Matrix6, Matrix6x3, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3D;
use crate::simulator::GRAVITY;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("innovation covariance is not invertible")]
    SingularInnovation,
}

/// Motion model of the filter: constant velocity, gravity as a known input
/// and white acceleration noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    /// Standard deviation of the white acceleration noise (m/s²).
    pub accel_sigma: f64,
    pub gravity: bool,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self { accel_sigma: 15.0, gravity: true }
    }
}

/// Position and velocity estimate with its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
    /// Frame this estimate refers to.
    pub frame: u64,
    /// Last frame a measurement was folded in.
    pub last_update_frame: u64,
}

impl KalmanState {
    /// State seeded from one position measurement with unknown velocity.
    pub fn from_measurement(position: &Vector3<f64>, r: &Matrix3<f64>, velocity_sigma: f64, frame: u64) -> Self {
        let mut mean = Vector6::zeros();
        mean.fixed_rows_mut::<3>(0).copy_from(position);
        let mut covariance = Matrix6::zeros();
        covariance.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        for i in 3..6 {
            covariance[(i, i)] = velocity_sigma * velocity_sigma;
        }
        Self { mean, covariance, frame, last_update_frame: frame }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(3).into_owned()
    }

    pub fn covariance_diagonal(&self) -> [f64; 6] {
        self.covariance.diagonal().into()
    }

    /// Symmetric to 1e-12 and Cholesky-factorable.
    pub fn is_valid(&self) -> bool {
        let p = &self.covariance;
        let scale = p.amax().max(1.0);
        (p - p.transpose()).amax() <= 1e-12 * scale && p.cholesky().is_some() && self.mean.iter().all(|v| v.is_finite())
    }
}

fn transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    f
}

fn observation() -> Matrix3x6<f64> {
    let mut h = Matrix3x6::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    h
}

/// Per-axis block covariance `[[pp, pv], [pv, vv]]` expanded to 6×6.
fn axis_block(pp: f64, pv: f64, vv: f64) -> Matrix6<f64> {
    let mut q = Matrix6::zeros();
    for i in 0..3 {
        q[(i, i)] = pp;
        q[(i, i + 3)] = pv;
        q[(i + 3, i)] = pv;
        q[(i + 3, i + 3)] = vv;
    }
    q
}

/// Process noise of an acceleration held constant over each step.
pub fn process_noise(dt: f64, accel_sigma: f64) -> Matrix6<f64> {
    let s2 = accel_sigma * accel_sigma;
    axis_block(s2 * dt.powi(4) / 4.0, s2 * dt.powi(3) / 2.0, s2 * dt * dt)
}

/// Extra covariance for one velocity impulse of standard deviation
/// `impulse_sigma` at a uniformly random instant within the last `dt`
/// seconds. Used to re-gate measurements after a bounce or a hit.
pub fn impulse_noise(dt: f64, impulse_sigma: f64) -> Matrix6<f64> {
    let s2 = impulse_sigma * impulse_sigma;
    axis_block(s2 * dt * dt / 3.0, s2 * dt / 2.0, s2)
}

fn symmetrize(p: &Matrix6<f64>) -> Matrix6<f64> {
    (p + p.transpose()) * 0.5
}

/// Advances the estimate by `dt` seconds. The frame counter is left to the
/// caller.
pub fn kf_predict(state: &KalmanState, dt: f64, config: &KalmanConfig) -> KalmanState {
    assert!(dt > 0.0, "prediction step must be positive, got {dt}");
    let f = transition(dt);
    let mut mean = f * state.mean;
    if config.gravity {
        mean[2] -= 0.5 * GRAVITY * dt * dt;
        mean[5] -= GRAVITY * dt;
    }
    let covariance = symmetrize(&(f * state.covariance * f.transpose() + process_noise(dt, config.accel_sigma)));
    KalmanState { mean, covariance, ..*state }
}

/// Squared Mahalanobis distance of a measurement from the predicted position.
pub fn innovation_distance(state: &KalmanState, measurement: &Vector3<f64>, r: &Matrix3<f64>) -> Result<f64, KalmanError> {
    let h = observation();
    let s = h * state.covariance * h.transpose() + r;
    let y = measurement - h * state.mean;
    let s_inv = s.try_inverse().ok_or(KalmanError::SingularInnovation)?;
    Ok((y.transpose() * s_inv * y)[(0, 0)])
}

/// Position-only correction in Joseph form. Returns the updated state and
/// the squared Mahalanobis distance of the innovation.
pub fn kf_update(state: &KalmanState, measurement: &Point3D, r: &Matrix3<f64>) -> Result<(KalmanState, f64), KalmanError> {
    let h = observation();
    let p = &state.covariance;
    let s = h * p * h.transpose() + r;
    let s_inv = match s.cholesky() {
        Some(c) => c.inverse(),
        None => s.try_inverse().ok_or(KalmanError::SingularInnovation)?,
    };
    if s_inv.iter().any(|v| !v.is_finite()) {
        return Err(KalmanError::SingularInnovation);
    }
    let y = measurement.position - h * state.mean;
    let d2 = (y.transpose() * s_inv * y)[(0, 0)];
    let k: Matrix6x3<f64> = p * h.transpose() * s_inv;
    let ikh: SMatrix<f64, 6, 6> = Matrix6::identity() - k * h;
    let covariance = symmetrize(&(ikh * p * ikh.transpose() + k * r * k.transpose()));
    Ok((KalmanState { mean: state.mean + k * y, covariance, ..*state }, d2))
}
