use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRAVITY: f64 = 9.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("ball centre {z:.6} m is below the table surface {surface:.6} m")]
    BelowTable { z: f64, surface: f64 },
}

/// Ball kinematic state. Spin is the angular velocity (rad/s, right-hand rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub spin: Vector3<f64>,
    pub time: f64,
}

impl BallState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, spin: Vector3<f64>, time: f64) -> Self {
        Self { position, velocity, spin, time }
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite() && self.position.iter().chain(self.velocity.iter()).chain(self.spin.iter()).all(|v| v.is_finite())
    }

    /// Kinetic plus gravitational potential energy per unit mass.
    pub fn specific_energy(&self) -> f64 {
        0.5 * self.velocity.norm_squared() + GRAVITY * self.position.z
    }
}

/// Aerodynamic constants of the ball.
///
/// Drag is `-½ ρ C_d A |v| v` and the Magnus force is `C_m (ω × v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BallPhysics {
    pub mass: f64,
    pub radius: f64,
    pub air_density: f64,
    pub drag_coefficient: f64,
    pub magnus_coefficient: f64,
}

impl Default for BallPhysics {
    fn default() -> Self {
        Self { mass: 0.0027, radius: 0.020, air_density: 1.2, drag_coefficient: 0.4, magnus_coefficient: 1.05e-5 }
    }
}

impl BallPhysics {
    /// Gravity only: no drag, no Magnus force.
    pub fn ballistic() -> Self {
        Self { drag_coefficient: 0.0, magnus_coefficient: 0.0, ..Self::default() }
    }

    pub fn without_magnus(self) -> Self {
        Self { magnus_coefficient: 0.0, ..self }
    }

    pub fn cross_section(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }

    pub fn acceleration(&self, velocity: &Vector3<f64>, spin: &Vector3<f64>) -> Vector3<f64> {
        let drag = -0.5 * self.air_density * self.drag_coefficient * self.cross_section() * velocity.norm() * velocity;
        let magnus = self.magnus_coefficient * spin.cross(velocity);
        Vector3::new(0.0, 0.0, -GRAVITY) + (drag + magnus) / self.mass
    }
}

/// One classical RK4 step of the flight equations. Spin is constant in flight.
pub fn step_flight(state: &BallState, dt: f64, physics: &BallPhysics) -> BallState {
    let spin = state.spin;
    let accel = |v: &Vector3<f64>| physics.acceleration(v, &spin);
    let (p0, v0) = (state.position, state.velocity);

    let k1v = accel(&v0);
    let k1p = v0;
    let v1 = v0 + 0.5 * dt * k1v;
    let k2v = accel(&v1);
    let k2p = v1;
    let v2 = v0 + 0.5 * dt * k2v;
    let k3v = accel(&v2);
    let k3p = v2;
    let v3 = v0 + dt * k3v;
    let k4v = accel(&v3);
    let k4p = v3;

    BallState {
        position: p0 + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
        velocity: v0 + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
        spin,
        time: state.time + dt,
    }
}

/// Table extent and contact parameters. `surface_height` is the plane the
/// ball centre touches at contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableGeometry {
    pub x_bounds: (f64, f64),
    pub y_bounds: (f64, f64),
    pub surface_height: f64,
    /// Ratio of outgoing to incoming normal speed.
    pub restitution_normal: f64,
    /// Fraction of tangential speed lost to friction at contact.
    pub friction_coefficient: f64,
    /// Tangential velocity gained per unit of `(ω × n)` (metres).
    pub spin_coupling: f64,
    /// Fraction of spin kept through a bounce.
    pub spin_retention: f64,
}

impl Default for TableGeometry {
    fn default() -> Self {
        Self {
            x_bounds: (-0.7625, 0.7625),
            y_bounds: (-1.37, 1.37),
            surface_height: 0.76,
            restitution_normal: 0.9,
            friction_coefficient: 0.19,
            spin_coupling: 0.002,
            spin_retention: 0.6,
        }
    }
}

impl TableGeometry {
    pub fn contains_xy(&self, p: &Vector3<f64>) -> bool {
        p.x >= self.x_bounds.0 && p.x <= self.x_bounds.1 && p.y >= self.y_bounds.0 && p.y <= self.y_bounds.1
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.x_bounds.0 < self.x_bounds.1 && self.y_bounds.0 < self.y_bounds.1) {
            return Err("table bounds must satisfy min < max".into());
        }
        if self.surface_height.is_nan() || self.surface_height < 0.0 {
            return Err("surface_height must be non-negative".into());
        }
        if !(self.restitution_normal > 0.0 && self.restitution_normal <= 1.0) {
            return Err("restitution_normal must lie in (0, 1]".into());
        }
        if !(self.friction_coefficient >= 0.0 && self.friction_coefficient <= 1.0) {
            return Err("friction_coefficient must lie in [0, 1]".into());
        }
        if !(self.spin_coupling >= 0.0 && (0.0..=1.0).contains(&self.spin_retention)) {
            return Err("spin_coupling must be non-negative and spin_retention in [0, 1]".into());
        }
        Ok(())
    }
}

/// Instantaneous table contact.
///
/// The normal component is reflected and scaled by the restitution. The
/// tangential component loses a friction fraction and gains a spin kick
/// `k_s (ω × n)`; topspin therefore speeds the ball up along its direction of
/// travel. Spin is scaled by `spin_retention`.
pub fn bounce(state: &BallState, table: &TableGeometry) -> Result<BallState, PhysicsError> {
    if state.position.z < table.surface_height - 1e-9 {
        return Err(PhysicsError::BelowTable { z: state.position.z, surface: table.surface_height });
    }
    let normal = Vector3::z();
    let vn = state.velocity.dot(&normal);
    let vt = state.velocity - vn * normal;
    let kick = state.spin.cross(&normal);
    let kick_t = kick - kick.dot(&normal) * normal;
    let vt_out = (1.0 - table.friction_coefficient) * vt + table.spin_coupling * kick_t;
    Ok(BallState {
        position: state.position,
        velocity: vt_out - table.restitution_normal * vn * normal,
        spin: table.spin_retention * state.spin,
        time: state.time,
    })
}
