//! Random rally scripts with per-class strike profiles.
//!
//! A strike is aimed at a landing point on the opponent's half: the heading
//! points at the target and the launch elevation is found by bisection on the
//! simulated landing distance. Topspin is applied about the horizontal axis
//! perpendicular to the heading, so the flight stays in one vertical plane.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::physics::{step_flight, BallState, TableGeometry};
use super::rally::{simulate_rally, RallyScript, SimConfig, SpinLabel, Strike};
use super::SimError;
use crate::geometry::frame_time;
use crate::trajectory::{EventKind, Trajectory3D};

const NET_HEIGHT: f64 = 0.1525;
const AIM_DT: f64 = 1.0 / 600.0;
const MAX_ATTEMPTS: usize = 60;

/// Launch speed (m/s) and topspin rate (rad/s) ranges of one strike class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrikeProfile {
    pub speed: (f64, f64),
    pub spin: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub no_spin: StrikeProfile,
    pub light_topspin: StrikeProfile,
    pub heavy_topspin: StrikeProfile,
    pub serve: StrikeProfile,
    /// Landing targets: |x| below this, |y| within `landing_depth`.
    pub landing_half_width: f64,
    pub landing_depth: (f64, f64),
    /// Distance from the net (|y|) at which the receiver strikes.
    pub hit_depth: (f64, f64),
    /// Minimum frames between a bounce and the following strike.
    pub min_bounce_to_hit: u64,
    /// Lowest height above the table at which a strike is still played.
    pub min_strike_clearance: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            no_spin: StrikeProfile { speed: (4.4, 4.9), spin: (0.0, 0.0) },
            light_topspin: StrikeProfile { speed: (8.6, 9.4), spin: (280.0, 320.0) },
            heavy_topspin: StrikeProfile { speed: (7.6, 8.4), spin: (580.0, 640.0) },
            serve: StrikeProfile { speed: (5.0, 5.8), spin: (0.0, 0.0) },
            landing_half_width: 0.55,
            landing_depth: (0.45, 1.1),
            hit_depth: (1.55, 1.9),
            min_bounce_to_hit: 16,
            min_strike_clearance: 0.1,
        }
    }
}

impl ScenarioConfig {
    pub fn profile(&self, label: SpinLabel) -> &StrikeProfile {
        match label {
            SpinLabel::NoSpin => &self.no_spin,
            SpinLabel::LightTopspin => &self.light_topspin,
            SpinLabel::HeavyTopspin => &self.heavy_topspin,
        }
    }
}

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Horizontal distance travelled along `heading` when the ball first falls
/// through the table plane, and the lowest height margin over the net.
fn landing(
    position: Vector3<f64>,
    velocity: Vector3<f64>,
    spin: Vector3<f64>,
    heading: Vector2<f64>,
    table: &TableGeometry,
    config: &SimConfig,
) -> Option<(f64, f64)> {
    let h = table.surface_height;
    let mut s = BallState::new(position, velocity, spin, 0.0);
    let mut net_margin = f64::INFINITY;
    for _ in 0..1200 {
        let next = step_flight(&s, AIM_DT, &config.physics);
        if s.position.y.signum() != next.position.y.signum() {
            let f = s.position.y / (s.position.y - next.position.y);
            let z = s.position.z + f * (next.position.z - s.position.z);
            net_margin = net_margin.min(z - (h + NET_HEIGHT + config.physics.radius));
        }
        if next.position.z < h && next.velocity.z < 0.0 && s.position.z >= h {
            let f = (s.position.z - h) / (s.position.z - next.position.z);
            let p = s.position + f * (next.position - s.position);
            return Some(((p - position).xy().dot(&heading), net_margin));
        }
        if next.position.z <= 0.0 {
            return None;
        }
        s = next;
    }
    None
}

/// Builds a strike from `position` landing at `target` with the given speed
/// and topspin, or `None` if no elevation in range reaches the target while
/// clearing the net.
pub fn aim(
    position: Vector3<f64>,
    target: Vector2<f64>,
    speed: f64,
    topspin: f64,
    table: &TableGeometry,
    config: &SimConfig,
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let heading = (target - position.xy()).normalize();
    let distance = (target - position.xy()).norm();
    let spin = topspin * Vector3::z().cross(&Vector3::new(heading.x, heading.y, 0.0));
    let launch = |theta: f64| Vector3::new(heading.x * theta.cos(), heading.y * theta.cos(), theta.sin()) * speed;
    let reach = |theta: f64| landing(position, launch(theta), spin, heading, table, config);

    let (mut lo, mut hi) = (-35f64.to_radians(), 40f64.to_radians());
    let d_lo = reach(lo).map_or(0.0, |r| r.0);
    let d_hi = reach(hi)?.0;
    if !(d_lo < distance && distance < d_hi) {
        return None;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        match reach(mid) {
            Some((d, _)) if d < distance => lo = mid,
            Some(_) => hi = mid,
            None => lo = mid,
        }
    }
    let theta = 0.5 * (lo + hi);
    let (_, margin) = reach(theta)?;
    (margin > 0.0).then(|| (launch(theta), spin))
}

/// Frame at which the receiver strikes after the bounce at `bounce_frame`.
fn strike_frame(truth: &Trajectory3D, bounce_frame: u64, depth: f64, table: &TableGeometry, cfg: &ScenarioConfig) -> Option<u64> {
    let start = truth.index_of_frame(bounce_frame + cfg.min_bounce_to_hit)?;
    let floor = table.surface_height + cfg.min_strike_clearance;
    for w in truth.samples[start..].windows(2) {
        let (s, next) = (&w[0], &w[1]);
        if s.position.z < floor {
            return None;
        }
        let descending_low = next.position.z < s.position.z && next.position.z < floor + 0.05;
        if s.position.y.abs() >= depth || descending_low {
            return Some(s.frame);
        }
    }
    None
}

fn random_target(rng: &mut impl Rng, toward_positive: bool, cfg: &ScenarioConfig) -> Vector2<f64> {
    let x = rng.random_range(-cfg.landing_half_width..cfg.landing_half_width);
    let y = uniform(rng, cfg.landing_depth);
    Vector2::new(x, if toward_positive { y } else { -y })
}

fn aimed_strike(
    rng: &mut impl Rng,
    position: Vector3<f64>,
    profile: &StrikeProfile,
    table: &TableGeometry,
    sim: &SimConfig,
    cfg: &ScenarioConfig,
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let toward_positive = position.y < 0.0;
    (0..MAX_ATTEMPTS).find_map(|_| {
        let target = random_target(rng, toward_positive, cfg);
        aim(position, target, uniform(rng, profile.speed), uniform(rng, profile.spin), table, sim)
    })
}

/// Random rally: a serve followed by `labels.len()` strikes, each of the
/// given class. Returns the script and its simulated ground truth.
pub fn generate_rally(
    labels: &[SpinLabel],
    seed: u64,
    table: &TableGeometry,
    sim: &SimConfig,
    cfg: &ScenarioConfig,
) -> Result<(RallyScript, Trajectory3D), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let serve_pos = Vector3::new(rng.random_range(-0.3..0.3), -rng.random_range(1.55..1.75), rng.random_range(0.92..1.02));
    let (velocity, spin) = aimed_strike(&mut rng, serve_pos, &cfg.serve, table, sim, cfg)
        .ok_or_else(|| SimError::Scenario("serve could not be aimed".into()))?;
    let mut script = RallyScript {
        strikes: vec![Strike { time: 0.0, position: Some(serve_pos), velocity, spin, label: SpinLabel::NoSpin }],
        rng_seed: seed,
        detection_noise_sigma: 0.0,
        dropout_probability: 0.0,
    };
    let mut truth = simulate_rally(&script, table, sim)?;
    for &label in labels {
        let last_frame = script.strikes.last().expect("serve").frame();
        let bounce = truth
            .events_of(EventKind::Bounce)
            .find(|e| e.frame > last_frame)
            .ok_or_else(|| SimError::Scenario("strike did not land on the table".into()))?;
        let depth = uniform(&mut rng, cfg.hit_depth);
        let frame = strike_frame(&truth, bounce.frame, depth, table, cfg)
            .ok_or_else(|| SimError::Scenario("no playable strike point after bounce".into()))?;
        let position = truth.samples[truth.index_of_frame(frame).expect("frame exists")].position;
        let (velocity, spin) = aimed_strike(&mut rng, position, cfg.profile(label), table, sim, cfg)
            .ok_or_else(|| SimError::Scenario(format!("strike at frame {frame} could not be aimed")))?;
        script.strikes.push(Strike { time: frame_time(frame), position: None, velocity, spin, label });
        truth = simulate_rally(&script, table, sim)?;
    }
    Ok((script, truth))
}

/// Like [`generate_rally`] but retries with derived seeds until a rally
/// with every requested strike is produced.
pub fn generate_rally_retrying(
    labels: &[SpinLabel],
    seed: u64,
    table: &TableGeometry,
    sim: &SimConfig,
    cfg: &ScenarioConfig,
) -> Result<(RallyScript, Trajectory3D), SimError> {
    let mut last_err = None;
    for attempt in 0..32u64 {
        match generate_rally(labels, super::render::derive_seed(seed, attempt), table, sim, cfg) {
            Ok(r) => return Ok(r),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Random class sequence of length `n`.
pub fn random_labels(n: usize, seed: u64) -> Vec<SpinLabel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| SpinLabel::ALL[rng.random_range(0..3)]).collect()
}
