use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::physics::{bounce, step_flight, BallPhysics, BallState, TableGeometry};
use super::SimError;
use crate::geometry::{frame_time, FRAME_RATE};
use crate::trajectory::{Event, EventKind, Sample, Source, Trajectory3D};

/// Contact-time bisection stops once the bracket is this narrow (seconds).
const CONTACT_TIME_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinLabel {
    NoSpin,
    LightTopspin,
    HeavyTopspin,
}

impl SpinLabel {
    pub const ALL: [SpinLabel; 3] = [SpinLabel::NoSpin, SpinLabel::LightTopspin, SpinLabel::HeavyTopspin];
}

/// A scripted ball launch. The first strike of a rally is the serve and
/// sets the starting position; later strikes act on the ball wherever it is
/// at that frame and replace its velocity and spin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strike {
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Vector3<f64>>,
    pub velocity: Vector3<f64>,
    pub spin: Vector3<f64>,
    pub label: SpinLabel,
}

impl Strike {
    pub fn frame(&self) -> u64 {
        (self.time * FRAME_RATE).round().max(0.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RallyScript {
    pub strikes: Vec<Strike>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub detection_noise_sigma: f64,
    #[serde(default)]
    pub dropout_probability: f64,
}

impl RallyScript {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScript(m));
        let Some(first) = self.strikes.first() else {
            return bad("script has no strikes".into());
        };
        if first.position.is_none() {
            return bad("the first strike must carry a starting position".into());
        }
        for (i, w) in self.strikes.windows(2).enumerate() {
            if w[1].frame() <= w[0].frame() {
                return bad(format!("strike {} is not strictly after strike {i}", i + 1));
            }
        }
        for s in &self.strikes {
            let finite = s.time.is_finite()
                && s.time >= 0.0
                && s.velocity.iter().chain(s.spin.iter()).chain(s.position.iter().flatten()).all(|v| v.is_finite());
            if !finite {
                return bad(format!("strike at t = {} has non-finite fields", s.time));
            }
        }
        if self.detection_noise_sigma.is_nan() || self.detection_noise_sigma < 0.0 {
            return bad("detection_noise_sigma must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout_probability) {
            return bad("dropout_probability must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Labels of the strikes that are tagged as hits (all but the serve).
    pub fn hit_labels(&self) -> Vec<(u64, SpinLabel)> {
        self.strikes.iter().skip(1).map(|s| (s.frame(), s.label)).collect()
    }
}

/// Extent of the volume the ball may occupy while in play.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub physics: BallPhysics,
    pub play_half_width: f64,
    pub play_half_length: f64,
    pub play_height: f64,
    /// Frames simulated after the last strike before the rally is cut.
    pub tail_frames: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { physics: BallPhysics::default(), play_half_width: 4.0, play_half_length: 5.0, play_height: 5.0, tail_frames: 450 }
    }
}

impl SimConfig {
    fn in_play(&self, p: &Vector3<f64>) -> bool {
        p.z > 0.0 && p.z <= self.play_height && p.x.abs() <= self.play_half_width && p.y.abs() <= self.play_half_length
    }
}

struct Advance {
    state: BallState,
    contact: Option<Event>,
}

/// Integrates one frame, resolving a table contact inside the step by
/// bisecting on the crossing time and finishing the step after the bounce.
fn advance(
    state: &BallState,
    frame: u64,
    dt: f64,
    table: &TableGeometry,
    config: &SimConfig,
    under_table_plane: &mut bool,
) -> Result<Advance, SimError> {
    let h = table.surface_height;
    let physics = &config.physics;
    let next = step_flight(state, dt, physics);
    if *under_table_plane || state.position.z < h || next.position.z >= h {
        return Ok(Advance { state: next, contact: None });
    }
    let (mut lo, mut hi) = (0.0, dt);
    while hi - lo > CONTACT_TIME_TOL {
        let mid = 0.5 * (lo + hi);
        if step_flight(state, mid, physics).position.z >= h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = lo;
    let mut at_contact = step_flight(state, tau, physics);
    if !table.contains_xy(&at_contact.position) {
        *under_table_plane = true;
        return Ok(Advance { state: next, contact: None });
    }
    at_contact.position.z = h;
    let out = bounce(&at_contact, table)?;
    let event = Event {
        kind: EventKind::Bounce,
        frame: if tau >= 0.5 * dt { frame + 1 } else { frame },
        time: at_contact.time,
        position: at_contact.position,
        pre_velocity: at_contact.velocity,
        post_velocity: out.velocity,
    };
    Ok(Advance { state: step_flight(&out, dt - tau, physics), contact: Some(event) })
}

/// Ground-truth rally at the frame rate. Every table contact is tagged as a
/// bounce on the frame nearest the contact instant and every strike after the
/// serve as a hit on its own frame.
pub fn simulate_rally(script: &RallyScript, table: &TableGeometry, config: &SimConfig) -> Result<Trajectory3D, SimError> {
    script.validate()?;
    table.validate().map_err(SimError::InvalidTable)?;
    let dt = 1.0 / FRAME_RATE;
    let strikes = &script.strikes;
    let first = &strikes[0];
    let mut frame = first.frame();
    let mut state = BallState::new(first.position.expect("validated"), first.velocity, first.spin, frame_time(frame));
    if !config.in_play(&state.position) {
        return Err(SimError::BallOutOfPlay { strike: 0, frame });
    }
    let last_strike_frame = strikes.last().expect("non-empty").frame();
    let mut under_table_plane = state.position.z < table.surface_height;
    let mut samples = Vec::new();
    let mut events = Vec::new();
    let mut next_strike = 1;

    loop {
        if let Some(strike) = strikes.get(next_strike).filter(|s| s.frame() == frame) {
            let pre = state.velocity;
            state.velocity = strike.velocity;
            state.spin = strike.spin;
            under_table_plane = state.position.z < table.surface_height;
            events.push(Event {
                kind: EventKind::Hit,
                frame,
                time: state.time,
                position: state.position,
                pre_velocity: pre,
                post_velocity: state.velocity,
            });
            next_strike += 1;
        }
        samples.push(Sample { frame, time: state.time, position: state.position, velocity: Some(state.velocity), spin: Some(state.spin) });
        if next_strike >= strikes.len() && frame >= last_strike_frame + config.tail_frames {
            break;
        }
        let step = advance(&state, frame, dt, table, config, &mut under_table_plane)?;
        if let Some(e) = step.contact {
            events.push(e);
        }
        frame += 1;
        state = BallState { time: frame_time(frame), ..step.state };
        if !config.in_play(&state.position) {
            if next_strike < strikes.len() {
                return Err(SimError::BallOutOfPlay { strike: next_strike, frame });
            }
            break;
        }
    }

    let last_frame = samples.last().map_or(0, |s| s.frame);
    events.retain(|e| e.frame <= last_frame);
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut traj = Trajectory3D::new(samples, Source::Simulated);
    traj.events = events;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn serve(velocity: Vector3<f64>, spin: Vector3<f64>) -> RallyScript {
        RallyScript {
            strikes: vec![Strike { time: 0.0, position: Some(Vector3::new(0.0, -1.6, 0.95)), velocity, spin, label: SpinLabel::NoSpin }],
            rng_seed: 1,
            detection_noise_sigma: 0.0,
            dropout_probability: 0.0,
        }
    }

    #[test]
    fn serve_bounces_on_the_table() {
        let table = TableGeometry::default();
        let traj = simulate_rally(&serve(Vector3::new(0.0, 5.0, 1.0), Vector3::zeros()), &table, &SimConfig::default()).unwrap();
        let bounces: Vec<_> = traj.events_of(EventKind::Bounce).collect();
        assert!(!bounces.is_empty());
        assert!(bounces.iter().all(|b| table.contains_xy(&b.position) && b.position.z == table.surface_height));
        assert!(bounces.windows(2).all(|w| w[1].frame > w[0].frame));
        let b = bounces[0];
        // The tagged frame is the sample nearest the contact instant.
        let i = traj.index_of_frame(b.frame).unwrap();
        assert!((traj.samples[i].time - b.time).abs() <= 0.5 / FRAME_RATE + 1e-9);
        assert!(b.pre_velocity.z < 0.0 && b.post_velocity.z > 0.0);
        assert!(traj.validate().is_ok());
    }

    #[test]
    fn timestamps_are_on_the_frame_clock() {
        let traj = simulate_rally(&serve(Vector3::new(0.0, 5.0, 1.0), Vector3::zeros()), &TableGeometry::default(), &SimConfig::default())
            .unwrap();
        for w in traj.samples.windows(2) {
            assert_eq!(w[1].frame, w[0].frame + 1);
            assert!(w[1].time > w[0].time);
            assert!((w[1].time - w[0].time - 1.0 / FRAME_RATE).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let script = serve(Vector3::new(0.2, 6.0, 0.8), Vector3::new(-300.0, 0.0, 0.0));
        let a = simulate_rally(&script, &TableGeometry::default(), &SimConfig::default()).unwrap();
        let b = simulate_rally(&script, &TableGeometry::default(), &SimConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_bounds_serve_has_no_bounce() {
        let traj = simulate_rally(&serve(Vector3::new(0.0, 9.0, 1.5), Vector3::zeros()), &TableGeometry::default(), &SimConfig::default())
            .unwrap();
        assert_eq!(traj.events.len(), 0);
    }

    #[test]
    fn strike_after_ball_left_play_fails() {
        let mut script = serve(Vector3::new(0.0, 9.0, 1.5), Vector3::zeros());
        script.strikes.push(Strike {
            time: 3.0,
            position: None,
            velocity: Vector3::new(0.0, -5.0, 1.0),
            spin: Vector3::zeros(),
            label: SpinLabel::NoSpin,
        });
        let err = simulate_rally(&script, &TableGeometry::default(), &SimConfig::default()).unwrap_err();
        assert!(matches!(err, SimError::BallOutOfPlay { strike: 1, .. }), "{err:?}");
    }

    #[test]
    fn script_validation() {
        let mut script = serve(Vector3::new(0.0, 5.0, 1.0), Vector3::zeros());
        script.strikes.push(script.strikes[0].clone());
        assert!(matches!(script.validate(), Err(SimError::InvalidScript(_))));
        let mut script = serve(Vector3::new(0.0, 5.0, 1.0), Vector3::zeros());
        script.dropout_probability = 1.0;
        assert!(script.validate().is_err());
        script.dropout_probability = 0.1;
        script.strikes[0].position = None;
        assert!(script.validate().is_err());
    }
}
