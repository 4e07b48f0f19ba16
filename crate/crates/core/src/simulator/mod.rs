//! Physics oracle: spinning-ball flight, table bounces, scripted rallies and
//! noisy stereo detection rendering.

mod physics;
mod rally;
mod render;
mod scenario;

pub use physics::{bounce, step_flight, BallPhysics, BallState, PhysicsError, TableGeometry, GRAVITY};
pub use rally::{simulate_rally, RallyScript, SimConfig, SpinLabel, Strike};
pub use render::{derive_seed, render_detections, render_scene, DetectionStream};
pub use scenario::{aim, generate_rally, generate_rally_retrying, random_labels, ScenarioConfig, StrikeProfile};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid rally script: {0}")]
    InvalidScript(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("strike {strike} scheduled after the ball left play (frame {frame})")]
    BallOutOfPlay { strike: usize, frame: u64 },
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("scenario generation failed: {0}")]
    Scenario(String),
}
