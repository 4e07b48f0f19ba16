//! Stereo tracking-by-detection: pair gating, triangulation and Kalman
//! tracks with birth and death.

mod kalman;
#[allow(clippy::module_inception)]
mod tracker;

pub use kalman::{impulse_noise, innovation_distance, kf_predict, kf_update, process_noise, KalmanConfig, KalmanError, KalmanState};
pub use tracker::{
    associate_and_step, match_stereo, track_detections, trajectories_from_records, StereoMatch, Track, TrackPoint, TrackPositions,
    TrackRecord, TrackStatus, Tracker, TrackerConfig, TrackerError, CHI2_3_99,
};
