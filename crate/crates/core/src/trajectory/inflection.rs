use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::fit::{end_velocity, fit_window};
use super::{Event, EventKind, Trajectory3D};
use crate::simulator::TableGeometry;

/// Points per sliding-window fit.
pub const WINDOW_POINTS: usize = 6;
/// Points after the window whose approximate velocity is compared.
pub const NEXT_POINTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InflectionConfig {
    /// Bounce candidates within this many frames of a better one are suppressed.
    pub nms_radius_frames: u64,
    /// Bounce candidates further than this from the table plane are discarded (m).
    pub bounce_height_tolerance: f64,
    /// Treat the end of the trajectory as an inflection, so a return that
    /// flies out of bounds is still found.
    pub end_as_inflection: bool,
}

impl Default for InflectionConfig {
    fn default() -> Self {
        Self { nms_radius_frames: 10, bounce_height_tolerance: 0.1, end_as_inflection: false }
    }
}

/// Velocity from the window fit ending at sample `index`, and the mean
/// central-difference velocity over the next points.
#[derive(Debug, Clone, Copy)]
struct VelocityPair {
    index: usize,
    window_end: Vector3<f64>,
    next: Vector3<f64>,
}

fn central_differences(track: &Trajectory3D) -> Vec<Vector3<f64>> {
    let s = &track.samples;
    let mut v = vec![Vector3::zeros(); s.len()];
    for j in 1..s.len().saturating_sub(1) {
        v[j] = (s[j + 1].position - s[j - 1].position) / (s[j + 1].time - s[j - 1].time);
    }
    v
}

fn velocity_pairs(track: &Trajectory3D) -> Vec<VelocityPair> {
    let n = track.samples.len();
    if n < WINDOW_POINTS + NEXT_POINTS {
        return Vec::new();
    }
    let fd = central_differences(track);
    let points: Vec<_> = track.samples.iter().map(|s| s.point()).collect();
    let mut pairs = Vec::new();
    // The last next-point needs a successor for its central difference.
    for k in (WINDOW_POINTS - 1)..n.saturating_sub(NEXT_POINTS + 1) {
        let Ok(fit) = fit_window(&points[k + 1 - WINDOW_POINTS..=k]) else { continue };
        let window_end = end_velocity(&fit, points[k].time);
        let next = fd[k + 1..=k + NEXT_POINTS].iter().sum::<Vector3<f64>>() / NEXT_POINTS as f64;
        pairs.push(VelocityPair { index: k, window_end, next });
    }
    pairs
}

fn event(track: &Trajectory3D, kind: EventKind, pair: &VelocityPair) -> Event {
    let s = &track.samples[pair.index];
    Event { kind, frame: s.frame, time: s.time, position: s.position, pre_velocity: pair.window_end, post_velocity: pair.next }
}

/// Bounce inflections: windows whose fitted vertical velocity is downward
/// while the following points move upward, restricted to the table's x-y
/// bounds and height, then thinned by non-maxima suppression that keeps the
/// candidate closest to the table plane.
pub fn detect_bounces(track: &Trajectory3D, table: &TableGeometry, config: &InflectionConfig) -> Vec<Event> {
    let h = table.surface_height;
    let mut candidates: Vec<(f64, Event)> = velocity_pairs(track)
        .iter()
        .filter(|p| p.window_end.z < 0.0 && p.next.z > 0.0)
        .map(|p| event(track, EventKind::Bounce, p))
        .filter(|e| table.contains_xy(&e.position) && (e.position.z - h).abs() <= config.bounce_height_tolerance)
        .map(|e| ((e.position.z - h).abs(), e))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.frame.cmp(&b.1.frame)));
    let mut kept: Vec<Event> = Vec::new();
    for (_, c) in candidates {
        if kept.iter().all(|k| k.frame.abs_diff(c.frame) > config.nms_radius_frames) {
            kept.push(c);
        }
    }
    kept.sort_by_key(|e| e.frame);
    kept
}

fn y_velocity_flips(track: &Trajectory3D) -> Vec<(f64, Event)> {
    velocity_pairs(track)
        .iter()
        .filter(|p| p.window_end.y * p.next.y < 0.0)
        .map(|p| ((p.next.y - p.window_end.y).abs(), event(track, EventKind::Hit, p)))
        .collect()
}

/// Return inflections: `y`-velocity sign changes found with the same window
/// test, kept only strictly between two bounces travelling in opposite `y`
/// directions, at most one (the sharpest) per such interval.
pub fn detect_returns(track: &Trajectory3D, bounces: &[Event], config: &InflectionConfig) -> Vec<Event> {
    if bounces.is_empty() {
        return Vec::new();
    }
    let flips = y_velocity_flips(track);
    let mut intervals: Vec<(u64, u64)> =
        bounces.windows(2).filter(|w| w[0].post_velocity.y * w[1].pre_velocity.y < 0.0).map(|w| (w[0].frame, w[1].frame)).collect();
    if config.end_as_inflection {
        let last = bounces.last().expect("non-empty");
        if let Some(end_pair) = velocity_pairs(track).last() {
            if last.post_velocity.y * end_pair.next.y < 0.0 {
                intervals.push((last.frame, track.samples.last().expect("pairs imply samples").frame + 1));
            }
        }
    }
    intervals
        .into_iter()
        .filter_map(|(start, end)| {
            flips
                .iter()
                .filter(|(_, e)| e.frame > start && e.frame < end)
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.frame.cmp(&a.1.frame)))
                .map(|(_, e)| *e)
        })
        .collect()
}
