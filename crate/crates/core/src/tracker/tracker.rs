use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kalman::{impulse_noise, innovation_distance, kf_predict, kf_update, KalmanConfig, KalmanError, KalmanState};
use crate::geometry::{frame_time, triangulate, CameraCalibration, Detection2D, Point3D, Rig, Triangulation, FRAME_RATE};
use crate::trajectory::{Sample, Source, Trajectory3D};

/// 99% quantile of the chi-square distribution with 3 degrees of freedom.
pub const CHI2_3_99: f64 = 11.34;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("frame {frame} is not after frame {previous}")]
    OutOfOrder { frame: u64, previous: u64 },
    #[error("detection from camera '{0}' which is not in the rig")]
    UnknownCamera(String),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub kalman: KalmanConfig,
    /// Isotropic standard deviation of a triangulated point (m).
    pub measurement_sigma: f64,
    /// Squared Mahalanobis gate.
    pub gate_chi2: f64,
    /// A track missing more than this many consecutive frames dies.
    pub max_missed_frames: u64,
    /// Velocity impulse allowed between frames on the second gating pass,
    /// so tracks survive bounces and hits (m/s).
    pub impulse_sigma: f64,
    /// Velocity uncertainty of a new track (m/s).
    pub init_velocity_sigma: f64,
    /// Maximum mean reprojection error of a stereo pair (px).
    pub reproj_gate_px: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            kalman: KalmanConfig::default(),
            measurement_sigma: 0.01,
            gate_chi2: CHI2_3_99,
            max_missed_frames: 8,
            impulse_sigma: 15.0,
            init_velocity_sigma: 10.0,
            reproj_gate_px: crate::geometry::DEFAULT_REPROJ_GATE_PX,
        }
    }
}

impl TrackerConfig {
    pub fn measurement_covariance(&self) -> Matrix3<f64> {
        Matrix3::identity() * (self.measurement_sigma * self.measurement_sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Active,
    Coasting,
    Dead,
}

/// A measurement accepted into a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: u64,
    pub measured: Point3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    /// One estimate per frame from birth to the last frame alive.
    pub states: Vec<KalmanState>,
    pub points: Vec<TrackPoint>,
    pub status: TrackStatus,
}

impl Track {
    fn born(id: u64, frame: u64, measurement: &Point3D, config: &TrackerConfig) -> Self {
        let state =
            KalmanState::from_measurement(&measurement.position, &config.measurement_covariance(), config.init_velocity_sigma, frame);
        Track { id, states: vec![state], points: vec![TrackPoint { frame, measured: *measurement }], status: TrackStatus::Active }
    }

    pub fn latest(&self) -> &KalmanState {
        self.states.last().expect("a track has at least one state")
    }

    pub fn first_frame(&self) -> u64 {
        self.states[0].frame
    }

    pub fn state_at(&self, frame: u64) -> Option<&KalmanState> {
        let i = usize::try_from(frame.checked_sub(self.first_frame())?).ok()?;
        self.states.get(i)
    }

    pub fn is_alive(&self) -> bool {
        self.status != TrackStatus::Dead
    }

    /// Output rows, one per accepted measurement.
    pub fn to_records(&self) -> Vec<TrackRecord> {
        self.points
            .iter()
            .map(|p| {
                let s = self.state_at(p.frame).expect("every point has a state");
                TrackRecord {
                    track_id: self.id,
                    frame_index: p.frame,
                    time: p.measured.time,
                    position: s.position(),
                    velocity: s.velocity(),
                    covariance_diagonal: s.covariance_diagonal(),
                    measured: p.measured.position,
                }
            })
            .collect()
    }

    /// Track as a trajectory over its measured frames, with filtered or raw
    /// positions.
    pub fn to_trajectory(&self, positions: TrackPositions) -> Trajectory3D {
        trajectory_from_records(&self.to_records(), positions)
    }
}

/// Which positions a tracked trajectory carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrackPositions {
    Filtered,
    /// Triangulated measurements; the filter lags at bounces and hits, so
    /// segmentation reads these.
    #[default]
    Measured,
}

/// One line of the tracks JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub track_id: u64,
    pub frame_index: u64,
    pub time: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Variances of x, y, z, vx, vy, vz.
    pub covariance_diagonal: [f64; 6],
    pub measured: Vector3<f64>,
}

fn trajectory_from_records(records: &[TrackRecord], positions: TrackPositions) -> Trajectory3D {
    let samples = records
        .iter()
        .map(|r| {
            let position = match positions {
                TrackPositions::Filtered => r.position,
                TrackPositions::Measured => r.measured,
            };
            Sample { velocity: Some(r.velocity), ..Sample::new(r.frame_index, r.time, position) }
        })
        .collect();
    let mut t = Trajectory3D::new(samples, Source::Tracked);
    t.track_id = records.first().map(|r| r.track_id);
    t
}

/// Groups track rows by id (ascending) into trajectories.
pub fn trajectories_from_records(records: &[TrackRecord], positions: TrackPositions) -> Result<Vec<Trajectory3D>, String> {
    let mut groups: BTreeMap<u64, Vec<TrackRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.track_id).or_default().push(r.clone());
    }
    groups
        .values()
        .map(|rows| {
            let t = trajectory_from_records(rows, positions);
            t.validate().map(|_| t)
        })
        .collect()
}

/// A triangulated stereo pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoMatch {
    pub left_index: usize,
    pub right_index: usize,
    pub triangulation: Triangulation,
}

/// Triangulates every left/right combination of one frame, drops pairs
/// above the reprojection gate and greedily keeps the lowest-error pairs,
/// each detection used at most once.
pub fn match_stereo(
    left: &[Detection2D],
    right: &[Detection2D],
    cam_l: &CameraCalibration,
    cam_r: &CameraCalibration,
    gate_px: f64,
) -> Vec<StereoMatch> {
    let mut candidates = Vec::new();
    for (i, l) in left.iter().enumerate() {
        for (j, r) in right.iter().enumerate() {
            if let Ok(t) = triangulate(l, r, cam_l, cam_r) {
                if t.reproj_error <= gate_px && t.point.is_finite() {
                    candidates.push(StereoMatch { left_index: i, right_index: j, triangulation: t });
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.triangulation
            .reproj_error
            .total_cmp(&b.triangulation.reproj_error)
            .then((a.left_index, a.right_index).cmp(&(b.left_index, b.right_index)))
    });
    let mut used_l = vec![false; left.len()];
    let mut used_r = vec![false; right.len()];
    let mut kept = Vec::new();
    for c in candidates {
        if !used_l[c.left_index] && !used_r[c.right_index] {
            used_l[c.left_index] = true;
            used_r[c.right_index] = true;
            kept.push(c);
        }
    }
    kept
}

fn greedy_pairs(mut candidates: Vec<(f64, usize, usize)>, track_used: &mut [bool], meas_used: &mut [bool]) -> Vec<(usize, usize)> {
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut out = Vec::new();
    for (_, t, m) in candidates {
        if !track_used[t] && !meas_used[m] {
            track_used[t] = true;
            meas_used[m] = true;
            out.push((t, m));
        }
    }
    out
}

/// Advances every live track to `frame` and folds in this frame's
/// measurements.
///
/// Association is greedy nearest-neighbour on squared Mahalanobis distance
/// within the chi-square gate. Tracks and measurements left over get a second
/// pass in which each track's prediction also allows a velocity impulse since
/// its last update. Remaining measurements start new tracks with fresh ids;
/// tracks unmatched for more than `max_missed_frames` frames die.
pub fn associate_and_step(
    tracks: &mut Vec<Track>,
    frame: u64,
    measurements: &[Point3D],
    config: &TrackerConfig,
    next_id: &mut u64,
) -> Result<(), TrackerError> {
    let r = config.measurement_covariance();
    let mut predicted: Vec<Option<KalmanState>> = Vec::with_capacity(tracks.len());
    for track in tracks.iter_mut() {
        if !track.is_alive() {
            predicted.push(None);
            continue;
        }
        let latest = *track.latest();
        if frame <= latest.frame {
            return Err(TrackerError::OutOfOrder { frame, previous: latest.frame });
        }
        if frame - latest.last_update_frame - 1 > config.max_missed_frames {
            track.status = TrackStatus::Dead;
            predicted.push(None);
            continue;
        }
        let mut p = kf_predict(&latest, (frame - latest.frame) as f64 / FRAME_RATE, &config.kalman);
        p.frame = frame;
        predicted.push(Some(p));
    }

    let mut track_used: Vec<bool> = predicted.iter().map(|p| p.is_none()).collect();
    let mut meas_used = vec![false; measurements.len()];
    let mut assignments: Vec<(usize, usize, KalmanState)> = Vec::new();

    let mut first = Vec::new();
    for (t, p) in predicted.iter().enumerate() {
        let Some(p) = p else { continue };
        for (m, z) in measurements.iter().enumerate() {
            let d2 = innovation_distance(p, &z.position, &r)?;
            if d2 <= config.gate_chi2 {
                first.push((d2, t, m));
            }
        }
    }
    for (t, m) in greedy_pairs(first, &mut track_used, &mut meas_used) {
        assignments.push((t, m, predicted[t].expect("live track")));
    }

    let mut inflated: Vec<Option<KalmanState>> = vec![None; predicted.len()];
    let mut second = Vec::new();
    for (t, p) in predicted.iter().enumerate() {
        let Some(p) = p else { continue };
        if track_used[t] {
            continue;
        }
        let since = (frame - p.last_update_frame) as f64 / FRAME_RATE;
        let mut q = *p;
        q.covariance += impulse_noise(since, config.impulse_sigma);
        for (m, z) in measurements.iter().enumerate() {
            if meas_used[m] {
                continue;
            }
            let d2 = innovation_distance(&q, &z.position, &r)?;
            if d2 <= config.gate_chi2 {
                second.push((d2, t, m));
            }
        }
        inflated[t] = Some(q);
    }
    for (t, m) in greedy_pairs(second, &mut track_used, &mut meas_used) {
        assignments.push((t, m, inflated[t].expect("second-pass track")));
    }

    let mut matched = vec![false; tracks.len()];
    for (t, m, prior) in assignments {
        let (mut updated, _) = kf_update(&prior, &measurements[m], &r)?;
        updated.last_update_frame = frame;
        let track = &mut tracks[t];
        track.states.push(updated);
        track.points.push(TrackPoint { frame, measured: measurements[m] });
        track.status = TrackStatus::Active;
        matched[t] = true;
    }
    for (t, p) in predicted.into_iter().enumerate() {
        if let (Some(p), false) = (p, matched[t]) {
            tracks[t].states.push(p);
            tracks[t].status = TrackStatus::Coasting;
        }
    }
    for (m, z) in measurements.iter().enumerate() {
        if !meas_used[m] {
            tracks.push(Track::born(*next_id, frame, z, config));
            *next_id += 1;
        }
    }
    Ok(())
}

/// Frame-by-frame multi-ball tracker.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self { config, tracks: Vec::new(), next_id: 0, last_frame: None }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn into_tracks(self) -> Vec<Track> {
        self.tracks
    }

    /// Processes the triangulated points of one frame. Frames must be fed in
    /// increasing order; gaps count as missed frames.
    pub fn step(&mut self, frame: u64, measurements: &[Point3D]) -> Result<(), TrackerError> {
        if let Some(previous) = self.last_frame {
            if frame <= previous {
                return Err(TrackerError::OutOfOrder { frame, previous });
            }
        }
        associate_and_step(&mut self.tracks, frame, measurements, &self.config, &mut self.next_id)?;
        self.last_frame = Some(frame);
        Ok(())
    }
}

/// Triangulates each frame's stereo detections and runs the tracker over
/// every frame from the first detection to the last.
pub fn track_detections(detections: &[Detection2D], rig: &Rig, config: &TrackerConfig) -> Result<Vec<Track>, TrackerError> {
    let (cam_l, cam_r) = rig.stereo_pair();
    if let Some(d) = detections.iter().find(|d| rig.camera(&d.camera_id).is_none()) {
        return Err(TrackerError::UnknownCamera(d.camera_id.clone()));
    }
    let mut frames: BTreeMap<u64, (Vec<Detection2D>, Vec<Detection2D>)> = BTreeMap::new();
    for d in detections {
        let entry = frames.entry(d.frame_index).or_default();
        if d.camera_id == cam_l.camera_id {
            entry.0.push(d.clone());
        } else if d.camera_id == cam_r.camera_id {
            entry.1.push(d.clone());
        }
    }
    let mut tracker = Tracker::new(*config);
    let (Some(&first), Some(&last)) = (frames.keys().next(), frames.keys().next_back()) else {
        return Ok(Vec::new());
    };
    for frame in first..=last {
        let points: Vec<Point3D> = match frames.get(&frame) {
            Some((l, r)) => match_stereo(l, r, cam_l, cam_r, config.reproj_gate_px)
                .into_iter()
                .map(|m| Point3D::new(m.triangulation.point.position, frame_time(frame)))
                .collect(),
            None => Vec::new(),
        };
        tracker.step(frame, &points)?;
    }
    Ok(tracker.into_tracks())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(frame: u64, x: f64) -> Point3D {
        Point3D::new(Vector3::new(x, 0.0, 1.0), frame_time(frame))
    }

    fn cfg() -> TrackerConfig {
        TrackerConfig { kalman: KalmanConfig { gravity: false, ..KalmanConfig::default() }, ..TrackerConfig::default() }
    }

    #[test]
    fn in_gate_measurement_is_assigned() {
        let mut t = Tracker::new(cfg());
        t.step(0, &[at(0, 0.0)]).unwrap();
        t.step(1, &[at(1, 0.001)]).unwrap();
        assert_eq!(t.tracks().len(), 1);
        assert_eq!(t.tracks()[0].status, TrackStatus::Active);
        assert_eq!(t.tracks()[0].points.len(), 2);
    }

    #[test]
    fn far_measurement_spawns_a_track() {
        let mut t = Tracker::new(cfg());
        t.step(0, &[at(0, 0.0)]).unwrap();
        t.step(1, &[at(1, 2.0)]).unwrap();
        let ids: Vec<u64> = t.tracks().iter().map(|k| k.id).collect();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(t.tracks()[0].status, TrackStatus::Coasting);
    }

    fn run_gap(gap: u64) -> Vec<Track> {
        let mut t = Tracker::new(cfg());
        let mut frame = 0;
        for _ in 0..10 {
            t.step(frame, &[at(frame, 0.0)]).unwrap();
            frame += 1;
        }
        for _ in 0..gap {
            t.step(frame, &[]).unwrap();
            frame += 1;
        }
        t.step(frame, &[at(frame, 0.0)]).unwrap();
        t.into_tracks()
    }

    #[test]
    fn coasting_window_boundary() {
        let kept = run_gap(8);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].points.len(), 11);
        let killed = run_gap(9);
        assert_eq!(killed.len(), 2);
        assert_eq!(killed[0].status, TrackStatus::Dead);
        assert_eq!(killed[1].id, 1);
    }

    #[test]
    fn dead_tracks_are_frozen() {
        let mut tracks = run_gap(9);
        let before = tracks[0].clone();
        let mut next = 2;
        associate_and_step(&mut tracks, 100, &[at(100, 0.0)], &cfg(), &mut next).unwrap();
        assert_eq!(tracks[0], before);
    }

    #[test]
    fn frames_must_increase() {
        let mut t = Tracker::new(cfg());
        t.step(3, &[]).unwrap();
        assert_eq!(t.step(3, &[]), Err(TrackerError::OutOfOrder { frame: 3, previous: 3 }));
    }

    #[test]
    fn states_are_contiguous_per_frame() {
        let tracks = run_gap(5);
        let s = &tracks[0].states;
        assert!(s.windows(2).all(|w| w[1].frame == w[0].frame + 1));
        assert!(s.iter().all(|k| k.is_valid()));
    }
}
