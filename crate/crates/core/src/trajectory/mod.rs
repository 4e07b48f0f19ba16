//! Trajectory reconstruction: window fits, bounce and return inflections,
//! and bootstrap smoothing between inflections.

mod fit;
mod inflection;
mod segment;
mod smooth;

pub use fit::{end_velocity, fit_window, FitError, PolyFit};
pub use inflection::{detect_bounces, detect_returns, InflectionConfig, NEXT_POINTS, WINDOW_POINTS};
pub use segment::{segment_rally, SegmentConfig};
pub use smooth::{bootstrap_smooth, bootstrap_smooth_with, SmoothConfig};

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::Point3D;
use crate::io::{self, IoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Simulated,
    Tracked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Table contact: vertical velocity turns from downward to upward.
    Bounce,
    /// Player contact: the ball's `y` velocity changes sign.
    Hit,
}

/// A bounce or return inflection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub frame: u64,
    pub time: f64,
    pub position: Vector3<f64>,
    pub pre_velocity: Vector3<f64>,
    pub post_velocity: Vector3<f64>,
}

impl Event {
    /// Checks the kind-specific velocity invariant.
    pub fn is_consistent(&self) -> bool {
        match self.kind {
            EventKind::Bounce => self.pre_velocity.z < 0.0 && self.post_velocity.z >= 0.0,
            EventKind::Hit => self.pre_velocity.y.signum() != self.post_velocity.y.signum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub frame: u64,
    pub time: f64,
    pub position: Vector3<f64>,
    pub velocity: Option<Vector3<f64>>,
    pub spin: Option<Vector3<f64>>,
}

impl Sample {
    pub fn new(frame: u64, time: f64, position: Vector3<f64>) -> Self {
        Self { frame, time, position, velocity: None, spin: None }
    }

    pub fn point(&self) -> Point3D {
        Point3D::new(self.position, self.time)
    }
}

/// A time-ordered ball path with its inflection events.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory3D {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub source: Source,
    pub track_id: Option<u64>,
}

impl Trajectory3D {
    pub fn new(samples: Vec<Sample>, source: Source) -> Self {
        Self { samples, events: Vec::new(), source, track_id: None }
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Index of the sample captured at `frame`, if present.
    pub fn index_of_frame(&self, frame: u64) -> Option<usize> {
        self.samples.binary_search_by_key(&frame, |s| s.frame).ok()
    }

    /// Index of the sample whose frame is closest to `frame` (earlier wins ties).
    pub fn nearest_index(&self, frame: u64) -> Option<usize> {
        if self.samples.is_empty() {
            return None;
        }
        let i = self.samples.partition_point(|s| s.frame < frame);
        let candidates = [i.checked_sub(1), (i < self.samples.len()).then_some(i)];
        candidates.into_iter().flatten().min_by_key(|&j| self.samples[j].frame.abs_diff(frame))
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Samples strictly increasing in frame, events time-ordered and
    /// attached to existing sample frames.
    pub fn validate(&self) -> Result<(), String> {
        for w in self.samples.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(format!("frames not strictly increasing at frame {}", w[1].frame));
            }
        }
        for w in self.events.windows(2) {
            if w[1].time < w[0].time {
                return Err(format!("events out of order at frame {}", w[1].frame));
            }
        }
        if let Some(e) = self.events.iter().find(|e| self.index_of_frame(e.frame).is_none()) {
            return Err(format!("event at frame {} has no sample", e.frame));
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<TrajectoryRecord> {
        self.samples
            .iter()
            .map(|s| TrajectoryRecord {
                frame: s.frame,
                time: s.time,
                position: s.position,
                velocity: s.velocity,
                spin: s.spin,
                events: self
                    .events
                    .iter()
                    .filter(|e| e.frame == s.frame)
                    .map(|e| EventRecord {
                        kind: e.kind,
                        time: e.time,
                        position: e.position,
                        pre_velocity: e.pre_velocity,
                        post_velocity: e.post_velocity,
                    })
                    .collect(),
                source: self.source,
                track_id: self.track_id,
            })
            .collect()
    }

    /// Groups records by `track_id` (in order of first appearance) and
    /// rebuilds one trajectory per group.
    pub fn from_records(records: &[TrajectoryRecord]) -> Result<Vec<Trajectory3D>, String> {
        let mut groups: Vec<Trajectory3D> = Vec::new();
        for rec in records {
            let idx = match groups.iter().position(|g| g.track_id == rec.track_id) {
                Some(i) => i,
                None => {
                    groups.push(Trajectory3D { samples: Vec::new(), events: Vec::new(), source: rec.source, track_id: rec.track_id });
                    groups.len() - 1
                }
            };
            let g = &mut groups[idx];
            g.samples.push(Sample { frame: rec.frame, time: rec.time, position: rec.position, velocity: rec.velocity, spin: rec.spin });
            g.events.extend(rec.events.iter().map(|e| Event {
                kind: e.kind,
                frame: rec.frame,
                time: e.time,
                position: e.position,
                pre_velocity: e.pre_velocity,
                post_velocity: e.post_velocity,
            }));
        }
        for g in &groups {
            g.validate()?;
        }
        Ok(groups)
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<Trajectory3D>, IoError> {
        let records: Vec<TrajectoryRecord> = io::read_jsonl(path)?;
        Trajectory3D::from_records(&records).map_err(|m| IoError::invalid(path, m))
    }

    pub fn write_jsonl(path: &Path, trajectories: &[Trajectory3D]) -> Result<(), IoError> {
        let records: Vec<TrajectoryRecord> = trajectories.iter().flat_map(|t| t.to_records()).collect();
        io::write_jsonl(path, &records)
    }
}

/// One line of a trajectory JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub frame: u64,
    pub time: f64,
    pub position: Vector3<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Vector3<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin: Option<Vector3<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventRecord>,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub time: f64,
    pub position: Vector3<f64>,
    pub pre_velocity: Vector3<f64>,
    pub post_velocity: Vector3<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj() -> Trajectory3D {
        let samples = (0..5).map(|f| Sample::new(f * 2, f as f64, Vector3::new(f as f64, 0.0, 1.0))).collect();
        let mut t = Trajectory3D::new(samples, Source::Tracked);
        t.events.push(Event {
            kind: EventKind::Bounce,
            frame: 4,
            time: 2.0,
            position: Vector3::new(2.0, 0.0, 1.0),
            pre_velocity: Vector3::new(0.0, 1.0, -1.0),
            post_velocity: Vector3::new(0.0, 1.0, 1.0),
        });
        t
    }

    #[test]
    fn frame_lookup() {
        let t = traj();
        assert_eq!(t.index_of_frame(4), Some(2));
        assert_eq!(t.index_of_frame(5), None);
        assert_eq!(t.nearest_index(5), Some(2));
        assert_eq!(t.nearest_index(100), Some(4));
        assert_eq!(t.nearest_index(0), Some(0));
    }

    #[test]
    fn records_round_trip() {
        let t = traj();
        let back = Trajectory3D::from_records(&t.to_records()).unwrap();
        assert_eq!(back, vec![t]);
    }

    #[test]
    fn validation_catches_orphan_events() {
        let mut t = traj();
        t.events[0].frame = 5;
        assert!(t.validate().is_err());
    }
}
