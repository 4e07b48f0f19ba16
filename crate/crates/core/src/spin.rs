//! Spin classes from bounce dynamics.
//!
//! Each hit is summarised by two numbers: the signed change in horizontal
//! speed across the next table bounce, and the vertical acceleration (`2a`)
//! of a parabola fitted to the flight from the hit to that bounce. Hits are
//! labelled by the nearest of three fixed centroids in that raw plane.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulator::SpinLabel;
use crate::trajectory::{fit_window, Event, EventKind, Sample, Trajectory3D};

/// Frames measured on each side of a bounce for the speed change.
pub const BOUNCE_CONTEXT_FRAMES: u64 = 10;
/// Frames dropped from each end of a flight before the parabola fit.
pub const FLIGHT_TRIM_FRAMES: usize = 5;
/// Frames by which a context sample may miss its target frame.
const CONTEXT_SLACK_FRAMES: u64 = 2;
pub const DEFAULT_REJECTION_RADIUS: f64 = 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("need {needed} frames of context on each side of frame {frame}")]
    InsufficientContext { frame: u64, needed: u64 },
    #[error("flight segment has {len} samples, need at least {needed}")]
    SegmentTooShort { len: usize, needed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinFeatures {
    /// Horizontal speed after the bounce minus before (m/s).
    pub delta_v_xy: f64,
    /// Fitted vertical acceleration of the flight (m/s², negative is down).
    pub z_accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinCluster {
    /// Top cluster of the scatter.
    NoSpin,
    /// Middle cluster.
    LightTopspin,
    /// Bottom cluster.
    HeavyTopspin,
    NoCluster,
}

impl From<SpinLabel> for SpinCluster {
    fn from(label: SpinLabel) -> Self {
        match label {
            SpinLabel::NoSpin => SpinCluster::NoSpin,
            SpinLabel::LightTopspin => SpinCluster::LightTopspin,
            SpinLabel::HeavyTopspin => SpinCluster::HeavyTopspin,
        }
    }
}

impl SpinCluster {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpinCluster::NoSpin => "no_spin",
            SpinCluster::LightTopspin => "light_topspin",
            SpinCluster::HeavyTopspin => "heavy_topspin",
            SpinCluster::NoCluster => "no_cluster",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinClass {
    pub label: SpinCluster,
    pub centroid_distance: f64,
}

/// Cluster centres in the `(delta_v_xy, z_accel)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinCentroids {
    pub no_spin: [f64; 2],
    pub light_topspin: [f64; 2],
    pub heavy_topspin: [f64; 2],
}

impl SpinCentroids {
    pub const OBSERVED: SpinCentroids =
        SpinCentroids { no_spin: [-0.64, -9.5], light_topspin: [-0.9, -17.5], heavy_topspin: [0.016, -24.0] };

    pub fn iter(&self) -> [(SpinCluster, [f64; 2]); 3] {
        [
            (SpinCluster::NoSpin, self.no_spin),
            (SpinCluster::LightTopspin, self.light_topspin),
            (SpinCluster::HeavyTopspin, self.heavy_topspin),
        ]
    }

    pub fn get(&self, cluster: SpinCluster) -> Option<[f64; 2]> {
        self.iter().into_iter().find(|(c, _)| *c == cluster).map(|(_, v)| v)
    }
}

impl Default for SpinCentroids {
    fn default() -> Self {
        Self::OBSERVED
    }
}

fn context_index(traj: &Trajectory3D, target: i64) -> Option<usize> {
    let target = u64::try_from(target).ok()?;
    let i = traj.nearest_index(target)?;
    (traj.samples[i].frame.abs_diff(target) <= CONTEXT_SLACK_FRAMES).then_some(i)
}

/// Signed change in horizontal speed across a bounce, each speed taken as
/// horizontal displacement over elapsed time across ten frames.
pub fn bounce_velocity_change(traj: &Trajectory3D, bounce: &Event) -> Result<f64, SpinError> {
    let missing = SpinError::InsufficientContext { frame: bounce.frame, needed: BOUNCE_CONTEXT_FRAMES };
    let centre = traj.index_of_frame(bounce.frame).ok_or(missing.clone())?;
    let span = BOUNCE_CONTEXT_FRAMES as i64;
    let before = context_index(traj, bounce.frame as i64 - span).filter(|&i| i < centre).ok_or(missing.clone())?;
    let after = context_index(traj, bounce.frame as i64 + span).filter(|&i| i > centre).ok_or(missing)?;
    let speed = |a: &Sample, b: &Sample| (b.position - a.position).xy().norm() / (b.time - a.time);
    let s = &traj.samples;
    Ok(speed(&s[centre], &s[after]) - speed(&s[before], &s[centre]))
}

/// `2a` of a least-squares parabola through `z(t)` after trimming five
/// frames from each end of the flight.
pub fn downward_acceleration(flight: &[Sample]) -> Result<f64, SpinError> {
    let needed = 2 * FLIGHT_TRIM_FRAMES + 4;
    if flight.len() < needed {
        return Err(SpinError::SegmentTooShort { len: flight.len(), needed });
    }
    let points: Vec<_> = flight[FLIGHT_TRIM_FRAMES..flight.len() - FLIGHT_TRIM_FRAMES].iter().map(|s| s.point()).collect();
    let fit = fit_window(&points).map_err(|_| SpinError::SegmentTooShort { len: flight.len(), needed })?;
    Ok(fit.z_accel())
}

/// Euclidean nearest centroid in raw units; points farther than
/// `rejection_radius` from every centroid are `NoCluster`.
pub fn classify_spin(features: &SpinFeatures, centroids: &SpinCentroids, rejection_radius: f64) -> SpinClass {
    let (label, centroid_distance) = centroids
        .iter()
        .into_iter()
        .map(|(c, [dv, za])| (c, (features.delta_v_xy - dv).hypot(features.z_accel - za)))
        .fold((SpinCluster::NoCluster, f64::INFINITY), |best, cand| if cand.1 < best.1 { cand } else { best });
    if centroid_distance > rejection_radius || !centroid_distance.is_finite() {
        SpinClass { label: SpinCluster::NoCluster, centroid_distance }
    } else {
        SpinClass { label, centroid_distance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoClusterReason {
    NoBounceAfterHit,
    InsufficientContext,
    SegmentTooShort,
    OutsideRejectionRadius,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitAnalysis {
    pub hit: Event,
    pub features: Option<SpinFeatures>,
    pub class: SpinClass,
    pub reason: Option<NoClusterReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpinConfig {
    pub centroids: SpinCentroids,
    pub rejection_radius: f64,
}

impl Default for SpinConfig {
    fn default() -> Self {
        Self { centroids: SpinCentroids::OBSERVED, rejection_radius: DEFAULT_REJECTION_RADIUS }
    }
}

fn hit_features(traj: &Trajectory3D, hit: &Event, bounce: &Event) -> Result<SpinFeatures, SpinError> {
    let lo = traj.samples.partition_point(|s| s.frame < hit.frame);
    let hi = traj.samples.partition_point(|s| s.frame <= bounce.frame);
    let z_accel = downward_acceleration(&traj.samples[lo..hi])?;
    let delta_v_xy = bounce_velocity_change(traj, bounce)?;
    Ok(SpinFeatures { delta_v_xy, z_accel })
}

/// Features and class of every hit in an event-annotated trajectory.
pub fn analyze_rally(traj: &Trajectory3D, config: &SpinConfig) -> Vec<HitAnalysis> {
    let mut events: Vec<&Event> = traj.events.iter().collect();
    events.sort_by(|a, b| a.frame.cmp(&b.frame).then(a.time.total_cmp(&b.time)));
    let unclassified = |hit: &Event, features, reason| HitAnalysis {
        hit: *hit,
        features,
        class: SpinClass { label: SpinCluster::NoCluster, centroid_distance: f64::INFINITY },
        reason: Some(reason),
    };
    events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EventKind::Hit)
        .map(|(i, hit)| {
            let Some(bounce) = events.get(i + 1).filter(|e| e.kind == EventKind::Bounce) else {
                return unclassified(hit, None, NoClusterReason::NoBounceAfterHit);
            };
            match hit_features(traj, hit, bounce) {
                Err(SpinError::InsufficientContext { .. }) => unclassified(hit, None, NoClusterReason::InsufficientContext),
                Err(SpinError::SegmentTooShort { .. }) => unclassified(hit, None, NoClusterReason::SegmentTooShort),
                Ok(features) => {
                    let class = classify_spin(&features, &config.centroids, config.rejection_radius);
                    let reason = (class.label == SpinCluster::NoCluster).then_some(NoClusterReason::OutsideRejectionRadius);
                    HitAnalysis { hit: **hit, features: Some(features), class, reason }
                }
            }
        })
        .collect()
}

/// Hit counts in the four-column cluster layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterCounts {
    pub top: usize,
    pub middle: usize,
    pub bottom: usize,
    pub no_cluster: usize,
}

impl ClusterCounts {
    pub fn tally<'a>(labels: impl IntoIterator<Item = &'a SpinCluster>) -> Self {
        let mut c = ClusterCounts::default();
        for l in labels {
            match l {
                SpinCluster::NoSpin => c.top += 1,
                SpinCluster::LightTopspin => c.middle += 1,
                SpinCluster::HeavyTopspin => c.bottom += 1,
                SpinCluster::NoCluster => c.no_cluster += 1,
            }
        }
        c
    }

    pub fn table(&self) -> String {
        format!(
            "Top Cluster | Middle Cluster | Bottom Cluster | No Cluster\n{} | {} | {} | {}\n",
            self.top, self.middle, self.bottom, self.no_cluster
        )
    }
}

/// One line of the per-hit spin JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinRecord {
    pub hit_frame: u64,
    pub hit_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_v_xy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_accel: Option<f64>,
    pub label: SpinCluster,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<NoClusterReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
}

impl SpinRecord {
    pub fn from_analysis(a: &HitAnalysis, track_id: Option<u64>) -> Self {
        SpinRecord {
            hit_frame: a.hit.frame,
            hit_time: a.hit.time,
            delta_v_xy: a.features.map(|f| f.delta_v_xy),
            z_accel: a.features.map(|f| f.z_accel),
            label: a.class.label,
            centroid_distance: a.class.centroid_distance.is_finite().then_some(a.class.centroid_distance),
            reason: a.reason,
            track_id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Source;
    use nalgebra::Vector3;

    fn classify(dv: f64, za: f64) -> SpinClass {
        classify_spin(&SpinFeatures { delta_v_xy: dv, z_accel: za }, &SpinCentroids::OBSERVED, DEFAULT_REJECTION_RADIUS)
    }

    #[test]
    fn centroids_classify_to_themselves() {
        let c = classify(-0.64, -9.5);
        assert_eq!(c.label, SpinCluster::NoSpin);
        assert_eq!(c.centroid_distance, 0.0);
        let c = classify(0.016, -24.0);
        assert_eq!(c.label, SpinCluster::HeavyTopspin);
        assert_eq!(c.centroid_distance, 0.0);
        assert_eq!(classify(-0.9, -17.5).label, SpinCluster::LightTopspin);
    }

    #[test]
    fn midpoint_tie_is_broken_by_perturbation() {
        let a = SpinCentroids::OBSERVED.no_spin;
        let b = SpinCentroids::OBSERVED.light_topspin;
        let dir = [(b[0] - a[0]), (b[1] - a[1])];
        let norm = dir[0].hypot(dir[1]);
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let eps = 1e-6 / norm;
        let c = classify(mid[0] + eps * dir[0], mid[1] + eps * dir[1]);
        assert_eq!(c.label, SpinCluster::LightTopspin);
        let c = classify(mid[0] - eps * dir[0], mid[1] - eps * dir[1]);
        assert_eq!(c.label, SpinCluster::NoSpin);
    }

    #[test]
    fn far_points_are_rejected() {
        let c = classify(6.0, -9.5);
        assert_eq!(c.label, SpinCluster::NoCluster);
        assert!(c.centroid_distance > DEFAULT_REJECTION_RADIUS);
        assert_eq!(classify(f64::NAN, 0.0).label, SpinCluster::NoCluster);
    }

    fn parabola(n: u64) -> Vec<Sample> {
        (0..n)
            .map(|f| {
                let t = f as f64 / 150.0;
                Sample::new(f, t, Vector3::new(0.0, 3.0 * t, -4.9 * t * t + 3.0 * t + 1.0))
            })
            .collect()
    }

    #[test]
    fn exact_parabola_gives_gravity() {
        let a = downward_acceleration(&parabola(30)).unwrap();
        assert!((a + 9.8).abs() < 1e-9, "{a}");
    }

    #[test]
    fn short_flights_are_rejected() {
        assert_eq!(downward_acceleration(&parabola(13)), Err(SpinError::SegmentTooShort { len: 13, needed: 14 }));
        assert!(downward_acceleration(&parabola(14)).is_ok());
    }

    #[test]
    fn speed_change_needs_context() {
        let traj = Trajectory3D::new(parabola(15), Source::Simulated);
        let bounce = Event {
            kind: EventKind::Bounce,
            frame: 5,
            time: 5.0 / 150.0,
            position: Vector3::zeros(),
            pre_velocity: Vector3::new(0.0, 1.0, -1.0),
            post_velocity: Vector3::new(0.0, 1.0, 1.0),
        };
        assert!(matches!(bounce_velocity_change(&traj, &bounce), Err(SpinError::InsufficientContext { .. })));
    }

    #[test]
    fn hit_without_bounce_is_unclassified() {
        let mut traj = Trajectory3D::new(parabola(60), Source::Tracked);
        traj.events.push(Event {
            kind: EventKind::Hit,
            frame: 10,
            time: 10.0 / 150.0,
            position: Vector3::zeros(),
            pre_velocity: Vector3::new(0.0, -3.0, 0.0),
            post_velocity: Vector3::new(0.0, 3.0, 0.0),
        });
        let out = analyze_rally(&traj, &SpinConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].class.label, SpinCluster::NoCluster);
        assert_eq!(out[0].reason, Some(NoClusterReason::NoBounceAfterHit));
    }

    #[test]
    fn counts_layout() {
        let labels = [SpinCluster::NoSpin, SpinCluster::HeavyTopspin, SpinCluster::NoCluster, SpinCluster::NoSpin];
        let c = ClusterCounts::tally(&labels);
        assert_eq!(c, ClusterCounts { top: 2, middle: 0, bottom: 1, no_cluster: 1 });
        assert!(c.table().starts_with("Top Cluster | Middle Cluster | Bottom Cluster | No Cluster"));
    }
}
