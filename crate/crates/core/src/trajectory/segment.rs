use serde::{Deserialize, Serialize};

use super::inflection::{detect_bounces, detect_returns, InflectionConfig};
use super::smooth::{bootstrap_smooth_with, SmoothConfig};
use super::Trajectory3D;
use crate::simulator::{derive_seed, TableGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub inflection: InflectionConfig,
    pub smooth: SmoothConfig,
}

/// Finds bounce and return inflections, then bootstrap-smooths every run of
/// samples strictly between consecutive inflections (and the runs before the
/// first and after the last). Inflection samples keep their input positions.
pub fn segment_rally(track: &Trajectory3D, table: &TableGeometry, config: &SegmentConfig) -> Trajectory3D {
    let bounces = detect_bounces(track, table, &config.inflection);
    let hits = detect_returns(track, &bounces, &config.inflection);
    let mut events = bounces;
    events.extend(hits);
    events.sort_by(|a, b| a.frame.cmp(&b.frame).then(a.time.total_cmp(&b.time)));

    let mut cuts: Vec<usize> = events.iter().filter_map(|e| track.index_of_frame(e.frame)).collect();
    cuts.dedup();
    let mut samples = track.samples.clone();
    let mut start = 0usize;
    let bounds = cuts.iter().map(|&c| (c, c + 1)).chain(std::iter::once((samples.len(), samples.len())));
    for (segment_index, (end, next_start)) in bounds.enumerate() {
        if end > start {
            let smooth = SmoothConfig { seed: derive_seed(config.smooth.seed, segment_index as u64), ..config.smooth };
            let smoothed = bootstrap_smooth_with(&samples[start..end], &smooth);
            samples[start..end].copy_from_slice(&smoothed);
        }
        start = next_start;
    }

    Trajectory3D { samples, events, source: track.source, track_id: track.track_id }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Source;

    #[test]
    fn empty_track_gives_empty_output() {
        let t = Trajectory3D::new(Vec::new(), Source::Tracked);
        let out = segment_rally(&t, &TableGeometry::default(), &SegmentConfig::default());
        assert!(out.is_empty());
        assert!(out.events.is_empty());
    }
}
