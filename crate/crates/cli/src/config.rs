use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pingtrace::gatedcell::{ToyDataConfig, TrainConfig};
use pingtrace::geometry::Rig;
use pingtrace::simulator::{ScenarioConfig, SimConfig, TableGeometry};
use pingtrace::spin::SpinConfig;
use pingtrace::tracker::TrackerConfig;
use pingtrace::trajectory::SegmentConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSettings {
    /// Rallies generated when no script is given, played back to back.
    pub rallies: usize,
    pub hits_per_rally: usize,
    /// Idle frames between consecutive rallies.
    pub gap_frames: u64,
    pub noise_px: f64,
    pub dropout: f64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self { rallies: 1, hits_per_rally: 4, gap_frames: 30, noise_px: 0.5, dropout: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSettings {
    /// Frames of the generated corpus.
    pub frames: u64,
    /// Balls in play at once.
    pub balls: usize,
    pub budget_ms: f64,
    pub warmup_frames: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self { frames: 10_000, balls: 2, budget_ms: 6.6, warmup_frames: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportSettings {
    pub rallies: usize,
    pub hits_per_rally: usize,
    pub noise_px: f64,
    /// Frames by which a detected event may miss its true frame.
    pub event_tolerance_frames: u64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self { rallies: 30, hits_per_rally: 4, noise_px: 0.5, event_tolerance_frames: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    /// Bootstrap-smooth tracked segments between inflections.
    pub smoothing: bool,
    /// Also train the single-frame baseline in `train-toy`.
    pub baseline: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self { smoothing: true, baseline: true }
    }
}

/// Everything a pipeline run depends on. Every field has a default, so an
/// empty JSON object is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Camera rig JSON; the built-in two-camera rig when absent.
    pub calibration: Option<PathBuf>,
    /// Rally script JSON for `simulate`; random rallies when absent.
    pub script: Option<PathBuf>,
    pub stages: StageToggles,
    pub table: TableGeometry,
    pub sim: SimConfig,
    pub scenario: ScenarioConfig,
    pub simulate: SimulateSettings,
    pub tracker: TrackerConfig,
    pub segment: SegmentConfig,
    pub spin: SpinConfig,
    pub bench: BenchSettings,
    pub report: ReportSettings,
    pub train: TrainConfig,
    pub toy_data: ToyDataConfig,
    /// Clips held out for AUC in `train-toy`.
    pub toy_eval_sequences: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            calibration: None,
            script: None,
            stages: StageToggles::default(),
            table: TableGeometry::default(),
            sim: SimConfig::default(),
            scenario: ScenarioConfig::default(),
            simulate: SimulateSettings::default(),
            tracker: TrackerConfig::default(),
            segment: SegmentConfig::default(),
            spin: SpinConfig::default(),
            bench: BenchSettings::default(),
            report: ReportSettings::default(),
            train: TrainConfig::default(),
            toy_data: ToyDataConfig { occlusion_frames: 3, ..ToyDataConfig::default() },
            toy_eval_sequences: 60,
        }
    }
}

fn check(ok: bool, field: &str, rule: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(format!("config field '{field}' must be {rule}")))
    }
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.calibration, &mut cfg.script].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Referenced files exist and overrides are in range.
    pub fn validate(&self) -> Result<(), CliError> {
        for p in [&self.calibration, &self.script].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::Usage(format!("referenced file {} does not exist", p.display())));
            }
        }
        self.table.validate().map_err(|m| CliError::Usage(format!("config field 'table': {m}")))?;
        let s = &self.simulate;
        check(s.noise_px >= 0.0 && s.noise_px.is_finite(), "simulate.noise_px", "a finite non-negative number")?;
        check((0.0..1.0).contains(&s.dropout), "simulate.dropout", "in [0, 1)")?;
        check(s.rallies >= 1, "simulate.rallies", "at least 1")?;
        let t = &self.tracker;
        check(t.measurement_sigma > 0.0, "tracker.measurement_sigma", "positive")?;
        check(t.gate_chi2 > 0.0, "tracker.gate_chi2", "positive")?;
        check(t.reproj_gate_px > 0.0, "tracker.reproj_gate_px", "positive")?;
        check(t.kalman.accel_sigma >= 0.0, "tracker.kalman.accel_sigma", "non-negative")?;
        check(t.impulse_sigma >= 0.0, "tracker.impulse_sigma", "non-negative")?;
        check(t.init_velocity_sigma > 0.0, "tracker.init_velocity_sigma", "positive")?;
        let seg = &self.segment;
        check(seg.inflection.nms_radius_frames >= 1, "segment.inflection.nms_radius_frames", "at least 1")?;
        check(seg.inflection.bounce_height_tolerance > 0.0, "segment.inflection.bounce_height_tolerance", "positive")?;
        check(seg.smooth.subset_size >= 3, "segment.smooth.subset_size", "at least 3")?;
        check(seg.smooth.window >= seg.smooth.subset_size, "segment.smooth.window", "at least subset_size")?;
        check(self.spin.rejection_radius > 0.0, "spin.rejection_radius", "positive")?;
        check(self.bench.budget_ms > 0.0, "bench.budget_ms", "positive")?;
        check(self.bench.balls >= 1, "bench.balls", "at least 1")?;
        check(self.report.rallies >= 1, "report.rallies", "at least 1")?;
        let tr = &self.train;
        check(tr.hidden >= 1, "train.hidden", "at least 1")?;
        check(tr.batch_size >= 1, "train.batch_size", "at least 1")?;
        check(tr.learning_rate > 0.0, "train.learning_rate", "positive")?;
        let d = &self.toy_data;
        check(
            d.rows.is_multiple_of(2) && d.cols.is_multiple_of(2) && d.rows >= 8 && d.cols >= 8,
            "toy_data.rows/cols",
            "even and at least 8",
        )?;
        check(d.sequences >= 1 && d.frames >= 1, "toy_data.sequences/frames", "at least 1")?;
        Ok(())
    }

    pub fn rig(&self) -> Result<Rig, CliError> {
        match &self.calibration {
            Some(p) => Rig::load(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
            None => Ok(Rig::standard()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"tracker": {"gate_chi2": 9.0}, "unknown": 1}"#).unwrap();
        assert_eq!(cfg.tracker.gate_chi2, 9.0);
        assert_eq!(cfg.tracker.max_missed_frames, 8);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let cfg = PipelineConfig { simulate: SimulateSettings { dropout: 1.5, ..Default::default() }, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(CliError::Usage(m)) if m.contains("simulate.dropout")));
        let cfg = PipelineConfig { calibration: Some("/nonexistent/rig.json".into()), ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
