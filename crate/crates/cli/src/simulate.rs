use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pingtrace::geometry::{frame_time, Detection2D, Rig};
use pingtrace::io;
use pingtrace::simulator::{
    derive_seed, generate_rally_retrying, random_labels, render_detections, simulate_rally, RallyScript, SpinLabel,
};
use pingtrace::trajectory::Trajectory3D;

use crate::config::PipelineConfig;
use crate::{CliError, Outputs};

/// Seed streams drawn from the run seed, one per purpose.
pub(crate) const LABEL_STREAM: u64 = 1;
pub(crate) const RALLY_STREAM: u64 = 2;
pub(crate) const RENDER_STREAM: u64 = 3;

pub(crate) fn stream_seed(seed: u64, stream: u64, index: u64) -> u64 {
    derive_seed(derive_seed(seed, stream), index)
}

/// Random rally `index` of a run.
pub fn random_rally(cfg: &PipelineConfig, index: u64, hits: usize) -> Result<(RallyScript, Trajectory3D), CliError> {
    let labels = random_labels(hits, stream_seed(cfg.seed, LABEL_STREAM, index));
    generate_rally_retrying(&labels, stream_seed(cfg.seed, RALLY_STREAM, index), &cfg.table, &cfg.sim, &cfg.scenario)
        .map_err(|e| CliError::Analysis(format!("rally {index}: {e}")))
}

/// Moves a trajectory `offset` frames later in time.
pub fn shift_frames(traj: &mut Trajectory3D, offset: u64) {
    for s in &mut traj.samples {
        s.frame += offset;
        s.time = frame_time(s.frame);
    }
    for e in &mut traj.events {
        e.frame += offset;
        e.time += frame_time(offset);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    One(RallyScript),
    Many(Vec<RallyScript>),
}

fn load_scripts(path: &Path) -> Result<Vec<RallyScript>, CliError> {
    let scripts = match io::read_json::<ScriptFile>(path)? {
        ScriptFile::One(s) => vec![s],
        ScriptFile::Many(v) => v,
    };
    if scripts.is_empty() {
        return Err(CliError::Schema(format!("{}: no rally scripts", path.display())));
    }
    for (i, s) in scripts.iter().enumerate() {
        s.validate().map_err(|e| CliError::Schema(format!("{}: script {i}: {e}", path.display())))?;
    }
    Ok(scripts)
}

/// One rally of a simulated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub rally: usize,
    /// Frame at which the rally's local time zero sits.
    pub frame_offset: u64,
    pub script: RallyScript,
}

/// Scripted spin class of one hit, in session frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub rally: usize,
    pub hit_frame: u64,
    pub label: SpinLabel,
}

/// A simulated session: rallies played back to back with idle gaps, the
/// truth of rally `i` carrying track id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub scripts: Vec<ScriptRecord>,
    pub truth: Vec<Trajectory3D>,
    pub labels: Vec<LabelRecord>,
    pub detections: BTreeMap<String, Vec<Detection2D>>,
}

pub fn simulate_session(cfg: &PipelineConfig, rig: &Rig) -> Result<Session, CliError> {
    let s = &cfg.simulate;
    // (script, truth, noise, dropout, render seed)
    let mut rallies = Vec::new();
    match &cfg.script {
        Some(path) => {
            for script in load_scripts(path)? {
                let truth = simulate_rally(&script, &cfg.table, &cfg.sim).map_err(|e| CliError::Analysis(e.to_string()))?;
                let (noise, dropout, seed) = (script.detection_noise_sigma, script.dropout_probability, script.rng_seed);
                rallies.push((script, truth, noise, dropout, seed));
            }
        }
        None => {
            for i in 0..s.rallies as u64 {
                let (script, truth) = random_rally(cfg, i, s.hits_per_rally)?;
                rallies.push((script, truth, s.noise_px, s.dropout, stream_seed(cfg.seed, RENDER_STREAM, i)));
            }
        }
    }

    let mut session = Session { scripts: Vec::new(), truth: Vec::new(), labels: Vec::new(), detections: BTreeMap::new() };
    for cam in &rig.cameras {
        session.detections.insert(cam.camera_id.clone(), Vec::new());
    }
    let mut offset = 0u64;
    for (i, (script, mut truth, noise, dropout, seed)) in rallies.into_iter().enumerate() {
        shift_frames(&mut truth, offset);
        truth.track_id = Some(i as u64);
        for (frame, label) in script.hit_labels() {
            session.labels.push(LabelRecord { rally: i, hit_frame: frame + offset, label });
        }
        for stream in render_detections(&truth, &rig.cameras, noise, dropout, seed) {
            session.detections.get_mut(&stream.camera_id).expect("camera listed").extend(stream.detections);
        }
        session.scripts.push(ScriptRecord { rally: i, frame_offset: offset, script });
        offset = truth.samples.last().map_or(offset, |l| l.frame + 1) + s.gap_frames;
        session.truth.push(truth);
    }
    Ok(session)
}

pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    let rig = cfg.rig()?;
    let session = simulate_session(cfg, &rig)?;
    let mut out = Outputs::default();
    let truth: Vec<_> = session.truth.iter().flat_map(|t| t.to_records()).collect();
    out.jsonl("truth.jsonl", &truth);
    for (cam, dets) in &session.detections {
        out.jsonl(&format!("detections_{cam}.jsonl"), dets);
    }
    out.jsonl("scripts.jsonl", &session.scripts);
    out.jsonl("labels.jsonl", &session.labels);
    out.text("rig.json", rig.to_json() + "\n");
    let frames: usize = session.truth.iter().map(|t| t.len()).sum();
    let dets: usize = session.detections.values().map(Vec::len).sum();
    out.summary = format!("simulated {} rallies: {frames} frames, {} hits, {dets} detections\n", session.truth.len(), session.labels.len());
    Ok(out)
}
