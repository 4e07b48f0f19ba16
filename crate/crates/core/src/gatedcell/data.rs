use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::FeatureMap;
use crate::geometry::{project, CameraCalibration, ImageSize};
use crate::simulator::{derive_seed, simulate_rally, RallyScript, SimConfig, SpinLabel, Strike, TableGeometry};

/// A rendered clip with the ball's pixel `(row, col)` in every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySequence {
    pub frames: Vec<FeatureMap>,
    pub targets: Vec<(usize, usize)>,
    /// Frames in which the ball is hidden but still labelled.
    pub occluded: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDataConfig {
    pub sequences: usize,
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub ball_radius: f64,
    /// Peak amplitude of the smooth background texture.
    pub texture_amplitude: f64,
    /// Standard deviation of per-pixel noise.
    pub pixel_noise: f64,
    /// Static ball-sized blobs per clip.
    pub distractors: usize,
    pub distractor_intensity: f64,
    /// Consecutive frames with the ball hidden, one run per clip; 0 disables.
    pub occlusion_frames: usize,
    pub seed: u64,
}

impl Default for ToyDataConfig {
    fn default() -> Self {
        Self {
            sequences: 500,
            frames: 25,
            rows: 32,
            cols: 40,
            ball_radius: 1.3,
            texture_amplitude: 0.3,
            pixel_noise: 0.05,
            distractors: 1,
            distractor_intensity: 0.7,
            occlusion_frames: 0,
            seed: 0,
        }
    }
}

/// Low-resolution camera beside the table, aimed at its centre.
pub fn toy_camera(rows: usize, cols: usize) -> CameraCalibration {
    let size = ImageSize { width: cols as u32, height: rows as u32 };
    let focal = 0.85 * cols as f64;
    CameraCalibration::look_at("toy", Vector3::new(-2.6, 0.0, 1.1), Vector3::new(0.0, 0.0, 0.95), focal, size).expect("valid toy camera")
}

fn disc(frame: &mut FeatureMap, centre: (f64, f64), radius: f64, intensity: f64) {
    for r in 0..frame.rows {
        for c in 0..frame.cols {
            let d = ((r as f64 - centre.0).powi(2) + (c as f64 - centre.1).powi(2)).sqrt();
            let cover = (radius + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                let v = frame.get(0, r, c);
                frame.set(0, r, c, v + cover * (intensity - v));
            }
        }
    }
}

fn background(rng: &mut impl Rng, cfg: &ToyDataConfig) -> FeatureMap {
    let waves: Vec<(f64, f64, f64)> =
        (0..4).map(|_| (rng.random_range(0.1..0.7), rng.random_range(0.1..0.7), rng.random_range(0.0..std::f64::consts::TAU))).collect();
    FeatureMap::from_fn(1, cfg.rows, cfg.cols, |_, r, c| {
        let t: f64 = waves.iter().map(|(a, b, p)| (a * r as f64 + b * c as f64 + p).sin()).sum::<f64>() / 4.0;
        0.35 + cfg.texture_amplitude * t
    })
}

/// Image-plane ball path of a random flight, or `None` if it leaves the
/// image or play early.
fn flight_pixels(rng: &mut impl Rng, cam: &CameraCalibration, cfg: &ToyDataConfig) -> Option<Vec<(f64, f64)>> {
    let toward = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let position = Vector3::new(rng.random_range(-0.5..0.5), -toward * rng.random_range(0.6..1.5), rng.random_range(0.85..1.25));
    let velocity = Vector3::new(rng.random_range(-0.5..0.5), toward * rng.random_range(2.5..7.0), rng.random_range(-0.5..2.5));
    let spin = rng.random_range(0.0..400.0) * Vector3::z().cross(&Vector3::new(0.0, toward, 0.0));
    let script = RallyScript {
        strikes: vec![Strike { time: 0.0, position: Some(position), velocity, spin, label: SpinLabel::NoSpin }],
        rng_seed: 0,
        detection_noise_sigma: 0.0,
        dropout_probability: 0.0,
    };
    let sim = SimConfig { tail_frames: cfg.frames as u64, ..SimConfig::default() };
    let truth = simulate_rally(&script, &TableGeometry::default(), &sim).ok()?;
    let margin = cfg.ball_radius;
    truth
        .samples
        .iter()
        .take(cfg.frames)
        .map(|s| {
            let p = project(&s.position, cam).ok()?;
            let inside = p.x >= margin && p.y >= margin && p.x <= cfg.cols as f64 - 1.0 - margin && p.y <= cfg.rows as f64 - 1.0 - margin;
            inside.then_some((p.y, p.x))
        })
        .collect::<Option<Vec<_>>>()
        .filter(|v| v.len() == cfg.frames)
}

fn render_sequence(seed: u64, cam: &CameraCalibration, cfg: &ToyDataConfig) -> ToySequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = loop {
        if let Some(p) = flight_pixels(&mut rng, cam, cfg) {
            break p;
        }
    };
    let base = background(&mut rng, cfg);
    let blobs: Vec<(f64, f64)> = (0..cfg.distractors)
        .map(|_| (rng.random_range(2.0..cfg.rows as f64 - 2.0), rng.random_range(2.0..cfg.cols as f64 - 2.0)))
        .collect();
    let occluded: Vec<bool> = if cfg.occlusion_frames > 0 && cfg.frames > cfg.occlusion_frames + 4 {
        let start = rng.random_range(3..cfg.frames - cfg.occlusion_frames);
        (0..cfg.frames).map(|t| t >= start && t < start + cfg.occlusion_frames).collect()
    } else {
        vec![false; cfg.frames]
    };
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut targets = Vec::with_capacity(cfg.frames);
    for (t, &(r, c)) in path.iter().enumerate() {
        let mut f = base.clone();
        for &b in &blobs {
            disc(&mut f, b, cfg.ball_radius, cfg.distractor_intensity);
        }
        if !occluded[t] {
            disc(&mut f, (r, c), cfg.ball_radius, 1.0);
        }
        let noise = cfg.pixel_noise;
        f.data.iter_mut().for_each(|v| *v += noise * (rng.random::<f64>() * 2.0 - 1.0) * 3f64.sqrt());
        frames.push(f);
        targets.push((r.round() as usize, c.round() as usize));
    }
    ToySequence { frames, targets, occluded }
}

/// Renders `cfg.sequences` clips; clip `i` depends only on `(cfg.seed, i)`.
pub fn render_toy_dataset(cfg: &ToyDataConfig) -> Vec<ToySequence> {
    let cam = toy_camera(cfg.rows, cfg.cols);
    (0..cfg.sequences).map(|i| render_sequence(derive_seed(cfg.seed, i as u64), &cam, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_have_requested_shape() {
        let cfg = ToyDataConfig { sequences: 3, occlusion_frames: 3, ..ToyDataConfig::default() };
        let data = render_toy_dataset(&cfg);
        assert_eq!(data.len(), 3);
        for s in &data {
            assert_eq!(s.frames.len(), 25);
            assert_eq!(s.occluded.iter().filter(|&&o| o).count(), 3);
            for (f, &(r, c)) in s.frames.iter().zip(&s.targets) {
                assert_eq!(f.shape(), (1, 32, 40));
                assert!(r < 32 && c < 40);
                assert!(f.is_finite());
            }
        }
        assert_eq!(data, render_toy_dataset(&cfg));
    }

    #[test]
    fn ball_is_bright_when_visible() {
        let cfg = ToyDataConfig { sequences: 2, distractors: 0, ..ToyDataConfig::default() };
        for s in render_toy_dataset(&cfg) {
            for (f, &(r, c)) in s.frames.iter().zip(&s.targets) {
                assert!(f.get(0, r, c) > 0.8);
            }
        }
    }
}
