use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::{project, CameraCalibration, Detection2D};
use crate::trajectory::Trajectory3D;

/// Detections of one camera in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionStream {
    pub camera_id: String,
    pub detections: Vec<Detection2D>,
}

/// Projects every truth sample into every camera, adds isotropic Gaussian
/// pixel noise and drops each detection independently with probability
/// `dropout`. Points behind a camera or outside its image are not detected.
///
/// Three random draws are consumed per (sample, camera) regardless of the
/// outcome, so the noise on one detection never depends on another's fate.
pub fn render_detections(
    truth: &Trajectory3D,
    cameras: &[CameraCalibration],
    noise_sigma: f64,
    dropout: f64,
    rng_seed: u64,
) -> Vec<DetectionStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut streams: Vec<DetectionStream> =
        cameras.iter().map(|c| DetectionStream { camera_id: c.camera_id.clone(), detections: Vec::new() }).collect();
    for sample in &truth.samples {
        for (cam, stream) in cameras.iter().zip(streams.iter_mut()) {
            let keep = rng.random::<f64>() >= dropout;
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            let Ok(mut pixel) = project(&sample.position, cam) else { continue };
            pixel.x += noise_sigma * nx;
            pixel.y += noise_sigma * ny;
            if keep && cam.image_size.contains(&pixel) {
                stream.detections.push(Detection2D::new(cam.camera_id.clone(), sample.frame, pixel, 1.0));
            }
        }
    }
    streams
}

/// Renders several balls into the same cameras. Each ball gets its own
/// stream of random numbers derived from `rng_seed`; detections are merged in
/// frame order, ball order within a frame.
pub fn render_scene(
    truths: &[Trajectory3D],
    cameras: &[CameraCalibration],
    noise_sigma: f64,
    dropout: f64,
    rng_seed: u64,
) -> Vec<DetectionStream> {
    let per_ball: Vec<Vec<DetectionStream>> = truths
        .iter()
        .enumerate()
        .map(|(i, t)| render_detections(t, cameras, noise_sigma, dropout, derive_seed(rng_seed, i as u64)))
        .collect();
    cameras
        .iter()
        .enumerate()
        .map(|(c, cam)| {
            let mut detections: Vec<Detection2D> = per_ball.iter().flat_map(|streams| streams[c].detections.iter().cloned()).collect();
            detections.sort_by_key(|d| d.frame_index);
            DetectionStream { camera_id: cam.camera_id.clone(), detections }
        })
        .collect()
}

/// SplitMix64 finalizer over `(seed, index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
