use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::fit_window;
use super::Sample;
use crate::geometry::Point3D;
use crate::simulator::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothConfig {
    pub window: usize,
    pub subsets: usize,
    pub subset_size: usize,
    pub seed: u64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self { window: 20, subsets: 25, subset_size: 6, seed: 0 }
    }
}

/// Bootstrap smoothing with the default window and subset sizes.
pub fn bootstrap_smooth(segment: &[Sample], seed: u64) -> Vec<Sample> {
    bootstrap_smooth_with(segment, &SmoothConfig { seed, ..SmoothConfig::default() })
}

/// Slides a window (stride 1) over the segment; in each window, fits the
/// ballistic model to random subsets drawn without replacement and averages
/// the fits at every window timestamp. Estimates of the same timestamp from
/// overlapping windows are averaged. Segments shorter than one window are
/// treated as a single window; segments shorter than one subset are returned
/// unchanged. Only positions change.
///
/// Window `w` draws from its own generator seeded by `(seed, w)`, so the
/// result does not depend on the order windows are processed in.
pub fn bootstrap_smooth_with(segment: &[Sample], config: &SmoothConfig) -> Vec<Sample> {
    let n = segment.len();
    if n < config.subset_size.max(3) || config.subsets == 0 {
        return segment.to_vec();
    }
    let window = config.window.min(n);
    let points: Vec<Point3D> = segment.iter().map(|s| s.point()).collect();
    let mut sum = vec![Vector3::zeros(); n];
    let mut count = vec![0usize; n];
    let mut subset = Vec::with_capacity(config.subset_size);

    for start in 0..=(n - window) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, start as u64));
        let mut acc = vec![Vector3::zeros(); window];
        let mut fits = 0usize;
        for _ in 0..config.subsets {
            let mut idx = rand::seq::index::sample(&mut rng, window, config.subset_size).into_vec();
            idx.sort_unstable();
            subset.clear();
            subset.extend(idx.iter().map(|&i| points[start + i]));
            let Ok(fit) = fit_window(&subset) else { continue };
            for (i, a) in acc.iter_mut().enumerate() {
                *a += fit.position_at(points[start + i].time);
            }
            fits += 1;
        }
        if fits == 0 {
            continue;
        }
        for (i, a) in acc.into_iter().enumerate() {
            sum[start + i] += a / fits as f64;
            count[start + i] += 1;
        }
    }

    segment
        .iter()
        .zip(sum.into_iter().zip(count))
        .map(|(s, (total, c))| Sample { position: if c > 0 { total / c as f64 } else { s.position }, ..*s })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly_segment(n: u64) -> Vec<Sample> {
        (0..n)
            .map(|f| {
                let t = 0.3 + f as f64 / 150.0;
                Sample::new(f, t, Vector3::new(0.5 - 2.0 * t, 4.0 * t - 1.0, 0.9 + 2.5 * t - 7.0 * t * t))
            })
            .collect()
    }

    #[test]
    fn noiseless_polynomial_passes_through() {
        for n in [6, 13, 20, 47] {
            let seg = poly_segment(n);
            let out = bootstrap_smooth(&seg, 7);
            for (a, b) in seg.iter().zip(&out) {
                assert!((a.position - b.position).norm() < 1e-9, "n={n}");
                assert_eq!(a.time, b.time);
                assert_eq!(a.frame, b.frame);
            }
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let mut seg = poly_segment(40);
        for (i, s) in seg.iter_mut().enumerate() {
            s.position.x += 0.003 * ((i * 7919) % 13) as f64 / 13.0;
        }
        assert_eq!(bootstrap_smooth(&seg, 3), bootstrap_smooth(&seg, 3));
        assert_ne!(bootstrap_smooth(&seg, 3), bootstrap_smooth(&seg, 4));
    }

    #[test]
    fn tiny_segments_pass_unchanged() {
        let seg = poly_segment(5);
        assert_eq!(bootstrap_smooth(&seg, 1), seg);
    }
}
