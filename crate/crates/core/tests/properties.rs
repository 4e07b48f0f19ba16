use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

use pingtrace::gatedcell::{gated_step, spatial_softmax, FeatureMap, GatedCellParams};
use pingtrace::geometry::{frame_time, project, triangulate, Detection2D, Point3D, Rig};
use pingtrace::tracker::{kf_predict, kf_update, KalmanConfig, KalmanState, Tracker, TrackerConfig};
use pingtrace::trajectory::{Sample, Source, Trajectory3D};

fn point_in_play() -> impl Strategy<Value = Vector3<f64>> {
    (-0.8..0.8f64, -1.6..1.6f64, 0.76..1.9f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kalman_covariance_stays_positive_definite(
        steps in prop::collection::vec((1u64..12, point_in_play(), any::<bool>()), 1..40),
        sigma in 0.001..0.05f64,
    ) {
        let r = Matrix3::identity() * sigma * sigma;
        let cfg = KalmanConfig::default();
        let mut s = KalmanState::from_measurement(&Vector3::new(0.0, 0.0, 1.0), &r, 10.0, 0);
        for (dt, p, update) in steps {
            s = kf_predict(&s, dt as f64 / 150.0, &cfg);
            prop_assert!(s.is_valid());
            if update {
                s = kf_update(&s, &Point3D::new(p, 0.0), &r).unwrap().0;
                prop_assert!(s.is_valid());
            }
        }
    }

    #[test]
    fn triangulation_is_symmetric_in_the_views(p in point_in_play(), nl in (-2.0..2.0f64, -2.0..2.0f64), nr in (-2.0..2.0f64, -2.0..2.0f64)) {
        let rig = Rig::standard();
        let (cl, cr) = rig.stereo_pair();
        let l = Detection2D::new("left", 3, project(&p, cl).unwrap() + nalgebra::Vector2::new(nl.0, nl.1), 1.0);
        let r = Detection2D::new("right", 3, project(&p, cr).unwrap() + nalgebra::Vector2::new(nr.0, nr.1), 1.0);
        let a = triangulate(&l, &r, cl, cr).unwrap();
        let b = triangulate(&r, &l, cr, cl).unwrap();
        prop_assert!((a.point.position - b.point.position).norm() < 1e-9);
        prop_assert!((a.reproj_error - b.reproj_error).abs() < 1e-9);
    }

    #[test]
    fn softmax_is_a_distribution_and_permutation_equivariant(
        values in prop::collection::vec(-30.0..30.0f64, 12),
        shift in 0usize..12,
    ) {
        let logits = FeatureMap::from_fn(1, 3, 4, |_, r, c| values[r * 4 + c]);
        let h = spatial_softmax(&logits).unwrap();
        prop_assert!((h.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(h.probs.iter().all(|&p| p > 0.0));
        let rolled = FeatureMap::from_fn(1, 3, 4, |_, r, c| values[(r * 4 + c + shift) % 12]);
        let g = spatial_softmax(&rolled).unwrap();
        for i in 0..12 {
            prop_assert!((g.at(i / 4, i % 4) - h.at(((i + shift) % 12) / 4, ((i + shift) % 12) % 4)).abs() < 1e-12);
        }
    }

    #[test]
    fn gated_cell_output_is_bounded(
        weights in prop::collection::vec(-3.0..3.0f64, 2 * 2 * 9 * 3),
        inputs in prop::collection::vec(-5.0..5.0f64, 3 * 5 * 4),
    ) {
        let mut params = GatedCellParams::zeros(1, 2, 3);
        let n = params.w_z.weights.len();
        params.w_z.weights.iter_mut().zip(&weights[..n]).for_each(|(w, v)| *w = *v);
        params.w_c.weights.iter_mut().zip(&weights[n..]).for_each(|(w, v)| *w = *v);
        let x = FeatureMap::from_fn(1, 5, 4, |_, r, c| inputs[r * 4 + c]);
        let h = FeatureMap::from_fn(2, 5, 4, |ch, r, c| inputs[20 + ch * 20 + r * 4 + c].tanh());
        let out = gated_step(&x, &h, &params).unwrap();
        prop_assert_eq!(out.shape(), (2, 5, 4));
        prop_assert!(out.data.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn track_ids_are_unique_and_states_contiguous(
        frames in prop::collection::vec(prop::collection::vec(point_in_play(), 0..3), 1..60),
    ) {
        let mut t = Tracker::new(TrackerConfig::default());
        for (f, pts) in frames.iter().enumerate() {
            let pts: Vec<Point3D> = pts.iter().map(|p| Point3D::new(*p, frame_time(f as u64))).collect();
            t.step(f as u64, &pts).unwrap();
        }
        let mut ids: Vec<u64> = t.tracks().iter().map(|k| k.id).collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        for k in t.tracks() {
            for (i, s) in k.states.iter().enumerate() {
                prop_assert_eq!(s.frame, k.first_frame() + i as u64);
            }
            prop_assert!(k.points.iter().all(|p| k.state_at(p.frame).is_some()));
        }
    }

    #[test]
    fn trajectory_records_round_trip(zs in prop::collection::vec(0.8..1.5f64, 1..30), id in prop::option::of(0u64..5)) {
        let samples = zs.iter().enumerate().map(|(i, z)| Sample::new(2 * i as u64, i as f64 / 75.0, Vector3::new(0.1, i as f64 * 0.01, *z))).collect();
        let mut t = Trajectory3D::new(samples, Source::Tracked);
        t.track_id = id;
        let back = Trajectory3D::from_records(&t.to_records()).unwrap();
        prop_assert_eq!(back, vec![t]);
    }
}
