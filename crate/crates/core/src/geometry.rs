//! Pinhole cameras, projection and two-view triangulation.
//!
//! World frame: right-handed, `x`/`y` parallel to the floor, `z` up. Players
//! stand at either end of the `y` axis. Cameras map world points with
//! `p_cam = R p_world + t` and project with the intrinsic matrix `K`. No lens
//! distortion is modelled.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frame clock of the capture rig.
pub const FRAME_RATE: f64 = 150.0;

/// Default stereo gate: maximum mean reprojection error (pixels) of an accepted pair.
pub const DEFAULT_REPROJ_GATE_PX: f64 = 3.0;

const ORTHONORMAL_TOL: f64 = 1e-9;
const PARALLEL_RAY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind camera `{camera}` (depth {depth:.6} m)")]
    PointBehindCamera { camera: String, depth: f64 },
    #[error("viewing rays are parallel (angle {angle:.3e} rad)")]
    DegenerateRays { angle: f64 },
    #[error("detections come from different frames ({left} vs {right})")]
    FrameMismatch { left: u64, right: u64 },
    #[error("invalid calibration for camera `{camera}`: {reason}")]
    InvalidCalibration { camera: String, reason: String },
    #[error("calibration file: {0}")]
    Io(String),
}

/// Converts a frame index to seconds on the 150 Hz capture clock.
pub fn frame_time(frame_index: u64) -> f64 {
    frame_index as f64 / FRAME_RATE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl Default for ImageSize {
    fn default() -> Self {
        Self { width: 1280, height: 1024 }
    }
}

impl ImageSize {
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < f64::from(self.width) && pixel.y < f64::from(self.height)
    }
}

/// Intrinsics and world-to-camera pose of one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibrationRecord", into = "CalibrationRecord")]
pub struct CameraCalibration {
    pub camera_id: String,
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub image_size: ImageSize,
}

/// On-disk layout: matrices as row-major nested arrays.
#[derive(Serialize, Deserialize)]
struct CalibrationRecord {
    camera_id: String,
    intrinsics: [[f64; 3]; 3],
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    #[serde(default)]
    image_size: ImageSize,
}

fn rows_to_matrix(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

fn matrix_to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

impl TryFrom<CalibrationRecord> for CameraCalibration {
    type Error = GeometryError;

    fn try_from(rec: CalibrationRecord) -> Result<Self, Self::Error> {
        CameraCalibration::new(
            rec.camera_id,
            rows_to_matrix(&rec.intrinsics),
            rows_to_matrix(&rec.rotation),
            Vector3::from(rec.translation),
            rec.image_size,
        )
    }
}

impl From<CameraCalibration> for CalibrationRecord {
    fn from(cam: CameraCalibration) -> Self {
        CalibrationRecord {
            camera_id: cam.camera_id,
            intrinsics: matrix_to_rows(&cam.intrinsics),
            rotation: matrix_to_rows(&cam.rotation),
            translation: cam.translation.into(),
            image_size: cam.image_size,
        }
    }
}

impl CameraCalibration {
    /// Builds a calibration, checking that the rotation is orthonormal, the
    /// focal lengths positive and the principal point inside the image.
    pub fn new(
        camera_id: impl Into<String>,
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_size: ImageSize,
    ) -> Result<Self, GeometryError> {
        let camera_id = camera_id.into();
        let invalid = |reason: String| GeometryError::InvalidCalibration { camera: camera_id.clone(), reason };
        let gram = rotation.transpose() * rotation;
        let deviation = (gram - Matrix3::identity()).abs().max();
        if deviation.is_nan() || deviation > ORTHONORMAL_TOL {
            return Err(invalid(format!("rotation is not orthonormal (|RᵀR - I| = {deviation:.3e})")));
        }
        if rotation.determinant() < 0.0 {
            return Err(invalid("rotation is a reflection".into()));
        }
        let (fx, fy) = (intrinsics[(0, 0)], intrinsics[(1, 1)]);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(invalid(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        let principal = Vector2::new(intrinsics[(0, 2)], intrinsics[(1, 2)]);
        if !image_size.contains(&principal) {
            return Err(invalid(format!("principal point {principal:?} outside image")));
        }
        if intrinsics.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite entries".into()));
        }
        Ok(Self { camera_id, intrinsics, rotation, translation, image_size })
    }

    /// Camera looking from `position` towards `target`, with the image `y`
    /// axis pointing as close to world `-z` as possible.
    pub fn look_at(
        camera_id: impl Into<String>,
        position: Vector3<f64>,
        target: Vector3<f64>,
        focal_px: f64,
        image_size: ImageSize,
    ) -> Result<Self, GeometryError> {
        let forward = (target - position).normalize();
        let down = Vector3::new(0.0, 0.0, -1.0);
        let right = forward.cross(&down).normalize();
        let image_down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), image_down.transpose(), forward.transpose()]);
        let translation = -(rotation * position);
        let intrinsics = Matrix3::new(
            focal_px,
            0.0,
            f64::from(image_size.width) / 2.0,
            0.0,
            focal_px,
            f64::from(image_size.height) / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(camera_id, intrinsics, rotation, translation, image_size)
    }

    /// Optical centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// World-frame direction of the ray through `pixel` (not normalized).
    pub fn ray_direction(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let fx = self.intrinsics[(0, 0)];
        let fy = self.intrinsics[(1, 1)];
        let skew = self.intrinsics[(0, 1)];
        let (cx, cy) = (self.intrinsics[(0, 2)], self.intrinsics[(1, 2)]);
        let yn = (pixel.y - cy) / fy;
        let xn = (pixel.x - cx - skew * yn) / fx;
        self.rotation.transpose() * Vector3::new(xn, yn, 1.0)
    }

    /// 3×4 projection rows in normalized camera coordinates, `[R | t]`.
    fn pose_rows(&self) -> [nalgebra::RowVector4<f64>; 3] {
        std::array::from_fn(|r| {
            nalgebra::RowVector4::new(self.rotation[(r, 0)], self.rotation[(r, 1)], self.rotation[(r, 2)], self.translation[r])
        })
    }

    fn normalize_pixel(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        let fx = self.intrinsics[(0, 0)];
        let fy = self.intrinsics[(1, 1)];
        let skew = self.intrinsics[(0, 1)];
        let (cx, cy) = (self.intrinsics[(0, 2)], self.intrinsics[(1, 2)]);
        let yn = (pixel.y - cy) / fy;
        Vector2::new((pixel.x - cx - skew * yn) / fx, yn)
    }
}

/// A ball position in the world frame at a capture time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3D {
    pub position: Vector3<f64>,
    pub time: f64,
}

impl Point3D {
    pub fn new(position: Vector3<f64>, time: f64) -> Self {
        Self { position, time }
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite() && self.position.iter().all(|v| v.is_finite())
    }
}

/// One ball observation in one camera image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub camera_id: String,
    pub frame_index: u64,
    pub time: f64,
    pub pixel: [f64; 2],
    pub confidence: f64,
}

impl Detection2D {
    pub fn new(camera_id: impl Into<String>, frame_index: u64, pixel: Vector2<f64>, confidence: f64) -> Self {
        Self { camera_id: camera_id.into(), frame_index, time: frame_time(frame_index), pixel: pixel.into(), confidence }
    }

    pub fn pixel(&self) -> Vector2<f64> {
        Vector2::from(self.pixel)
    }
}

/// Pinhole projection of a world point.
pub fn project(point: &Vector3<f64>, camera: &CameraCalibration) -> Result<Vector2<f64>, GeometryError> {
    let p = camera.to_camera(point);
    if p.z <= 0.0 {
        return Err(GeometryError::PointBehindCamera { camera: camera.camera_id.clone(), depth: p.z });
    }
    let h = camera.intrinsics * p;
    Ok(Vector2::new(h.x / h.z, h.y / h.z))
}

/// Result of triangulating one stereo pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub point: Point3D,
    /// Mean of the two reprojection distances, pixels.
    pub reproj_error: f64,
}

/// Linear (DLT) two-view triangulation.
///
/// The homogeneous system is built in normalized camera coordinates and
/// solved by SVD. The two views are ordered by camera id before the system is
/// assembled, so swapping both the detections and the cameras returns a
/// bit-identical point.
pub fn triangulate(
    left: &Detection2D,
    right: &Detection2D,
    cam_l: &CameraCalibration,
    cam_r: &CameraCalibration,
) -> Result<Triangulation, GeometryError> {
    if left.frame_index != right.frame_index {
        return Err(GeometryError::FrameMismatch { left: left.frame_index, right: right.frame_index });
    }
    let (a, b) = if (cam_l.camera_id.as_str(), left.pixel) <= (cam_r.camera_id.as_str(), right.pixel) {
        ((left, cam_l), (right, cam_r))
    } else {
        ((right, cam_r), (left, cam_l))
    };
    let views = [a, b];

    let d0 = views[0].1.ray_direction(&views[0].0.pixel());
    let d1 = views[1].1.ray_direction(&views[1].0.pixel());
    let angle = d0.cross(&d1).norm().atan2(d0.dot(&d1));
    if angle.abs() < PARALLEL_RAY_TOL {
        return Err(GeometryError::DegenerateRays { angle });
    }

    let mut system = Matrix4::zeros();
    for (v, (det, cam)) in views.iter().enumerate() {
        let n = cam.normalize_pixel(&det.pixel());
        let [p1, p2, p3] = cam.pose_rows();
        let r0 = p3 * n.x - p1;
        let r1 = p3 * n.y - p2;
        system.set_row(2 * v, &(r0 / r0.norm()));
        system.set_row(2 * v + 1, &(r1 / r1.norm()));
    }
    let svd = system.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let (min_idx, _) =
        svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best });
    let x = v_t.row(min_idx);
    if x[3].abs() < f64::EPSILON * x.norm() {
        return Err(GeometryError::DegenerateRays { angle });
    }
    let position = Vector3::new(x[0] / x[3], x[1] / x[3], x[2] / x[3]);

    let mut reproj = 0.0;
    for (det, cam) in views {
        let pixel = project(&position, cam)?;
        reproj += (pixel - det.pixel()).norm();
    }
    Ok(Triangulation { point: Point3D::new(position, left.time), reproj_error: reproj / 2.0 })
}

/// A calibrated multi-camera rig; the first two cameras form the stereo pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub cameras: Vec<CameraCalibration>,
}

impl Rig {
    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = fs::read_to_string(path).map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let rig: Rig = serde_json::from_str(text).map_err(|e| GeometryError::Io(e.to_string()))?;
        if rig.cameras.len() < 2 {
            return Err(GeometryError::Io(format!("rig needs at least 2 cameras, found {}", rig.cameras.len())));
        }
        Ok(rig)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rig serializes")
    }

    pub fn camera(&self, id: &str) -> Option<&CameraCalibration> {
        self.cameras.iter().find(|c| c.camera_id == id)
    }

    pub fn stereo_pair(&self) -> (&CameraCalibration, &CameraCalibration) {
        (&self.cameras[0], &self.cameras[1])
    }

    /// Two 1280×1024 cameras 4 m to the side of the table, 2 m apart along
    /// the table's long axis, both aimed at the table centre.
    pub fn standard() -> Self {
        let size = ImageSize::default();
        let target = Vector3::new(0.0, 0.0, 0.9);
        let left = CameraCalibration::look_at("left", Vector3::new(-4.0, -1.0, 2.0), target, 700.0, size).expect("valid default camera");
        let right = CameraCalibration::look_at("right", Vector3::new(-4.0, 1.0, 2.0), target, 700.0, size).expect("valid default camera");
        Self { cameras: vec![left, right] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn axis_camera() -> CameraCalibration {
        CameraCalibration::new(
            "c0",
            Matrix3::new(1000.0, 0.0, 640.0, 0.0, 1000.0, 512.0, 0.0, 0.0, 1.0),
            Matrix3::identity(),
            Vector3::zeros(),
            ImageSize::default(),
        )
        .unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let px = project(&Vector3::new(0.0, 0.0, 1.0), &axis_camera()).unwrap();
        assert_eq!(px, Vector2::new(640.0, 512.0));
    }

    #[test]
    fn analytic_pinhole() {
        let px = project(&Vector3::new(0.1, 0.0, 1.0), &axis_camera()).unwrap();
        assert_relative_eq!(px, Vector2::new(740.0, 512.0), epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let err = project(&Vector3::new(0.0, 0.0, -1.0), &axis_camera()).unwrap_err();
        assert!(matches!(err, GeometryError::PointBehindCamera { .. }));
        assert!(project(&Vector3::new(0.0, 0.0, 0.0), &axis_camera()).is_err());
    }

    #[test]
    fn calibration_validation() {
        let k = Matrix3::new(1000.0, 0.0, 640.0, 0.0, 1000.0, 512.0, 0.0, 0.0, 1.0);
        let skewed = Matrix3::new(1.0, 1e-6, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraCalibration::new("a", k, skewed, Vector3::zeros(), ImageSize::default()).is_err());
        let mut bad_k = k;
        bad_k[(0, 0)] = -5.0;
        assert!(CameraCalibration::new("a", bad_k, Matrix3::identity(), Vector3::zeros(), ImageSize::default()).is_err());
        let mut off = k;
        off[(0, 2)] = 2000.0;
        assert!(CameraCalibration::new("a", off, Matrix3::identity(), Vector3::zeros(), ImageSize::default()).is_err());
    }

    #[test]
    fn noiseless_round_trip() {
        let rig = Rig::standard();
        let (l, r) = rig.stereo_pair();
        let truth = Vector3::new(0.3, -0.8, 1.05);
        let dl = Detection2D::new("left", 7, project(&truth, l).unwrap(), 1.0);
        let dr = Detection2D::new("right", 7, project(&truth, r).unwrap(), 1.0);
        let tri = triangulate(&dl, &dr, l, r).unwrap();
        assert!((tri.point.position - truth).norm() < 1e-6);
        assert!(tri.reproj_error < 1e-6);
        assert_eq!(tri.point.time, frame_time(7));
    }

    #[test]
    fn swapping_views_is_bit_identical() {
        let rig = Rig::standard();
        let (l, r) = rig.stereo_pair();
        let dl = Detection2D::new("left", 1, Vector2::new(610.3, 480.9), 1.0);
        let dr = Detection2D::new("right", 1, Vector2::new(655.1, 482.2), 1.0);
        let a = triangulate(&dl, &dr, l, r).unwrap();
        let b = triangulate(&dr, &dl, r, l).unwrap();
        assert_eq!(a.point.position, b.point.position);
        assert_eq!(a.reproj_error, b.reproj_error);
    }

    #[test]
    fn parallel_rays_are_degenerate() {
        let k = Matrix3::new(1000.0, 0.0, 640.0, 0.0, 1000.0, 512.0, 0.0, 0.0, 1.0);
        let a = CameraCalibration::new("a", k, Matrix3::identity(), Vector3::zeros(), ImageSize::default()).unwrap();
        let b = CameraCalibration::new("b", k, Matrix3::identity(), Vector3::new(-0.5, 0.0, 0.0), ImageSize::default()).unwrap();
        let da = Detection2D::new("a", 0, Vector2::new(640.0, 512.0), 1.0);
        let db = Detection2D::new("b", 0, Vector2::new(640.0, 512.0), 1.0);
        assert!(matches!(triangulate(&da, &db, &a, &b), Err(GeometryError::DegenerateRays { .. })));
    }

    #[test]
    fn frame_mismatch_is_rejected() {
        let rig = Rig::standard();
        let (l, r) = rig.stereo_pair();
        let dl = Detection2D::new("left", 1, Vector2::new(600.0, 500.0), 1.0);
        let dr = Detection2D::new("right", 2, Vector2::new(600.0, 500.0), 1.0);
        assert!(matches!(triangulate(&dl, &dr, l, r), Err(GeometryError::FrameMismatch { .. })));
    }

    #[test]
    fn rig_json_is_row_major() {
        let rig = Rig::standard();
        let json = rig.to_json();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let k = &value["cameras"][0]["intrinsics"];
        assert_eq!(k[0][2].as_f64().unwrap(), 640.0);
        assert_eq!(k[1][2].as_f64().unwrap(), 512.0);
        assert_eq!(Rig::from_json(&json).unwrap(), rig);
    }

    #[test]
    fn standard_rig_sees_the_play_volume() {
        let rig = Rig::standard();
        for cam in &rig.cameras {
            for &(x, y, z) in &[(0.0, -2.2, 0.8), (0.0, 2.2, 0.8), (0.7, 1.5, 1.6), (-0.7, -1.5, 0.76)] {
                let px = project(&Vector3::new(x, y, z), cam).unwrap();
                assert!(cam.image_size.contains(&px), "{} {:?}", cam.camera_id, px);
            }
        }
    }
}
