//! Stereo ball trajectory reconstruction for table tennis: geometry,
//! a physics simulator, Kalman tracking, inflection segmentation,
//! spin clustering and a small gated recurrent heatmap network.

pub mod gatedcell;
pub mod geometry;
pub mod io;
pub mod simulator;
pub mod spin;
pub mod tracker;
pub mod trajectory;

pub use geometry::{
    project, triangulate, CameraCalibration, Detection2D, GeometryError, ImageSize, Point3D, Rig, Triangulation, FRAME_RATE,
};
pub use simulator::{simulate_rally, BallState, RallyScript, SimError, SpinLabel, Strike, TableGeometry};
pub use spin::{classify_spin, SpinCentroids, SpinClass, SpinCluster, SpinFeatures};
pub use tracker::{Track, Tracker, TrackerConfig};
pub use trajectory::{Event, EventKind, Sample, Source, Trajectory3D};
