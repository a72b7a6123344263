//! Dual-galvanometer dynamic light-section scanning: mirror-chain kinematics,
//! a ground-truth simulator, stripe extraction, triangulation, calibration,
//! and evaluation metrics.
//!
//! Frames: `{V0}` is the virtual camera at zero camera-galvanometer voltage
//! and the frame every reconstruction is expressed in; `{V}` is the virtual
//! camera at the current voltages. Lengths are millimeters, angles radians.

pub mod calib;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod recon;
pub mod sim;
pub mod spatial;
pub mod stripe;

pub use error::{Error, Result};
pub use exec::Exec;
pub use geometry::{AxisLine, GalvoVoltages, MirrorAngles, MirrorGeometry, Plane, RigidTransform, VoltageAngleModel};
pub use model::{CameraIntrinsics, SystemParams};
pub use recon::{PointCloud, ScanStep};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
