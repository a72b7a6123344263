//! Calibration: dynamic camera mirror offsets, laser plane and rotation
//! axis, point-cloud registration, and stepwise error correction.

mod camera;
mod icp;
mod joint;
mod laser;

pub use camera::{calibrate_dynamic_camera, camera_objective, CalibObservation};
pub use icp::{icp_register, kabsch, IcpOptions, RegistrationResult};
pub use joint::{
    joint_error_correction, Anchor, JointCalibConfig, JointResult, JointStepRecord,
    SimulatedStripeSource, StripeSource,
};
pub use laser::{calibrate_rotation_axis, fit_laser_plane, LaserPlaneObservation};
