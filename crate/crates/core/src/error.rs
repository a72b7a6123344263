use thiserror::Error;

/// Errors produced by the model, simulator, and calibration routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("voltage {value} V outside control range [{min}, {max}] V")]
    VoltageOutOfRange { value: f64, min: f64, max: f64 },

    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("camera ray is parallel to the plane (denominator {denominator:e})")]
    DegenerateIntersection { denominator: f64 },

    #[error("parameters not identifiable: {0}")]
    Unidentifiable(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed {format} data: {message}")]
    Parse { format: &'static str, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
