//! Numerical observability laboratory for IMU-camera extrinsic calibration.

pub mod autodiff;
pub mod config;
pub mod ekf;
pub mod error;
pub mod gramian;
pub mod lie;
pub mod model;
pub mod report;
pub mod scenarios;
pub mod so3;

pub use error::{Error, Result};
