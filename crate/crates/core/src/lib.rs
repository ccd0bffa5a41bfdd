//! Markerless 3D human motion capture from LiDAR point cloud sequences.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below name the common instantiations.

pub mod autograd;
pub mod container;
pub mod rot3d;
pub mod scalar;
pub mod smpl_body;
pub mod mocap_metrics;
pub mod lidarcap_net;
pub mod nn;
pub mod seqdata;

pub use scalar::Scalar;

pub type BodyModel32 = smpl_body::BodyModel<f32>;
pub type BodyModel64 = smpl_body::BodyModel<f64>;
pub type Net32 = lidarcap_net::Net<f32>;
pub type Net64 = lidarcap_net::Net<f64>;
pub type RotMat32 = rot3d::RotMat<f32>;
pub type RotMat64 = rot3d::RotMat<f64>;
pub type AxisAngle32 = rot3d::AxisAngle<f32>;
pub type AxisAngle64 = rot3d::AxisAngle<f64>;
pub type MotionSample32 = seqdata::MotionSample<f32>;
pub type MotionSample64 = seqdata::MotionSample<f64>;
