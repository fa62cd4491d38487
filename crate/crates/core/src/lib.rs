//! Multi-sensor motion-capture fusion: wand calibration, occlusion
//! screening, clock synchronization and range-based joint trilateration,
//! plus a deterministic simulator for all of it.

pub mod calibration;
pub mod config;
pub mod geometry;
pub mod occlusion;
pub mod pipeline;
pub mod protocol;
pub mod report;
pub mod sim;
pub mod skeleton;
pub mod timesync;
pub mod trilateration;

pub use geometry::{DepthFrame, Pixel, Point3, SensorPose};
pub use skeleton::{JointId, JointObservation, SensorId, Skeleton, TrackingState};
