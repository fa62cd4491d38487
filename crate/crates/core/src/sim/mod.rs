//! Seedable stand-ins for depth sensors, moving bodies, clocks and links.

pub mod bench;
pub mod motion;
pub mod network;
pub mod observe;
pub mod render;
pub mod run;
pub mod scenario;

pub use motion::{MotionKind, MotionScript};
pub use network::{simulate_network, DelayModel, Direction};
pub use observe::{observe_skeleton, NoiseModel};
pub use render::render_wand_depth;
pub use run::{calibrate_sensor, run_scenario, SimOutput, SimRunError};
pub use scenario::ScenarioConfig;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("wand at depth {0:.1} cm is outside the usable range or the field of view")]
    WandOutOfRange(f64),
}
