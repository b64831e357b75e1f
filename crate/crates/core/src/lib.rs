pub mod config;
pub mod drl;
pub mod dualquat;
pub mod error;
pub mod feasibility;
pub mod geometry;
pub mod hrl;
pub mod kinematics;
pub mod lfd;
pub mod pipeline;
pub mod rl;
pub mod switching;
pub mod trajectory;
pub mod workcell;

pub use error::{Error, Result};
