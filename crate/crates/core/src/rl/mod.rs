//! Small policy-optimization engine shared by the joint-space planner and the
//! switching agent.

pub mod checkpoint;
pub mod mlp;
pub mod optim;
pub mod policy;
pub mod ppo;

pub use checkpoint::Checkpoint;
pub use mlp::Mlp;
pub use optim::{clip_global_norm, Adam};
pub use policy::{Head, Policy};
pub use ppo::{collect_rollout, gae, ppo_update, Agent, Cursor, Env, PpoConfig, Rollout, StatsRow, Step, UpdateStats};
