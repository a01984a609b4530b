//! UAV herd-survey simulation and training suite.
//!
//! The crate covers the grid-world search task, an exact open-TSP teacher
//! that labels navigation decisions, a dual-stream policy network trained
//! from scratch, detection post-processing with identity fusion, WGS-84
//! coordinate handling and a mission harness with metrics and rendering.

pub mod error;
pub mod geodesy;
pub mod gridworld;
pub mod harness;
pub mod oracle;
pub mod perception;
pub mod policynet;
pub mod rng;

pub use error::{Error, Result};
pub use gridworld::{Action, ActionSet, EpisodeConfig, EpisodeState, GridPos, MemoryMap, SensoryMap};
