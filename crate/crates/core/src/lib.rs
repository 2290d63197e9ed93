//! Map management for long-term teach-and-repeat visual navigation.
//!
//! A robot taught a path keeps one feature map per odometry-indexed location.
//! While repeating the path it registers the current view against that map
//! (horizontal histogram voting) and a map-update strategy decides which
//! features to keep, drop, or add. The crate provides the strategies, a
//! synthetic changing environment, dataset replay, and the statistics used to
//! compare strategies by registration error.

pub mod config;
pub mod dataset;
pub mod descriptor;
pub mod error;
pub mod evaluation;
pub mod fremen;
pub mod map;
pub mod navigator;
pub mod registration;
pub mod simulator;
pub mod strategy;

pub use descriptor::{hamming_distance, Descriptor};
pub use error::{Error, Result};
pub use fremen::FremenModel;
pub use map::{Alternative, Feature, LocalMap, PathMap};
pub use registration::{MatchOutcome, RegistrationConfig, RegistrationResult};
pub use strategy::{StrategyConfig, StrategyKind};
pub use navigator::{Navigator, Schedule, TraversalLog};
pub use simulator::{generate_world, World, WorldConfig};
