//! Simulator for large/small model codesign in multi-robot cooperative
//! sensing: local actor-critic training on each robot, attention-weighted
//! aggregation at an edge node, magnitude-pruned sub-models fused back into
//! the robots' own networks, and a link model that puts every exchange on
//! the same clock as the robots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod cli;
pub mod comms;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod model;
pub mod policy;
pub mod splitting;
pub mod trace;
pub mod verify;
pub mod world;

pub use error::{Error, Result};
