//! Diffusion LMS over fading wireless links: simulation and mean-square
//! performance theory.

pub mod channel;
pub mod combination;
pub mod config;
pub mod engine;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod theory;
pub mod validate;

pub use error::{Error, Result};
