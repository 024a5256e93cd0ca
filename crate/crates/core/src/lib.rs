//! Diffusion masked pretraining for dynamic point clouds, at desk scale.
pub mod analysis;
pub mod autograd;
pub mod cli;
pub mod diffusion;
pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod motion;
pub mod rng;
pub mod sampling;
pub mod synthdata;
pub mod training;
pub mod verify;
pub use error::{DimpError, Result};
