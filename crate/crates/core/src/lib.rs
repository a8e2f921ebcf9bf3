//! Dynamic neural radiance fields on the CPU.
//!
//! A static background field and a motion-centric field (deformation plus
//! scene-flow heads) are rendered by quadrature volume compositing, pruned
//! with an occupancy grid and blended per pixel by a motion mask.

pub mod cli;
pub mod diffnet;
pub mod encoding;
pub mod error;
pub mod fields;
pub mod imagebuf;
pub mod metrics;
pub mod renderer;
pub mod sceneio;
pub mod training;

pub use error::{Error, Result};
