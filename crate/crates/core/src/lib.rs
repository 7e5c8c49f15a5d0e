//! Desk-scale RGB-D SLAM on surface-aligned 2D Gaussian disks.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod map;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod spatial;
pub mod synth;
pub mod tracking;
pub mod trajectory;

pub use error::{Error, Result};
