//! Max-margin training of sliding-window object detectors.
//!
//! The detector scores every window of an image pyramid with a linear
//! function `<w, phi(x, r)>` and keeps the highest-scoring non-overlapping
//! windows. Training minimizes a convex upper bound on the detection loss
//! over all windows of all training images with a cutting-plane method.

pub mod dataset;
pub mod detector;
pub mod error;
pub mod features;
pub mod geom;
pub mod loss_aug;
pub mod persistence;
pub mod qp;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
