//! Scribble-supervised RGB-thermal salient object detection.
//!
//! The crate covers the whole weak-supervision pipeline: SLIC superpixels,
//! scribble expansion, pixel-adaptive pseudo-label refinement, the training
//! losses, a small reverse-mode network, evaluation metrics, and a synthetic
//! scene generator.

pub mod config;
pub mod dataset;
pub mod diffnet;
pub mod error;
pub mod expand;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod refine;
pub mod superpixel;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{ImageGrid, SaliencyMap, ScribbleMap};
