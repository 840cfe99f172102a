//! Pure algorithmic core for object-level contrastive pretraining with
//! copy-paste-jitter (CPJ) views.
//!
//! Everything in this crate is a deterministic function of its inputs and an
//! explicit seeded random source. No file or network IO lives here; the `codo`
//! crate layers file formats, checkpoints and the command-line tool on top.
//!
//! Module map:
//!
//! - [`geometry`]: boxes, IoU, clamping and the IoU-floored box jitter.
//! - [`image`]: 8-bit RGB raster used for every composited view.
//! - [`proposals`]: unsupervised foreground proposals, aspect filter, selection.
//! - [`cpj`]: the copy-paste-jitter view factory and photometric augmentation.
//! - [`nn`] and [`encoder`]: backbone + FPN + RoIAlign + R-CNN head, with
//!   hand-written reverse-mode gradients.
//! - [`contrastive`]: per-level InfoNCE and negative queues.
//! - [`trainer`]: one optimization step of the query/key pipeline.
//! - [`synth`] and [`eval`]: synthetic corpus rendering and the evaluation math.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod contrastive;
pub mod cpj;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod nn;
pub mod proposals;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, JitterConfig};
pub use image::Image;
