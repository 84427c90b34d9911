//! Automatic detection and removal of lens flare spots.
//!
//! Bright light sources are located first; each one predicts where its
//! flare spot should appear, near the point reflection through the image
//! centre. Blob keypoints in that neighbourhood are filtered and ranked by
//! a confidence measure, the winner is grown into a flare mask and the mask
//! is filled by exemplar-based inpainting.

pub mod batch;
pub mod config;
pub mod detector;
pub mod error;
pub mod evaluate;
pub mod flaremask;
pub mod imagecore;
pub mod inpaint;
pub mod io;
pub mod lightsource;
pub mod morphology;
pub mod pipeline;
pub mod scalespace;
pub mod synthgen;

pub use error::{FlareError, Result};
