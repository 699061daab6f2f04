//! Sketch representation learning toolkit.
//!
//! Stroke-format sketches are parsed, split and rasterized ([`data`]), augmented
//! into paired views ([`augment`]), embedded by one of five network assemblies
//! ([`models`]) trained with the objectives in [`losses`] by the drivers in
//! [`training`], and scored with the leave-one-out retrieval protocol in
//! [`retrieval`]. [`app`] ties the pipeline to the `sketchssl` command line.

pub mod app;
pub mod augment;
pub mod data;
pub mod error;
pub mod losses;
pub mod models;
pub mod retrieval;
pub mod training;
pub mod util;

pub use error::{Error, Result};
