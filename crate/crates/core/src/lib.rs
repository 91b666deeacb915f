//! Volumetric preprocessing, a from-scratch 3D CNN engine, and the
//! multi-modality MRI/PET classification pipeline built on them.
#![allow(clippy::needless_range_loop)]

pub mod cohort;
pub mod error;
pub mod models;
pub mod nn;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
