//! Coarse-to-fine single-object tracking.
//!
//! A correlation filter trained by frequency-domain ridge regression gives a
//! coarse position and scale; Gaussian proposals around it are scored by a
//! template-attentive fine localizer and the best one becomes the new state.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod bench;
pub mod dcf;
pub mod error;
pub mod features;
pub mod geometry;
pub mod localizer;
pub mod par;
pub mod pipeline;
pub mod spectrum;

pub use error::{Error, Result};
pub use geometry::{center_error, giou, iou, BoundingBox, TargetState};
