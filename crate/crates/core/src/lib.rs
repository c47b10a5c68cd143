//! Pseudo-label engineering for semi-supervised temporal action localization.
//!
//! The crate scores, ranks, selects and refines action-instance pseudo labels
//! produced by an external detector:
//!
//! - [`geometry`]: temporal interval overlap (tIoU), normalized center
//!   distance (tND) and DIoU, plus frame-level regression targets.
//! - [`quality`]: joint classification/localization scores and every loss
//!   term of the semi-supervised objective.
//! - [`selection`]: per-frame decoding, Gaussian Soft-NMS and the dynamic
//!   positive/candidate split.
//! - [`icd`]: the pairwise consistency discriminator and the
//!   remove-ambiguous / mine-potential refinement of a pseudo-label set.
//! - [`acp`]: frame sampling, k-means pseudo-classes and InfoNCE losses for
//!   action-aware contrastive pre-training.
//! - [`evalsuite`]: mAP over tIoU grids and pseudo-label quality metrics.
//! - [`simharness`]: a seeded synthetic world and detector standing in for
//!   real datasets.
//! - [`benchmark`]: the end-to-end pipeline and the seeded ablation runs.
//! - [`shell`]: file formats, run configuration and the `apl` CLI.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod acp;
pub mod benchmark;
pub mod error;
pub mod evalsuite;
pub mod geometry;
pub mod icd;
pub mod quality;
pub mod rng;
pub mod selection;
pub mod shell;
pub mod simharness;

pub use error::{AplError, Result};
pub use geometry::Segment;
pub use quality::FramePredictions;
pub use selection::{Instance, PseudoLabelSet};
