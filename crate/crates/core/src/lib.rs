//! Multi-task implicit shape networks.
//!
//! One point-cloud encoder produces a latent code that conditions an
//! occupancy decoder and an interior part-segmentation decoder and feeds a
//! shape classifier. The crate contains everything needed to train and
//! evaluate such networks on procedurally generated labeled shapes:
//!
//! * [`geometry`]: analytic shapes, occupancy and nearest-vertex label oracles;
//! * [`autodiff`]: a small tape-based reverse-mode differentiation engine;
//! * [`models`]: encoder, conditional-batchnorm decoders, classifier, checkpoints;
//! * [`training`]: multi-task loss, ADAM, the training loop;
//! * [`evaluation`]: IOU, Chamfer-L1, accuracy, part mIOU, marching cubes.
//!
//! The `book/` directory next to the workspace walks through each of these
//! with runnable snippets; they are compiled as doctests of this crate.

pub mod autodiff;
pub mod dataset;
mod error;
pub mod evaluation;
pub mod geometry;
pub mod models;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
