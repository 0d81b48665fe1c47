//! Patch-wise refinement of high-resolution depth maps.
//!
//! A frozen backbone supplies a blurred but globally consistent coarse depth
//! and sharp but mutually inconsistent per-patch depths. A small residual
//! network fuses them patch by patch. It is trained on 2×2 groups of
//! overlapping patches with a consistency term, and supervised only where the
//! labels are trusted.
//!
//! The guide in `book/` walks through each stage; its code samples run as
//! doctests of this crate.

pub mod backbone;
pub mod bfm;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod tiling;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/tiling.md")]
    mod tiling {}
    #[doc = include_str!("../../../book/src/backbone.md")]
    mod backbone {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/masking.md")]
    mod masking {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
