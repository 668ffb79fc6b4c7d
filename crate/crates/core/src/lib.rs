//! Building blocks for sparse, partial, weakly-supervised oriented object
//! detection.
//!
//! The crate covers the parts of such a detector that can be exercised
//! without a neural network:
//!
//! - [`geometry`]: oriented boxes, their Gaussian model, Bhattacharyya and
//!   Gaussian-Wasserstein distances.
//! - [`losses`]: the sparse-aware focal loss, angle consistency, Gaussian
//!   overlap, Voronoi-watershed and unsupervised teacher/student losses, each
//!   with an analytic gradient.
//! - [`layout`]: raster Voronoi partitions and marker watershed producing
//!   width/height targets for point annotations.
//! - [`filtering`]: per-level two-component GMM pseudo-label thresholds (MPF)
//!   and the pooled class-agnostic baseline (CPF).
//! - [`pipeline`]: EMA teacher updates, burn-in staging and a planted-score
//!   simulation of the pseudo-label loop.
//! - [`dataset`]: DOTA annotation parsing, weak-label derivation and the two
//!   sparsification methods with their statistics report.
//! - [`cli`]: the `spwood` command-line tool.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod filtering;
pub mod geometry;
pub mod layout;
pub mod losses;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
