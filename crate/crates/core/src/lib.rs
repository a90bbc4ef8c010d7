//! Hierarchical bound propagation for cumulant generating functions of box
//! integrals of stationary random fields, with Monte Carlo verification.
//!
//! - [`geometry`]: boxes, halving, dyadic scaling, near-cube normalization.
//! - [`field`]: finite-range field models, samplers and Gaussian oracles.
//! - [`cgf`]: CGF estimation and quadratic envelopes.
//! - [`engine`]: single-step transforms, upward iteration, ladder descent, calibration.
//! - [`tail`]: explicit tail sandwich and moderate-deviation parameters.
//! - [`experiments`]: end-to-end runs behind the CLI.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cgf;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod field;
pub mod geometry;
pub mod ks;
pub mod noise;
pub mod normal;
pub mod scale;
pub mod stats;
pub mod tail;

pub use error::{Error, Result};
pub use field::{FieldKind, FieldModel, Kernel, KernelShape, Nonlinearity};
pub use geometry::AxisBox;
pub use scale::ScaleFunctions;
