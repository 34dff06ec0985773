//! Exact graph-cut segmentation of regular 2D/3D grids with a shape prior
//! derived from the gradient vector flow (GVF) of a pre-segmentation.
//!
//! The pipeline is:
//!
//! 1. [`gvf`] diffuses the gradient of a binary pre-segmentation into a
//!    smooth vector field, extracts the object core and discretizes the field
//!    into neighbor-pointing flows whose chains ("GVF paths") end in the core.
//! 2. [`mrf`] assembles a binary energy (data + smoothness + prior) and
//!    encodes it as a minimum s-excess problem.
//! 3. [`maxflow`] solves the s-excess problem exactly through a single
//!    minimum s-t cut.
//! 4. [`multiobject`] stacks several object subgraphs and couples them with
//!    inclusion, exclusion and maximum-distance constraints.
//!
//! [`metrics`] and [`harness`] provide evaluation, synthetic phantoms and the
//! command line entry point.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod gvf;
pub mod harness;
pub mod maxflow;
pub mod metrics;
pub mod mrf;
pub mod multiobject;
mod par;
pub mod volume;

pub use error::{Error, Result};
pub use par::is_parallel;
