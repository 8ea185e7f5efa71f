//! Kernel attention transformer (KAT) for bags of spatially placed feature
//! tokens.
//!
//! Patch tokens never attend to each other. A small set of kernel tokens,
//! each bound to an anchor position on the patch grid, gathers information
//! from nearby patches and broadcasts it back; Gaussian anchor masks at
//! growing scales decide what "nearby" means in each block.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchor_masks;
pub mod autodiff;
pub mod bag_io;
pub mod bench;
pub mod error;
pub mod model;
pub mod train;

pub use error::{KatError, Result};
