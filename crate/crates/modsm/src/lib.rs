//! Streaming moving-object detection.
//!
//! A per-video orthonormal subspace models the background; each incoming
//! frame plus a saliency map is segmented by an alternating minimization
//! that balances reconstruction fidelity, foreground sparsity, spatial
//! connectivity, and saliency, then thresholds the resulting background
//! score vector into a binary mask.

pub mod cli;
pub mod diff;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod params;
pub mod solver;
pub mod subspace;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{ForegroundMask, FrameVector, ImageGrid, SaliencyVector};
