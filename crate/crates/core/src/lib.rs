//! Core algorithms for blockwise prediction over large 3D microscopy volumes.
//!
//! Everything in this crate is pure computation over in-memory volumes: region
//! arithmetic, exact anisotropic Euclidean distance transforms, the cleft
//! detection score, valid-convolution U-Net shape arithmetic, training-batch
//! augmentation, scale-pyramid reducers, and block planning. Storage, worker
//! pools, and the command-line interface live in the companion `voxmill` crate.
//!
//! The crate is `no_std` (with `alloc`), so the algorithmic core can be reused
//! from constrained or embedded hosts.
//!
//! Axis order is `(z, y, x)` everywhere, with `x` fastest-varying in memory.

#![no_std]
#![deny(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod augment;
pub mod geom;
pub mod metrics;
pub mod plan;
pub mod pyramid;
pub mod sdt;
pub mod unet;

pub use geom::{AnyVolume, Element, ElementType, Roi, Volume, VoxelSize};
pub use plan::BlockPlan;
