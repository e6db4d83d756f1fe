//! Storage, parallel execution, and CLI plumbing for blockwise prediction
//! over large 3D microscopy volumes.
//!
//! The algorithmic core (geometry, distance transforms, metrics, shape
//! arithmetic, augmentation, planning) lives in `voxmill-core`; this crate
//! adds the chunked on-disk store, the worker-pool inference engine, and the
//! `voxmill` command-line tool.

pub mod commands;
pub mod config;
pub mod engine;
pub mod n5;

pub use voxmill_core as core;
