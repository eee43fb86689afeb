//! Hierarchical point-cloud geometry codec.
//!
//! Coarse octree levels are entropy coded with rANS under integer CDFs built
//! from a context model; fine, mostly single-child levels are coded with a
//! deterministic Elias-Fano / 3-bit layout. The [`streamsim`] module replays
//! codec traces through a bandwidth-limited pipeline.

pub mod bitstream;
pub mod codec;
pub mod deepcodec;
pub mod entropy;
pub mod error;
mod fnv;
pub mod geometry;
pub mod hierarchy;
pub mod predictor;
pub mod streamsim;
pub mod synth;

pub use error::{Error, Result};
