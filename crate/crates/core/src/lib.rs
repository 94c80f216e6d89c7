//! Quickest detection of a change in the maximal kNN coherence of a stream
//! of `n x p` random matrices.
//!
//! Each matrix is reduced to one number, the largest `delta`-th nearest
//! neighbour correlation ([`corrstats`]). For large `p` that number follows
//! a one-parameter exponential family ([`vmaxfam`]) whose parameter moves
//! when the dispersion of the rows changes, and a GLR stopping rule
//! ([`glr`]) watches for the move. [`misspec`] quantifies what happens when
//! the pre-change parameter is wrong, [`datagen`] and [`harness`] simulate
//! streams and detectors, and [`cli`] wires it all to the command line.

pub mod cli;
pub mod corrstats;
pub mod datagen;
pub mod error;
pub mod glr;
pub mod harness;
pub mod misspec;
pub mod numeric;
pub mod rng;
pub mod serde_ext;
pub mod svg;
pub mod vmaxfam;

pub use error::{Error, Result};
