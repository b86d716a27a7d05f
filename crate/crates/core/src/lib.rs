//! Core algorithms for quarterly building density and height products.
//!
//! Everything here is pure computation over in-memory grids: quad-grid
//! arithmetic, resampling, label generation, the training-side loss
//! numerics, temporal post-processing, evaluation metrics and change
//! detection. The crate is `no_std` and only needs `alloc`; file formats,
//! orchestration and the command line live in the `urbanmap` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod changedet;
pub mod error;
pub mod eval;
pub mod grid;
pub mod labelgen;
pub mod postproc;
pub mod raster;
pub mod trainmath;

pub use error::{Error, Result};
pub use grid::{GeoBox, GridSpec, QuadId};
pub use raster::{Crs, Layer, QuadRaster};
