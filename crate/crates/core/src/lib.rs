//! Inversion of HOG descriptors back to images.
//!
//! Four inverters share one feature definition ([`hog::compute_hog`]):
//! exemplar-LDA averaging ([`elda`]), ridge regression on a stationary
//! joint Gaussian ([`gaussian`]), coordinate descent over a natural-image
//! basis ([`directopt`]) and paired sparse dictionaries ([`paireddict`]).
//! [`bench`] scores them with normalized cross correlation, [`store`]
//! persists models and reads corpora, and [`cli`] is the `fvtb` front end.

pub mod bench;
pub mod cli;
pub mod directopt;
pub mod elda;
pub mod error;
pub mod fft;
pub mod gaussian;
pub mod hog;
pub mod paireddict;
pub mod raster;
pub mod source;
pub mod sparse;
pub mod store;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use hog::{compute_hog, positive_part, render_glyph, HogConfig, HogDescriptor};
pub use raster::{Image, Inversion};
pub use source::{ImageSource, MemorySource};
