//! Color reconstruction for grayscale scans of lenticular film.

pub mod colorspace;
pub mod demosaic;
pub mod detect;
pub mod error;
pub mod extract;
pub mod filter;
pub mod fit;
pub mod grid;
pub mod imageio;
pub mod lfr;
pub mod overlay;
pub mod pipeline;
pub mod raster;
pub mod simulate;
pub mod stripe;

pub use error::{Error, Result};
