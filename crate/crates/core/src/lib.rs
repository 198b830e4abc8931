//! Thermal-infrared Gaussian splatting: scene representation, differentiable
//! rasterizer, atmospheric transmission field, thermal conduction module,
//! losses, training loop and dataset I/O.

pub mod atf;
pub mod error;
pub mod heat;
pub mod io;
pub mod losses;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod sh;
pub mod stencil;
pub mod synth;
pub mod tcm;
pub mod train;

pub use error::{Error, Result};
