#![no_std]
#![doc = "Allocation-only core of the handwritten music-symbol GAN pipeline."]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod dataset;
pub mod engraver;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod toy;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
