pub mod codec;
pub mod corpus;
pub mod denoiser;
pub mod diffusion;
pub mod distill;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod vocoder;

pub use error::{Error, Result};
