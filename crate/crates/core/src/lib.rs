pub mod autodiff;
pub mod cli;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod rrwp;
pub mod schedule;
pub mod seed;
pub mod smiles;
pub mod vq;

pub use error::{Error, Result};
