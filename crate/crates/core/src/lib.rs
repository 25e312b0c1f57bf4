pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Real, Tape, Tensor, Var};
