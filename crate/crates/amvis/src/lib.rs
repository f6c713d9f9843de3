//! Feature visualization by activation maximization, in pixel and Fourier
//! space, plus TV-regularized targeted adversarial examples — all on small
//! models the crate trains itself.

pub mod adversarial;
pub mod am;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fourier;
pub mod io;
pub mod models;
pub mod objectives;
pub mod tensor;
pub mod transforms;

pub use error::{AmvisError, Result};
pub use tensor::tape::{Tape, VarId};
pub use tensor::Tensor;
