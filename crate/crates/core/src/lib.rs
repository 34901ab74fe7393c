pub mod data;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{ConvGeom, Float, Graph, Tensor, Var};
