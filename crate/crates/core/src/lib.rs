//! Speech-to-unit translation toolkit.

pub mod augment;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod models;
pub mod noising;
pub mod pipeline;
pub mod signal;
pub mod tensor;
pub mod training;
pub mod units;

pub use error::{Error, Result};
pub use tensor::{Graph, ParamStore, RngStream, Tensor, Var};
