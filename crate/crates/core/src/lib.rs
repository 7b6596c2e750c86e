//! Deep ensembles inside a single grouped 1-D CNN, with the baselines they
//! are compared against, a small reverse-mode autodiff engine underneath, and
//! the data and training tooling for sensor time series.

pub mod container;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod kernels;
pub mod layers;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod variation;

pub use error::{Error, Result};
pub use tape::{finite_difference_grad, Tape, Var};
pub use tensor::{Element, Precision, Tensor};
