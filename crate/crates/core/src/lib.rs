pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod nets;
pub mod objectives;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod xing;

pub use error::{Error, Result};
pub use params::{Binder, ParamStore};
pub use tensor::{Graph, Scalar, SeedRng, Tensor, Var};
