//! Transfer measures twisted by the congruence cocycle on `SL_2(Z/q)`, and
//! numerical checks of the decay of their convolution norms on the new
//! subspace.

pub mod cli;
pub mod decouple;
pub mod error;
pub mod guards;
pub mod measures;
pub mod modgroup;
pub mod spectral;
pub mod symdyn;

pub use error::{Error, Result};
pub use guards::Guards;
