//! Gaussian-state nuclear dynamics (TD-SCHA) and equilibrium SCHA on
//! quartic potential-energy surfaces.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod minimal;
pub mod ode;
pub mod pes;
pub mod pes_io;
pub mod scha;
pub mod state;
pub mod tensor;
pub mod toy;
pub mod units;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type DMat = nalgebra::DMatrix<f64>;
pub type DVec = nalgebra::DVector<f64>;

pub use error::{Error, Result};
pub use pes::{Basis, QuarticPes, WickAverages};
pub use state::{GaussianState, ModeBasis, StateSnapshot};
pub use tensor::SparseSymTensor;
pub use units::UnitSystem;
