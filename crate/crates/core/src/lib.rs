//! MAP inference for Potts models via the pairwise LP relaxation, with
//! certification of LP persistency through block stability.

pub(crate) mod bnb;
pub mod block_finder;
pub mod builders;
pub mod dual_decomp;
pub mod error;
pub mod formats;
pub mod lp;
pub mod lp_solver;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod pnm;
pub mod stability;

pub use error::{Error, Result};
pub use model::{Cost, Factor, Labeling, PottsInstance};
pub use numeric::{Rational, Scalar};
