//! Linear programming: a generic simplex engine and the Potts relaxations on top of it.

pub mod lu;
pub mod simplex;
