//! Exact order-by-order construction of consistent scattering structures on
//! polarized integral tropical manifolds.

pub mod algebra;
pub mod geometry;
pub mod lattice;
pub mod logauto;
pub mod normalize;
pub mod samples;
pub mod scatter;
pub mod structure;
