//! Tree lattices presented as graphs of groups with finite abelian groups:
//! the discrete-time geodesic flow on the quotient, its countable-state
//! coding, Patterson-Sullivan and Gibbs measures, and mixing diagnostics.

pub mod algebra;
pub mod coding;
pub mod cover;
pub mod error;
pub mod gibbs;
pub mod lattice;
pub mod mixing;
pub mod numeric;
pub mod thermo;

pub use error::{Error, Result};
