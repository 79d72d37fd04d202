//! Numerical laboratory for the semi-discrete wave equation with potential on the
//! unit square: discrete operators and summation-by-parts identities, a leapfrog
//! solver, weighted (Carleman) functionals for the wave and elliptic operators,
//! the FBI kernel and transform, and potential reconstruction from boundary flux.

pub mod carleman_elliptic;
pub mod carleman_hyperbolic;
pub mod cli;
pub mod config;
pub mod diffops;
pub mod error;
pub mod fbi;
pub mod grid;
pub mod inverse;
pub mod num;
pub mod wavesolve;

pub use error::{Error, Result};
pub use grid::{Axis, BoundaryTrace, Edge, Mesh, NodeField, StaggeredField, SubsetMask};
