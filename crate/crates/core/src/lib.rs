//! Stabilized mixed finite element methods for linear elasticity with
//! symmetric stress on simplicial meshes.

pub mod error;
pub mod mesh;
pub mod polyquad;
pub mod tensor;
pub mod spaces;
pub mod sparse;
pub mod forms;
mod ordering;
pub mod solver;
pub mod problems;
pub mod analysis;
pub mod properties;

pub use error::{Error, Result};
