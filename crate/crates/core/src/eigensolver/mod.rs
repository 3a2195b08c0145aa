//! Boundary-integral eigensolver.

pub mod kress;
pub mod nodes;
pub mod table;
pub mod operator;
pub mod interior;
pub mod solver;
