//! Periodic homogenization of voxelized linear-elastic microstructures.

pub mod cell;
pub mod config;
pub mod element;
pub mod error;
pub mod fixtures;
pub mod formulations;
pub mod homogenization;
pub mod operator;
pub mod pcg;
pub mod reduce;
pub mod run;
pub mod solvers;
pub mod spaces;
pub mod tensor;
pub mod verification;
