//! Exact kernels for density increment experiments on combinatorial lines in `[3]^n`.

pub mod bitset;
pub mod connect;
pub mod corr;
pub mod cube;
pub mod dist;
pub mod extremal;
pub mod increment;
pub mod rational;
pub mod restrict;
pub mod rng;
pub mod verify;

pub use cube::{CubeError, CubeSet, LineTemplate, Point, Side};
pub use rational::Rational;

