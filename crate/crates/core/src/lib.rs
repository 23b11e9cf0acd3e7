//! Kernel packing games and dimension profiles of finite point clouds,
//! with an exact fractional Brownian motion simulator for image sets.

pub mod atomic;
pub mod error;
pub mod fbm;
pub mod game;
pub mod kernel;
pub mod pointset;
pub mod profiles;

pub use error::{Error, Result};
pub use game::{solve_game, z_value, EntropyMode, GameSolution, SolverOptions};
pub use kernel::{KernelMatrix, KernelOrder, WeightedMeasure};
pub use pointset::{Point, PointCloud};
