//! Differentiable Poisson surface reconstruction on a periodic voxel grid.

pub mod adam;
pub mod error;
mod fft;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod isosurface;
pub mod kdtree;
pub mod metrics;
pub mod optimizer;
pub mod raster;
pub mod spectral;

pub use error::{PsrError, Result};
pub use grid::{GridSpec, ScalarGrid, VectorGrid};
pub use isosurface::{marching_cubes, TriangleMesh};
pub use optimizer::{run_reconstruction, Schedule, Stage};
pub use raster::OrientedPointCloud;
pub use spectral::{dpsr_backward, dpsr_forward, Precision, SolverParams};

/// 3-vector used for positions, normals and gradients.
pub type Vec3 = nalgebra::Vector3<f64>;
