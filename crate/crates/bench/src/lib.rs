//! Shared inputs for the benchmarks.

use psr_core::optimizer::init_sphere;
use psr_core::{OrientedPointCloud, Vec3};

/// Sphere of radius 0.3 at the domain center with outward normals.
pub fn sphere_cloud(count: usize) -> OrientedPointCloud {
    init_sphere(count, 0.3, Vec3::repeat(0.5), 1).expect("sphere fits in the unit cube")
}
