//! Rasterization of oriented points into a vector field by trilinear
//! scatter, and its adjoint.

use crate::error::{PsrError, Result};
use crate::grid::{locate_indexed, GridSpec, VectorGrid};
use crate::Vec3;

/// Point positions in the unit cube with per-point normals. Normal length
/// is meaningful: it scales the point's contribution to the field.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPointCloud {
    positions: Vec<Vec3>,
    normals: Vec<Vec3>,
}

impl OrientedPointCloud {
    pub fn new(positions: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(PsrError::Empty("point cloud"));
        }
        if positions.len() != normals.len() {
            return Err(PsrError::LengthMismatch {
                what: "normals",
                expected: positions.len(),
                actual: normals.len(),
            });
        }
        if normals.iter().any(|n| !n.iter().all(|c| c.is_finite())) {
            return Err(PsrError::NonFinite("normals"));
        }
        for (index, p) in positions.iter().enumerate() {
            if !p.iter().all(|c| (0.0..1.0).contains(c)) {
                return Err(PsrError::OutOfDomain {
                    index,
                    point: [p.x, p.y, p.z],
                });
            }
        }
        Ok(Self { positions, normals })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Vec<Vec3>) {
        (self.positions, self.normals)
    }

    /// Mutable access for optimizers. Callers must keep positions inside
    /// the domain.
    pub(crate) fn parts_mut(&mut self) -> (&mut [Vec3], &mut [Vec3]) {
        (&mut self.positions, &mut self.normals)
    }

    /// Same positions, every normal negated.
    pub fn flipped(&self) -> Self {
        Self {
            positions: self.positions.clone(),
            normals: self.normals.iter().map(|n| -n).collect(),
        }
    }
}

/// Scatters each normal onto the 8 corners of its cell with trilinear
/// weights. The sum over the grid equals the sum of the normals.
pub fn rasterize(cloud: &OrientedPointCloud, spec: GridSpec) -> Result<VectorGrid> {
    let n = spec.voxel_count();
    let mut grid = VectorGrid::zeros(spec);
    let values = grid.values_mut();
    for (i, (p, nrm)) in cloud.positions.iter().zip(&cloud.normals).enumerate() {
        for (j, w) in locate_indexed(p, i, spec)?.corners() {
            values[j] += w * nrm.x;
            values[n + j] += w * nrm.y;
            values[2 * n + j] += w * nrm.z;
        }
    }
    Ok(grid)
}

/// Gradients of `<rasterize(cloud), upstream>` with respect to positions
/// and normals.
pub fn rasterize_backward(
    cloud: &OrientedPointCloud,
    spec: GridSpec,
    upstream: &VectorGrid,
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    spec.check_same(&upstream.spec())?;
    let mut grad_positions = Vec::with_capacity(cloud.len());
    let mut grad_normals = Vec::with_capacity(cloud.len());
    for (i, (p, nrm)) in cloud.positions.iter().zip(&cloud.normals).enumerate() {
        let cell = locate_indexed(p, i, spec)?;
        let mut gn = Vec3::zeros();
        let mut gp = Vec3::zeros();
        for (&(j, w), dw) in cell.corners().iter().zip(&cell.weight_gradients()) {
            let g = upstream.at(j);
            gn += w * g;
            gp += dw * nrm.dot(&g);
        }
        grad_positions.push(gp);
        grad_normals.push(gn);
    }
    Ok((grad_positions, grad_normals))
}
