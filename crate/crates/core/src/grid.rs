//! Periodic voxel grids over the unit cube, trilinear gather/scatter and
//! DFT wavenumber bookkeeping.
//!
//! Every grid in this crate uses the same linear layout: node `(x, y, z)`
//! lives at `x + r * (y + r * z)` (x fastest). Node `j` sits at position
//! `j / r`, so the node grid covers `[0, 1)` on each axis and wraps
//! periodically.

use crate::error::{PsrError, Result};
use crate::Vec3;

/// Resolution of a cubical periodic grid on `[0, 1)^3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    resolution: usize,
}

impl GridSpec {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 4 || !resolution.is_multiple_of(2) {
            return Err(PsrError::InvalidResolution(resolution));
        }
        Ok(Self { resolution })
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    pub fn voxel_size(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    #[inline]
    pub fn voxel_count(&self) -> usize {
        self.resolution * self.resolution * self.resolution
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution * (y + self.resolution * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let r = self.resolution;
        [index % r, (index / r) % r, index / (r * r)]
    }

    /// Position of a grid node in domain coordinates.
    #[inline]
    pub fn node_position(&self, index: usize) -> Vec3 {
        let [x, y, z] = self.coords(index);
        let s = self.voxel_size();
        Vec3::new(x as f64 * s, y as f64 * s, z as f64 * s)
    }

    pub(crate) fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(PsrError::GridMismatch(self.resolution, other.resolution));
        }
        Ok(())
    }
}

/// A scalar field sampled at the nodes of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.voxel_count()],
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.voxel_count() {
            return Err(PsrError::LengthMismatch {
                what: "scalar grid values",
                expected: spec.voxel_count(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PsrError::NonFinite("scalar grid"));
        }
        Ok(Self { spec, values })
    }

    /// Builds a grid by evaluating `f` at every node position.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(Vec3) -> f64) -> Self {
        let values = (0..spec.voxel_count())
            .map(|i| f(spec.node_position(i)))
            .collect();
        Self { spec, values }
    }

    #[inline]
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.spec.index(x, y, z)]
    }

    pub fn dot(&self, other: &ScalarGrid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// A 3-vector field on a grid, stored channel-major: component `d` of node
/// `j` is at `d * n + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl VectorGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; 3 * spec.voxel_count()],
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != 3 * spec.voxel_count() {
            return Err(PsrError::LengthMismatch {
                what: "vector grid values",
                expected: 3 * spec.voxel_count(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PsrError::NonFinite("vector grid"));
        }
        Ok(Self { spec, values })
    }

    #[inline]
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// One component plane (length `n`).
    pub fn channel(&self, d: usize) -> &[f64] {
        let n = self.spec.voxel_count();
        &self.values[d * n..(d + 1) * n]
    }

    pub fn channel_mut(&mut self, d: usize) -> &mut [f64] {
        let n = self.spec.voxel_count();
        &mut self.values[d * n..(d + 1) * n]
    }

    pub fn at(&self, index: usize) -> Vec3 {
        let n = self.spec.voxel_count();
        Vec3::new(
            self.values[index],
            self.values[n + index],
            self.values[2 * n + index],
        )
    }

    pub fn dot(&self, other: &VectorGrid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn component_sums(&self) -> Vec3 {
        Vec3::new(
            self.channel(0).iter().sum(),
            self.channel(1).iter().sum(),
            self.channel(2).iter().sum(),
        )
    }
}

/// DFT wavenumbers of a grid. Axis wavenumbers follow the standard FFT
/// output order `[0, 1, .., r/2 - 1, -r/2, .., -1]` in cycles per unit
/// length; a node's wavenumber triple is looked up per axis.
#[derive(Debug, Clone)]
pub struct FrequencyGrid {
    spec: GridSpec,
    axis: Vec<i64>,
}

impl FrequencyGrid {
    #[inline]
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    /// Wavenumbers along one axis in DFT order.
    pub fn axis_wavenumbers(&self) -> &[i64] {
        &self.axis
    }

    #[inline]
    pub fn wavenumber(&self, index: usize) -> [i64; 3] {
        let [x, y, z] = self.spec.coords(index);
        [self.axis[x], self.axis[y], self.axis[z]]
    }

    #[inline]
    pub fn norm_sq(&self, index: usize) -> f64 {
        let [u, v, w] = self.wavenumber(index);
        (u * u + v * v + w * w) as f64
    }

    /// Linear index of the wavenumber `-u` (with the Nyquist entry mapping
    /// onto itself).
    #[inline]
    pub fn negated_index(&self, index: usize) -> usize {
        let r = self.spec.resolution;
        let [x, y, z] = self.spec.coords(index);
        self.spec.index((r - x) % r, (r - y) % r, (r - z) % r)
    }
}

pub fn frequency_grid(spec: GridSpec) -> FrequencyGrid {
    let r = spec.resolution() as i64;
    let axis = (0..r).map(|k| if k < r / 2 { k } else { k - r }).collect();
    FrequencyGrid { spec, axis }
}

/// The periodic cell enclosing a point, with fractional offsets inside it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    lower: [usize; 3],
    frac: [f64; 3],
    resolution: usize,
}

impl Cell {
    /// Locates `p` after at most one periodic wrap per axis.
    pub(crate) fn locate(p: &Vec3, spec: GridSpec) -> Option<Cell> {
        let r = spec.resolution();
        let mut lower = [0usize; 3];
        let mut frac = [0.0; 3];
        for d in 0..3 {
            let c = wrap_once(p[d])?;
            let g = c * r as f64;
            let mut i = g.floor();
            let mut f = g - i;
            if i as usize >= r {
                i = 0.0;
                f = 0.0;
            }
            lower[d] = i as usize;
            frac[d] = f;
        }
        Some(Cell {
            lower,
            frac,
            resolution: r,
        })
    }

    /// Node indices and weights of the 8 cell corners. Corner `k` offsets
    /// the lower node by bit 0 along x, bit 1 along y and bit 2 along z.
    #[inline]
    pub(crate) fn corners(&self) -> [(usize, f64); 8] {
        let r = self.resolution;
        let mut out = [(0usize, 0.0); 8];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut idx = [0usize; 3];
            let mut w = 1.0;
            for d in 0..3 {
                let bit = (k >> d) & 1;
                idx[d] = (self.lower[d] + bit) % r;
                w *= if bit == 1 {
                    self.frac[d]
                } else {
                    1.0 - self.frac[d]
                };
            }
            *slot = (idx[0] + r * (idx[1] + r * idx[2]), w);
        }
        out
    }

    /// Gradient of each corner weight with respect to the point position,
    /// taken inside this cell (one-sided on cell faces).
    #[inline]
    pub(crate) fn weight_gradients(&self) -> [Vec3; 8] {
        let r = self.resolution as f64;
        let mut out = [Vec3::zeros(); 8];
        for (k, slot) in out.iter_mut().enumerate() {
            let lin: [f64; 3] = std::array::from_fn(|d| {
                if (k >> d) & 1 == 1 {
                    self.frac[d]
                } else {
                    1.0 - self.frac[d]
                }
            });
            let dlin: [f64; 3] = std::array::from_fn(|d| if (k >> d) & 1 == 1 { r } else { -r });
            *slot = Vec3::new(
                dlin[0] * lin[1] * lin[2],
                lin[0] * dlin[1] * lin[2],
                lin[0] * lin[1] * dlin[2],
            );
        }
        out
    }
}

fn wrap_once(x: f64) -> Option<f64> {
    if !x.is_finite() {
        return None;
    }
    let w = if x < 0.0 {
        x + 1.0
    } else if x >= 1.0 {
        x - 1.0
    } else {
        x
    };
    if (0.0..1.0).contains(&w) {
        Some(w)
    } else if w == 1.0 && x < 0.0 {
        // -tiny + 1 rounds up to 1.0, which is the node at 0.
        Some(0.0)
    } else {
        None
    }
}

pub(crate) fn locate_indexed(p: &Vec3, index: usize, spec: GridSpec) -> Result<Cell> {
    Cell::locate(p, spec).ok_or(PsrError::OutOfDomain {
        index,
        point: [p.x, p.y, p.z],
    })
}

/// Trilinear interpolation weights of `p`: the 8 periodic corners of the
/// enclosing cell with non-negative weights summing to one.
pub fn trilinear_weights(p: &Vec3, spec: GridSpec) -> Result<[(usize, f64); 8]> {
    Ok(locate_indexed(p, 0, spec)?.corners())
}

/// Trilinear interpolation of `grid` at each point.
pub fn sample_trilinear(grid: &ScalarGrid, points: &[Vec3]) -> Result<Vec<f64>> {
    let spec = grid.spec();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let cell = locate_indexed(p, i, spec)?;
            Ok(cell
                .corners()
                .iter()
                .map(|&(j, w)| w * grid.values[j])
                .sum())
        })
        .collect()
}

/// Adjoint of [`sample_trilinear`]: given `dL/d(sample_i)`, returns
/// `dL/dgrid` (a trilinear scatter) and `dL/dpoint_i`.
pub fn sample_trilinear_grad(
    grid: &ScalarGrid,
    points: &[Vec3],
    upstream: &[f64],
) -> Result<(ScalarGrid, Vec<Vec3>)> {
    if upstream.len() != points.len() {
        return Err(PsrError::LengthMismatch {
            what: "upstream gradient",
            expected: points.len(),
            actual: upstream.len(),
        });
    }
    let spec = grid.spec();
    let mut grad_grid = ScalarGrid::zeros(spec);
    let mut grad_points = Vec::with_capacity(points.len());
    for (i, (p, &g)) in points.iter().zip(upstream).enumerate() {
        let cell = locate_indexed(p, i, spec)?;
        let corners = cell.corners();
        let dweights = cell.weight_gradients();
        let mut gp = Vec3::zeros();
        for (&(j, w), dw) in corners.iter().zip(&dweights) {
            grad_grid.values[j] += w * g;
            gp += dw * (g * grid.values[j]);
        }
        grad_points.push(gp);
    }
    Ok((grad_grid, grad_points))
}

/// Trilinear scatter of one scalar per point into a fresh grid.
pub fn scatter_trilinear(spec: GridSpec, points: &[Vec3], values: &[f64]) -> Result<ScalarGrid> {
    if values.len() != points.len() {
        return Err(PsrError::LengthMismatch {
            what: "scattered values",
            expected: points.len(),
            actual: values.len(),
        });
    }
    let mut grid = ScalarGrid::zeros(spec);
    for (i, (p, &a)) in points.iter().zip(values).enumerate() {
        for (j, w) in locate_indexed(p, i, spec)?.corners() {
            grid.values[j] += w * a;
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(r: usize) -> GridSpec {
        GridSpec::new(r).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(rng.random(), rng.random(), rng.random())
    }

    #[test]
    fn rejects_bad_resolutions() {
        assert!(GridSpec::new(2).is_err());
        assert!(GridSpec::new(7).is_err());
        assert!(GridSpec::new(0).is_err());
        assert_eq!(GridSpec::new(8).unwrap().voxel_count(), 512);
    }

    #[test]
    fn layout_is_x_fastest() {
        let s = spec(4);
        assert_eq!(s.index(1, 0, 0), 1);
        assert_eq!(s.index(0, 1, 0), 4);
        assert_eq!(s.index(0, 0, 1), 16);
        assert_eq!(s.coords(s.index(3, 2, 1)), [3, 2, 1]);
    }

    #[test]
    fn weights_on_vertex() {
        let s = spec(8);
        let j = s.index(3, 5, 2);
        let p = s.node_position(j);
        let w = trilinear_weights(&p, s).unwrap();
        let hits: Vec<_> = w.iter().filter(|(_, w)| *w != 0.0).collect();
        assert_eq!(hits.len(), 1);
        assert_eq!(*hits[0], (j, 1.0));
    }

    #[test]
    fn weights_at_cell_center() {
        let s = spec(8);
        let h = s.voxel_size();
        let p = Vec3::new(2.5 * h, 4.5 * h, 6.5 * h);
        for (_, w) in trilinear_weights(&p, s).unwrap() {
            assert!((w - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_quarter_offset() {
        let s = spec(8);
        let h = s.voxel_size();
        let p = Vec3::new(3.25 * h, 1.0 * h, 2.0 * h);
        let w = trilinear_weights(&p, s).unwrap();
        let at = |x, y, z| {
            w.iter()
                .filter(|(j, _)| *j == s.index(x, y, z))
                .map(|(_, w)| *w)
                .sum::<f64>()
        };
        assert!((at(3, 1, 2) - 0.75).abs() < 1e-12);
        assert!((at(4, 1, 2) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn upper_corner_wraps() {
        let s = spec(4);
        let p = Vec3::new(0.9, 0.9, 0.9);
        let w = trilinear_weights(&p, s).unwrap();
        assert!(w.iter().any(|(j, _)| *j == 0));
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let s = spec(4);
        assert!(trilinear_weights(&Vec3::new(2.5, 0.1, 0.1), s).is_err());
        assert!(trilinear_weights(&Vec3::new(-1.5, 0.1, 0.1), s).is_err());
        assert!(trilinear_weights(&Vec3::new(f64::NAN, 0.1, 0.1), s).is_err());
        let err = sample_trilinear(
            &ScalarGrid::zeros(s),
            &[Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.1, 5.0, 0.1)],
        )
        .unwrap_err();
        assert!(matches!(err, PsrError::OutOfDomain { index: 1, .. }));
    }

    #[test]
    fn partition_of_unity() {
        let s = spec(16);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let p = random_point(&mut rng);
            let sum: f64 = trilinear_weights(&p, s).unwrap().iter().map(|x| x.1).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_identities() {
        let s = spec(8);
        let constant = ScalarGrid::from_fn(s, |_| 3.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..50).map(|_| random_point(&mut rng)).collect();
        for v in sample_trilinear(&constant, &pts).unwrap() {
            assert!((v - 3.5).abs() < 1e-13);
        }

        let ramp = ScalarGrid::from_fn(s, |p| p.x);
        let h = s.voxel_size();
        let mid = Vec3::new(2.5 * h, 1.3 * h, 4.7 * h);
        let v = sample_trilinear(&ramp, &[mid]).unwrap()[0];
        assert!((v - 2.5 * h).abs() < 1e-15);

        let j = s.index(5, 1, 7);
        let v = sample_trilinear(&ramp, &[s.node_position(j)]).unwrap()[0];
        assert_eq!(v, ramp.values()[j]);
    }

    #[test]
    fn periodic_sampling() {
        let s = spec(8);
        let g = ScalarGrid::from_fn(s, |p| (p.x * 7.0).sin() + p.y * p.z);
        let p = Vec3::new(0.31, 0.77, 0.05);
        let q = p + Vec3::new(1.0, 0.0, 0.0);
        let a = sample_trilinear(&g, &[p]).unwrap()[0];
        let b = sample_trilinear(&g, &[q]).unwrap()[0];
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn grad_zero_upstream() {
        let s = spec(8);
        let g = ScalarGrid::from_fn(s, |p| p.x + p.y);
        let pts = vec![Vec3::new(0.2, 0.3, 0.4); 3];
        let (gg, gp) = sample_trilinear_grad(&g, &pts, &[0.0; 3]).unwrap();
        assert!(gg.values().iter().all(|&v| v == 0.0));
        assert!(gp.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn grad_on_vertex_hits_one_node() {
        let s = spec(8);
        let g = ScalarGrid::zeros(s);
        let j = s.index(2, 3, 4);
        let (gg, _) = sample_trilinear_grad(&g, &[s.node_position(j)], &[1.0]).unwrap();
        for (i, &v) in gg.values().iter().enumerate() {
            assert_eq!(v, if i == j { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn point_gradient_matches_finite_differences() {
        let s = spec(8);
        let g = ScalarGrid::from_fn(s, |p| {
            (6.0 * p.x).sin() * (4.0 * p.y).cos() + p.z * p.z + 0.3 * p.x * p.y
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = s.voxel_size();
        for _ in 0..100 {
            // keep well inside a cell so the one-sided derivative is the true one
            let p = Vec3::new(
                (rng.random_range(0..8) as f64 + rng.random_range(0.1..0.9)) * h,
                (rng.random_range(0..8) as f64 + rng.random_range(0.1..0.9)) * h,
                (rng.random_range(0..8) as f64 + rng.random_range(0.1..0.9)) * h,
            );
            let up = rng.random_range(-2.0..2.0);
            let (_, gp) = sample_trilinear_grad(&g, &[p], &[up]).unwrap();
            let step = 1e-6 * h;
            for d in 0..3 {
                let mut a = p;
                let mut b = p;
                a[d] += step;
                b[d] -= step;
                let fa = sample_trilinear(&g, &[a]).unwrap()[0];
                let fb = sample_trilinear(&g, &[b]).unwrap()[0];
                let fd = up * (fa - fb) / (2.0 * step);
                let err = (fd - gp[0][d]).abs() / fd.abs().max(gp[0][d].abs()).max(1e-3);
                assert!(err < 1e-6, "axis {d}: fd {fd} vs {}", gp[0][d]);
            }
        }
    }

    #[test]
    fn scatter_gather_adjoint() {
        let s = spec(8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..200).map(|_| random_point(&mut rng)).collect();
        let a: Vec<f64> = (0..pts.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = ScalarGrid::from_values(
            s,
            (0..s.voxel_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let lhs = scatter_trilinear(s, &pts, &a).unwrap().dot(&b);
        let gathered = sample_trilinear(&b, &pts).unwrap();
        let rhs: f64 = a.iter().zip(&gathered).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn frequency_conventions() {
        let f = frequency_grid(spec(4));
        assert_eq!(f.axis_wavenumbers(), &[0, 1, -2, -1]);
        assert_eq!(f.wavenumber(0), [0, 0, 0]);
        assert_eq!(f.norm_sq(0), 0.0);

        let s = spec(8);
        let f = frequency_grid(s);
        let max = (0..s.voxel_count()).map(|i| f.norm_sq(i)).fold(0.0, f64::max);
        assert_eq!(max, 48.0);
        let zeros = (0..s.voxel_count()).filter(|&i| f.norm_sq(i) == 0.0).count();
        assert_eq!(zeros, 1);
        for i in 0..s.voxel_count() {
            let u = f.wavenumber(i);
            let v = f.wavenumber(f.negated_index(i));
            for d in 0..3 {
                assert!(v[d] == -u[d] || (u[d] == -4 && v[d] == -4));
            }
        }
    }
}
