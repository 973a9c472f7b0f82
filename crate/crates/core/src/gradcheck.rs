//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each suite draws a random problem, forms a scalar loss, and compares the
//! analytic gradient against central differences. The reported error per
//! entry is `|a - fd| / max(|a|, |fd|, 1e-3 * max|fd|)`; the floor keeps
//! entries that are tiny compared to the rest of the gradient from turning
//! round-off into large ratios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{sample_trilinear, sample_trilinear_grad, GridSpec, ScalarGrid, VectorGrid};
use crate::metrics::{chamfer_l2, grid_mse};
use crate::raster::{rasterize, rasterize_backward, OrientedPointCloud};
use crate::spectral::{dpsr_backward, dpsr_forward, solve_raw, solve_raw_adjoint, SolverParams};
use crate::Vec3;

/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

const POSITION_STEP: f64 = 1e-6;
const NORMAL_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub resolution: usize,
    pub max_rel_error: f64,
    pub entries: usize,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Maximum entrywise relative error between analytic and numeric gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let floor = 1e-3 * numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| {
            let denom = a.abs().max(f.abs()).max(floor);
            if denom == 0.0 {
                0.0
            } else {
                (a - f).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}

fn flat(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Points placed strictly inside grid cells, away from cell faces, so that
/// small perturbations never cross into a neighbouring cell.
pub fn interior_points<R: Rng>(rng: &mut R, spec: GridSpec, count: usize) -> Vec<Vec3> {
    let r = spec.resolution();
    let h = spec.voxel_size();
    (0..count)
        .map(|_| Vec3::from_fn(|_, _| (rng.random_range(0..r) as f64 + rng.random_range(0.05..0.95)) * h))
        .collect()
}

fn random_normals<R: Rng>(rng: &mut R, count: usize) -> Vec<Vec3> {
    (0..count)
        .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
        .collect()
}

fn random_grid<R: Rng>(rng: &mut R, spec: GridSpec) -> ScalarGrid {
    ScalarGrid::from_values(spec, (0..spec.voxel_count()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("finite values")
}

/// Central differences of `loss` over every coordinate of `points`.
fn fd_points(points: &[Vec3], step: f64, mut loss: impl FnMut(&[Vec3]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut work = points.to_vec();
    let mut out = Vec::with_capacity(3 * points.len());
    for i in 0..points.len() {
        for d in 0..3 {
            let orig = work[i][d];
            work[i][d] = orig + step;
            let up = loss(&work)?;
            work[i][d] = orig - step;
            let down = loss(&work)?;
            work[i][d] = orig;
            out.push((up - down) / (2.0 * step));
        }
    }
    Ok(out)
}

/// Gradient of `<dpsr_forward(cloud), G>` against finite differences, over
/// positions and normals jointly.
pub fn dpsr_check(resolution: usize, num_points: usize, sigma: f64, seed: u64) -> Result<SuiteResult> {
    let spec = GridSpec::new(resolution)?;
    let params = SolverParams::with_sigma(sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = interior_points(&mut rng, spec, num_points);
    let nrm = random_normals(&mut rng, num_points);
    let g = random_grid(&mut rng, spec);
    let cloud = OrientedPointCloud::new(pos.clone(), nrm.clone())?;
    let (_, tape) = dpsr_forward(&cloud, spec, &params)?;
    let (gp, gn) = dpsr_backward(&tape, &cloud, &g)?;

    let loss = |p: &[Vec3], n: &[Vec3]| -> Result<f64> {
        let c = OrientedPointCloud::new(p.to_vec(), n.to_vec())?;
        Ok(dpsr_forward(&c, spec, &params)?.0.dot(&g))
    };
    let mut numeric = fd_points(&pos, POSITION_STEP, |p| loss(p, &nrm))?;
    numeric.extend(fd_points(&nrm, NORMAL_STEP, |n| loss(&pos, n))?);
    let mut analytic = flat(&gp);
    analytic.extend(flat(&gn));
    Ok(SuiteResult {
        suite: "dpsr",
        resolution,
        max_rel_error: max_relative_error(&analytic, &numeric),
        entries: analytic.len(),
    })
}

fn rasterize_check(spec: GridSpec, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let n = 32;
    let pos = interior_points(rng, spec, n);
    let nrm = random_normals(rng, n);
    let g = VectorGrid::from_values(spec, (0..3 * spec.voxel_count()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let cloud = OrientedPointCloud::new(pos.clone(), nrm.clone())?;
    let (gp, gn) = rasterize_backward(&cloud, spec, &g)?;
    let loss = |p: &[Vec3], n: &[Vec3]| -> Result<f64> {
        Ok(rasterize(&OrientedPointCloud::new(p.to_vec(), n.to_vec())?, spec)?.dot(&g))
    };
    let mut numeric = fd_points(&pos, POSITION_STEP, |p| loss(p, &nrm))?;
    numeric.extend(fd_points(&nrm, NORMAL_STEP, |n| loss(&pos, n))?);
    let mut analytic = flat(&gp);
    analytic.extend(flat(&gn));
    Ok(SuiteResult {
        suite: "rasterize",
        resolution: spec.resolution(),
        max_rel_error: max_relative_error(&analytic, &numeric),
        entries: analytic.len(),
    })
}

/// The spectral solve is linear, so its gradient is its adjoint; checked
/// through `<solve(v), G> = <v, adjoint(G)>` over several random pairs.
fn spectral_adjoint_check(spec: GridSpec, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let params = SolverParams::with_sigma(1.0);
    let trials = 8;
    let (mut lhs, mut rhs) = (Vec::new(), Vec::new());
    for _ in 0..trials {
        let v = VectorGrid::from_values(spec, (0..3 * spec.voxel_count()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let g = random_grid(rng, spec);
        lhs.push(solve_raw(&v, &params)?.dot(&g));
        rhs.push(v.dot(&solve_raw_adjoint(&g, &params)?));
    }
    Ok(SuiteResult {
        suite: "spectral-adjoint",
        resolution: spec.resolution(),
        max_rel_error: max_relative_error(&rhs, &lhs),
        entries: trials,
    })
}

fn sampling_check(spec: GridSpec, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let pts = interior_points(rng, spec, 32);
    let grid = random_grid(rng, spec);
    let upstream: Vec<f64> = (0..pts.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, gp) = sample_trilinear_grad(&grid, &pts, &upstream)?;
    let numeric = fd_points(&pts, POSITION_STEP, |p| {
        Ok(sample_trilinear(&grid, p)?.iter().zip(&upstream).map(|(a, b)| a * b).sum())
    })?;
    Ok(SuiteResult {
        suite: "trilinear-sample",
        resolution: spec.resolution(),
        max_rel_error: max_relative_error(&flat(&gp), &numeric),
        entries: 3 * pts.len(),
    })
}

fn chamfer_check(rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let a: Vec<Vec3> = (0..48).map(|_| Vec3::from_fn(|_, _| rng.random())).collect();
    let b: Vec<Vec3> = (0..40).map(|_| Vec3::from_fn(|_, _| rng.random())).collect();
    let (_, grad) = chamfer_l2(&a, &b)?;
    let numeric = fd_points(&a, 1e-7, |p| Ok(chamfer_l2(p, &b)?.0))?;
    Ok(SuiteResult {
        suite: "chamfer-l2",
        resolution: 0,
        max_rel_error: max_relative_error(&flat(&grad), &numeric),
        entries: 3 * a.len(),
    })
}

fn grid_mse_check(spec: GridSpec, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let pred = random_grid(rng, spec);
    let gt = random_grid(rng, spec);
    let (_, grad) = grid_mse(&pred, &gt)?;
    // the loss is quadratic, so a large step costs no truncation error
    let step = 1e-2;
    let mut work = pred.clone();
    let mut numeric = Vec::with_capacity(spec.voxel_count());
    for j in 0..spec.voxel_count() {
        let orig = work.values()[j];
        work.values_mut()[j] = orig + step;
        let up = grid_mse(&work, &gt)?.0;
        work.values_mut()[j] = orig - step;
        let down = grid_mse(&work, &gt)?.0;
        work.values_mut()[j] = orig;
        numeric.push((up - down) / (2.0 * step));
    }
    Ok(SuiteResult {
        suite: "grid-mse",
        resolution: spec.resolution(),
        max_rel_error: max_relative_error(grad.values(), &numeric),
        entries: numeric.len(),
    })
}

/// Runs every suite at each resolution, plus the grid-free Chamfer suite.
pub fn run_all(resolutions: &[usize], seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &r in resolutions {
        let spec = GridSpec::new(r)?;
        out.push(rasterize_check(spec, &mut rng)?);
        out.push(sampling_check(spec, &mut rng)?);
        out.push(spectral_adjoint_check(spec, &mut rng)?);
        out.push(dpsr_check(r, 64, 1.0, rng.random())?);
        out.push(grid_mse_check(spec, &mut rng)?);
    }
    out.push(chamfer_check(&mut rng)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(max_relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((max_relative_error(&[1.1], &[1.0]) - 0.1 / 1.1).abs() < 1e-15);
        // tiny entries are judged against the gradient scale
        assert!(max_relative_error(&[100.0, 1e-9], &[100.0, 0.0]) < 1e-7);
        assert_eq!(max_relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn suites_pass_at_small_resolution() {
        for s in run_all(&[8], 1).unwrap() {
            assert!(s.passed(), "{s:?}");
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        assert!(max_relative_error(&[1.0, 2.0], &[1.0, 2.001]) > TOLERANCE);
    }
}
