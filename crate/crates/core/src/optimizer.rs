//! Surface reconstruction from an unoriented point cloud by optimizing an
//! oriented point cloud through the differentiable solver: sphere start,
//! Adam steps on positions and normals, periodic resampling from the
//! largest surface component, and a coarse-to-fine resolution schedule.

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::error::{PsrError, Result};
use crate::grid::{GridSpec, ScalarGrid};
use crate::isosurface::{
    largest_component, marching_cubes, mesh_grad_to_grid, sample_surface_with, TriangleMesh,
};
use crate::kdtree::NearestNeighborIndex;
use crate::metrics::{chamfer_l1_metric, chamfer_l2_indexed, fscore};
use crate::raster::OrientedPointCloud;
use crate::spectral::{dpsr_backward, dpsr_forward, SolverParams};
use crate::Vec3;

/// Positions are clamped to this box after every update.
pub const POSITION_BOUNDS: (f64, f64) = (0.02, 0.98);
/// Input clouds are fitted into this centered sub-cube.
pub const NORMALIZED_BOUNDS: (f64, f64) = (0.15, 0.85);
/// Bandwidth of the last stage for noisy targets.
pub const NOISY_FINAL_SIGMA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub resolution: usize,
    pub iterations: usize,
    pub sigma: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// Strictly increasing resolutions.
    pub stages: Vec<Stage>,
    /// Resample every this many iterations within a stage; `None` disables.
    pub resample_every: Option<usize>,
    pub num_points: usize,
    pub loss_samples: usize,
    pub init_radius: f64,
    pub seed: u64,
}

const BASE_LR: f64 = 2e-3;
const LR_DECAY: f64 = 0.7;

impl Default for Schedule {
    fn default() -> Self {
        Self::from_stages(&[(32, 1000, 2.0), (64, 1000, 2.0), (128, 1000, 3.0), (256, 200, 3.0)])
    }
}

impl Schedule {
    /// Stages from `(resolution, iterations, sigma)` with the learning rate
    /// starting at 2e-3 and decaying by 0.7 per resolution increase.
    pub fn from_stages(stages: &[(usize, usize, f64)]) -> Self {
        let stages = stages
            .iter()
            .enumerate()
            .map(|(k, &(resolution, iterations, sigma))| Stage {
                resolution,
                iterations,
                sigma,
                learning_rate: BASE_LR * LR_DECAY.powi(k as i32),
            })
            .collect();
        Self {
            stages,
            resample_every: Some(200),
            num_points: 20_000,
            loss_samples: 20_000,
            init_radius: 0.3,
            seed: 0,
        }
    }

    /// Default stages with a heavier final smoothing for noisy inputs.
    pub fn noisy() -> Self {
        Self::default().with_noisy_final()
    }

    /// Sets the last stage's bandwidth to [`NOISY_FINAL_SIGMA`].
    pub fn with_noisy_final(mut self) -> Self {
        if let Some(last) = self.stages.last_mut() {
            last.sigma = NOISY_FINAL_SIGMA;
        }
        self
    }

    /// Default bandwidth for a resolution: 2 up to 64, 3 above.
    pub fn default_sigma(resolution: usize) -> f64 {
        if resolution <= 64 {
            2.0
        } else {
            3.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PsrError::InvalidParameter(m));
        if self.stages.is_empty() {
            return bad("schedule has no stages".into());
        }
        for (k, s) in self.stages.iter().enumerate() {
            GridSpec::new(s.resolution)?;
            if s.iterations == 0 {
                return bad(format!("stage {k} has zero iterations"));
            }
            if !(s.sigma >= 0.0) || !(s.learning_rate >= 0.0) {
                return bad(format!("stage {k} has a negative sigma or learning rate"));
            }
            if k > 0 && s.resolution <= self.stages[k - 1].resolution {
                return bad("stage resolutions must strictly increase".into());
            }
        }
        if self.resample_every == Some(0) {
            return bad("resample interval must be positive".into());
        }
        if self.num_points == 0 || self.loss_samples == 0 {
            return bad("point and sample counts must be positive".into());
        }
        Ok(())
    }
}

/// Uniform scale plus translation taking input coordinates into the
/// normalized frame: `q = scale * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub scale: f64,
    pub translation: Vec3,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            translation: Vec3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.translation
    }

    #[inline]
    pub fn invert(&self, q: &Vec3) -> Vec3 {
        (q - self.translation) / self.scale
    }
}

/// Fits the bounding box of `points` into [0.15, 0.85]^3, preserving aspect
/// ratio and centering every axis.
pub fn normalize_input(points: &[Vec3]) -> Result<(Vec<Vec3>, NormalizationTransform)> {
    if points.is_empty() {
        return Err(PsrError::Empty("input points"));
    }
    if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(PsrError::NonFinite("input points"));
    }
    let (lo, hi) = points.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(PsrError::InvalidParameter("all input points are identical".into()));
    }
    if points.len() < 4 || is_planar(points) {
        warn!("input points are coplanar or fewer than four; the reconstruction may be degenerate");
    }
    let (a, b) = NORMALIZED_BOUNDS;
    let scale = (b - a) / extent;
    let center = (lo + hi) * 0.5;
    let transform = NormalizationTransform {
        scale,
        translation: Vec3::repeat(0.5 * (a + b)) - center * scale,
    };
    Ok((points.iter().map(|p| transform.apply(p)).collect(), transform))
}

fn is_planar(points: &[Vec3]) -> bool {
    let mean = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    eig.min() <= 1e-12 * eig.max()
}

/// `count` points spread uniformly over a sphere with outward unit normals.
pub fn init_sphere(count: usize, radius: f64, center: Vec3, seed: u64) -> Result<OrientedPointCloud> {
    if count == 0 {
        return Err(PsrError::Empty("sphere point count"));
    }
    let inside = (0..3).all(|d| center[d] - radius > 0.0 && center[d] + radius < 1.0);
    if !(radius > 0.0) || !inside {
        return Err(PsrError::InvalidParameter(format!(
            "sphere of radius {radius} at {center:?} leaves the unit cube"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        // uniform height and azimuth give an area-uniform sphere sample
        let z: f64 = rng.random_range(-1.0..=1.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let rho = (1.0 - z * z).max(0.0).sqrt();
        let n = Vec3::new(rho * phi.cos(), rho * phi.sin(), z).normalize();
        positions.push(center + n * radius);
        normals.push(n);
    }
    OrientedPointCloud::new(positions, normals)
}

fn flatten(cloud: &OrientedPointCloud) -> Vec<f64> {
    cloud
        .positions()
        .iter()
        .chain(cloud.normals())
        .flat_map(|v| [v.x, v.y, v.z])
        .collect()
}

/// Solver, loss and optimizer state for one resolution.
pub struct StepContext<'a> {
    pub spec: GridSpec,
    pub params: SolverParams,
    pub target: &'a NearestNeighborIndex,
    pub learning_rate: f64,
    pub loss_samples: usize,
}

/// Output of a successful [`reconstruction_step`].
#[derive(Debug, Clone)]
pub struct StepReport {
    /// Chamfer loss before the update.
    pub loss: f64,
    /// Euclidean norm of the parameter change.
    pub update_norm: f64,
}

/// One optimization iteration. On error the cloud is left unchanged;
/// [`PsrError::EmptyMesh`] and [`PsrError::DegenerateScale`] are
/// recoverable.
pub fn reconstruction_step<R: Rng>(
    cloud: &mut OrientedPointCloud,
    ctx: &StepContext<'_>,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<StepReport> {
    let (chi, tape) = dpsr_forward(cloud, ctx.spec, &ctx.params)?;
    let mesh = marching_cubes(&chi, 0.0)?;
    if mesh.is_empty() {
        return Err(PsrError::EmptyMesh);
    }
    let samples = sample_surface_with(&mesh, ctx.loss_samples, rng)?;
    let (loss, grad_samples) = chamfer_l2_indexed(&samples.points, ctx.target)?;
    let dchi = mesh_grad_to_grid(&samples, &grad_samples, ctx.spec)?;
    let (grad_pos, grad_nrm) = dpsr_backward(&tape, cloud, &dchi)?;

    let n = cloud.len();
    if adam.len() != 6 * n {
        adam.reset(6 * n);
    }
    let grads: Vec<f64> = grad_pos
        .iter()
        .chain(&grad_nrm)
        .flat_map(|v| [v.x, v.y, v.z])
        .collect();
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(PsrError::NonFinite("cloud gradient"));
    }
    let before = flatten(cloud);
    let mut params = before.clone();
    adam.update(&mut params, &grads, ctx.learning_rate);

    let (lo, hi) = POSITION_BOUNDS;
    let (positions, normals) = cloud.parts_mut();
    for (i, p) in positions.iter_mut().enumerate() {
        for d in 0..3 {
            let v = params[3 * i + d].clamp(lo, hi);
            params[3 * i + d] = v;
            p[d] = v;
        }
    }
    for (i, nrm) in normals.iter_mut().enumerate() {
        for d in 0..3 {
            nrm[d] = params[3 * (n + i) + d];
        }
    }
    let update_norm = before
        .iter()
        .zip(&params)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(StepReport { loss, update_norm })
}

/// Replaces the cloud by `count` area-uniform samples (with face normals)
/// of the largest component of `chi`'s zero level set.
pub fn resample_cloud<R: Rng>(chi: &ScalarGrid, count: usize, rng: &mut R) -> Result<OrientedPointCloud> {
    let mesh = largest_component(&marching_cubes(chi, 0.0)?);
    if mesh.is_empty() {
        return Err(PsrError::EmptyMesh);
    }
    let samples = sample_surface_with(&mesh, count, rng)?;
    OrientedPointCloud::new(samples.points, samples.normals)
}

/// Seeded variant of [`resample_cloud`].
pub fn resample_cloud_seeded(chi: &ScalarGrid, count: usize, seed: u64) -> Result<OrientedPointCloud> {
    resample_cloud(chi, count, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub stage: usize,
    pub iteration: usize,
    /// `None` when the step was skipped (empty level set or degenerate scale).
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub resolution: usize,
    pub resamples: usize,
    pub skipped_steps: usize,
    /// Euler characteristic of the surface at the end of the stage.
    pub euler_characteristic: Option<i64>,
    /// Chamfer-L1 and F-score@1% against the ground truth, in the
    /// normalized frame.
    pub chamfer_l1: Option<f64>,
    pub fscore: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub iterations: Vec<IterationRecord>,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Final surface in input coordinates.
    pub mesh: TriangleMesh,
    /// Final surface in the normalized frame.
    pub normalized_mesh: TriangleMesh,
    /// Optimized cloud in the normalized frame.
    pub cloud: OrientedPointCloud,
    pub transform: NormalizationTransform,
    pub log: MetricsLog,
}

const EVAL_TAU: f64 = 0.01;
const EVAL_SAMPLES: usize = 100_000;
const ABORT_WINDOWS: usize = 3;
const DEFAULT_WINDOW: usize = 200;

fn stage_metrics(mesh: &TriangleMesh, ground_truth: &[Vec3], seed: u64) -> (Option<f64>, Option<f64>) {
    // separate stream so that logging does not change the optimization
    match sample_surface_with(mesh, EVAL_SAMPLES, &mut ChaCha8Rng::seed_from_u64(seed)) {
        Ok(s) => (
            chamfer_l1_metric(&s.points, ground_truth).ok(),
            fscore(&s.points, ground_truth, EVAL_TAU).ok(),
        ),
        Err(_) => (None, None),
    }
}

/// Runs the full coarse-to-fine optimization against `target` (input
/// coordinates). When `ground_truth` points are given (same coordinates as
/// `target`), per-stage metrics are logged in the normalized frame.
pub fn run_reconstruction(
    target: &[Vec3],
    schedule: &Schedule,
    params: &SolverParams,
    ground_truth: Option<&[Vec3]>,
) -> Result<Reconstruction> {
    schedule.validate()?;
    params.validate()?;
    let (target_n, transform) = normalize_input(target)?;
    let gt_n: Option<Vec<Vec3>> = ground_truth.map(|g| g.iter().map(|p| transform.apply(p)).collect());
    let index = NearestNeighborIndex::new(&target_n);

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let init_seed = rng.random();
    let mut cloud = init_sphere(
        schedule.num_points,
        schedule.init_radius,
        Vec3::repeat(0.5),
        init_seed,
    )?;
    let mut adam = AdamState::new(6 * cloud.len());
    let mut log = MetricsLog::default();
    let window = schedule.resample_every.unwrap_or(DEFAULT_WINDOW);
    let mut consecutive_failures = 0usize;
    let mut final_mesh = None;

    for (k, stage) in schedule.stages.iter().enumerate() {
        let spec = GridSpec::new(stage.resolution)?;
        let solver = SolverParams {
            sigma: stage.sigma,
            ..*params
        };
        let ctx = StepContext {
            spec,
            params: solver,
            target: &index,
            learning_rate: stage.learning_rate,
            loss_samples: schedule.loss_samples,
        };
        adam.reset(6 * cloud.len());
        let mut record = StageRecord {
            resolution: stage.resolution,
            resamples: 0,
            skipped_steps: 0,
            euler_characteristic: None,
            chamfer_l1: None,
            fscore: None,
        };
        info!(
            "stage {k}: resolution {} sigma {} lr {:.3e}, {} iterations",
            stage.resolution, stage.sigma, stage.learning_rate, stage.iterations
        );

        for it in 0..stage.iterations {
            if let Some(every) = schedule.resample_every {
                if it > 0 && it % every == 0 {
                    let resampled = dpsr_forward(&cloud, spec, &solver)
                        .and_then(|(chi, _)| resample_cloud(&chi, schedule.num_points, &mut rng));
                    match resampled {
                        Ok(c) => {
                            cloud = c;
                            adam.reset(6 * cloud.len());
                            record.resamples += 1;
                        }
                        Err(e) => warn!("resampling skipped at stage {k} iteration {it}: {e}"),
                    }
                }
            }
            match reconstruction_step(&mut cloud, &ctx, &mut adam, &mut rng) {
                Ok(report) => {
                    consecutive_failures = 0;
                    debug!("stage {k} iteration {it}: loss {:.6e}", report.loss);
                    log.iterations.push(IterationRecord {
                        stage: k,
                        iteration: it,
                        loss: Some(report.loss),
                    });
                }
                Err(e @ (PsrError::EmptyMesh | PsrError::DegenerateScale(_))) => {
                    consecutive_failures += 1;
                    record.skipped_steps += 1;
                    warn!("stage {k} iteration {it}: step skipped: {e}");
                    log.iterations.push(IterationRecord {
                        stage: k,
                        iteration: it,
                        loss: None,
                    });
                    if consecutive_failures > ABORT_WINDOWS * window {
                        return Err(PsrError::Aborted(format!(
                            "no usable surface for {consecutive_failures} consecutive iterations ({e})"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let mesh = dpsr_forward(&cloud, spec, &solver).and_then(|(chi, _)| marching_cubes(&chi, 0.0));
        match &mesh {
            Ok(m) if !m.is_empty() => {
                record.euler_characteristic = Some(m.euler_characteristic());
                if let Some(gt) = &gt_n {
                    let (cd, fs) = stage_metrics(m, gt, schedule.seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                    record.chamfer_l1 = cd;
                    record.fscore = fs;
                }
            }
            Ok(_) => warn!("stage {k} ends with an empty surface"),
            Err(e) => warn!("stage {k}: surface extraction failed: {e}"),
        }
        info!(
            "stage {k}: euler {:?} chamfer-L1 {:?} f-score {:?}",
            record.euler_characteristic, record.chamfer_l1, record.fscore
        );
        log.stages.push(record);
        final_mesh = Some(mesh);
    }

    let normalized_mesh = final_mesh.expect("validated non-empty")?;
    let mesh = normalized_mesh.map_vertices(|v| transform.invert(v));
    Ok(Reconstruction {
        mesh,
        normalized_mesh,
        cloud,
        transform,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isosurface::sample_surface;

    #[test]
    fn default_schedule_values() {
        let s = Schedule::default();
        assert_eq!(s.stages.len(), 4);
        assert_eq!(
            s.stages[0],
            Stage {
                resolution: 32,
                iterations: 1000,
                sigma: 2.0,
                learning_rate: 2e-3
            }
        );
        let lrs: Vec<f64> = s.stages.iter().map(|s| s.learning_rate).collect();
        for (lr, expect) in lrs.iter().zip([2e-3, 1.4e-3, 9.8e-4, 6.86e-4]) {
            assert!((lr - expect).abs() < 1e-15);
        }
        assert_eq!(s.stages[3].iterations, 200);
        assert_eq!(s.stages[2].sigma, 3.0);
        assert_eq!(s.resample_every, Some(200));
        assert_eq!(s.num_points, 20_000);
        assert_eq!(s.loss_samples, 20_000);
        assert_eq!(Schedule::noisy().stages[3].sigma, 5.0);
        s.validate().unwrap();
    }

    #[test]
    fn schedule_validation() {
        let mut s = Schedule::from_stages(&[(64, 10, 2.0), (32, 10, 2.0)]);
        assert!(s.validate().is_err());
        s = Schedule::from_stages(&[(32, 0, 2.0)]);
        assert!(s.validate().is_err());
        s = Schedule::from_stages(&[(33, 10, 2.0)]);
        assert!(s.validate().is_err());
        s = Schedule::from_stages(&[(32, 10, 2.0)]);
        s.resample_every = Some(0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn sphere_init() {
        let c = Vec3::new(0.5, 0.5, 0.5);
        let cloud = init_sphere(20_000, 0.3, c, 9).unwrap();
        for (p, n) in cloud.positions().iter().zip(cloud.normals()) {
            assert!(((p - c).norm() - 0.3).abs() < 1e-12);
            assert!((n - (p - c) / 0.3).norm() < 1e-12);
        }
        let mean = cloud.positions().iter().sum::<Vec3>() / 20_000.0;
        // per-axis std of the mean is 0.3 / sqrt(3 N) ~ 1.2e-3
        assert!((mean - c).norm() < 5.0 * 0.3 / (3.0f64 * 20_000.0).sqrt());
        assert_eq!(cloud, init_sphere(20_000, 0.3, c, 9).unwrap());
        assert!(init_sphere(10, 0.6, c, 0).is_err());
        assert!(init_sphere(10, 0.3, Vec3::new(0.2, 0.5, 0.5), 0).is_err());
    }

    #[test]
    fn normalization() {
        // already fitted
        let pts = vec![
            Vec3::new(0.15, 0.15, 0.15),
            Vec3::new(0.85, 0.85, 0.85),
            Vec3::new(0.3, 0.6, 0.2),
            Vec3::new(0.5, 0.2, 0.7),
        ];
        let (out, t) = normalize_input(&pts).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        for (a, b) in pts.iter().zip(&out) {
            assert!((a - b).norm() < 1e-12);
        }

        let raw = vec![
            Vec3::new(-1.0, -0.5, 0.0),
            Vec3::new(1.0, 0.5, 0.2),
            Vec3::new(0.3, -0.2, 0.1),
            Vec3::new(0.0, 0.1, -0.3),
        ];
        let (out, t) = normalize_input(&raw).unwrap();
        for (p, q) in raw.iter().zip(&out) {
            assert!(q.iter().all(|c| (0.15 - 1e-12..=0.85 + 1e-12).contains(c)));
            assert!((t.invert(q) - p).norm() < 1e-12);
        }
        let xs: Vec<f64> = out.iter().map(|p| p.x).collect();
        assert!((xs.iter().cloned().fold(f64::INFINITY, f64::min) - 0.15).abs() < 1e-12);
        assert!((xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 0.85).abs() < 1e-12);

        assert!(normalize_input(&[Vec3::new(0.2, 0.3, 0.4)]).is_err());
        assert!(normalize_input(&[Vec3::new(0.2, 0.3, 0.4); 5]).is_err());
        assert!(normalize_input(&[]).is_err());
    }

    fn sphere_target(n: usize, center: Vec3, radius: f64, seed: u64) -> Vec<Vec3> {
        init_sphere(n, 0.3, Vec3::repeat(0.5), seed)
            .unwrap()
            .normals()
            .iter()
            .map(|d| center + d * radius)
            .collect()
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let spec = GridSpec::new(32).unwrap();
        let target = sphere_target(2000, Vec3::new(0.52, 0.5, 0.5), 0.25, 1);
        let index = NearestNeighborIndex::new(&target);
        let mut cloud = init_sphere(2000, 0.3, Vec3::repeat(0.5), 2).unwrap();
        let before = cloud.clone();
        let ctx = StepContext {
            spec,
            params: SolverParams::default(),
            target: &index,
            learning_rate: 0.0,
            loss_samples: 2000,
        };
        let mut adam = AdamState::new(6 * cloud.len());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let report = reconstruction_step(&mut cloud, &ctx, &mut adam, &mut rng).unwrap();
        assert!(report.loss.is_finite() && report.loss > 0.0);
        assert_eq!(report.update_norm, 0.0);
        assert_eq!(cloud, before);
    }

    #[test]
    fn own_surface_is_a_fixed_point() {
        let spec = GridSpec::new(32).unwrap();
        let params = SolverParams::default();
        let mut cloud = init_sphere(3000, 0.3, Vec3::repeat(0.5), 4).unwrap();
        let (chi, _) = dpsr_forward(&cloud, spec, &params).unwrap();
        let mesh = marching_cubes(&chi, 0.0).unwrap();
        let target = sample_surface(&mesh, 200_000, 5).unwrap().points;
        let index = NearestNeighborIndex::new(&target);
        let ctx = StepContext {
            spec,
            params,
            target: &index,
            learning_rate: 2e-3,
            loss_samples: 20_000,
        };
        let mut adam = AdamState::new(6 * cloud.len());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let report = reconstruction_step(&mut cloud, &ctx, &mut adam, &mut rng).unwrap();
        // only sampling noise remains: the loss is small compared to the
        // squared voxel size
        assert!(report.loss < 0.1 * spec.voxel_size().powi(2), "loss {}", report.loss);
    }

    #[test]
    fn translated_sphere_loss_decreases() {
        let spec = GridSpec::new(32).unwrap();
        let target = sphere_target(5000, Vec3::new(0.55, 0.5, 0.48), 0.25, 7);
        let index = NearestNeighborIndex::new(&target);
        let mut cloud = init_sphere(3000, 0.3, Vec3::repeat(0.5), 8).unwrap();
        let ctx = StepContext {
            spec,
            params: SolverParams::default(),
            target: &index,
            learning_rate: 2e-3,
            loss_samples: 5000,
        };
        let mut adam = AdamState::new(6 * cloud.len());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let losses: Vec<f64> = (0..50)
            .map(|_| reconstruction_step(&mut cloud, &ctx, &mut adam, &mut rng).unwrap().loss)
            .collect();
        // sampling noise makes single steps jittery; compare windows
        let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = losses[45..].iter().sum::<f64>() / 5.0;
        assert!(tail < 0.5 * head, "head {head} tail {tail}");
        let decreasing = losses
            .chunks(10)
            .map(|c| c.iter().sum::<f64>())
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1] < w[0]);
        assert!(decreasing, "{losses:?}");
        assert!(cloud
            .positions()
            .iter()
            .all(|p| p.iter().all(|c| (0.02..=0.98).contains(c))));
    }

    #[test]
    fn resampling_keeps_only_the_largest_component() {
        let spec = GridSpec::new(32).unwrap();
        let big = Vec3::new(0.35, 0.5, 0.5);
        let small = Vec3::new(0.78, 0.5, 0.5);
        let chi = ScalarGrid::from_fn(spec, |p| ((p - big).norm() - 0.2).min((p - small).norm() - 0.08));
        let cloud = resample_cloud_seeded(&chi, 4000, 1).unwrap();
        assert_eq!(cloud.len(), 4000);
        assert!(cloud.positions().iter().all(|p| (p - small).norm() > 0.12));
        for n in cloud.normals() {
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
        let empty = ScalarGrid::from_fn(spec, |_| 1.0);
        assert!(matches!(resample_cloud_seeded(&empty, 10, 0), Err(PsrError::EmptyMesh)));
    }

    #[test]
    fn short_run_is_deterministic() {
        let target = sphere_target(3000, Vec3::new(0.1, 0.2, 0.0), 1.5, 10);
        let mut schedule = Schedule::from_stages(&[(16, 30, 2.0), (32, 20, 2.0)]);
        schedule.num_points = 2000;
        schedule.loss_samples = 2000;
        schedule.resample_every = Some(10);
        let a = run_reconstruction(&target, &schedule, &SolverParams::default(), Some(&target)).unwrap();
        let b = run_reconstruction(&target, &schedule, &SolverParams::default(), Some(&target)).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.mesh, b.mesh);
        assert_eq!(a.log.iterations.len(), 50);
        assert_eq!(a.log.stages[0].resamples, 2);
        assert_eq!(a.cloud.len(), 2000);
        assert!(a.log.stages[1].chamfer_l1.is_some());
        // de-normalized mesh maps back onto the normalized one
        for (v, w) in a.mesh.vertices().iter().zip(a.normalized_mesh.vertices()) {
            assert!((a.transform.apply(v) - w).norm() < 1e-9);
        }
    }
}
