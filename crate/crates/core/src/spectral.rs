//! Spectral Poisson solve from a rasterized normal field to an indicator
//! grid, its normalization, the exact reverse-mode gradient, and a
//! direct-summation DFT reference used as a test oracle.
//!
//! In the frequency domain the raw solution is
//!
//! ```text
//! chi~(u) = g(u) * i (u . v~(u)) / (-2 pi |u|^2),   g(u) = exp(-2 sigma^2 |u|^2 / r^2)
//! ```
//!
//! with `u` in cycles per unit length. The zero mode is set to zero, and
//! the derivative factor `i u_d` is dropped at the Nyquist wavenumber
//! `u_d = -r/2` so the operator maps real fields to real fields.

use std::f64::consts::PI;

use num_traits::{Float, FromPrimitive};
use rustfft::num_complex::Complex;
use rustfft::FftNum;

use crate::error::{PsrError, Result};
use crate::fft::Fft3;
use crate::grid::{frequency_grid, sample_trilinear, sample_trilinear_grad, FrequencyGrid, GridSpec, ScalarGrid, VectorGrid};
use crate::raster::{rasterize, rasterize_backward, OrientedPointCloud};
use crate::Vec3;

/// Floating-point precision of the FFT stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// Gaussian bandwidth in voxel units of the current resolution.
    pub sigma: f64,
    /// Magnitude of the indicator at the grid origin after normalization.
    pub scale_m: f64,
    /// Smallest admissible `|corner value|` before scaling.
    pub eps_scale: f64,
    pub precision: Precision,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            scale_m: 0.5,
            eps_scale: 1e-8,
            precision: Precision::F64,
        }
    }
}

impl SolverParams {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(PsrError::InvalidParameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.scale_m > 0.0 && self.scale_m.is_finite()) {
            return Err(PsrError::InvalidParameter(format!("m must be > 0, got {}", self.scale_m)));
        }
        if !(self.eps_scale > 0.0) {
            return Err(PsrError::InvalidParameter(format!(
                "eps_scale must be > 0, got {}",
                self.eps_scale
            )));
        }
        Ok(())
    }
}

/// Intermediates of one forward solve, enough to run [`dpsr_backward`].
#[derive(Debug, Clone)]
pub struct SolveTape {
    params: SolverParams,
    raw: ScalarGrid,
    mean: f64,
    corner: f64,
    positions: Vec<Vec3>,
}

impl SolveTape {
    /// The raw (unnormalized) solution.
    pub fn raw(&self) -> &ScalarGrid {
        &self.raw
    }

    /// Mean of the raw solution sampled at the points.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Raw value at node 0 after mean subtraction.
    pub fn corner(&self) -> f64 {
        self.corner
    }

    pub fn scale(&self) -> f64 {
        self.params.scale_m / self.corner.abs()
    }
}

/// Spectral Gaussian `exp(-2 sigma^2 |u|^2 / r^2)` per frequency node.
pub fn gaussian_kernel(freq: &FrequencyGrid, sigma: f64) -> Vec<f64> {
    let r = freq.spec().resolution() as f64;
    let c = -2.0 * sigma * sigma / (r * r);
    (0..freq.spec().voxel_count())
        .map(|i| (c * freq.norm_sq(i)).exp())
        .collect()
}

/// Per-node real factor `g(u) / (-2 pi |u|^2)`, zero at `u = 0`, and the
/// per-axis derivative wavenumbers with the Nyquist entry zeroed.
struct SpectralOperator {
    factor: Vec<f64>,
    axis: Vec<f64>,
    r: usize,
}

impl SpectralOperator {
    fn new(spec: GridSpec, sigma: f64) -> Self {
        let freq = frequency_grid(spec);
        let g = gaussian_kernel(&freq, sigma);
        let factor = g
            .iter()
            .enumerate()
            .map(|(i, gi)| {
                let k2 = freq.norm_sq(i);
                if k2 == 0.0 {
                    0.0
                } else {
                    gi / (-2.0 * PI * k2)
                }
            })
            .collect();
        let r = spec.resolution();
        let axis = freq
            .axis_wavenumbers()
            .iter()
            .map(|&k| if k == -(r as i64) / 2 { 0.0 } else { k as f64 })
            .collect();
        Self { factor, axis, r }
    }

    /// Derivative wavenumbers `(u_x, u_y, u_z)` at a linear index.
    #[inline]
    fn derivative(&self, index: usize) -> [f64; 3] {
        let r = self.r;
        [
            self.axis[index % r],
            self.axis[(index / r) % r],
            self.axis[index / (r * r)],
        ]
    }
}

fn to_complex<T: Float + FromPrimitive>(re: &[f64], im: Option<&[f64]>) -> Vec<Complex<T>> {
    let cv = |x: f64| T::from_f64(x).unwrap();
    match im {
        Some(im) => re
            .iter()
            .zip(im)
            .map(|(&a, &b)| Complex::new(cv(a), cv(b)))
            .collect(),
        None => re.iter().map(|&a| Complex::new(cv(a), T::zero())).collect(),
    }
}

/// Forward spectral solve; returns the complex inverse transform so the
/// caller can inspect the imaginary residue.
fn solve_complex<T: FftNum + Float + FromPrimitive>(
    v: &VectorGrid,
    op: &SpectralOperator,
) -> Vec<Complex<T>> {
    let r = v.spec().resolution();
    let freq = frequency_grid(v.spec());
    let mut fft = Fft3::<T>::new(r);
    // pack x and y into one transform: Z = X + iY
    let mut packed = to_complex::<T>(v.channel(0), Some(v.channel(1)));
    fft.forward(&mut packed);
    let mut out = to_complex::<T>(v.channel(2), None);
    fft.forward(&mut out);

    let half = T::from_f64(0.5).unwrap();
    for (i, slot) in out.iter_mut().enumerate() {
        let z = packed[i];
        let zc = packed[freq.negated_index(i)].conj();
        let x = (z + zc) * half;
        // (z - zc) / 2i
        let d = (z - zc) * half;
        let y = Complex::new(d.im, -d.re);
        let [ux, uy, uz] = op.derivative(i).map(|k| T::from_f64(k).unwrap());
        let dot = x * ux + y * uy + *slot * uz;
        let f = T::from_f64(op.factor[i]).unwrap();
        // f * i * dot
        *slot = Complex::new(-dot.im * f, dot.re * f);
    }
    fft.inverse(&mut out);
    out
}

fn check_finite_vector(v: &VectorGrid) -> Result<()> {
    if v.values().iter().any(|x| !x.is_finite()) {
        return Err(PsrError::NonFinite("vector grid"));
    }
    Ok(())
}

/// Raw indicator `chi'` from a rasterized normal field. Linear in `v` and
/// mean-free.
pub fn solve_raw(v: &VectorGrid, params: &SolverParams) -> Result<ScalarGrid> {
    params.validate()?;
    check_finite_vector(v)?;
    let op = SpectralOperator::new(v.spec(), params.sigma);
    let values = match params.precision {
        Precision::F64 => solve_complex::<f64>(v, &op).iter().map(|c| c.re).collect(),
        Precision::F32 => solve_complex::<f32>(v, &op)
            .iter()
            .map(|c| c.re as f64)
            .collect(),
    };
    ScalarGrid::from_values(v.spec(), values)
}

/// Largest `|imag| / max|real|` left after the inverse transform.
pub fn solve_raw_imaginary_residue(v: &VectorGrid, params: &SolverParams) -> Result<f64> {
    params.validate()?;
    check_finite_vector(v)?;
    let op = SpectralOperator::new(v.spec(), params.sigma);
    let out = solve_complex::<f64>(v, &op);
    let re = out.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    let im = out.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    Ok(if re == 0.0 { im } else { im / re })
}

fn adjoint_complex<T: FftNum + Float + FromPrimitive>(
    upstream: &ScalarGrid,
    op: &SpectralOperator,
) -> VectorGrid {
    let spec = upstream.spec();
    let n = spec.voxel_count();
    let mut fft = Fft3::<T>::new(spec.resolution());
    let mut g = to_complex::<T>(upstream.values(), None);
    fft.forward(&mut g);

    // conj(f * i u_d) = -i f u_d, real f
    let mut packed = vec![Complex::new(T::zero(), T::zero()); n];
    let mut zc = vec![Complex::new(T::zero(), T::zero()); n];
    for i in 0..n {
        let f = T::from_f64(op.factor[i]).unwrap();
        let [ux, uy, uz] = op.derivative(i).map(|k| T::from_f64(k).unwrap());
        let base = Complex::new(g[i].im * f, -g[i].re * f);
        let ax = base * ux;
        let ay = base * uy;
        // A_x + i A_y
        packed[i] = Complex::new(ax.re - ay.im, ax.im + ay.re);
        zc[i] = base * uz;
    }
    drop(g);
    fft.inverse(&mut packed);
    fft.inverse(&mut zc);
    let mut out = VectorGrid::zeros(spec);
    {
        let vals = out.values_mut();
        for i in 0..n {
            vals[i] = packed[i].re.to_f64().unwrap();
            vals[n + i] = packed[i].im.to_f64().unwrap();
            vals[2 * n + i] = zc[i].re.to_f64().unwrap();
        }
    }
    out
}

/// Transpose of [`solve_raw`]: maps `dL/dchi'` to `dL/dv`.
pub fn solve_raw_adjoint(upstream: &ScalarGrid, params: &SolverParams) -> Result<VectorGrid> {
    params.validate()?;
    let op = SpectralOperator::new(upstream.spec(), params.sigma);
    Ok(match params.precision {
        Precision::F64 => adjoint_complex::<f64>(upstream, &op),
        Precision::F32 => adjoint_complex::<f32>(upstream, &op),
    })
}

/// Subtracts the mean of `chi'` sampled at `points` and rescales so the
/// value at node 0 has magnitude `m`.
pub fn normalize_indicator(
    raw: &ScalarGrid,
    points: &[Vec3],
    params: &SolverParams,
) -> Result<(ScalarGrid, SolveTape)> {
    params.validate()?;
    if points.is_empty() {
        return Err(PsrError::Empty("normalization points"));
    }
    let samples = sample_trilinear(raw, points)?;
    let mean = samples.iter().sum::<f64>() / points.len() as f64;
    let corner = raw.values()[0] - mean;
    if !(corner.abs() >= params.eps_scale) {
        return Err(PsrError::DegenerateScale(corner.abs()));
    }
    let scale = params.scale_m / corner.abs();
    let mut values: Vec<f64> = raw.values().iter().map(|&x| scale * (x - mean)).collect();
    // pinned so rounding in scale * corner cannot move it off m
    values[0] = params.scale_m.copysign(corner);
    let chi = ScalarGrid::from_values(raw.spec(), values)?;
    let tape = SolveTape {
        params: *params,
        raw: raw.clone(),
        mean,
        corner,
        positions: points.to_vec(),
    };
    Ok((chi, tape))
}

/// Oriented points to normalized indicator grid: rasterize, spectral
/// solve, normalize. With outward normals the result is negative inside,
/// positive outside and `+m` at node 0.
pub fn dpsr_forward(
    cloud: &OrientedPointCloud,
    spec: GridSpec,
    params: &SolverParams,
) -> Result<(ScalarGrid, SolveTape)> {
    let v = rasterize(cloud, spec)?;
    let raw = solve_raw(&v, params)?;
    normalize_indicator(&raw, cloud.positions(), params)
}

/// Reverse-mode gradient of `cloud -> chi` given `dL/dchi`. Returns
/// `(dL/dpositions, dL/dnormals)`.
pub fn dpsr_backward(
    tape: &SolveTape,
    cloud: &OrientedPointCloud,
    upstream: &ScalarGrid,
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let spec = tape.raw.spec();
    spec.check_same(&upstream.spec())?;
    if cloud.positions() != tape.positions.as_slice() {
        return Err(PsrError::TapeMismatch);
    }
    let m = tape.params.scale_m;
    let a = tape.corner;
    let k = m / a.abs();

    // chi = k * w,  w = raw - mean,  k = m / |w[0]|
    let raw = tape.raw.values();
    let g = upstream.values();
    let dl_dk: f64 = g.iter().zip(raw).map(|(gi, ri)| gi * (ri - tape.mean)).sum();
    let dl_da = dl_dk * (-m * a.signum() / (a * a));
    let mut dl_draw: Vec<f64> = g.iter().map(|gi| k * gi).collect();
    dl_draw[0] += dl_da;
    let dl_dmean = -dl_draw.iter().sum::<f64>();

    // mean = (1/N) sum_i sample(raw, c_i)
    let count = tape.positions.len();
    let per_point = vec![dl_dmean / count as f64; count];
    let (mean_grid, mean_pos) = sample_trilinear_grad(&tape.raw, &tape.positions, &per_point)?;
    for (d, s) in dl_draw.iter_mut().zip(mean_grid.values()) {
        *d += s;
    }
    let dl_draw = ScalarGrid::from_values(spec, dl_draw)?;

    let dl_dv = solve_raw_adjoint(&dl_draw, &tape.params)?;
    let (mut grad_positions, grad_normals) = rasterize_backward(cloud, spec, &dl_dv)?;
    for (gp, gm) in grad_positions.iter_mut().zip(&mean_pos) {
        *gp += gm;
    }
    Ok((grad_positions, grad_normals))
}

const REFERENCE_LIMIT: usize = 16;

/// Direct-summation DFT evaluation of [`solve_raw`]; O(n^2), limited to
/// `r <= 16`. Always runs in double precision.
pub fn solve_raw_reference(v: &VectorGrid, params: &SolverParams) -> Result<ScalarGrid> {
    params.validate()?;
    check_finite_vector(v)?;
    let spec = v.spec();
    let r = spec.resolution();
    if r > REFERENCE_LIMIT {
        return Err(PsrError::ReferenceTooLarge(r));
    }
    let n = spec.voxel_count();
    let freq = frequency_grid(spec);
    let kernel = gaussian_kernel(&freq, params.sigma);
    let twiddle: Vec<Complex<f64>> = (0..r)
        .map(|k| Complex::from_polar(1.0, -2.0 * PI * k as f64 / r as f64))
        .collect();
    let coords: Vec<[usize; 3]> = (0..n).map(|i| spec.coords(i)).collect();
    let phase = |x: &[usize; 3], u: &[usize; 3]| (x[0] * u[0] + x[1] * u[1] + x[2] * u[2]) % r;

    let dft = |signal: &[f64]| -> Vec<Complex<f64>> {
        coords
            .iter()
            .map(|u| {
                coords
                    .iter()
                    .zip(signal)
                    .map(|(x, &s)| twiddle[phase(x, u)] * s)
                    .sum()
            })
            .collect()
    };
    let spectra: Vec<Vec<Complex<f64>>> = (0..3).map(|d| dft(v.channel(d))).collect();

    let nyquist = -(r as i64) / 2;
    let chi_hat: Vec<Complex<f64>> = (0..n)
        .map(|i| {
            let u = freq.wavenumber(i);
            let k2 = freq.norm_sq(i);
            if k2 == 0.0 {
                return Complex::new(0.0, 0.0);
            }
            let mut dot = Complex::new(0.0, 0.0);
            for d in 0..3 {
                if u[d] != nyquist {
                    dot += spectra[d][i] * u[d] as f64;
                }
            }
            Complex::new(0.0, 1.0) * dot * (kernel[i] / (-2.0 * PI * k2))
        })
        .collect();

    let values = coords
        .iter()
        .map(|x| {
            let acc: Complex<f64> = coords
                .iter()
                .zip(&chi_hat)
                .map(|(u, c)| twiddle[phase(x, u)].conj() * c)
                .sum();
            acc.re / n as f64
        })
        .collect();
    ScalarGrid::from_values(spec, values)
}
