//! Three-dimensional complex FFT on cubical x-fastest grids.
//!
//! Forward uses `exp(-2 pi i x.u)`; the inverse applies the `1/n` factor.

use std::sync::Arc;

use num_traits::{Float, FromPrimitive};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};

pub(crate) struct Fft3<T: FftNum> {
    r: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    scratch: Vec<Complex<T>>,
    lines: Vec<Complex<T>>,
}

impl<T: FftNum + Float + FromPrimitive> Fft3<T> {
    pub(crate) fn new(r: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(r);
        let inverse = planner.plan_fft_inverse(r);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            r,
            forward,
            inverse,
            scratch: vec![Complex::new(T::zero(), T::zero()); scratch_len],
            lines: vec![Complex::new(T::zero(), T::zero()); r * r],
        }
    }

    pub(crate) fn forward(&mut self, data: &mut [Complex<T>]) {
        let plan = Arc::clone(&self.forward);
        self.transform(data, plan.as_ref());
    }

    pub(crate) fn inverse(&mut self, data: &mut [Complex<T>]) {
        let plan = Arc::clone(&self.inverse);
        self.transform(data, plan.as_ref());
        let norm = T::one() / T::from_usize(data.len()).unwrap();
        for c in data.iter_mut() {
            *c = *c * norm;
        }
    }

    fn transform(&mut self, data: &mut [Complex<T>], plan: &dyn Fft<T>) {
        let r = self.r;
        let rr = r * r;
        debug_assert_eq!(data.len(), rr * r);

        // x: contiguous rows
        plan.process_with_scratch(data, &mut self.scratch);

        // y: per z-slab, gather columns into rows
        for z in 0..r {
            let slab = &mut data[z * rr..(z + 1) * rr];
            for y in 0..r {
                for x in 0..r {
                    self.lines[x * r + y] = slab[x + r * y];
                }
            }
            plan.process_with_scratch(&mut self.lines, &mut self.scratch);
            for y in 0..r {
                for x in 0..r {
                    slab[x + r * y] = self.lines[x * r + y];
                }
            }
        }

        // z: per y, gather the (x, z) plane
        for y in 0..r {
            for z in 0..r {
                let row = &data[r * y + rr * z..r * y + rr * z + r];
                for (x, c) in row.iter().enumerate() {
                    self.lines[x * r + z] = *c;
                }
            }
            plan.process_with_scratch(&mut self.lines, &mut self.scratch);
            for z in 0..r {
                let row = &mut data[r * y + rr * z..r * y + rr * z + r];
                for (x, c) in row.iter_mut().enumerate() {
                    *c = self.lines[x * r + z];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn matches_direct_dft_and_inverts() {
        let r = 4;
        let n = r * r * r;
        let input: Vec<Complex<f64>> = (0..n)
            .map(|i| Complex::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut data = input.clone();
        let mut fft = Fft3::<f64>::new(r);
        fft.forward(&mut data);
        for u in 0..n {
            let (ux, uy, uz) = (u % r, (u / r) % r, u / (r * r));
            let mut acc = Complex::new(0.0, 0.0);
            for (x, v) in input.iter().enumerate() {
                let (xx, xy, xz) = (x % r, (x / r) % r, x / (r * r));
                let phase = -2.0 * PI * ((ux * xx + uy * xy + uz * xz) as f64) / r as f64;
                acc += v * Complex::new(phase.cos(), phase.sin());
            }
            assert!((acc - data[u]).norm() < 1e-10);
        }
        fft.inverse(&mut data);
        for (a, b) in data.iter().zip(&input) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
