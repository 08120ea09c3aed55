//! Zero-padded 2D FFT convolution of equally sized integer images.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Rounding grid applied to every convolution output.
pub const ROUNDING: f64 = 1e-9;
const STEPS_PER_UNIT: f64 = 1e9;

pub(crate) fn round_to_grid(v: f64) -> f64 {
    // Dividing the rounded integer returns exact integers exactly; this also
    // clears negative zeros.
    let r = (v * STEPS_PER_UNIT).round() / STEPS_PER_UNIT;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// FFT plans for linear convolution of `width x height` images.
///
/// The transform grid is at least `(2w - 1) x (2h - 1)` so circular
/// wrap-around never reaches the kept lags.
pub struct Convolver {
    width: usize,
    height: usize,
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .finish()
    }
}

impl Convolver {
    pub fn new(width: usize, height: usize) -> Self {
        let nx = (2 * width - 1).next_power_of_two();
        let ny = (2 * height - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        Convolver {
            width,
            height,
            nx,
            ny,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Lag-grid dimensions `(2w - 1, 2h - 1)`.
    pub fn lag_dims(&self) -> (usize, usize) {
        (2 * self.width - 1, 2 * self.height - 1)
    }

    /// Spectrum of a row-major `width x height` image.
    pub fn spectrum(&self, values: &[u32]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.width * self.height);
        let (nx, ny) = (self.nx, self.ny);
        let mut buf = vec![Complex64::new(0.0, 0.0); nx * ny];
        for y in 0..self.height {
            let row = &mut buf[y * nx..y * nx + nx];
            for (dst, &v) in row.iter_mut().zip(&values[y * self.width..(y + 1) * self.width]) {
                dst.re = v as f64;
            }
        }
        // Rows past `height` are zero and stay zero.
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fwd_x.get_inplace_scratch_len()];
        for row in buf[..self.height * nx].chunks_exact_mut(nx) {
            self.fwd_x.process_with_scratch(row, &mut scratch);
        }
        self.columns(&mut buf, &self.fwd_y);
        buf
    }

    /// Inverse transform cropped to the lag grid, scaled and rounded.
    pub fn lags(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        debug_assert_eq!(spectrum.len(), nx * ny);
        self.columns(&mut spectrum, &self.inv_y);
        let (lw, lh) = self.lag_dims();
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inv_x.get_inplace_scratch_len()];
        let scale = 1.0 / (nx * ny) as f64;
        let mut out = Vec::with_capacity(lw * lh);
        for row in spectrum[..lh * nx].chunks_exact_mut(nx) {
            self.inv_x.process_with_scratch(row, &mut scratch);
            out.extend(row[..lw].iter().map(|c| round_to_grid(c.re * scale)));
        }
        out
    }

    fn columns(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let (nx, ny) = (self.nx, self.ny);
        let mut col = vec![Complex64::new(0.0, 0.0); ny];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for x in 0..nx {
            for (y, c) in col.iter_mut().enumerate() {
                *c = buf[y * nx + x];
            }
            plan.process_with_scratch(&mut col, &mut scratch);
            for (y, c) in col.iter().enumerate() {
                buf[y * nx + x] = *c;
            }
        }
    }

    /// `sum_r a(r) b(s - r)` on the lag grid.
    pub fn convolve(&self, a: &[u32], b: &[u32]) -> Vec<f64> {
        let fa = self.spectrum(a);
        if std::ptr::eq(a, b) {
            return self.lags(fa.iter().map(|z| z * z).collect());
        }
        let fb = self.spectrum(b);
        self.lags(fa.iter().zip(&fb).map(|(x, y)| x * y).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_grid_restores_integers() {
        assert_eq!(round_to_grid(3.0000000000004), 3.0);
        assert_eq!(round_to_grid(29.99999999999), 30.0);
        assert_eq!(round_to_grid(-1e-13), 0.0);
        assert!(round_to_grid(-1e-13).is_sign_positive());
    }

    #[test]
    fn one_by_one_image_squares() {
        let c = Convolver::new(1, 1);
        assert_eq!(c.lag_dims(), (1, 1));
        assert_eq!(c.convolve(&[7], &[3]), vec![21.0]);
    }
}
