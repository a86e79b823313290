//! Batched 2D FFTs built from 1D `rustfft` plans.
//!
//! Real-space fields are row-major (`iy * nx + ix`). Spectra are stored
//! transposed (`ix * ny + iy`) so that a forward/inverse pair needs only one
//! transpose each way; use [`Fft2::spec_index`] to address them.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

const BATCH_ROWS: usize = 32;
const TILE: usize = 32;

pub struct Fft2 {
    nx: usize,
    ny: usize,
    x_fwd: Arc<dyn Fft<f64>>,
    x_inv: Arc<dyn Fft<f64>>,
    y_fwd: Arc<dyn Fft<f64>>,
    y_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("nx", &self.nx).field("ny", &self.ny).finish()
    }
}

/// Runs `fft` over every contiguous `len`-sized row of `data`.
pub fn batch_rows(fft: &Arc<dyn Fft<f64>>, data: &mut [Complex64], len: usize) {
    let scratch_len = fft.get_inplace_scratch_len();
    data.par_chunks_mut(len * BATCH_ROWS).for_each_init(
        || vec![Complex64::new(0.0, 0.0); scratch_len],
        |scratch, chunk| fft.process_with_scratch(chunk, scratch),
    );
}

/// Out-of-place transpose of a `rows × cols` row-major matrix.
pub fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    // dst is cols × rows; split it by output row tiles so writes never alias.
    dst.par_chunks_mut(rows * TILE).enumerate().for_each(|(tile, out)| {
        let c0 = tile * TILE;
        let c1 = (c0 + TILE).min(cols);
        for r0 in (0..rows).step_by(TILE) {
            let r1 = (r0 + TILE).min(rows);
            for c in c0..c1 {
                let o = &mut out[(c - c0) * rows..(c - c0 + 1) * rows];
                for r in r0..r1 {
                    o[r] = src[r * cols + c];
                }
            }
        }
    });
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            x_fwd: planner.plan_fft_forward(nx),
            x_inv: planner.plan_fft_inverse(nx),
            y_fwd: planner.plan_fft_forward(ny),
            y_inv: planner.plan_fft_inverse(ny),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position of mode `(ix, iy)` in a spectrum buffer.
    #[inline]
    pub fn spec_index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    /// Unnormalised forward transform. `field` is used as workspace and is
    /// left holding the x-transformed rows.
    pub fn forward(&self, field: &mut [Complex64], spectrum: &mut [Complex64]) {
        assert_eq!(field.len(), self.len());
        assert_eq!(spectrum.len(), self.len());
        batch_rows(&self.x_fwd, field, self.nx);
        transpose(field, spectrum, self.ny, self.nx);
        batch_rows(&self.y_fwd, spectrum, self.ny);
    }

    /// Normalised inverse transform (`inverse(forward(f)) == f`). `spectrum` is
    /// used as workspace.
    pub fn inverse(&self, spectrum: &mut [Complex64], field: &mut [Complex64]) {
        assert_eq!(field.len(), self.len());
        assert_eq!(spectrum.len(), self.len());
        batch_rows(&self.y_inv, spectrum, self.ny);
        transpose(spectrum, field, self.nx, self.ny);
        batch_rows(&self.x_inv, field, self.nx);
        let scale = 1.0 / self.len() as f64;
        field.par_iter_mut().for_each(|v| *v *= scale);
    }

    /// In-place `field ← IFFT(multiplier · FFT(field))`, with the multiplier in
    /// spectrum order.
    pub fn apply_diagonal(&self, field: &mut [Complex64], multiplier: &[Complex64], work: &mut [Complex64]) {
        assert_eq!(multiplier.len(), self.len());
        self.forward(field, work);
        work.par_iter_mut().zip(multiplier.par_iter()).for_each(|(w, m)| *w *= m);
        self.inverse(work, field);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft2(data: &[Complex64], nx: usize, ny: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); nx * ny];
        for kx in 0..nx {
            for ky in 0..ny {
                let mut acc = Complex64::new(0.0, 0.0);
                for iy in 0..ny {
                    for ix in 0..nx {
                        let ph = -2.0 * std::f64::consts::PI
                            * ((kx * ix) as f64 / nx as f64 + (ky * iy) as f64 / ny as f64);
                        acc += data[iy * nx + ix] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[kx * ny + ky] = acc;
            }
        }
        out
    }

    fn sample(nx: usize, ny: usize) -> Vec<Complex64> {
        (0..nx * ny)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos() - 0.2))
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let (nx, ny) = (12, 10);
        let data = sample(nx, ny);
        let fft = Fft2::new(nx, ny);
        let mut field = data.clone();
        let mut spectrum = vec![Complex64::new(0.0, 0.0); nx * ny];
        fft.forward(&mut field, &mut spectrum);
        let reference = naive_dft2(&data, nx, ny);
        for (a, b) in spectrum.iter().zip(reference.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn round_trip() {
        let (nx, ny) = (48, 90);
        let data = sample(nx, ny);
        let fft = Fft2::new(nx, ny);
        let mut field = data.clone();
        let mut spectrum = vec![Complex64::new(0.0, 0.0); nx * ny];
        fft.forward(&mut field, &mut spectrum);
        fft.inverse(&mut spectrum, &mut field);
        let scale = data.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in field.iter().zip(data.iter()) {
            assert!((a - b).norm() < 1e-12 * scale);
        }
    }

    #[test]
    fn transpose_rectangular() {
        let (rows, cols) = (37, 70);
        let src: Vec<Complex64> = (0..rows * cols).map(|i| Complex64::new(i as f64, 0.0)).collect();
        let mut dst = vec![Complex64::new(0.0, 0.0); rows * cols];
        transpose(&src, &mut dst, rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                assert_eq!(dst[c * rows + r], src[r * cols + c]);
            }
        }
    }
}
