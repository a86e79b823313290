//! Two-component spinor fields, Gaussian initial states and populations.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::CONSTANTS;
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::{Grid2D, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spin {
    Up,
    Down,
}

/// Gaussian wave-packet parameters (SI).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketSpec {
    pub x0c: f64,
    pub y0c: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub lambda_db: f64,
    pub alpha0: Complex64,
    pub beta0: Complex64,
}

impl PacketSpec {
    #[inline]
    pub fn k0(&self) -> f64 {
        CONSTANTS.wavenumber(self.lambda_db)
    }

    /// Kinetic energy `ħ²k₀²/2m` in joules.
    #[inline]
    pub fn energy(&self) -> f64 {
        CONSTANTS.kinetic_energy(self.lambda_db)
    }

    #[inline]
    pub fn velocity(&self) -> f64 {
        CONSTANTS.de_broglie_velocity(self.lambda_db)
    }

    pub fn spinor_norm(&self) -> f64 {
        self.alpha0.norm_sqr() + self.beta0.norm_sqr()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_x > 0.0 && self.sigma_y > 0.0 && self.lambda_db > 0.0) {
            return Err(Error::Config("packet widths and wavelength must be positive".into()));
        }
        let n = self.spinor_norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "spinor coefficients must satisfy |alpha|^2 + |beta|^2 = 1, got {n}"
            )));
        }
        Ok(())
    }
}

/// Spinor `(ψ↑, ψ↓)` sampled on a grid, 2D normalisation (`|ψ|²` in m⁻²).
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    pub grid: Grid2D,
    pub up: Vec<Complex64>,
    pub dn: Vec<Complex64>,
}

impl SpinorField {
    pub fn zeros(grid: &Grid2D) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        Self {
            grid: grid.clone(),
            up: vec![zero; grid.len()],
            dn: vec![zero; grid.len()],
        }
    }

    /// Spatially uniform spinor `f(x, y) · (a, b)`.
    pub fn from_fn(grid: &Grid2D, a: Complex64, b: Complex64, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let mut s = Self::zeros(grid);
        for iy in 0..grid.ny {
            let y = grid.y(iy);
            for ix in 0..grid.nx {
                let v = f(grid.x(ix), y);
                let i = grid.idx(ix, iy);
                s.up[i] = a * v;
                s.dn[i] = b * v;
            }
        }
        s
    }

    pub fn component(&self, spin: Spin) -> &[Complex64] {
        match spin {
            Spin::Up => &self.up,
            Spin::Down => &self.dn,
        }
    }

    pub fn component_mut(&mut self, spin: Spin) -> &mut Vec<Complex64> {
        match spin {
            Spin::Up => &mut self.up,
            Spin::Down => &mut self.dn,
        }
    }

    pub fn density(&self) -> ScalarField {
        ScalarField {
            nx: self.grid.nx,
            ny: self.grid.ny,
            values: self
                .up
                .iter()
                .zip(&self.dn)
                .map(|(u, d)| u.norm_sqr() + d.norm_sqr())
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        let (u, d) = populations(self);
        u + d
    }

    pub fn scale(&mut self, factor: f64) {
        self.up.iter_mut().chain(self.dn.iter_mut()).for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.up.iter().chain(&self.dn).all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Density-weighted `(⟨x⟩, ⟨y⟩, Var x, Var y)`.
    pub fn position_moments(&self) -> (f64, f64, f64, f64) {
        let g = &self.grid;
        let (mut m0, mut mx, mut my) = (0.0, 0.0, 0.0);
        let (mut mxx, mut myy) = (0.0, 0.0);
        for iy in 0..g.ny {
            let y = g.y(iy);
            for ix in 0..g.nx {
                let i = g.idx(ix, iy);
                let r = self.up[i].norm_sqr() + self.dn[i].norm_sqr();
                let x = g.x(ix);
                m0 += r;
                mx += r * x;
                my += r * y;
                mxx += r * x * x;
                myy += r * y * y;
            }
        }
        let (cx, cy) = (mx / m0, my / m0);
        (cx, cy, mxx / m0 - cx * cx, myy / m0 - cy * cy)
    }

    /// Norm contained in columns with `x` inside `[x_lo, x_hi)`.
    pub fn norm_in_x_range(&self, x_lo: f64, x_hi: f64) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let x = g.x(ix);
                if x >= x_lo && x < x_hi {
                    let i = g.idx(ix, iy);
                    acc += self.up[i].norm_sqr() + self.dn[i].norm_sqr();
                }
            }
        }
        acc * g.cell_area()
    }

    /// Spectral centroid `(⟨kx⟩, ⟨ky⟩)` of one spin component, from `|FFT|²`.
    pub fn momentum_centroid(&self, spin: Spin, fft: &Fft2) -> (f64, f64) {
        let g = &self.grid;
        let mut field = self.component(spin).to_vec();
        let mut spec = vec![Complex64::new(0.0, 0.0); g.len()];
        fft.forward(&mut field, &mut spec);
        let (mut m0, mut mkx, mut mky) = (0.0, 0.0, 0.0);
        for ix in 0..g.nx {
            for iy in 0..g.ny {
                let w = spec[fft.spec_index(ix, iy)].norm_sqr();
                m0 += w;
                mkx += w * g.kx[ix];
                mky += w * g.ky[iy];
            }
        }
        (mkx / m0, mky / m0)
    }
}

/// Spin populations `(P↑, P↓)` by rectangle quadrature over the periodic cell.
pub fn populations(state: &SpinorField) -> (f64, f64) {
    let area = state.grid.cell_area();
    let up: f64 = state.up.iter().map(|v| v.norm_sqr()).sum();
    let dn: f64 = state.dn.iter().map(|v| v.norm_sqr()).sum();
    (up * area, dn * area)
}

/// Normalised Gaussian spinor
/// `N·exp[-(x-x₀)²/2σx² - (y-y₀)²/2σy²]·exp[ik₀(x-x₀)]·(α₀, β₀)`.
pub fn init_gaussian_spinor(grid: &Grid2D, spec: &PacketSpec) -> Result<SpinorField> {
    spec.validate()?;
    let (sx, sy) = (spec.sigma_x, spec.sigma_y);
    if spec.x0c - 4.0 * sx < grid.x0
        || spec.x0c + 4.0 * sx > grid.x_max()
        || spec.y0c - 4.0 * sy < grid.y0
        || spec.y0c + 4.0 * sy > grid.y_max()
    {
        return Err(Error::Geometry(format!(
            "packet centre ({:.4e}, {:.4e}) is closer than 4 sigma to the grid boundary",
            spec.x0c, spec.y0c
        )));
    }
    let k0 = spec.k0();
    let envelope_x: Vec<Complex64> = (0..grid.nx)
        .map(|ix| {
            let u = grid.x(ix) - spec.x0c;
            Complex64::from_polar((-u * u / (2.0 * sx * sx)).exp(), k0 * u)
        })
        .collect();
    let envelope_y: Vec<f64> = (0..grid.ny)
        .map(|iy| {
            let v = grid.y(iy) - spec.y0c;
            (-v * v / (2.0 * sy * sy)).exp()
        })
        .collect();

    let sum_x: f64 = envelope_x.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.dx;
    let sum_y: f64 = envelope_y.iter().map(|v| v * v).sum::<f64>() * grid.dy;
    let continuous = std::f64::consts::PI * sx * sy;
    let deficit = 1.0 - sum_x * sum_y / continuous;
    if deficit > 1e-6 {
        return Err(Error::Geometry(format!(
            "packet clipped by grid: norm deficit {deficit:.3e}"
        )));
    }
    let n = 1.0 / (sum_x * sum_y).sqrt();

    let mut state = SpinorField::zeros(grid);
    for (iy, ey) in envelope_y.iter().enumerate() {
        for (ix, ex) in envelope_x.iter().enumerate() {
            let v = ex * (n * ey);
            let i = grid.idx(ix, iy);
            state.up[i] = spec.alpha0 * v;
            state.dn[i] = spec.beta0 * v;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn packet(alpha: Complex64, beta: Complex64) -> (Grid2D, PacketSpec) {
        let grid = make_grid(60e-9, 200e-9, 0.25e-9).unwrap().with_origin(0.0, -100e-9);
        let spec = PacketSpec {
            x0c: 30e-9,
            y0c: 0.0,
            sigma_x: 5e-9,
            sigma_y: 20e-9,
            lambda_db: 2.73e-9,
            alpha0: alpha,
            beta0: beta,
        };
        (grid, spec)
    }

    #[test]
    fn pure_up() {
        let (g, s) = packet(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        let st = init_gaussian_spinor(&g, &s).unwrap();
        let (u, d) = populations(&st);
        assert!((u - 1.0).abs() < 1e-10);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn three_quarter_split() {
        let (g, s) = packet(Complex64::new(3f64.sqrt() / 2.0, 0.0), Complex64::new(0.5, 0.0));
        let st = init_gaussian_spinor(&g, &s).unwrap();
        let (u, d) = populations(&st);
        assert!((u - 0.75).abs() < 1e-10);
        assert!((d - 0.25).abs() < 1e-10);
        assert!((st.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sigma_y_eigenstate_is_balanced() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (g, s) = packet(Complex64::new(h, 0.0), Complex64::new(0.0, h));
        let st = init_gaussian_spinor(&g, &s).unwrap();
        let (u, d) = populations(&st);
        assert!((u - 0.5).abs() < 1e-10 && (d - 0.5).abs() < 1e-10);
    }

    #[test]
    fn clipped_packet_is_rejected() {
        let (g, mut s) = packet(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        s.x0c = 10e-9;
        assert!(matches!(init_gaussian_spinor(&g, &s), Err(Error::Geometry(_))));
        s.x0c = 30e-9;
        s.y0c = 30e-9;
        assert!(matches!(init_gaussian_spinor(&g, &s), Err(Error::Geometry(_))));
    }

    #[test]
    fn unnormalised_spinor_is_rejected() {
        let (g, s) = packet(Complex64::new(1.0, 0.0), Complex64::new(0.1, 0.0));
        assert!(matches!(init_gaussian_spinor(&g, &s), Err(Error::Config(_))));
    }

    #[test]
    fn measured_width_matches() {
        let (g, s) = packet(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        let st = init_gaussian_spinor(&g, &s).unwrap();
        let (cx, cy, vx, vy) = st.position_moments();
        assert!((cx - s.x0c).abs() < 1e-12);
        assert!(cy.abs() < 1e-12);
        // |ψ|² ∝ exp(-y²/σ²) has variance σ²/2
        assert!(((2.0 * vy).sqrt() / s.sigma_y - 1.0).abs() < 0.01);
        assert!(((2.0 * vx).sqrt() / s.sigma_x - 1.0).abs() < 0.01);
    }
}
