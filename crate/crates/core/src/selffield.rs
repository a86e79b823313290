//! Pauli charge-current density and the Coulomb-gauge magnetostatic solve
//! for the self-generated vector potential and out-of-plane field.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::CONSTANTS;
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::{ddx, ddy, Grid2D, ScalarField};
use crate::spinor::SpinorField;

/// In-plane vector field `(F_x, F_y)` in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: &Grid2D) -> Self {
        Self {
            x: vec![0.0; grid.len()],
            y: vec![0.0; grid.len()],
        }
    }

    pub fn uniform(grid: &Grid2D, fx: f64, fy: f64) -> Self {
        Self {
            x: vec![fx; grid.len()],
            y: vec![fy; grid.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.x.iter().chain(&self.y).fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.x.iter().chain(&self.y).all(|&v| v == 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            x: self.x.iter().map(|v| v * s).collect(),
            y: self.y.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &VectorField) {
        self.x.iter_mut().zip(&other.x).for_each(|(a, b)| *a += b);
        self.y.iter_mut().zip(&other.y).for_each(|(a, b)| *a += b);
    }
}

/// Local spin density `S = Ψ†σΨ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinDensityField {
    pub sx: ScalarField,
    pub sy: ScalarField,
    pub sz: ScalarField,
}

pub fn spin_density(state: &SpinorField) -> SpinDensityField {
    let n = state.up.len();
    let (mut sx, mut sy, mut sz) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (u, d) in state.up.iter().zip(&state.dn) {
        let c = u.conj() * d;
        sx.push(2.0 * c.re);
        sy.push(2.0 * c.im);
        sz.push(u.norm_sqr() - d.norm_sqr());
    }
    let wrap = |values| ScalarField {
        nx: state.grid.nx,
        ny: state.grid.ny,
        values,
    };
    SpinDensityField {
        sx: wrap(sx),
        sy: wrap(sy),
        sz: wrap(sz),
    }
}

/// Which contributions enter the charge current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurrentTerms {
    pub paramagnetic: bool,
    pub diamagnetic: bool,
    pub magnetization: bool,
}

impl Default for CurrentTerms {
    fn default() -> Self {
        Self {
            paramagnetic: true,
            diamagnetic: true,
            magnetization: true,
        }
    }
}

/// 2D charge-current density (A/m) with its three contributions kept apart.
/// Each part already carries the `-e` prefactor.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentField {
    pub total: VectorField,
    pub paramagnetic: Option<VectorField>,
    pub diamagnetic: Option<VectorField>,
    pub magnetization: Option<VectorField>,
}

/// `J = -e[(ħ/m)Σ Im(ψ*∇ψ) - (e/m)Aρ + (ħ/2m)∇×S]` with centred differences;
/// in 2D `(∇×S)_x = ∂_y S_z` and `(∇×S)_y = -∂_x S_z`.
pub fn current_density(
    state: &SpinorField,
    a_total: Option<&VectorField>,
    terms: CurrentTerms,
) -> Result<CurrentField> {
    let g = &state.grid;
    let n = g.len();
    if let Some(a) = a_total {
        if a.len() != n || a.y.len() != n {
            return Err(Error::Dimension(format!(
                "vector potential has {} points, state grid has {n}",
                a.len()
            )));
        }
    }
    let c = &CONSTANTS;
    let q = -c.e;
    let (nx, ny) = (g.nx, g.ny);

    let paramagnetic = terms.paramagnetic.then(|| {
        let (hx, hy) = (0.5 / g.dx, 0.5 / g.dy);
        let pref = q * c.hbar / c.m_e;
        let mut out = VectorField::zeros(g);
        for iy in 0..ny {
            let up_row = if iy + 1 == ny { 0 } else { iy + 1 };
            let dn_row = if iy == 0 { ny - 1 } else { iy - 1 };
            for ix in 0..nx {
                let r = if ix + 1 == nx { 0 } else { ix + 1 };
                let l = if ix == 0 { nx - 1 } else { ix - 1 };
                let i = iy * nx + ix;
                let mut jx = 0.0;
                let mut jy = 0.0;
                for psi in [&state.up, &state.dn] {
                    let p = psi[i].conj();
                    jx += (p * (psi[iy * nx + r] - psi[iy * nx + l])).im * hx;
                    jy += (p * (psi[up_row * nx + ix] - psi[dn_row * nx + ix])).im * hy;
                }
                out.x[i] = pref * jx;
                out.y[i] = pref * jy;
            }
        }
        out
    });

    let diamagnetic = match (terms.diamagnetic, a_total) {
        (true, Some(a)) => {
            let pref = -q * c.e / c.m_e;
            let rho = state.density();
            Some(VectorField {
                x: a.x.iter().zip(&rho.values).map(|(a, r)| pref * a * r).collect(),
                y: a.y.iter().zip(&rho.values).map(|(a, r)| pref * a * r).collect(),
            })
        }
        (true, None) => Some(VectorField::zeros(g)),
        _ => None,
    };

    let magnetization = terms.magnetization.then(|| {
        let sz: Vec<f64> = state
            .up
            .iter()
            .zip(&state.dn)
            .map(|(u, d)| u.norm_sqr() - d.norm_sqr())
            .collect();
        let pref = q * c.hbar / (2.0 * c.m_e);
        let dsz_dy = ddy(&sz, g);
        let dsz_dx = ddx(&sz, g);
        VectorField {
            x: dsz_dy.iter().map(|v| pref * v).collect(),
            y: dsz_dx.iter().map(|v| -pref * v).collect(),
        }
    });

    let mut total = VectorField::zeros(g);
    for part in [&paramagnetic, &diamagnetic, &magnetization].into_iter().flatten() {
        total.add_assign(part);
    }
    Ok(CurrentField {
        total,
        paramagnetic,
        diamagnetic,
        magnetization,
    })
}

/// Total current only, in one fused pass (no per-term storage).
pub fn current_total(state: &SpinorField, a_total: Option<&VectorField>, terms: CurrentTerms) -> Result<VectorField> {
    let g = &state.grid;
    let n = g.len();
    if let Some(a) = a_total {
        if a.len() != n || a.y.len() != n {
            return Err(Error::Dimension(format!(
                "vector potential has {} points, state grid has {n}",
                a.len()
            )));
        }
    }
    let c = &CONSTANTS;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (0.5 / g.dx, 0.5 / g.dy);
    let para = -c.e * c.hbar / c.m_e;
    let dia = c.e * c.e / c.m_e;
    let mag = -c.e * c.hbar / (2.0 * c.m_e);
    let sz = |i: usize| state.up[i].norm_sqr() - state.dn[i].norm_sqr();

    let mut out = VectorField::zeros(g);
    out.x
        .par_chunks_mut(nx)
        .zip(out.y.par_chunks_mut(nx))
        .enumerate()
        .for_each(|(iy, (ox, oy))| {
            let up_row = if iy + 1 == ny { 0 } else { iy + 1 };
            let dn_row = if iy == 0 { ny - 1 } else { iy - 1 };
            for ix in 0..nx {
                let r = if ix + 1 == nx { 0 } else { ix + 1 };
                let l = if ix == 0 { nx - 1 } else { ix - 1 };
                let i = iy * nx + ix;
                let (ir, il) = (iy * nx + r, iy * nx + l);
                let (iu, id) = (up_row * nx + ix, dn_row * nx + ix);
                let (mut jx, mut jy) = (0.0, 0.0);
                if terms.paramagnetic {
                    for psi in [&state.up, &state.dn] {
                        let p = psi[i].conj();
                        jx += para * (p * (psi[ir] - psi[il])).im * hx;
                        jy += para * (p * (psi[iu] - psi[id])).im * hy;
                    }
                }
                if terms.diamagnetic {
                    if let Some(a) = a_total {
                        let rho = state.up[i].norm_sqr() + state.dn[i].norm_sqr();
                        jx += dia * a.x[i] * rho;
                        jy += dia * a.y[i] * rho;
                    }
                }
                if terms.magnetization {
                    jx += mag * (sz(iu) - sz(id)) * hy;
                    jy -= mag * (sz(ir) - sz(il)) * hx;
                }
                ox[ix] = jx;
                oy[ix] = jy;
            }
        });
    Ok(out)
}

/// Self-generated vector potential (T·m) and out-of-plane field (T).
#[derive(Debug, Clone, PartialEq)]
pub struct SelfFieldSolution {
    pub a: VectorField,
    pub bz: ScalarField,
}

impl SelfFieldSolution {
    pub fn zeros(grid: &Grid2D) -> Self {
        Self {
            a: VectorField::zeros(grid),
            bz: ScalarField::zeros(grid),
        }
    }

    pub fn peak_bz(&self) -> f64 {
        self.bz.max_abs()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurlMethod {
    #[default]
    Spectral,
    CenteredDifference,
}

/// Fourier-space magnetostatic solver `Ã = μ₀ P_T J̃ / k²` with the `k = 0`
/// mode (and the Nyquist lines) removed.
pub struct SelfFieldSolver {
    grid: Grid2D,
    fft: Arc<Fft2>,
    curl: CurlMethod,
    work: Vec<Complex64>,
    spec: Vec<Complex64>,
}

impl std::fmt::Debug for SelfFieldSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SelfFieldSolver")
            .field("nx", &self.grid.nx)
            .field("ny", &self.grid.ny)
            .field("curl", &self.curl)
            .finish()
    }
}

#[inline]
fn is_nyquist(i: usize, n: usize) -> bool {
    n % 2 == 0 && i == n / 2
}

impl SelfFieldSolver {
    pub fn new(grid: &Grid2D, fft: Arc<Fft2>, curl: CurlMethod) -> Self {
        Self {
            grid: grid.clone(),
            fft,
            curl,
            work: Vec::new(),
            spec: Vec::new(),
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn solve(&mut self, j: &VectorField) -> Result<SelfFieldSolution> {
        let g = &self.grid;
        let n = g.len();
        if j.len() != n {
            return Err(Error::Dimension(format!("current has {} points, grid has {n}", j.len())));
        }
        let (nx, ny) = (g.nx, g.ny);
        self.work.resize(n, Complex64::new(0.0, 0.0));
        self.spec.resize(n, Complex64::new(0.0, 0.0));

        // pack both real components into one complex transform
        for (w, (a, b)) in self.work.iter_mut().zip(j.x.iter().zip(&j.y)) {
            *w = Complex64::new(*a, *b);
        }
        self.fft.forward(&mut self.work, &mut self.spec);

        let mu0 = CONSTANTS.mu0;
        let half_i = Complex64::new(0.0, 0.5);
        // work ← Ãx + iÃy (spectrum order); spec is read-only for mirrors
        for ix in 0..nx {
            let mx = (nx - ix) % nx;
            let kx = g.kx[ix];
            for iy in 0..ny {
                let k = self.fft.spec_index(ix, iy);
                if (ix == 0 && iy == 0) || is_nyquist(ix, nx) || is_nyquist(iy, ny) {
                    self.work[k] = Complex64::new(0.0, 0.0);
                    continue;
                }
                let my = (ny - iy) % ny;
                let h = self.spec[k];
                let hm = self.spec[self.fft.spec_index(mx, my)].conj();
                let jx = (h + hm) * 0.5;
                let jy = (h - hm) * -half_i;
                let ky = g.ky[iy];
                let k2 = kx * kx + ky * ky;
                let dot = (jx * kx + jy * ky) / k2;
                let ax = (jx - dot * kx) * (mu0 / k2);
                let ay = (jy - dot * ky) * (mu0 / k2);
                self.work[k] = ax + Complex64::i() * ay;
            }
        }

        // curl in spectral space needs separated components; build B̃z before
        // the inverse consumes the packed buffer
        if self.curl == CurlMethod::Spectral {
            for ix in 0..nx {
                let mx = (nx - ix) % nx;
                let kx = g.kx[ix];
                for iy in 0..ny {
                    let k = self.fft.spec_index(ix, iy);
                    let my = (ny - iy) % ny;
                    let p = self.work[k];
                    let pm = self.work[self.fft.spec_index(mx, my)].conj();
                    let ax = (p + pm) * 0.5;
                    let ay = (p - pm) * -half_i;
                    self.spec[k] = Complex64::i() * (ay * kx - ax * g.ky[iy]);
                }
            }
        }

        let mut packed = vec![Complex64::new(0.0, 0.0); n];
        self.fft.inverse(&mut self.work, &mut packed);
        let a = VectorField {
            x: packed.iter().map(|v| v.re).collect(),
            y: packed.iter().map(|v| v.im).collect(),
        };

        let bz = match self.curl {
            CurlMethod::Spectral => {
                self.fft.inverse(&mut self.spec, &mut packed);
                packed.iter().map(|v| v.re).collect()
            }
            CurlMethod::CenteredDifference => {
                let day = ddx(&a.y, g);
                let dax = ddy(&a.x, g);
                day.iter().zip(&dax).map(|(p, q)| p - q).collect()
            }
        };
        Ok(SelfFieldSolution {
            a,
            bz: ScalarField {
                nx,
                ny,
                values: bz,
            },
        })
    }
}

/// One-shot solve on a fresh solver.
pub fn solve_vector_potential(grid: &Grid2D, j: &CurrentField, curl: CurlMethod) -> Result<SelfFieldSolution> {
    let fft = Arc::new(Fft2::new(grid.nx, grid.ny));
    SelfFieldSolver::new(grid, fft, curl).solve(&j.total)
}

/// Spectral `(∂x f, ∂y f)` of a real periodic field, Nyquist derivative zeroed.
pub fn spectral_gradient(field: &[f64], grid: &Grid2D, fft: &Fft2) -> (Vec<f64>, Vec<f64>) {
    let n = grid.len();
    let mut work: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    fft.forward(&mut work, &mut spec);
    let mut dx_spec = spec.clone();
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            let k = fft.spec_index(ix, iy);
            let kx = if is_nyquist(ix, grid.nx) { 0.0 } else { grid.kx[ix] };
            let ky = if is_nyquist(iy, grid.ny) { 0.0 } else { grid.ky[iy] };
            dx_spec[k] = spec[k] * Complex64::new(0.0, kx);
            spec[k] *= Complex64::new(0.0, ky);
        }
    }
    fft.inverse(&mut dx_spec, &mut work);
    let gx = work.iter().map(|v| v.re).collect();
    fft.inverse(&mut spec, &mut work);
    let gy = work.iter().map(|v| v.re).collect();
    (gx, gy)
}
