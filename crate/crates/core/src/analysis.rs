//! Observables: far-field screen profiles, σ_y readout, flip probabilities,
//! transmission, fringe width, closed-form magnet formulas and Husimi maps.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::constants::CONSTANTS;
use crate::error::{Error, Result};
use crate::grid::{fft_wavenumbers, next_smooth};
use crate::potentials::GratingSpec;
use crate::propagator::zeeman_kick;
use crate::spinor::{Spin, SpinorField};

/// Default slab-density ceiling below which the packet counts as cleared.
pub const CLEAR_THRESHOLD: f64 = 1e-4;

/// One transverse column `ψ(x_j, ·)` with its quadrature weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceColumn {
    pub weight: f64,
    pub up: Vec<Complex64>,
    pub dn: Vec<Complex64>,
}

/// Transverse profile at the snapshot plane, as an incoherent set of
/// columns. A set of downstream columns gives screen intensities integrated
/// over the packet's arrival time; a single column is what the Husimi maps use.
#[derive(Debug, Clone, PartialEq)]
pub struct TransverseSlice {
    pub y0: f64,
    pub dy: f64,
    pub columns: Vec<SliceColumn>,
}

impl TransverseSlice {
    pub fn from_amplitudes(y0: f64, dy: f64, up: Vec<Complex64>, dn: Vec<Complex64>) -> Result<Self> {
        if up.len() != dn.len() || up.is_empty() {
            return Err(Error::Dimension(format!(
                "spin components have lengths {} and {}",
                up.len(),
                dn.len()
            )));
        }
        Ok(Self {
            y0,
            dy,
            columns: vec![SliceColumn { weight: 1.0, up, dn }],
        })
    }

    /// All columns with `x >= x_min`, weighted by `dx`.
    pub fn downstream(state: &SpinorField, x_min: f64) -> Result<Self> {
        let g = &state.grid;
        let columns: Vec<SliceColumn> = (0..g.nx)
            .filter(|&ix| g.x(ix) >= x_min)
            .map(|ix| SliceColumn {
                weight: g.dx,
                up: (0..g.ny).map(|iy| state.up[g.idx(ix, iy)]).collect(),
                dn: (0..g.ny).map(|iy| state.dn[g.idx(ix, iy)]).collect(),
            })
            .collect();
        if columns.is_empty() {
            return Err(Error::Geometry(format!("no grid columns beyond x = {x_min:.4e} m")));
        }
        Ok(Self {
            y0: g.y0,
            dy: g.dy,
            columns,
        })
    }

    /// The single column nearest to `x`, with unit weight.
    pub fn column(state: &SpinorField, x: f64) -> Self {
        let g = &state.grid;
        let ix = g.column_of(x);
        Self {
            y0: g.y0,
            dy: g.dy,
            columns: vec![SliceColumn {
                weight: 1.0,
                up: (0..g.ny).map(|iy| state.up[g.idx(ix, iy)]).collect(),
                dn: (0..g.ny).map(|iy| state.dn[g.idx(ix, iy)]).collect(),
            }],
        }
    }

    pub fn ny(&self) -> usize {
        self.columns.first().map_or(0, |c| c.up.len())
    }

    pub fn y(&self, iy: usize) -> f64 {
        self.y0 + iy as f64 * self.dy
    }

    /// `Σ_j w_j ∫(|ψ↑|² + |ψ↓|²) dy`.
    pub fn norm(&self) -> f64 {
        self.columns
            .iter()
            .map(|c| {
                let s: f64 = c.up.iter().chain(&c.dn).map(|v| v.norm_sqr()).sum();
                c.weight * s * self.dy
            })
            .sum()
    }

    /// Gradient-stage imprint applied to every column; see
    /// [`crate::propagator::apply_b2_phase`].
    pub fn apply_b2_phase(&mut self, g2: f64, l_b2: f64, v_x: f64, y_ref: f64) -> Result<()> {
        if !(v_x > 0.0) {
            return Err(Error::Config(format!("beam velocity must be positive, got {v_x}")));
        }
        let kappa = zeeman_kick(g2, l_b2, v_x);
        let (y0, dy) = (self.y0, self.dy);
        for c in &mut self.columns {
            for (iy, (u, d)) in c.up.iter_mut().zip(c.dn.iter_mut()).enumerate() {
                let ph = Complex64::from_polar(1.0, kappa * (y0 + iy as f64 * dy - y_ref));
                *u *= ph;
                *d *= ph.conj();
            }
        }
        Ok(())
    }
}

/// Screen intensities (1/m) after a ballistic drift of `l_gs` at `v_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarFieldProfile {
    pub y_scr: Vec<f64>,
    pub ky: Vec<f64>,
    pub i_up: Vec<f64>,
    pub i_dn: Vec<f64>,
    pub i_py: Vec<f64>,
    pub i_ny: Vec<f64>,
    pub t_scr: f64,
    pub l_gs: f64,
}

impl FarFieldProfile {
    pub fn len(&self) -> usize {
        self.y_scr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_scr.is_empty()
    }

    pub fn screen_step(&self) -> f64 {
        self.y_scr[1] - self.y_scr[0]
    }

    pub fn total(&self) -> Vec<f64> {
        self.i_up.iter().zip(&self.i_dn).map(|(a, b)| a + b).collect()
    }

    /// `∫(I↑ + I↓) dy_scr`.
    pub fn integral(&self) -> f64 {
        (self.i_up.iter().sum::<f64>() + self.i_dn.iter().sum::<f64>()) * self.screen_step()
    }

    /// Fractions of screen intensity in the up and down channels.
    pub fn channel_fractions(&self) -> Result<(f64, f64)> {
        let p_dn = flip_probability(&self.i_up, &self.i_dn)?;
        Ok((1.0 - p_dn, p_dn))
    }

    /// Intensity-weighted screen centroid of one spin channel.
    pub fn centroid(&self, spin: Spin) -> Result<f64> {
        let i = match spin {
            Spin::Up => &self.i_up,
            Spin::Down => &self.i_dn,
        };
        let m0: f64 = i.iter().sum();
        if !(m0 > 0.0) {
            return Err(Error::Undefined(format!("{spin:?} channel carries no intensity")));
        }
        Ok(i.iter().zip(&self.y_scr).map(|(a, y)| a * y).sum::<f64>() / m0)
    }

    /// `P_{+y→-y}`: share of the screen intensity in the `-y` readout channel.
    pub fn flip_probability_y(&self) -> Result<f64> {
        flip_probability(&self.i_py, &self.i_ny)
    }
}

/// Intensities along `|±y⟩ = (1, ±i)/√2`: `(|ψ↑ - iψ↓|²/2, |ψ↑ + iψ↓|²/2)`.
pub fn sigma_y_projection(up: &[Complex64], dn: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    let i = Complex64::i();
    up.iter()
        .zip(dn)
        .map(|(u, d)| (0.5 * (u - i * d).norm_sqr(), 0.5 * (u + i * d).norm_sqr()))
        .unzip()
}

/// Zero-padded 1D transform per column, mapped to the screen with
/// `y_scr = ħk_yT/m` and `I = (m/ħT)|ψ̃|²`, `ψ̃ = (2π)^{-1/2}∫ψe^{-ik_y y}dy`.
pub fn far_field(slice: &TransverseSlice, l_gs: f64, v_x: f64, pad: usize) -> Result<FarFieldProfile> {
    if !(v_x > 0.0) || !(l_gs > 0.0) {
        return Err(Error::Config(format!(
            "far field needs positive drift length and speed, got {l_gs} m, {v_x} m/s"
        )));
    }
    let ny = slice.ny();
    if ny == 0 {
        return Err(Error::Dimension("empty transverse slice".into()));
    }
    let c = &CONSTANTS;
    let m = next_smooth(ny * pad.max(1));
    let t_scr = l_gs / v_x;
    let plan = FftPlanner::new().plan_fft_forward(m);
    let amp2 = slice.dy * slice.dy / (2.0 * PI);
    let screen = c.m_e / (c.hbar * t_scr);

    let mut acc = vec![[0.0_f64; 4]; m];
    // fixed-size chunks summed in order keep the result thread-count independent
    for chunk in slice.columns.chunks(32) {
        let parts: Vec<Vec<[f64; 4]>> = chunk
            .par_iter()
            .map(|col| column_spectrum(col, m, &plan, amp2 * col.weight))
            .collect();
        for part in parts {
            for (a, p) in acc.iter_mut().zip(&part) {
                for q in 0..4 {
                    a[q] += p[q];
                }
            }
        }
    }

    let k = fft_wavenumbers(m, slice.dy);
    let start = m.div_ceil(2);
    let order: Vec<usize> = (start..m).chain(0..start).collect();
    let pick = |q: usize| order.iter().map(|&i| acc[i][q] * screen).collect::<Vec<_>>();
    Ok(FarFieldProfile {
        ky: order.iter().map(|&i| k[i]).collect(),
        y_scr: order.iter().map(|&i| c.hbar * k[i] * t_scr / c.m_e).collect(),
        i_up: pick(0),
        i_dn: pick(1),
        i_py: pick(2),
        i_ny: pick(3),
        t_scr,
        l_gs,
    })
}

fn column_spectrum(col: &SliceColumn, m: usize, plan: &Arc<dyn Fft<f64>>, scale: f64) -> Vec<[f64; 4]> {
    let mut u = vec![Complex64::new(0.0, 0.0); m];
    let mut d = vec![Complex64::new(0.0, 0.0); m];
    u[..col.up.len()].copy_from_slice(&col.up);
    d[..col.dn.len()].copy_from_slice(&col.dn);
    plan.process(&mut u);
    plan.process(&mut d);
    let (py, ny) = sigma_y_projection(&u, &d);
    (0..m)
        .map(|i| [u[i].norm_sqr() * scale, d[i].norm_sqr() * scale, py[i] * scale, ny[i] * scale])
        .collect()
}

/// `Σ I_b / Σ(I_a + I_b)`.
pub fn flip_probability(i_a: &[f64], i_b: &[f64]) -> Result<f64> {
    let a: f64 = i_a.iter().sum();
    let b: f64 = i_b.iter().sum();
    let total = a + b;
    if !(total > 0.0) {
        return Err(Error::Undefined("flip probability of a zero-intensity profile".into()));
    }
    Ok(b / total)
}

/// `sin²(πχ/2)`.
pub fn flip_law(chi: f64) -> f64 {
    (0.5 * PI * chi).sin().powi(2)
}

/// Field giving a π spin rotation over `l_b1` for a beam of wavelength
/// `lambda_db` moving at `h/(mλ)`: `4π²ħ/(|g|eLλ)`.
pub fn b_pi(l_b1: f64, lambda_db: f64) -> f64 {
    let c = &CONSTANTS;
    4.0 * PI * PI * c.hbar / (c.g_abs() * c.e * l_b1 * lambda_db)
}

/// π-rotation field for an arbitrary beam speed: `πħv/(|g|μ_B L)`.
pub fn b_pi_for_velocity(l_b1: f64, v_x: f64) -> f64 {
    let c = &CONSTANTS;
    PI * c.hbar * v_x / (c.g_abs() * c.mu_b * l_b1)
}

pub fn chi(b1: f64, b_pi: f64) -> f64 {
    b1 / b_pi
}

/// Magnitude of the transverse momentum kick `(|g|μ_B/2ħ)G₂L_B2/v_x` (rad/m).
pub fn zeeman_alpha(g2: f64, l_b2: f64, v_x: f64) -> f64 {
    zeeman_kick(g2, l_b2, v_x).abs()
}

/// Screen displacement of each spin channel, `(ħT_scr/m)|α|`.
pub fn analytic_deflection(g2: f64, l_b2: f64, v_x: f64, l_gs: f64) -> f64 {
    let c = &CONSTANTS;
    c.hbar * (l_gs / v_x) * zeeman_alpha(g2, l_b2, v_x) / c.m_e
}

/// Far-field fringe spacing `λL/d`.
pub fn fringe_estimate(lambda_db: f64, l_gs: f64, period: f64) -> f64 {
    lambda_db * l_gs / period
}

/// Whether the density left inside the slab is below `threshold`.
pub fn slab_cleared(state: &SpinorField, grating: &GratingSpec, threshold: f64) -> bool {
    state.norm_in_x_range(grating.x_front, grating.x_back()) < threshold
}

/// Norm in the downstream half-plane `x > x_front + h`. Fails with
/// [`Error::Stale`] while more than `threshold` of the norm is still inside
/// the slab.
pub fn transmission(state: &SpinorField, grating: &GratingSpec, threshold: f64) -> Result<f64> {
    let inside = state.norm_in_x_range(grating.x_front, grating.x_back());
    if inside >= threshold {
        return Err(Error::Stale(format!(
            "{inside:.3e} of the norm is still inside the grating slab"
        )));
    }
    Ok(state.norm_in_x_range(grating.x_back(), f64::INFINITY))
}

/// Fractional indices of peaks whose topographic prominence is at least
/// `rel_prominence` of the global maximum, refined by a parabola through
/// the three samples around each.
pub fn find_peaks(values: &[f64], rel_prominence: f64) -> Vec<f64> {
    let n = values.len();
    let top = values.iter().cloned().fold(0.0_f64, f64::max);
    if n < 3 || !(top > 0.0) {
        return Vec::new();
    }
    let floor = rel_prominence * top;
    let mut out = Vec::new();
    for i in 1..n - 1 {
        let v = values[i];
        if !(v > values[i - 1] && v >= values[i + 1]) || v < floor {
            continue;
        }
        let mut left_min = v;
        for j in (0..i).rev() {
            if values[j] > v {
                break;
            }
            left_min = left_min.min(values[j]);
        }
        let mut right_min = v;
        for &w in &values[i + 1..] {
            if w > v {
                break;
            }
            right_min = right_min.min(w);
        }
        if v - left_min.max(right_min) >= floor {
            let (a, b, c) = (values[i - 1], v, values[i + 1]);
            let den = a - 2.0 * b + c;
            let off = if den != 0.0 { 0.5 * (a - c) / den } else { 0.0 };
            out.push(i as f64 + off.clamp(-0.5, 0.5));
        }
    }
    out
}

/// Median spacing of adjacent principal maxima of the total screen intensity.
pub fn fringe_width(profile: &FarFieldProfile) -> Result<f64> {
    let peaks = find_peaks(&profile.total(), 0.1);
    if peaks.len() < 3 {
        return Err(Error::Undefined(format!(
            "fringe width needs at least 3 principal maxima, found {}",
            peaks.len()
        )));
    }
    let step = profile.screen_step();
    let mut gaps: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) * step).collect();
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    Ok(if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    })
}

/// Screen positions of the principal maxima of the total intensity.
pub fn peak_positions(profile: &FarFieldProfile) -> Vec<f64> {
    let step = profile.screen_step();
    find_peaks(&profile.total(), 0.1)
        .into_iter()
        .map(|p| profile.y_scr[0] + p * step)
        .collect()
}

/// Uniform probe-momentum axis `start + j·step`, `j < n`. The step must be
/// `2π/(M·dy)` for an integer `M ≥ n` so each probe position costs one FFT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KyAxis {
    pub start: f64,
    pub step: f64,
    pub n: usize,
}

impl KyAxis {
    /// Symmetric axis covering `±half_range` with a step no coarser than
    /// `max_step`, commensurate with the grid spacing `dy`.
    pub fn for_grid(dy: f64, half_range: f64, max_step: f64) -> Result<Self> {
        if !(dy > 0.0 && half_range > 0.0 && max_step > 0.0) {
            return Err(Error::Config("ky axis needs positive spacing, range and step".into()));
        }
        let mut m = next_smooth((2.0 * PI / (max_step * dy)).ceil() as usize);
        loop {
            let step = 2.0 * PI / (m as f64 * dy);
            let half = (half_range / step).ceil() as usize;
            let n = 2 * half + 1;
            if n <= m {
                return Ok(Self {
                    start: -(half as f64) * step,
                    step,
                    n,
                });
            }
            m = next_smooth(n);
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.start + j as f64 * self.step).collect()
    }

    fn fft_len(&self, dy: f64) -> Result<usize> {
        let m = 2.0 * PI / (self.step * dy);
        let mr = m.round();
        if !(self.step > 0.0) || (m - mr).abs() > 1e-6 * mr || (mr as usize) < self.n {
            return Err(Error::Config(format!(
                "ky step {:.4e} is not 2π/(M·dy) with M >= {}",
                self.step, self.n
            )));
        }
        Ok(mr as usize)
    }
}

/// Husimi distributions per spin channel, `q[i_y0 * n_ky + i_ky]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HusimiMap {
    pub y0: Vec<f64>,
    pub ky: Vec<f64>,
    pub q_up: Vec<f64>,
    pub q_dn: Vec<f64>,
    pub sigma: f64,
}

impl HusimiMap {
    pub fn channel(&self, spin: Spin) -> &[f64] {
        match spin {
            Spin::Up => &self.q_up,
            Spin::Down => &self.q_dn,
        }
    }

    pub fn at(&self, spin: Spin, iy0: usize, iky: usize) -> f64 {
        self.channel(spin)[iy0 * self.ky.len() + iky]
    }
}

/// Probe positions spanning the slice at `stride` grid cells.
pub fn y0_axis(slice: &TransverseSlice, stride: usize) -> Vec<f64> {
    (0..slice.ny()).step_by(stride.max(1)).map(|iy| slice.y(iy)).collect()
}

/// `Q_s(y₀, k₀) = (1/π)|∫φ*ψ_s dy|²` with the normalised probe
/// `φ = (πσ²)^{-1/4} exp[-(y-y₀)²/2σ² + ik₀(y-y₀)]`, summed over the slice's
/// columns with their weights. The probe is truncated at ±7σ (or at the FFT
/// length, whichever is shorter).
pub fn husimi(slice: &TransverseSlice, sigma: f64, y0_axis: &[f64], ky: &KyAxis) -> Result<HusimiMap> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("probe width must be positive, got {sigma}")));
    }
    if y0_axis.is_empty() || ky.n == 0 {
        return Err(Error::Config("Husimi axes must be non-empty".into()));
    }
    let ny = slice.ny();
    let dy = slice.dy;
    let m = ky.fft_len(dy)?;
    let plan = FftPlanner::new().plan_fft_forward(m);
    let norm = (PI * sigma * sigma).powf(-0.25) * dy;
    let half = ((7.0 * sigma / dy).ceil() as usize).min(m / 2);
    let nk = ky.n;

    let rows: Vec<(Vec<f64>, Vec<f64>)> = y0_axis
        .par_iter()
        .map(|&y0| {
            let centre = ((y0 - slice.y0) / dy).round() as isize;
            let lo = (centre - half as isize).max(0) as usize;
            let hi = ((centre + half as isize + 1).max(0) as usize).min(ny);
            let mut q_up = vec![0.0; nk];
            let mut q_dn = vec![0.0; nk];
            if lo >= hi {
                return (q_up, q_dn);
            }
            let window: Vec<Complex64> = (lo..hi)
                .map(|j| {
                    let u = slice.y(j) - y0;
                    Complex64::from_polar(norm * (-u * u / (2.0 * sigma * sigma)).exp(), -ky.start * u)
                })
                .collect();
            let mut buf = vec![Complex64::new(0.0, 0.0); m];
            for col in &slice.columns {
                for (psi, q) in [(&col.up, &mut q_up), (&col.dn, &mut q_dn)] {
                    buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                    for (l, w) in window.iter().enumerate() {
                        buf[l] = w * psi[lo + l];
                    }
                    plan.process(&mut buf);
                    for (j, qj) in q.iter_mut().enumerate() {
                        *qj += col.weight * buf[j].norm_sqr() / PI;
                    }
                }
            }
            (q_up, q_dn)
        })
        .collect();

    let mut q_up = Vec::with_capacity(y0_axis.len() * nk);
    let mut q_dn = Vec::with_capacity(y0_axis.len() * nk);
    for (u, d) in rows {
        q_up.extend(u);
        q_dn.extend(d);
    }
    Ok(HusimiMap {
        y0: y0_axis.to_vec(),
        ky: ky.values(),
        q_up,
        q_dn,
        sigma,
    })
}

/// Mass-weighted `k_y` centroid of one Husimi channel.
pub fn mean_ky(map: &HusimiMap, spin: Spin) -> Result<f64> {
    let q = map.channel(spin);
    let nk = map.ky.len();
    let (mut m0, mut m1) = (0.0, 0.0);
    for row in q.chunks(nk) {
        for (v, k) in row.iter().zip(&map.ky) {
            m0 += v;
            m1 += v * k;
        }
    }
    if !(m0 > 0.0) {
        return Err(Error::Undefined(format!("{spin:?} Husimi channel has no mass")));
    }
    Ok(m1 / m0)
}

/// Least-squares slope of `y = a x` and its coefficient of determination.
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let slope = sxy / sxx;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - mean).powi(2)).sum();
    (slope, 1.0 - ss_res / ss_tot)
}
