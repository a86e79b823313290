//! Strang split-step evolution of the Pauli spinor with the lagged
//! magnetostatic self-field, plus the analytic magnet stages.
//!
//! One step is: local half-step (scalar potentials, Zeeman 2×2 rotation,
//! `A·p` and `A²` terms) → exact spectral kinetic step → local half-step in
//! reverse sub-order → absorbing mask.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::CONSTANTS;
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::Grid2D;
use crate::potentials::ScatteringScene;
use crate::selffield::{current_total, CurlMethod, CurrentTerms, SelfFieldSolution, SelfFieldSolver, VectorField};
use crate::spinor::{populations, SpinorField};

/// Optional terms of the gradient-magnet Hamiltonian. Only the Zeeman term
/// is on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct H2Terms {
    /// `-(eG₂/2m) y² p_x`
    pub ap_cross: bool,
    /// `+(e²G₂²/8m) y⁴`
    pub a2_squared: bool,
    /// `-(e²G₂/2m) y² A_x^self`
    pub a2_aself: bool,
    /// `-(gμ_B/2) y G₂ σ_z`
    pub zeeman: bool,
}

impl Default for H2Terms {
    fn default() -> Self {
        Self {
            ap_cross: false,
            a2_squared: false,
            a2_aself: false,
            zeeman: true,
        }
    }
}

/// How the self-generated field acts back on the spinor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfFieldCoupling {
    pub ap_cross: bool,
    pub a_squared: bool,
    pub zeeman: bool,
}

impl Default for SelfFieldCoupling {
    fn default() -> Self {
        Self {
            ap_cross: true,
            a_squared: true,
            zeeman: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    B1Uniform,
    B2Gradient,
    Free,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    #[default]
    Analytic,
    GridResolved,
}

/// One magnet stage of the beamline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStage {
    pub kind: StageKind,
    /// Uniform field along x (T).
    pub b1: f64,
    pub l_b1: f64,
    /// Transverse gradient (T/m).
    pub g2: f64,
    pub l_b2: f64,
    pub mode: StageMode,
}

impl FieldStage {
    pub fn b1(b1: f64, l_b1: f64, mode: StageMode) -> Self {
        Self {
            kind: StageKind::B1Uniform,
            b1,
            l_b1,
            g2: 0.0,
            l_b2: 0.0,
            mode,
        }
    }

    pub fn b2(g2: f64, l_b2: f64, mode: StageMode) -> Self {
        Self {
            kind: StageKind::B2Gradient,
            b1: 0.0,
            l_b1: 0.0,
            g2,
            l_b2,
            mode,
        }
    }

    pub fn length(&self) -> f64 {
        match self.kind {
            StageKind::B1Uniform => self.l_b1,
            StageKind::B2Gradient => self.l_b2,
            StageKind::Free => 0.0,
        }
    }

    /// Transit time at beam speed `v_x`.
    pub fn duration(&self, v_x: f64) -> f64 {
        self.length() / v_x
    }

    pub fn validate(&self, grid: Option<&Grid2D>) -> Result<()> {
        let finite = [self.b1, self.l_b1, self.g2, self.l_b2].iter().all(|v| v.is_finite());
        if !finite || self.l_b1 < 0.0 || self.l_b2 < 0.0 {
            return Err(Error::Config(format!("stage lengths must be finite and >= 0: {self:?}")));
        }
        if self.mode == StageMode::GridResolved {
            if let Some(g) = grid {
                if self.length() > g.extent_x() {
                    return Err(Error::Geometry(format!(
                        "grid-resolved stage of length {:.3e} m does not fit a {:.3e} m grid",
                        self.length(),
                        g.extent_x()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Field switched on while a grid-resolved stage is traversed.
    pub fn active_field(&self, y_ref: f64, h2: H2Terms) -> ActiveField {
        match self.kind {
            StageKind::B1Uniform => ActiveField {
                b1: self.b1,
                ..ActiveField::none()
            },
            StageKind::B2Gradient => ActiveField {
                g2: self.g2,
                y_ref,
                h2,
                ..ActiveField::none()
            },
            StageKind::Free => ActiveField::none(),
        }
    }
}

/// External magnetic field present during a stretch of evolution:
/// `B = B₁x̂ + G₂(y - y_ref)ẑ` with `A₂ = -G₂(y - y_ref)²/2 x̂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveField {
    pub b1: f64,
    pub g2: f64,
    pub y_ref: f64,
    pub h2: H2Terms,
}

impl ActiveField {
    pub fn none() -> Self {
        Self {
            b1: 0.0,
            g2: 0.0,
            y_ref: 0.0,
            h2: H2Terms::default(),
        }
    }

    fn a2x(&self, y: f64) -> f64 {
        let u = y - self.y_ref;
        -0.5 * self.g2 * u * u
    }

    fn has_a2(&self) -> bool {
        self.g2 != 0.0 && (self.h2.ap_cross || self.h2.a2_squared || self.h2.a2_aself)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub dt: f64,
    pub n_steps: usize,
    pub self_field_enabled: bool,
    pub current_terms: CurrentTerms,
    pub coupling: SelfFieldCoupling,
    pub curl: CurlMethod,
    pub h2_terms: H2Terms,
    /// Record observables every this many steps (0 disables records).
    pub record_every: usize,
    /// Rebuild the self-field every this many steps (1 = every step). Between
    /// rebuilds the last solution is held fixed.
    pub self_field_every: usize,
}

impl StepPlan {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        Self {
            dt,
            n_steps,
            self_field_enabled: false,
            current_terms: CurrentTerms::default(),
            coupling: SelfFieldCoupling::default(),
            curl: CurlMethod::Spectral,
            h2_terms: H2Terms::default(),
            record_every: 0,
            self_field_every: 1,
        }
    }

    pub fn with_self_field(mut self, on: bool) -> Self {
        self.self_field_enabled = on;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub norm: f64,
    pub p_up: f64,
    pub p_dn: f64,
    pub peak_bz_self: f64,
}

/// What an observer sees after each step.
pub struct StepView<'a> {
    pub step: usize,
    pub time: f64,
    pub state: &'a SpinorField,
    pub self_field: Option<&'a SelfFieldSolution>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Default)]
pub struct EvolveReport {
    pub steps_taken: usize,
    pub time: f64,
    pub records: Vec<StepRecord>,
}

/// Exact spectral free propagation of both components over `dt`.
pub fn kinetic_half_spectrum(state: &mut SpinorField, fft: &Fft2, dt: f64) {
    if dt == 0.0 {
        return;
    }
    let phase = kinetic_phase(&state.grid, fft, dt);
    let mut work = vec![Complex64::new(0.0, 0.0); state.grid.len()];
    fft.apply_diagonal(&mut state.up, &phase, &mut work);
    fft.apply_diagonal(&mut state.dn, &phase, &mut work);
}

fn kinetic_phase(grid: &Grid2D, fft: &Fft2, dt: f64) -> Vec<Complex64> {
    let c = &CONSTANTS;
    let f = -c.hbar * dt / (2.0 * c.m_e);
    let mut out = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (ix, kx) in grid.kx.iter().enumerate() {
        for (iy, ky) in grid.ky.iter().enumerate() {
            out[fft.spec_index(ix, iy)] = Complex64::from_polar(1.0, f * (kx * kx + ky * ky));
        }
    }
    out
}

/// Zeeman prefactor `-gμ_B/2` (positive for the electron, whose g is negative).
fn zeeman_coefficient() -> f64 {
    -0.5 * CONSTANTS.g_factor * CONSTANTS.mu_b
}

/// Exact `exp(-iτ c σ·B/ħ)` applied to one cell, `B = (bx, 0, bz)`.
#[inline]
fn zeeman_rotate(up: &mut Complex64, dn: &mut Complex64, bx: f64, bz: f64, angle_per_tesla: f64) {
    let b = bx.hypot(bz);
    if b == 0.0 {
        return;
    }
    let theta = angle_per_tesla * b;
    let (s, c) = theta.sin_cos();
    let (nx, nz) = (bx / b, bz / b);
    let mi_s = Complex64::new(0.0, -s);
    let u = *up;
    let d = *dn;
    *up = Complex64::new(c, -s * nz) * u + mi_s * nx * d;
    *dn = mi_s * nx * u + Complex64::new(c, s * nz) * d;
}

/// Global spin rotation `exp(i(gμ_B B₁T/2ħ)σ_x)` for a B₁ stage of length
/// `l_b1` crossed at speed `v_x`. With `g < 0` the sense of precession is
/// reversed; the flip probability `sin²(|g|μ_B B₁T/2ħ)` is unaffected.
pub fn apply_b1_rotation(state: &mut SpinorField, b1: f64, l_b1: f64, v_x: f64) -> Result<()> {
    if !(v_x > 0.0) {
        return Err(Error::Config(format!("beam velocity must be positive, got {v_x}")));
    }
    let c = &CONSTANTS;
    let beta = c.g_factor * c.mu_b * b1 * (l_b1 / v_x) / (2.0 * c.hbar);
    let (s, co) = beta.sin_cos();
    let is = Complex64::new(0.0, s);
    state.up.par_iter_mut().zip(state.dn.par_iter_mut()).for_each(|(u, d)| {
        let (a, b) = (*u, *d);
        *u = a * co + is * b;
        *d = is * a + b * co;
    });
    Ok(())
}

/// Signed transverse wavenumber `(gμ_B/2ħ)G₂L_B2/v_x` picked up by the up
/// channel in a gradient stage; the down channel gets the opposite kick.
pub fn zeeman_kick(g2: f64, l_b2: f64, v_x: f64) -> f64 {
    let c = &CONSTANTS;
    c.g_factor * c.mu_b * g2 * (l_b2 / v_x) / (2.0 * c.hbar)
}

/// Zeeman phase imprint of a gradient stage: `ψ↑ ← e^{+iκ(y-y_ref)}ψ↑`,
/// `ψ↓ ← e^{-iκ(y-y_ref)}ψ↓` with `κ = (gμ_B/2ħ)G₂L_B2/v_x`, the exact
/// propagator of `-(gμ_B/2)G₂(y-y_ref)σ_z` over the transit time. For the
/// electron (`g < 0`) and `G₂ > 0` the up channel is kicked towards `-y`.
pub fn apply_b2_phase(state: &mut SpinorField, g2: f64, l_b2: f64, v_x: f64, y_ref: f64) -> Result<()> {
    if !(v_x > 0.0) {
        return Err(Error::Config(format!("beam velocity must be positive, got {v_x}")));
    }
    if g2 == 0.0 || l_b2 == 0.0 {
        return Ok(());
    }
    let kappa = zeeman_kick(g2, l_b2, v_x);
    let g = state.grid.clone();
    let nx = g.nx;
    state
        .up
        .par_chunks_mut(nx)
        .zip(state.dn.par_chunks_mut(nx))
        .enumerate()
        .for_each(|(iy, (u, d))| {
            let ph = Complex64::from_polar(1.0, kappa * (g.y(iy) - y_ref));
            let phc = ph.conj();
            u.iter_mut().for_each(|v| *v *= ph);
            d.iter_mut().for_each(|v| *v *= phc);
        });
    Ok(())
}

/// Owns everything reused between steps: FFT plans, kinetic phases, the
/// cached potential phase and the self-field solver state.
pub struct Propagator {
    scene: Arc<ScatteringScene>,
    fft: Arc<Fft2>,
    plan: StepPlan,
    dt: f64,
    kinetic: Vec<Complex64>,
    potential_phase: Option<Vec<Complex64>>,
    work: Vec<Complex64>,
    solver: Option<SelfFieldSolver>,
    self_field: Option<SelfFieldSolution>,
    time: f64,
    steps: usize,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("dt", &self.dt)
            .field("time", &self.time)
            .field("steps", &self.steps)
            .finish()
    }
}

impl Propagator {
    pub fn new(scene: Arc<ScatteringScene>, fft: Arc<Fft2>, plan: StepPlan) -> Result<Self> {
        if !(plan.dt > 0.0) || !plan.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", plan.dt)));
        }
        let g = &scene.grid;
        if fft.len() != g.len() {
            return Err(Error::Dimension("FFT plan does not match the scene grid".into()));
        }
        let solver = plan
            .self_field_enabled
            .then(|| SelfFieldSolver::new(g, fft.clone(), plan.curl));
        let mut p = Self {
            kinetic: Vec::new(),
            potential_phase: None,
            work: vec![Complex64::new(0.0, 0.0); g.len()],
            dt: 0.0,
            scene,
            fft,
            plan,
            solver,
            self_field: None,
            time: 0.0,
            steps: 0,
        };
        p.set_dt(plan.dt)?;
        Ok(p)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.scene.grid
    }

    pub fn scene(&self) -> &ScatteringScene {
        &self.scene
    }

    pub fn fft(&self) -> &Arc<Fft2> {
        &self.fft
    }

    pub fn plan(&self) -> &StepPlan {
        &self.plan
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn self_field(&self) -> Option<&SelfFieldSolution> {
        self.self_field.as_ref()
    }

    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        if dt == self.dt {
            return Ok(());
        }
        self.dt = dt;
        self.kinetic = kinetic_phase(&self.scene.grid, &self.fft, dt);
        let c = &CONSTANTS;
        let pot = &self.scene.potential.values;
        self.potential_phase = pot.iter().any(|&v| v != 0.0).then(|| {
            let f = -0.5 * dt / c.hbar;
            pot.par_iter().map(|&v| Complex64::from_polar(1.0, f * v)).collect()
        });
        Ok(())
    }

    /// Largest smooth local energy scale (J) under `field`; the hard-wall
    /// barrier is excluded because its phase is exact and needs no resolving.
    pub fn max_smooth_energy(&self, field: &ActiveField) -> f64 {
        let c = &CONSTANTS;
        let g = &self.scene.grid;
        let mut v = self.scene.smooth_potential_max;
        let reach = (g.y0 - field.y_ref).abs().max((g.y_max() - field.y_ref).abs());
        let bz = if field.h2.zeeman { field.g2.abs() * reach } else { 0.0 };
        v += zeeman_coefficient() * field.b1.hypot(bz);
        if field.has_a2() {
            let a = 0.5 * field.g2.abs() * reach * reach;
            if field.h2.a2_squared {
                v += c.e * c.e * a * a / (2.0 * c.m_e);
            }
            if field.h2.ap_cross {
                let kmax = std::f64::consts::PI / g.dx.min(g.dy);
                v += c.e * a * c.hbar * kmax / c.m_e;
            }
        }
        v
    }

    /// `dt ≤ ħ/(2 V_max)` keeps the smooth potential phase per half-step below π/4.
    pub fn check_dt(&self, field: &ActiveField) -> Result<()> {
        let v = self.max_smooth_energy(field);
        if v > 0.0 {
            let bound = 0.5 * CONSTANTS.hbar / v;
            if self.dt > bound {
                return Err(Error::Config(format!(
                    "dt = {:.3e} s exceeds the stability bound {bound:.3e} s",
                    self.dt
                )));
            }
        }
        Ok(())
    }

    fn rebuild_self_field(&mut self, state: &SpinorField, field: &ActiveField) -> Result<()> {
        let Some(solver) = self.solver.as_mut() else {
            return Ok(());
        };
        let g = &self.scene.grid;
        let mut a_total = self.self_field.as_ref().map(|s| s.a.clone());
        if field.has_a2() {
            let a = a_total.get_or_insert_with(|| VectorField::zeros(g));
            for iy in 0..g.ny {
                let a2 = field.a2x(g.y(iy));
                a.x[iy * g.nx..(iy + 1) * g.nx].iter_mut().for_each(|v| *v += a2);
            }
        }
        let j = current_total(state, a_total.as_ref(), self.plan.current_terms)?;
        drop(a_total);
        let sol = solver.solve(&j)?;
        if !(sol.bz.is_finite() && sol.a.x.iter().chain(&sol.a.y).all(|v| v.is_finite())) {
            return Err(Error::Numeric {
                step: self.steps,
                message: "non-finite self-field".into(),
            });
        }
        self.self_field = Some(sol);
        Ok(())
    }

    /// Local (non-kinetic) half-step of duration `dt/2`. The `A·p` sub-step
    /// goes last on the way in and first on the way out.
    pub fn potential_half_step(&mut self, state: &mut SpinorField, field: &ActiveField, reverse: bool) -> Result<()> {
        if reverse {
            self.ap_substep(state, field)?;
            self.local_substep(state, field);
        } else {
            self.local_substep(state, field);
            self.ap_substep(state, field)?;
        }
        Ok(())
    }

    fn local_substep(&self, state: &mut SpinorField, field: &ActiveField) {
        let c = &CONSTANTS;
        let g = &self.scene.grid;
        let nx = g.nx;
        let tau = 0.5 * self.dt;
        let angle_per_tesla = zeeman_coefficient() * tau / c.hbar;
        let scalar_rate = -tau / c.hbar;
        let sf = self.self_field.as_ref();
        let coupling = self.plan.coupling;
        let self_zeeman = sf.filter(|_| coupling.zeeman);
        let self_a2 = sf.filter(|_| coupling.a_squared);
        let a2_aself = sf.filter(|_| field.g2 != 0.0 && field.h2.a2_aself);
        let ext_a2 = field.g2 != 0.0 && field.h2.a2_squared;
        let ext_zeeman = field.g2 != 0.0 && field.h2.zeeman;
        let any_dynamic =
            field.b1 != 0.0 || ext_zeeman || ext_a2 || self_zeeman.is_some() || self_a2.is_some() || a2_aself.is_some();
        let phase = self.potential_phase.as_deref();
        if !any_dynamic && phase.is_none() {
            return;
        }
        let (ee_2m, ee_m) = (c.e * c.e / (2.0 * c.m_e), c.e * c.e / c.m_e);

        state
            .up
            .par_chunks_mut(nx)
            .zip(state.dn.par_chunks_mut(nx))
            .enumerate()
            .for_each(|(iy, (ur, dr))| {
                let y = g.y(iy);
                let a2x = field.a2x(y);
                let bz_ext = if ext_zeeman { field.g2 * (y - field.y_ref) } else { 0.0 };
                let row = iy * nx;
                for ix in 0..nx {
                    let i = row + ix;
                    let mut ph = phase.map_or(Complex64::new(1.0, 0.0), |p| p[i]);
                    if any_dynamic {
                        let mut s = 0.0;
                        if ext_a2 {
                            s += ee_2m * a2x * a2x;
                        }
                        if let Some(f) = a2_aself {
                            s += ee_m * a2x * f.a.x[i];
                        }
                        if let Some(f) = self_a2 {
                            s += ee_2m * (f.a.x[i] * f.a.x[i] + f.a.y[i] * f.a.y[i]);
                        }
                        if s != 0.0 {
                            ph *= Complex64::from_polar(1.0, scalar_rate * s);
                        }
                        let bz = bz_ext + self_zeeman.map_or(0.0, |f| f.bz.values[i]);
                        zeeman_rotate(&mut ur[ix], &mut dr[ix], field.b1, bz, angle_per_tesla);
                    }
                    ur[ix] *= ph;
                    dr[ix] *= ph;
                }
            });
    }

    /// `exp(X)` with `X = -(eτ/m)·½(A·∇ + ∇·A)` in the centred, exactly
    /// antisymmetric discretisation, summed as a Taylor series.
    fn ap_substep(&mut self, state: &mut SpinorField, field: &ActiveField) -> Result<()> {
        let g = &self.scene.grid;
        let ext = field.g2 != 0.0 && field.h2.ap_cross;
        let own = self.self_field.as_ref().filter(|_| self.plan.coupling.ap_cross);
        if !ext && own.is_none() {
            return Ok(());
        }
        let mut a = own.map_or_else(|| VectorField::zeros(g), |s| s.a.clone());
        if ext {
            for iy in 0..g.ny {
                let a2 = field.a2x(g.y(iy));
                a.x[iy * g.nx..(iy + 1) * g.nx].iter_mut().for_each(|v| *v += a2);
            }
        }
        let c = &CONSTANTS;
        let coef = -c.e * (0.5 * self.dt) / c.m_e;
        for psi in [&mut state.up, &mut state.dn] {
            taylor_exp(psi, &a, g, coef, &mut self.work).map_err(|message| Error::Numeric {
                step: self.steps,
                message,
            })?;
        }
        Ok(())
    }

    /// Exact free propagation of both components for the current `dt`.
    pub fn kinetic_step(&mut self, state: &mut SpinorField) {
        self.fft.apply_diagonal(&mut state.up, &self.kinetic, &mut self.work);
        self.fft.apply_diagonal(&mut state.dn, &self.kinetic, &mut self.work);
    }

    pub fn apply_mask(&self, state: &mut SpinorField) {
        if let Some(m) = &self.scene.mask {
            state
                .up
                .par_iter_mut()
                .zip(state.dn.par_iter_mut())
                .zip(m.values.par_iter())
                .for_each(|((u, d), &w)| {
                    *u *= w;
                    *d *= w;
                });
        }
    }

    /// One full Strang step. With the self-field enabled the currents and
    /// `A^self`, `B_z^self` are first rebuilt from the pre-step state.
    pub fn strang_step(&mut self, state: &mut SpinorField, field: &ActiveField) -> Result<()> {
        if !state.grid.same_shape(&self.scene.grid) {
            return Err(Error::Dimension("state grid differs from the scene grid".into()));
        }
        let due = self.self_field.is_none() || self.steps % self.plan.self_field_every.max(1) == 0;
        if self.plan.self_field_enabled && due {
            self.rebuild_self_field(state, field)?;
        }
        self.potential_half_step(state, field, false)?;
        self.kinetic_step(state);
        self.potential_half_step(state, field, true)?;
        self.apply_mask(state);
        self.steps += 1;
        self.time += self.dt;
        Ok(())
    }

    /// Runs up to `n_steps` Strang steps, stopping early when the observer
    /// asks to. The step index of any numeric failure is reported.
    pub fn evolve(
        &mut self,
        state: &mut SpinorField,
        field: &ActiveField,
        n_steps: usize,
        mut observer: impl FnMut(&StepView<'_>) -> Flow,
    ) -> Result<EvolveReport> {
        self.check_dt(field)?;
        let mut report = EvolveReport::default();
        let start = self.time;
        for n in 0..n_steps {
            self.strang_step(state, field)?;
            let (p_up, p_dn) = populations(state);
            let norm = p_up + p_dn;
            if !norm.is_finite() {
                return Err(Error::Numeric {
                    step: self.steps,
                    message: "state norm is not finite".into(),
                });
            }
            report.steps_taken = n + 1;
            let every = self.plan.record_every;
            if every > 0 && (n + 1) % every == 0 {
                report.records.push(StepRecord {
                    step: self.steps,
                    time: self.time,
                    norm,
                    p_up,
                    p_dn,
                    peak_bz_self: self.self_field.as_ref().map_or(0.0, |s| s.peak_bz()),
                });
            }
            let view = StepView {
                step: self.steps,
                time: self.time,
                state,
                self_field: self.self_field.as_ref(),
            };
            if observer(&view) == Flow::Stop {
                break;
            }
        }
        report.time = self.time - start;
        Ok(report)
    }

    /// Evolves for exactly `duration` seconds, splitting it into equal steps
    /// no longer than the plan's dt. The plan's dt is restored afterwards.
    pub fn evolve_for(&mut self, state: &mut SpinorField, field: &ActiveField, duration: f64) -> Result<EvolveReport> {
        if duration <= 0.0 {
            return Ok(EvolveReport::default());
        }
        let n = (duration / self.plan.dt).ceil().max(1.0) as usize;
        self.set_dt(duration / n as f64)?;
        let out = self.evolve(state, field, n, |_| Flow::Continue);
        self.set_dt(self.plan.dt)?;
        out
    }

    /// Traverses one magnet stage in its configured mode.
    pub fn run_stage(&mut self, state: &mut SpinorField, stage: &FieldStage, v_x: f64, y_ref: f64) -> Result<()> {
        stage.validate(Some(&self.scene.grid))?;
        match (stage.kind, stage.mode) {
            (StageKind::Free, _) => Ok(()),
            (StageKind::B1Uniform, StageMode::Analytic) => apply_b1_rotation(state, stage.b1, stage.l_b1, v_x),
            (StageKind::B2Gradient, StageMode::Analytic) => apply_b2_phase(state, stage.g2, stage.l_b2, v_x, y_ref),
            (_, StageMode::GridResolved) => {
                if !(v_x > 0.0) {
                    return Err(Error::Config(format!("beam velocity must be positive, got {v_x}")));
                }
                let field = stage.active_field(y_ref, self.plan.h2_terms);
                self.evolve_for(state, &field, stage.duration(v_x)).map(|_| ())
            }
        }
    }
}

/// `D ψ = ½[(A_i + A_r)ψ_r - (A_i + A_l)ψ_l]/(2h)` summed over both axes:
/// the antisymmetric centred form of `A·∇ + ½∇·A`.
fn apply_ap(psi: &[Complex64], a: &VectorField, g: &Grid2D, coef: f64, out: &mut [Complex64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (fx, fy) = (0.25 * coef / g.dx, 0.25 * coef / g.dy);
    out.par_chunks_mut(nx).enumerate().for_each(|(iy, o)| {
        let up_row = if iy + 1 == ny { 0 } else { iy + 1 };
        let dn_row = if iy == 0 { ny - 1 } else { iy - 1 };
        for ix in 0..nx {
            let r = if ix + 1 == nx { 0 } else { ix + 1 };
            let l = if ix == 0 { nx - 1 } else { ix - 1 };
            let i = iy * nx + ix;
            let (ir, il) = (iy * nx + r, iy * nx + l);
            let (iu, id) = (up_row * nx + ix, dn_row * nx + ix);
            let ax = a.x[i];
            let ay = a.y[i];
            o[ix] = psi[ir] * (fx * (ax + a.x[ir])) - psi[il] * (fx * (ax + a.x[il]))
                + psi[iu] * (fy * (ay + a.y[iu]))
                - psi[id] * (fy * (ay + a.y[id]));
        }
    });
}

const TAYLOR_MAX_ORDER: usize = 12;
const TAYLOR_TOL: f64 = 1e-17;

fn taylor_exp(
    psi: &mut [Complex64],
    a: &VectorField,
    g: &Grid2D,
    coef: f64,
    work: &mut [Complex64],
) -> std::result::Result<(), String> {
    let scale: f64 = psi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok(());
    }
    let mut term = psi.to_vec();
    for order in 1..=TAYLOR_MAX_ORDER {
        apply_ap(&term, a, g, coef / order as f64, work);
        term.copy_from_slice(work);
        let size: f64 = term.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        psi.par_iter_mut().zip(term.par_iter()).for_each(|(p, t)| *p += t);
        if size <= TAYLOR_TOL * scale {
            return Ok(());
        }
        if order == TAYLOR_MAX_ORDER {
            return Err(format!(
                "A·p series did not converge (last term {:.2e} of the norm)",
                size / scale
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::spinor::{init_gaussian_spinor, PacketSpec};

    fn packet(g: &Grid2D, a: Complex64, b: Complex64, lambda: f64) -> SpinorField {
        let spec = PacketSpec {
            x0c: g.x0 + 0.5 * g.extent_x(),
            y0c: g.y0 + 0.5 * g.extent_y(),
            sigma_x: g.extent_x() / 10.0,
            sigma_y: g.extent_y() / 10.0,
            lambda_db: lambda,
            alpha0: a,
            beta0: b,
        };
        init_gaussian_spinor(g, &spec).unwrap()
    }

    fn free_propagator(g: &Grid2D, dt: f64) -> Propagator {
        let scene = Arc::new(ScatteringScene::free(g));
        let fft = Arc::new(Fft2::new(g.nx, g.ny));
        Propagator::new(scene, fft, StepPlan::new(dt, 0)).unwrap()
    }

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    fn zero() -> Complex64 {
        Complex64::new(0.0, 0.0)
    }

    #[test]
    fn plane_wave_gets_global_phase() {
        let g = make_grid(32e-9, 32e-9, 0.5e-9).unwrap();
        let fft = Fft2::new(g.nx, g.ny);
        let k0 = 5.0 * 2.0 * std::f64::consts::PI / g.extent_x();
        let mut st = SpinorField::from_fn(&g, one(), zero(), |x, _| Complex64::from_polar(1.0, k0 * x));
        let before = st.clone();
        let dt = 3e-16;
        kinetic_half_spectrum(&mut st, &fft, dt);
        let c = CONSTANTS;
        let ph = Complex64::from_polar(1.0, -c.hbar * k0 * k0 * dt / (2.0 * c.m_e));
        for (a, b) in st.up.iter().zip(&before.up) {
            assert!((a - b * ph).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_dt_is_identity() {
        let g = make_grid(32e-9, 32e-9, 0.5e-9).unwrap();
        let fft = Fft2::new(g.nx, g.ny);
        let mut st = packet(&g, one(), zero(), 2e-9);
        let before = st.clone();
        kinetic_half_spectrum(&mut st, &fft, 0.0);
        assert_eq!(st, before);
    }

    #[test]
    fn pi_rotation_flips_spin() {
        let g = make_grid(24e-9, 24e-9, 0.5e-9).unwrap();
        let mut st = packet(&g, one(), zero(), 2e-9);
        let c = CONSTANTS;
        let v = 1e6;
        let l = 1e-3;
        // |g|μ_B B T / ħ = π
        let b = std::f64::consts::PI * c.hbar * v / (c.g_abs() * c.mu_b * l);
        apply_b1_rotation(&mut st, b, l, v).unwrap();
        let (u, d) = populations(&st);
        assert!(u < 1e-24 && (d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_potential_is_global_phase() {
        let g = make_grid(24e-9, 24e-9, 0.5e-9).unwrap();
        let mut scene = ScatteringScene::free(&g);
        let v0 = 0.3 * CONSTANTS.e;
        scene.shift_potential(v0);
        scene.smooth_potential_max = v0;
        let fft = Arc::new(Fft2::new(g.nx, g.ny));
        let dt = 1e-16;
        let mut p = Propagator::new(Arc::new(scene), fft, StepPlan::new(dt, 1)).unwrap();
        let mut st = packet(&g, Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8), 2e-9);
        let before = st.clone();
        p.potential_half_step(&mut st, &ActiveField::none(), false).unwrap();
        let ph = Complex64::from_polar(1.0, -v0 * dt / (2.0 * CONSTANTS.hbar));
        for i in 0..g.len() {
            assert!((st.up[i] - before.up[i] * ph).norm() < 1e-12 * before.up[i].norm().max(1e-300) + 1e-300);
            assert!((st.dn[i] - before.dn[i] * ph).norm() < 1e-12 * before.dn[i].norm().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn gradient_zeeman_is_opposite_phase() {
        let g = make_grid(24e-9, 24e-9, 0.5e-9).unwrap();
        let mut p = free_propagator(&g, 1e-16);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut st = packet(&g, Complex64::new(h, 0.0), Complex64::new(h, 0.0), 2e-9);
        let before = st.clone();
        let field = ActiveField {
            g2: 1e7,
            y_ref: 12e-9,
            ..ActiveField::none()
        };
        p.potential_half_step(&mut st, &field, false).unwrap();
        let peak = before.up.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
        for i in 0..g.len() {
            assert!((st.up[i].norm() - before.up[i].norm()).abs() < 1e-14 * peak);
            assert!((st.dn[i].norm() - before.dn[i].norm()).abs() < 1e-14 * peak);
            if before.up[i].norm() > 1e-3 * peak {
                let pu = (st.up[i] / before.up[i]).arg();
                let pd = (st.dn[i] / before.dn[i]).arg();
                assert!((pu + pd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn free_gaussian_spreads_analytically() {
        let g = make_grid(160e-9, 48e-9, 0.4e-9).unwrap();
        let s0 = 3e-9;
        let spec = PacketSpec {
            x0c: 80e-9,
            y0c: 24e-9,
            sigma_x: s0,
            sigma_y: 4e-9,
            lambda_db: 4e-9,
            alpha0: one(),
            beta0: zero(),
        };
        let mut st = init_gaussian_spinor(&g, &spec).unwrap();
        let c = CONSTANTS;
        let t = 2.0 * c.m_e * s0 * s0 / c.hbar;
        let mut p = free_propagator(&g, t / 50.0);
        p.evolve(&mut st, &ActiveField::none(), 50, |_| Flow::Continue).unwrap();
        // amplitude width σ₀ ↔ density variance σ₀²/2
        let (_, _, vx, _) = st.position_moments();
        let expected = s0 * (1.0 + (c.hbar * t / (c.m_e * s0 * s0)).powi(2)).sqrt();
        let measured = (2.0 * vx).sqrt();
        assert!((measured / expected - 1.0).abs() < 5e-3, "{measured:e} vs {expected:e}");
    }

    #[test]
    fn spin_z_conserved_without_field() {
        let g = make_grid(48e-9, 48e-9, 0.5e-9).unwrap();
        let mut p = free_propagator(&g, 5e-17);
        let mut st = packet(&g, Complex64::new(0.8, 0.0), Complex64::new(0.0, 0.6), 3e-9);
        let (u0, d0) = populations(&st);
        p.evolve(&mut st, &ActiveField::none(), 50, |_| Flow::Continue).unwrap();
        let (u1, d1) = populations(&st);
        assert!((u1 - u0).abs() < 1e-12 && (d1 - d0).abs() < 1e-12);
    }

    #[test]
    fn analytic_and_resolved_b1_agree() {
        let g = make_grid(48e-9, 32e-9, 0.5e-9).unwrap().with_origin(0.0, -16e-9);
        let c = CONSTANTS;
        let lambda = 3e-9;
        let v = c.de_broglie_velocity(lambda);
        let l = 30e-9;
        let b = 0.37 * std::f64::consts::PI * c.hbar * v / (c.g_abs() * c.mu_b * l);
        let spec = PacketSpec {
            x0c: 8e-9,
            y0c: 0.0,
            sigma_x: 2e-9,
            sigma_y: 3e-9,
            lambda_db: lambda,
            alpha0: one(),
            beta0: zero(),
        };
        let mut a = init_gaussian_spinor(&g, &spec).unwrap();
        let mut r = a.clone();
        apply_b1_rotation(&mut a, b, l, v).unwrap();
        let mut p = free_propagator(&g, 1e-15);
        p.run_stage(&mut r, &FieldStage::b1(b, l, StageMode::GridResolved), v, 0.0).unwrap();
        let (pa, pr) = (populations(&a).1, populations(&r).1);
        assert!((pa - pr).abs() < 1e-10, "{pa} vs {pr}");
    }

    #[test]
    fn oversized_resolved_stage_is_rejected() {
        let g = make_grid(24e-9, 24e-9, 0.5e-9).unwrap();
        let stage = FieldStage::b2(1.0, 1e-6, StageMode::GridResolved);
        assert!(matches!(stage.validate(Some(&g)), Err(Error::Geometry(_))));
    }

    #[test]
    fn ap_substep_is_norm_preserving() {
        let g = make_grid(32e-9, 32e-9, 0.5e-9).unwrap().with_origin(0.0, -16e-9);
        let mut p = free_propagator(&g, 2e-17);
        let field = ActiveField {
            g2: 1e9,
            y_ref: 0.0,
            h2: H2Terms {
                ap_cross: true,
                a2_squared: true,
                a2_aself: false,
                zeeman: true,
            },
            ..ActiveField::none()
        };
        let mut st = packet(&g, one(), zero(), 2e-9);
        let n0 = st.norm();
        p.evolve(&mut st, &field, 20, |_| Flow::Continue).unwrap();
        assert!((st.norm() - n0).abs() < 1e-10);
    }

    #[test]
    fn dt_guard_rejects_coarse_steps() {
        let g = make_grid(24e-9, 24e-9, 0.5e-9).unwrap();
        let mut p = free_propagator(&g, 1e-12);
        let field = ActiveField {
            b1: 10.0,
            ..ActiveField::none()
        };
        let mut st = packet(&g, one(), zero(), 2e-9);
        assert!(matches!(
            p.evolve(&mut st, &field, 1, |_| Flow::Continue),
            Err(Error::Config(_))
        ));
    }
}
