//! Grating potentials (hard-wall bars plus image-charge attraction) and the
//! boundary absorbing mask.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::CONSTANTS;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};

/// Transmission grating: bars of height `barrier_ev` filling the slab
/// `x ∈ [x_front, x_front + thickness]` except `n_slits` openings of width
/// `open_fraction · period` centred about `y_center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GratingSpec {
    pub period: f64,
    pub open_fraction: f64,
    pub thickness: f64,
    pub barrier_ev: f64,
    pub image_scale: f64,
    pub x_front: f64,
    pub n_slits: usize,
    pub y_center: f64,
}

impl GratingSpec {
    #[inline]
    pub fn slit_width(&self) -> f64 {
        self.open_fraction * self.period
    }

    #[inline]
    pub fn x_back(&self) -> f64 {
        self.x_front + self.thickness
    }

    #[inline]
    pub fn in_slab(&self, x: f64) -> bool {
        x >= self.x_front && x <= self.x_back()
    }

    pub fn slit_centers(&self) -> Vec<f64> {
        let mid = (self.n_slits as f64 - 1.0) / 2.0;
        (0..self.n_slits)
            .map(|j| self.y_center + (j as f64 - mid) * self.period)
            .collect()
    }

    /// Centre of the slit containing `y`, if any.
    pub fn slit_containing(&self, y: f64) -> Option<f64> {
        if self.n_slits == 0 {
            return None;
        }
        let mid = (self.n_slits as f64 - 1.0) / 2.0;
        let j = ((y - self.y_center) / self.period + mid).round();
        let j = j.clamp(0.0, (self.n_slits - 1) as f64);
        let yc = self.y_center + (j - mid) * self.period;
        ((y - yc).abs() <= self.slit_width() / 2.0).then_some(yc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.open_fraction > 0.0 && self.open_fraction < 1.0) {
            return Err(Error::Config(format!(
                "open fraction must lie in (0, 1), got {}",
                self.open_fraction
            )));
        }
        if !(self.period > 0.0 && self.thickness > 0.0) {
            return Err(Error::Config("grating period and thickness must be positive".into()));
        }
        if !(self.image_scale >= 0.0 && self.image_scale < 1.0) {
            return Err(Error::Config(format!(
                "image scale must lie in [0, 1), got {}",
                self.image_scale
            )));
        }
        if self.barrier_ev < 0.0 || !self.barrier_ev.is_finite() {
            return Err(Error::Config("barrier height must be non-negative".into()));
        }
        Ok(())
    }

    fn check_fits(&self, grid: &Grid2D) -> Result<()> {
        self.validate()?;
        if self.x_front < grid.x0 || self.x_back() > grid.x_max() {
            return Err(Error::Geometry("grating slab extends past the grid in x".into()));
        }
        if let (Some(lo), Some(hi)) = (
            self.slit_centers().first().copied(),
            self.slit_centers().last().copied(),
        ) {
            let half = self.slit_width() / 2.0;
            if lo - half < grid.y0 || hi + half > grid.y_max() {
                return Err(Error::Geometry(format!(
                    "{} slits of period {:.3e} m extend past the grid in y",
                    self.n_slits, self.period
                )));
            }
        }
        Ok(())
    }
}

/// Boundary absorber: a `cos²` ramp over `width_frac` of each edge, falling to
/// `floor` at the outermost grid line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsorberSpec {
    pub width_frac: f64,
    pub floor: f64,
}

impl Default for AbsorberSpec {
    fn default() -> Self {
        Self {
            width_frac: 0.05,
            floor: 0.0,
        }
    }
}

impl AbsorberSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_frac > 0.0 && self.width_frac <= 0.25) {
            return Err(Error::Config(format!(
                "absorber width fraction must lie in (0, 0.25], got {}",
                self.width_frac
            )));
        }
        if !(0.0..=1.0).contains(&self.floor) {
            return Err(Error::Config("absorber floor must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn ramp(&self, i: usize, n: usize) -> f64 {
        let width = (self.width_frac * n as f64).max(1.0);
        let u = i.min(n - 1 - i) as f64;
        if u >= width {
            1.0
        } else {
            let s = (0.5 * PI * u / width).sin();
            self.floor + (1.0 - self.floor) * s * s
        }
    }
}

/// `V_g` in eV: zero inside slit openings and outside the slab, `V₀` in the bars.
pub fn geometric_potential(grid: &Grid2D, g: &GratingSpec) -> Result<ScalarField> {
    g.check_fits(grid)?;
    Ok(ScalarField::from_fn(grid, |x, y| {
        if g.in_slab(x) && g.slit_containing(y).is_none() {
            g.barrier_ev
        } else {
            0.0
        }
    }))
}

/// Image-charge energy in eV inside the slit openings of the slab:
/// `-(η e²/8πε₀)(1/d₁ + 1/d₂)` with wall distances clamped at `dy/2`.
pub fn image_potential(grid: &Grid2D, g: &GratingSpec) -> Result<ScalarField> {
    g.check_fits(grid)?;
    let prefactor = g.image_scale * CONSTANTS.coulomb_constant_e2() / 2.0 / CONSTANTS.e;
    let half = g.slit_width() / 2.0;
    let clamp = grid.dy / 2.0;
    Ok(ScalarField::from_fn(grid, |x, y| {
        if !g.in_slab(x) || g.image_scale == 0.0 {
            return 0.0;
        }
        match g.slit_containing(y) {
            Some(yc) => {
                let d1 = (yc + half - y).max(clamp);
                let d2 = (y - (yc - half)).max(clamp);
                -prefactor * (1.0 / d1 + 1.0 / d2)
            }
            None => 0.0,
        }
    }))
}

/// Separable `cos²` absorbing mask, equal to 1 away from the edges.
pub fn absorbing_mask(grid: &Grid2D, a: &AbsorberSpec) -> Result<ScalarField> {
    a.validate()?;
    let gx: Vec<f64> = (0..grid.nx).map(|i| a.ramp(i, grid.nx)).collect();
    let gy: Vec<f64> = (0..grid.ny).map(|i| a.ramp(i, grid.ny)).collect();
    let mut values = Vec::with_capacity(grid.len());
    for fy in &gy {
        values.extend(gx.iter().map(|fx| fx * fy));
    }
    Ok(ScalarField {
        nx: grid.nx,
        ny: grid.ny,
        values,
    })
}

/// Static scattering environment of one transit: grating potentials and mask.
#[derive(Debug, Clone)]
pub struct ScatteringScene {
    pub grid: Grid2D,
    pub grating: Option<GratingSpec>,
    /// `V_g + V_image` in joules.
    pub potential: ScalarField,
    /// Largest |V_image| in joules; the hard-wall bars are excluded.
    pub smooth_potential_max: f64,
    pub mask: Option<ScalarField>,
}

impl ScatteringScene {
    pub fn free(grid: &Grid2D) -> Self {
        Self {
            grid: grid.clone(),
            grating: None,
            potential: ScalarField::zeros(grid),
            smooth_potential_max: 0.0,
            mask: None,
        }
    }

    pub fn build(grid: &Grid2D, grating: Option<&GratingSpec>, absorber: Option<&AbsorberSpec>) -> Result<Self> {
        let mut scene = Self::free(grid);
        if let Some(g) = grating {
            let vg = geometric_potential(grid, g)?;
            let vi = image_potential(grid, g)?;
            scene.smooth_potential_max = vi.max_abs() * CONSTANTS.e;
            scene.potential.values = vg
                .values
                .iter()
                .zip(&vi.values)
                .map(|(a, b)| (a + b) * CONSTANTS.e)
                .collect();
            scene.grating = Some(*g);
        }
        if let Some(a) = absorber {
            scene.mask = Some(absorbing_mask(grid, a)?);
        }
        Ok(scene)
    }

    /// Adds a constant energy (joules) everywhere.
    pub fn shift_potential(&mut self, offset: f64) {
        self.potential.values.iter_mut().for_each(|v| *v += offset);
    }
}
