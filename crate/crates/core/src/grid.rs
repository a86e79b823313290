//! Uniform Cartesian grids and real-valued fields on them.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Uniform periodic `(x, y)` lattice with FFT-ordered wavenumber axes.
///
/// Storage order for every field on the grid is row-major with `x` fastest:
/// `index = iy * nx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub x0: f64,
    pub y0: f64,
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Wavenumbers in standard FFT order: `0, 1, ..., n/2-1, -n/2, ..., -1` times `2π/(n·h)`.
pub fn fft_wavenumbers(n: usize, h: f64) -> Vec<f64> {
    let dk = 2.0 * PI / (n as f64 * h);
    (0..n)
        .map(|i| {
            let j = if i < n.div_ceil(2) { i as isize } else { i as isize - n as isize };
            j as f64 * dk
        })
        .collect()
}

/// Builds a grid covering at least `extent_x × extent_y` with the given spacing.
///
/// Point counts are rounded up to 5-smooth sizes so the FFTs stay fast; the
/// lower-left corner sits at the origin (see [`Grid2D::with_origin`]).
pub fn make_grid(extent_x: f64, extent_y: f64, spacing: f64) -> Result<Grid2D> {
    if !(extent_x > 0.0 && extent_y > 0.0) || !extent_x.is_finite() || !extent_y.is_finite() {
        return Err(Error::Config(format!(
            "grid extents must be positive, got {extent_x} x {extent_y}"
        )));
    }
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::Config(format!("grid spacing must be positive, got {spacing}")));
    }
    let count = |extent: f64| next_smooth((extent / spacing * (1.0 - 1e-12)).ceil() as usize);
    let (nx, ny) = (count(extent_x), count(extent_y));
    Grid2D::new(nx, ny, spacing, spacing)
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        if nx < 16 || ny < 16 {
            return Err(Error::Config(format!("grid needs at least 16x16 points, got {nx}x{ny}")));
        }
        if !(dx > 0.0 && dy > 0.0) {
            return Err(Error::Config("grid spacings must be positive".into()));
        }
        Ok(Self {
            nx,
            ny,
            dx,
            dy,
            x0: 0.0,
            y0: 0.0,
            kx: fft_wavenumbers(nx, dx),
            ky: fft_wavenumbers(ny, dy),
        })
    }

    pub fn with_origin(mut self, x0: f64, y0: f64) -> Self {
        self.x0 = x0;
        self.y0 = y0;
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        self.x0 + ix as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, iy: usize) -> f64 {
        self.y0 + iy as f64 * self.dy
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.ny).map(|i| self.y(i)).collect()
    }

    #[inline]
    pub fn extent_x(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    #[inline]
    pub fn extent_y(&self) -> f64 {
        self.ny as f64 * self.dy
    }

    #[inline]
    pub fn x_max(&self) -> f64 {
        self.x0 + self.extent_x()
    }

    #[inline]
    pub fn y_max(&self) -> f64 {
        self.y0 + self.extent_y()
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Index of the column whose x coordinate is closest to `x` (clamped to the grid).
    pub fn column_of(&self, x: f64) -> usize {
        let i = ((x - self.x0) / self.dx).round();
        i.clamp(0.0, (self.nx - 1) as f64) as usize
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.dx == other.dx && self.dy == other.dy
    }
}

/// Real scalar field on a grid, stored in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid2D) -> Self {
        Self {
            nx: grid.nx,
            ny: grid.ny,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny {
            let y = grid.y(iy);
            for ix in 0..grid.nx {
                values.push(f(grid.x(ix), y));
            }
        }
        Self {
            nx: grid.nx,
            ny: grid.ny,
            values,
        }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn matches(&self, grid: &Grid2D) -> bool {
        self.nx == grid.nx && self.ny == grid.ny
    }
}

/// Centered-difference derivative along x of a periodic real field.
pub fn ddx(field: &[f64], grid: &Grid2D) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let inv = 0.5 / grid.dx;
    let mut out = vec![0.0; nx * ny];
    for iy in 0..ny {
        let row = &field[iy * nx..(iy + 1) * nx];
        let o = &mut out[iy * nx..(iy + 1) * nx];
        for ix in 0..nx {
            let r = if ix + 1 == nx { 0 } else { ix + 1 };
            let l = if ix == 0 { nx - 1 } else { ix - 1 };
            o[ix] = (row[r] - row[l]) * inv;
        }
    }
    out
}

/// Centered-difference derivative along y of a periodic real field.
pub fn ddy(field: &[f64], grid: &Grid2D) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let inv = 0.5 / grid.dy;
    let mut out = vec![0.0; nx * ny];
    for iy in 0..ny {
        let up = if iy + 1 == ny { 0 } else { iy + 1 };
        let dn = if iy == 0 { ny - 1 } else { iy - 1 };
        for ix in 0..nx {
            out[iy * nx + ix] = (field[up * nx + ix] - field[dn * nx + ix]) * inv;
        }
    }
    out
}
