//! Shared fixtures for the propagation benchmarks in `benches/`.

use num_complex::Complex64;
use spinfringe::{init_gaussian_spinor, Grid2D, PacketSpec, SpinorField};

/// A square-ish grid at 0.273 nm spacing with a centred spin-up packet.
pub fn packet_on_grid(nx: usize, ny: usize) -> (Grid2D, SpinorField) {
    let h = 2.73e-10;
    let grid = Grid2D::new(nx, ny, h, h)
        .expect("valid grid")
        .with_origin(-0.5 * nx as f64 * h, -0.5 * ny as f64 * h);
    let spec = PacketSpec {
        x0c: 0.0,
        y0c: 0.0,
        sigma_x: 0.08 * nx as f64 * h,
        sigma_y: 0.08 * ny as f64 * h,
        lambda_db: 2.73e-9,
        alpha0: Complex64::new(0.8, 0.0),
        beta0: Complex64::new(0.6, 0.0),
    };
    let state = init_gaussian_spinor(&grid, &spec).expect("valid packet");
    (grid, state)
}
