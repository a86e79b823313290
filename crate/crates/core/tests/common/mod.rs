//! Numerical checks shared by the property suite and the acceptance target.
//! Each returns the measured quantity; callers apply their own thresholds.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use spinfringe::analysis::{y0_axis, TransverseSlice};
use spinfringe::selffield::spectral_gradient;
use spinfringe::{
    current_total, far_field, husimi, init_gaussian_spinor, make_grid, ActiveField, CurlMethod, CurrentTerms, Fft2, Flow,
    GratingSpec, Grid2D, KyAxis, PacketSpec, Propagator, ScalarField, ScatteringScene, SelfFieldSolver, Spin, SpinorField,
    StepPlan, VectorField, CONSTANTS,
};

/// `(amplitude, centre, width, wavenumber, phase)` of one Gaussian term.
pub type Term = (f64, f64, f64, f64, f64);

pub const LINE_NY: usize = 256;
pub const LINE_DY: f64 = 0.5e-9;

pub fn spinor(theta: f64, phi: f64) -> (Complex64, Complex64) {
    (
        Complex64::new((0.5 * theta).cos(), 0.0),
        Complex64::from_polar((0.5 * theta).sin(), phi),
    )
}

pub fn packet(grid: &Grid2D, x0c: f64, sigma: f64, lambda: f64, spin: (Complex64, Complex64)) -> SpinorField {
    let spec = PacketSpec {
        x0c,
        y0c: 0.0,
        sigma_x: sigma,
        sigma_y: sigma,
        lambda_db: lambda,
        alpha0: spin.0,
        beta0: spin.1,
    };
    init_gaussian_spinor(grid, &spec).unwrap()
}

/// Superposition of Gaussian terms sampled at `j·dy`.
pub fn random_column(ny: usize, dy: f64, terms: &[Term]) -> Vec<Complex64> {
    (0..ny)
        .map(|j| {
            let y = j as f64 * dy;
            terms
                .iter()
                .map(|&(amp, yc, s, k, ph)| {
                    let u = y - yc;
                    Complex64::from_polar(amp * (-u * u / (2.0 * s * s)).exp(), k * u + ph)
                })
                .sum()
        })
        .collect()
}

/// Parameter ranges for random columns on an `ny`-point line.
pub fn term_ranges(ny: usize, dy: f64) -> [(f64, f64); 5] {
    let len = ny as f64 * dy;
    [
        (0.1, 1.0),
        (0.3 * len, 0.7 * len),
        (4.0 * dy, 0.08 * len),
        (-0.3 * PI / dy, 0.3 * PI / dy),
        (0.0, 2.0 * PI),
    ]
}

/// Largest error of the field of a Gaussian current sheet against the
/// closed-form erf profile, relative to the peak field.
pub fn sheet_field_error() -> f64 {
    let (ny, dy, s, j0) = (1024, 0.25e-9, 6e-9, 3.0e7);
    let g = Grid2D::new(16, ny, 0.25e-9, dy)
        .unwrap()
        .with_origin(0.0, -0.5 * ny as f64 * dy);
    let profile: Vec<f64> = (0..ny).map(|iy| j0 * (-(g.y(iy).powi(2)) / (2.0 * s * s)).exp()).collect();
    let mut j = VectorField::zeros(&g);
    for iy in 0..ny {
        for ix in 0..g.nx {
            j.x[g.idx(ix, iy)] = profile[iy];
        }
    }
    let sol = SelfFieldSolver::new(&g, Arc::new(Fft2::new(g.nx, g.ny)), CurlMethod::Spectral)
        .solve(&j)
        .unwrap();
    // ∂_y B_z = μ₀ (j - mean j) on the periodic line
    let mu0 = CONSTANTS.mu0;
    let mean_j = profile.iter().sum::<f64>() / ny as f64;
    let raw: Vec<f64> = (0..ny)
        .map(|iy| {
            let y = g.y(iy);
            mu0 * (j0 * s * (0.5 * PI).sqrt() * libm::erf(y / (2f64.sqrt() * s)) - mean_j * y)
        })
        .collect();
    let offset = raw.iter().sum::<f64>() / ny as f64;
    let peak = raw.iter().fold(0.0_f64, |m, v| m.max((v - offset).abs()));
    let mut worst = 0.0_f64;
    for ix in 0..g.nx {
        for iy in 0..ny {
            worst = worst.max((sol.bz.at(ix, iy) - (raw[iy] - offset)).abs());
        }
    }
    worst / peak
}

/// `|ψ_Δ - ψ_{Δ/2}| / |ψ_{Δ/2} - ψ_{Δ/4}|` for a packet in a smooth,
/// non-separable potential; 4 for a second-order scheme.
pub fn richardson_ratio() -> f64 {
    let g = make_grid(40e-9, 40e-9, 0.5e-9).unwrap().with_origin(0.0, -20e-9);
    let mut scene = ScatteringScene::free(&g);
    let v0 = 0.05 * CONSTANTS.e;
    let kx = 2.0 * PI / 40e-9;
    scene.potential = ScalarField::from_fn(&g, |x, y| v0 * (kx * x).cos() * (1.0 + 0.5 * (kx * y).sin()));
    scene.smooth_potential_max = 1.5 * v0;
    let scene = Arc::new(scene);
    let fft = Arc::new(Fft2::new(g.nx, g.ny));
    let start = packet(&g, 20e-9, 4e-9, 3e-9, spinor(0.7, 0.3));
    let total = 3e-14;
    let run = |n: usize| {
        let mut p = Propagator::new(scene.clone(), fft.clone(), StepPlan::new(total / n as f64, n)).unwrap();
        let mut st = start.clone();
        p.evolve(&mut st, &ActiveField::none(), n, |_| Flow::Continue).unwrap();
        st
    };
    let dist = |a: &SpinorField, b: &SpinorField| {
        let s: f64 = a
            .up
            .iter()
            .zip(&b.up)
            .chain(a.dn.iter().zip(&b.dn))
            .map(|(u, v)| (u - v).norm_sqr())
            .sum();
        (s * g.cell_area()).sqrt()
    };
    let (a, b, c) = (run(10), run(20), run(40));
    dist(&a, &b) / dist(&b, &c)
}

/// Norm change over `steps` self-consistent steps through a small grating.
pub fn norm_drift(steps: usize) -> f64 {
    let g = make_grid(48e-9, 64e-9, 0.5e-9).unwrap().with_origin(0.0, -32e-9);
    let grating = GratingSpec {
        period: 16e-9,
        open_fraction: 0.5,
        thickness: 6e-9,
        barrier_ev: 0.5,
        image_scale: 0.001,
        x_front: 24e-9,
        n_slits: 3,
        y_center: 0.0,
    };
    let scene = ScatteringScene::build(&g, Some(&grating), None).unwrap();
    let plan = StepPlan::new(5e-17, steps).with_self_field(true);
    let mut p = Propagator::new(Arc::new(scene), Arc::new(Fft2::new(g.nx, g.ny)), plan).unwrap();
    let mut st = packet(&g, 12e-9, 3e-9, 2.73e-9, spinor(1.1, 0.4));
    let n0 = st.norm();
    let report = p.evolve(&mut st, &ActiveField::none(), steps, |_| Flow::Continue).unwrap();
    assert_eq!(report.steps_taken, steps);
    (st.norm() - n0).abs()
}

/// Largest `|∂_x A_x + ∂_y A_y|` of a packet's self-field, relative to the
/// largest single derivative.
pub fn divergence_ratio(theta: f64, phi: f64, sigma: f64) -> f64 {
    let g = make_grid(40e-9, 48e-9, 0.4e-9).unwrap().with_origin(0.0, -24e-9);
    let st = packet(&g, 20e-9, sigma, 2.73e-9, spinor(theta, phi));
    let j = current_total(&st, None, CurrentTerms::default()).unwrap();
    let fft = Arc::new(Fft2::new(g.nx, g.ny));
    let sol = SelfFieldSolver::new(&g, fft.clone(), CurlMethod::Spectral).solve(&j).unwrap();
    let (dax, _) = spectral_gradient(&sol.a.x, &g, &fft);
    let (_, day) = spectral_gradient(&sol.a.y, &g, &fft);
    let scale = dax.iter().chain(&day).fold(0.0_f64, |m, v| m.max(v.abs()));
    let div = dax.iter().zip(&day).fold(0.0_f64, |m, (a, b)| m.max((a + b).abs()));
    div / scale
}

/// `(σ_y completeness defect, Parseval defect)` of the screen readout of a
/// random two-component line, both relative.
pub fn readout_defects(up: &[Term], dn: &[Term]) -> (f64, f64) {
    let slice = TransverseSlice::from_amplitudes(
        -64e-9,
        LINE_DY,
        random_column(LINE_NY, LINE_DY, up),
        random_column(LINE_NY, LINE_DY, dn),
    )
    .unwrap();
    let prof = far_field(&slice, 0.5, 2.66e5, 4).unwrap();
    let peak = prof.total().iter().cloned().fold(0.0, f64::max);
    let completeness = (0..prof.len())
        .map(|i| (prof.i_py[i] + prof.i_ny[i] - prof.i_up[i] - prof.i_dn[i]).abs())
        .fold(0.0, f64::max)
        / peak;
    let n = slice.norm();
    (completeness, (prof.integral() - n).abs() / n)
}

pub const HUSIMI_NY: usize = 320;

/// `(smallest Q value, largest shift-covariance defect relative to peak Q)`
/// for a random line boosted by `shift` steps of the `k_y` axis.
pub fn husimi_defects(terms: &[Term], shift: usize) -> (f64, f64) {
    let (ny, dy) = (HUSIMI_NY, LINE_DY);
    let col = random_column(ny, dy, terms);
    let dn: Vec<Complex64> = col.iter().map(|v| v * Complex64::new(0.3, -0.2)).collect();
    let slice = TransverseSlice::from_amplitudes(0.0, dy, col.clone(), dn.clone()).unwrap();
    let ky = KyAxis::for_grid(dy, 0.5 * PI / dy, 2e7).unwrap();
    let axis = y0_axis(&slice, 8);
    let a = husimi(&slice, 12e-9, &axis, &ky).unwrap();
    let min_q = a.q_up.iter().chain(&a.q_dn).cloned().fold(f64::INFINITY, f64::min);

    let kappa = shift as f64 * ky.step;
    let boost = |v: &[Complex64]| -> Vec<Complex64> {
        v.iter()
            .enumerate()
            .map(|(j, x)| x * Complex64::from_polar(1.0, kappa * j as f64 * dy))
            .collect()
    };
    let moved = TransverseSlice::from_amplitudes(0.0, dy, boost(&col), boost(&dn)).unwrap();
    let b = husimi(&moved, 12e-9, &axis, &ky).unwrap();
    let peak = a.q_up.iter().chain(&a.q_dn).cloned().fold(0.0, f64::max);
    let mut worst = 0.0_f64;
    for spin in [Spin::Up, Spin::Down] {
        for iy in 0..axis.len() {
            for ik in 0..ky.n - shift {
                worst = worst.max((a.at(spin, iy, ik) - b.at(spin, iy, ik + shift)).abs());
            }
        }
    }
    (min_q, worst / peak)
}
