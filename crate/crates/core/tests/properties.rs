mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use spinfringe::analysis::TransverseSlice;
use spinfringe::{far_field, make_grid, populations, ActiveField, Fft2, Flow, Propagator, ScatteringScene, StepPlan};

fn terms(ny: usize) -> impl Strategy<Value = Vec<Term>> {
    let r = term_ranges(ny, LINE_DY);
    prop::collection::vec(
        (r[0].0..r[0].1, r[1].0..r[1].1, r[2].0..r[2].1, r[3].0..r[3].1, r[4].0..r[4].1),
        1..4,
    )
}

#[test]
fn current_sheet_field_matches_erf_profile() {
    let err = sheet_field_error();
    assert!(err < 1e-6, "relative error {err:e}");
}

#[test]
fn strang_splitting_is_second_order() {
    let ratio = richardson_ratio();
    assert!((ratio - 4.0).abs() < 0.5, "Richardson ratio {ratio}");
}

#[test]
fn thousand_self_consistent_steps_keep_the_norm() {
    let drift = norm_drift(1000);
    assert!(drift < 1e-10, "drift {drift:e}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn vector_potential_is_divergence_free(theta in 0.0..std::f64::consts::PI, phi in 0.0..6.28, sigma in 3e-9..4.5e-9) {
        let r = divergence_ratio(theta, phi, sigma);
        prop_assert!(r < 1e-10, "relative divergence {r:e}");
    }

    #[test]
    fn free_flight_preserves_spin_populations(theta in 0.0..std::f64::consts::PI, phi in 0.0..6.28) {
        let g = make_grid(32e-9, 32e-9, 0.5e-9).unwrap().with_origin(0.0, -16e-9);
        let spin = spinor(theta, phi);
        let mut st = packet(&g, 16e-9, 3e-9, 2.73e-9, spin);
        let plan = StepPlan::new(2e-16, 50).with_self_field(true);
        let mut p = Propagator::new(Arc::new(ScatteringScene::free(&g)), Arc::new(Fft2::new(g.nx, g.ny)), plan).unwrap();
        p.evolve(&mut st, &ActiveField::none(), 50, |_| Flow::Continue).unwrap();
        let slice = TransverseSlice::downstream(&st, f64::NEG_INFINITY).unwrap();
        let prof = far_field(&slice, 0.5, 2.66e5, 2).unwrap();
        let (fu, fd) = prof.channel_fractions().unwrap();
        prop_assert!((fu - spin.0.norm_sqr()).abs() < 1e-3);
        prop_assert!((fd - spin.1.norm_sqr()).abs() < 1e-3);
        let (pu, pd) = populations(&st);
        prop_assert!((pu / (pu + pd) - spin.0.norm_sqr()).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 20, ..ProptestConfig::default() })]

    #[test]
    fn screen_readouts_are_complete_and_conserve_norm(up in terms(LINE_NY), dn in terms(LINE_NY)) {
        let (completeness, parseval) = readout_defects(&up, &dn);
        prop_assert!(completeness <= 1e-12, "sigma_y completeness {completeness:e}");
        prop_assert!(parseval < 1e-6, "Parseval {parseval:e}");
    }

    #[test]
    fn husimi_is_positive_and_shift_covariant(t in terms(HUSIMI_NY), shift in 1usize..6) {
        let (min_q, covariance) = husimi_defects(&t, shift);
        prop_assert!(min_q >= 0.0);
        prop_assert!(covariance < 1e-12, "shift covariance {covariance:e}");
    }
}
