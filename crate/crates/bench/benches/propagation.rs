use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spinfringe::analysis::TransverseSlice;
use spinfringe::{
    current_total, far_field, ActiveField, CurlMethod, CurrentTerms, Fft2, Propagator, ScatteringScene,
    SelfFieldSolver, StepPlan,
};
use spinfringe_bench::packet_on_grid;

const SIZES: [(usize, usize); 2] = [(256, 256), (512, 512)];

fn fft_round_trip(c: &mut Criterion) {
    let mut group = c.benchmark_group("fft2_round_trip");
    for (nx, ny) in SIZES {
        let (_, state) = packet_on_grid(nx, ny);
        let fft = Fft2::new(nx, ny);
        let mut field = state.up.clone();
        let mut spec = vec![Default::default(); field.len()];
        group.bench_with_input(BenchmarkId::from_parameter(format!("{nx}x{ny}")), &(), |b, _| {
            b.iter(|| {
                fft.forward(&mut field, &mut spec);
                fft.inverse(&mut spec, &mut field);
            })
        });
    }
    group.finish();
}

fn strang_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("strang_step");
    group.sample_size(20);
    for (nx, ny) in SIZES {
        for self_field in [false, true] {
            let (grid, mut state) = packet_on_grid(nx, ny);
            let fft = Arc::new(Fft2::new(nx, ny));
            let plan = StepPlan::new(2e-17, 0).with_self_field(self_field);
            let mut prop = Propagator::new(Arc::new(ScatteringScene::free(&grid)), fft, plan).unwrap();
            let field = ActiveField::none();
            let label = format!("{nx}x{ny}/{}", if self_field { "self_field" } else { "free" });
            group.bench_function(label, |b| b.iter(|| prop.strang_step(&mut state, &field).unwrap()));
        }
    }
    group.finish();
}

fn self_field_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("self_field_solve");
    group.sample_size(20);
    for (nx, ny) in SIZES {
        let (grid, state) = packet_on_grid(nx, ny);
        let mut solver = SelfFieldSolver::new(&grid, Arc::new(Fft2::new(nx, ny)), CurlMethod::Spectral);
        let j = current_total(&state, None, CurrentTerms::default()).unwrap();
        group.bench_function(format!("{nx}x{ny}"), |b| b.iter(|| solver.solve(&j).unwrap()));
    }
    group.finish();
}

fn screen_projection(c: &mut Criterion) {
    let (_, state) = packet_on_grid(512, 512);
    let slice = TransverseSlice::downstream(&state, 0.0).unwrap();
    c.bench_function("far_field_512", |b| b.iter(|| far_field(&slice, 0.5, 2.65e5, 4).unwrap()));
}

criterion_group!(benches, fft_round_trip, strang_step, self_field_solve, screen_projection);
criterion_main!(benches);
