use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use iocl_core::em::{self, LgssmParams};
use iocl_core::lqr::Horizon;
use iocl_core::matops::{Matrix, SpdMatrix};
use iocl_core::scenarios::rotation_system;
use iocl_core::sim::{self, NoiseParams, ObservationParams, SimOptions};
use iocl_core::Exec;

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn setup() -> (iocl_core::lqr::SystemParams, NoiseParams, ObservationParams) {
    let sys = rotation_system().unwrap();
    let noise = NoiseParams::state(SpdMatrix::identity(4), SpdMatrix::identity(4), SpdMatrix::scaled_identity(4, 0.01));
    let obs = ObservationParams::State { c: Matrix::identity(4, 4) };
    (sys, noise, obs)
}

fn simulate(c: &mut Criterion) {
    let (sys, noise, obs) = setup();
    let mut group = c.benchmark_group("simulate");
    for (name, exec) in STRATEGIES {
        let options = SimOptions { record_latent: false, exec };
        group.bench_function(BenchmarkId::new(name, "N=200,T=200"), |b| {
            b.iter(|| sim::simulate(&sys, &noise, &obs, Horizon::Infinite, 200, 200, 1, options).unwrap())
        });
    }
    group.finish();
}

fn e_step(c: &mut Criterion) {
    let (sys, noise, obs) = setup();
    let options = SimOptions { record_latent: false, exec: Exec::default() };
    let data = sim::simulate(&sys, &noise, &obs, Horizon::Infinite, 200, 200, 1, options).unwrap();
    let eye = Matrix::identity(4, 4);
    let params = LgssmParams::state_model(eye.clone() * 0.5, eye, SpdMatrix::identity(4), SpdMatrix::identity(4), SpdMatrix::identity(4)).unwrap();
    let mut group = c.benchmark_group("e_step");
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::new(name, "N=200,T=200"), |b| {
            b.iter(|| em::e_step_with(&params, &data, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, simulate, e_step);
criterion_main!(benches);
