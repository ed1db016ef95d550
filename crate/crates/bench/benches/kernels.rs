use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use snaklat::continuation::{continue_branch, continue_in_d, Direction, Parameter, StepConfig};
use snaklat::dynamics::{integrate, IntegratorConfig};
use snaklat::lattice::unfold;
use snaklat::linalg::inertia;
use snaklat::model::anti_continuum_pattern;
use snaklat::spectral::full_jacobian;
use snaklat::{Family, GridSpec, NewtonOptions, Nonlinearity, PatternId, Problem, Symmetry};

fn setup(n_d: usize) -> (Problem, snaklat::Field) {
    let nl = Nonlinearity::builtin(Family::CubicQuintic).unwrap();
    let id = PatternId::ubar(3, 2, Symmetry::OffSite);
    let u0 = anti_continuum_pattern(&id, &nl, 0.5, n_d).unwrap();
    let p = Problem::new(GridSpec::wedge(n_d, Symmetry::OffSite).unwrap(), nl);
    let u = continue_in_d(&p, &u0, 0.5, 1e-3).unwrap().u;
    (p, u)
}

fn assembly(c: &mut Criterion) {
    let (p, u) = setup(20);
    c.bench_function("residual_wedge_20", |b| b.iter(|| p.residual(black_box(u.values()), 0.5, 1e-3)));
    c.bench_function("jacobian_wedge_20", |b| b.iter(|| p.jacobian(black_box(u.values()), 0.5, 1e-3)));
}

fn newton(c: &mut Criterion) {
    let (p, u) = setup(20);
    let guess: Vec<f64> = u.values().iter().map(|v| v * 1.01).collect();
    c.bench_function("newton_wedge_20", |b| {
        b.iter(|| p.newton(black_box(&guess), 0.5, 1e-3, &NewtonOptions::default()).unwrap())
    });
}

fn spectral(c: &mut Criterion) {
    let (p, u) = setup(20);
    let (_, j) = full_jacobian(&u, p.nonlinearity(), 0.5, 1e-3).unwrap();
    c.bench_function("inertia_full_40x40", |b| b.iter(|| inertia(black_box(&j), 1e-10, None).unwrap()));
}

fn continuation(c: &mut Criterion) {
    let (p, u) = setup(10);
    let start = snaklat::continuation::BranchPoint::new(u, 0.5, 1e-3);
    let cfg = StepConfig { max_points: 50, h_max: 0.02, ..Default::default() };
    c.bench_function("continuation_50_points", |b| {
        b.iter(|| continue_branch(&p, black_box(&start), Parameter::Mu, Direction::Increasing, &cfg).unwrap())
    });
}

fn dynamics(c: &mut Criterion) {
    let (p, u) = setup(6);
    let full = p.full();
    let u = unfold(&u).unwrap();
    let u0 = snaklat::Field::new(*u.grid(), u.values().iter().map(|v| v + 1e-3).collect()).unwrap();
    let cfg = IntegratorConfig::default();
    c.bench_function("dopri_t10_full_12x12", |b| {
        b.iter(|| integrate(&full, black_box(&u0), 0.5, 1e-3, 10.0, Some(&u), &cfg).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = assembly, newton, spectral, continuation, dynamics
}
criterion_main!(benches);
