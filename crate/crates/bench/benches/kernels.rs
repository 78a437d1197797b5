use criterion::{criterion_group, criterion_main, Criterion};
use nnlab::acs::{integrability_residual, invert_map};
use nnlab::dbar::SpectralHomotopy;
use nnlab::lp::{build_cone_pair, dyadic_convolve};
use nnlab::smooth::{SmoothingLevel, SmoothingOperator};
use nnlab::znorm::{zygmund_norm_besov, zygmund_norm_diff, ZygmundIndex};
use nnlab::{GridSpec, LpFamily};
use nnlab_bench::*;
use std::hint::black_box;

fn littlewood_paley(c: &mut Criterion) {
    let u = weierstrass_line(1 << 14, 0.8);
    let fam = LpFamily::standard(u.spec());
    c.bench_function("dyadic_piece_2^14", |b| b.iter(|| dyadic_convolve(&fam, 6, black_box(&u)).unwrap()));
    let idx = ZygmundIndex::new(0.6).unwrap();
    c.bench_function("besov_norm_2^14", |b| b.iter(|| zygmund_norm_besov(black_box(&u), idx, &fam, None).unwrap()));
    let small = weierstrass_line(1 << 10, 0.8);
    c.bench_function("difference_norm_2^10", |b| b.iter(|| zygmund_norm_diff(black_box(&small), idx, None).unwrap()));
}

fn smoothing(c: &mut Criterion) {
    let u = weierstrass_line(1 << 14, 1.2);
    let op = SmoothingOperator::multiplier(LpFamily::standard(u.spec()));
    c.bench_function("multiplier_smoothing_2^14", |b| b.iter(|| op.apply(SmoothingLevel::new(5), black_box(&u)).unwrap()));
    let grid = GridSpec::cube(1, 1 << 15, 64.0).unwrap();
    let pair = build_cone_pair(&grid, 2, 9).unwrap();
    let cone = SmoothingOperator::cone(pair);
    let v = nnlab::GridField::from_real_fn(&grid, |x| (0.3 * x[0]).sin()).unwrap();
    c.bench_function("cone_smoothing_2^15", |b| b.iter(|| cone.apply(SmoothingLevel::new(5), black_box(&v)).unwrap()));
}

fn structures(c: &mut Criterion) {
    let form = torus_form(8);
    let h = SpectralHomotopy::new(form.grid()).unwrap();
    c.bench_function("spectral_homotopy_8^4", |b| b.iter(|| h.solve(black_box(&form)).unwrap()));
    let x = generated_structure(8);
    c.bench_function("integrability_residual_8^4", |b| b.iter(|| integrability_residual(black_box(&x)).unwrap()));
    let f = small_map(32);
    c.bench_function("invert_map_32^2", |b| b.iter(|| invert_map(black_box(&f), 1e-13).unwrap()));
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = littlewood_paley, smoothing, structures
}
criterion_main!(kernels);
