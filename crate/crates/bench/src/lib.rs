//! Fixtures shared by the benchmarks in `benches/`.

use nnlab::acs::{Acs, TrigMap};
use nnlab::dbar::Form01;
use nnlab::harness::corpus::{line_grid, weierstrass};
use nnlab::{GridField, GridSpec, C64};
use std::f64::consts::PI;

/// W_a on `points` samples of [0, 2), fixed phases.
pub fn weierstrass_line(points: usize, a: f64) -> GridField {
    let phases: Vec<f64> = (0..32).map(|j| 0.7 * j as f64).collect();
    weierstrass(&line_grid(points).unwrap(), a, &phases).unwrap()
}

pub fn torus(dim: usize, n: usize) -> GridSpec {
    GridSpec::cube(dim, n, 2.0 * PI).unwrap()
}

/// Smooth (0,1)-form on T⁴ with a handful of low modes.
pub fn torus_form(n: usize) -> Form01 {
    let g = torus(4, n);
    let comp = |shift: f64| {
        GridField::from_fn(&g, |x| C64::from_polar(1.0, x[0] + 2.0 * x[3] + shift) * 0.3 + C64::new((x[1] - x[2]).sin(), 0.0) * 0.2).unwrap()
    };
    Form01::new(2, vec![vec![comp(0.0), comp(1.0)]]).unwrap()
}

pub fn generated_structure(n: usize) -> Acs {
    TrigMap::random(2, 3, 0.05, 11).symmetrized().generate(&torus(4, n)).unwrap().acs
}

/// Displacement of a contraction of T² with ‖Df‖ about 0.2.
pub fn small_map(n: usize) -> Vec<GridField> {
    let g = torus(2, n);
    vec![
        GridField::from_real_fn(&g, |x| 0.05 * (x[0] + 2.0 * x[1]).sin()).unwrap(),
        GridField::from_real_fn(&g, |x| 0.04 * (2.0 * x[0] - x[1]).cos()).unwrap(),
    ]
}
