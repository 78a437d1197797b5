//! Deterministic corpora: the seed fixes every random choice.

use crate::acs::{integrability_residual, jacobian_norm, Acs, TrigMap};
use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusKind {
    Weierstrass,
    Bandlimited,
    Diffeo,
    Acs,
}

impl CorpusKind {
    pub const ALL: [CorpusKind; 4] = [CorpusKind::Weierstrass, CorpusKind::Bandlimited, CorpusKind::Diffeo, CorpusKind::Acs];

    pub fn name(self) -> &'static str {
        match self {
            CorpusKind::Weierstrass => "weierstrass",
            CorpusKind::Bandlimited => "bandlimited",
            CorpusKind::Diffeo => "diffeo",
            CorpusKind::Acs => "acs",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown corpus kind '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusOptions {
    /// Points of the 1-D grid on [0, 2) for the scalar kinds.
    pub points: usize,
    /// Regularity indices of the Weierstrass kind.
    pub indices: Vec<f64>,
    /// Items of the other kinds.
    pub count: usize,
    /// Largest amplitude of maps and structures.
    pub amplitude: f64,
    /// Points per axis of the T² grid carrying maps.
    pub map_grid: usize,
    /// Points per axis of the T⁴ grid carrying structures.
    pub acs_grid: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            points: 1 << 12,
            indices: vec![0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.6, 1.9, 2.3, 2.7],
            count: 10,
            amplitude: 0.05,
            map_grid: 64,
            acs_grid: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Sample {
    Field(GridField),
    /// Real displacement of I + f, one field per axis.
    Map(Vec<GridField>),
    Structure(Acs),
}

#[derive(Clone, Debug)]
pub struct CorpusItem {
    pub name: String,
    pub sample: Sample,
    /// Known or measured properties (regularity index, ‖Df‖, residual, ...).
    pub meta: Vec<(String, f64)>,
}

impl CorpusItem {
    pub fn meta(&self, key: &str) -> Option<f64> {
        self.meta.iter().find(|(k, _)| k == key).map(|m| m.1)
    }

    pub fn field(&self) -> Option<&GridField> {
        match &self.sample {
            Sample::Field(f) => Some(f),
            _ => None,
        }
    }
}

/// Number of dyadic levels 2^j ≤ n/4 on an n-point grid.
pub fn nyquist_levels(points: usize) -> usize {
    (points / 4).max(1).trailing_zeros() as usize
}

/// W_a(x) = Σ_{j ≤ J} 2^{−ja} cos(2^j πx + φ_j) on [0, 2), J the last level
/// below Nyquist. Exactly Λ^a up to the cut.
pub fn weierstrass(grid: &GridSpec, a: f64, phases: &[f64]) -> Result<GridField> {
    let top = nyquist_levels(grid.shape()[0]);
    if phases.len() <= top {
        return Err(Error::InvalidArgument(format!("need {} phases, got {}", top + 1, phases.len())));
    }
    GridField::from_real_fn(grid, |x| {
        (0..=top).map(|j| 2f64.powf(-(j as f64) * a) * (2f64.powi(j as i32) * PI * x[0] + phases[j]).cos()).sum()
    })
}

pub fn line_grid(points: usize) -> Result<GridSpec> {
    GridSpec::cube(1, points, 2.0)
}

fn rng_for(seed: u64, kind: CorpusKind) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (kind as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn generate_corpus(seed: u64, kind: CorpusKind, opts: &CorpusOptions) -> Result<Vec<CorpusItem>> {
    let mut rng = rng_for(seed, kind);
    match kind {
        CorpusKind::Weierstrass => {
            let grid = line_grid(opts.points)?;
            let top = nyquist_levels(opts.points);
            opts.indices
                .iter()
                .map(|&a| {
                    let phases: Vec<f64> = (0..=top).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                    Ok(CorpusItem {
                        name: format!("W{a}"),
                        sample: Sample::Field(weierstrass(&grid, a, &phases)?),
                        meta: vec![("index".into(), a), ("levels".into(), (top + 1) as f64)],
                    })
                })
                .collect()
        }
        CorpusKind::Bandlimited => {
            let grid = line_grid(opts.points)?;
            (0..opts.count)
                .map(|i| {
                    let kmax = 4usize << (i % 5);
                    let decay = 1.0 + 0.5 * (i / 5) as f64;
                    let coeffs: Vec<(f64, f64)> = (1..=kmax).map(|_| (rng.random_range(-0.5..0.5), rng.random_range(0.0..2.0 * PI))).collect();
                    let f = GridField::from_real_fn(&grid, |x| {
                        coeffs
                            .iter()
                            .enumerate()
                            .map(|(k, (c, p))| {
                                let k = (k + 1) as f64;
                                c * k.powf(-decay) * (k * PI * x[0] + p).cos()
                            })
                            .sum()
                    })?;
                    Ok(CorpusItem {
                        name: format!("B{kmax}_{decay}"),
                        sample: Sample::Field(f),
                        meta: vec![("bandwidth".into(), kmax as f64), ("decay".into(), decay)],
                    })
                })
                .collect()
        }
        CorpusKind::Diffeo => {
            let grid = GridSpec::cube(2, opts.map_grid, 2.0 * PI)?;
            (0..opts.count)
                .map(|i| {
                    let scale = opts.amplitude * (i + 1) as f64 / opts.count as f64;
                    let disp = (0..2)
                        .map(|_| {
                            let modes: Vec<(f64, [f64; 2], f64)> = (0..3)
                                .map(|_| {
                                    let k = [rng.random_range(-2..=2) as f64, rng.random_range(-2..=2) as f64];
                                    (scale * rng.random_range(0.5..1.0), k, rng.random_range(0.0..2.0 * PI))
                                })
                                .collect();
                            GridField::from_real_fn(&grid, |x| modes.iter().map(|(c, k, p)| c * (k[0] * x[0] + k[1] * x[1] + p).sin()).sum())
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let theta = jacobian_norm(&disp)?;
                    Ok(CorpusItem { name: format!("map{i}"), sample: Sample::Map(disp), meta: vec![("theta".into(), theta), ("amplitude".into(), scale)] })
                })
                .collect()
        }
        CorpusKind::Acs => {
            let grid = GridSpec::cube(4, opts.acs_grid, 2.0 * PI)?;
            (0..opts.count)
                .map(|i| {
                    let scale = opts.amplitude * (i + 1) as f64 / opts.count as f64;
                    let map_seed: u64 = rng.random();
                    let generated = TrigMap::random(2, 3, scale, map_seed).symmetrized().generate(&grid)?;
                    let residual = integrability_residual(&generated.acs)?.1;
                    let sup = generated.acs.sup_norm();
                    Ok(CorpusItem {
                        name: format!("acs{i}"),
                        sample: Sample::Structure(generated.acs),
                        meta: vec![("amplitude".into(), scale), ("sup".into(), sup), ("residual".into(), residual)],
                    })
                })
                .collect()
        }
    }
}

/// One line per item: name and metadata.
pub fn describe(items: &[CorpusItem]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&it.name);
        for (k, v) in &it.meta {
            s.push_str(&format!(" {k}={v:.6e}"));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_corpus() {
        let o = CorpusOptions { points: 256, ..Default::default() };
        let a = generate_corpus(0, CorpusKind::Weierstrass, &o).unwrap();
        let b = generate_corpus(0, CorpusKind::Weierstrass, &o).unwrap();
        let c = generate_corpus(1, CorpusKind::Weierstrass, &o).unwrap();
        assert_eq!(a[0].field().unwrap().values(), b[0].field().unwrap().values());
        assert_ne!(a[0].field().unwrap().values(), c[0].field().unwrap().values());
    }

    #[test]
    fn weierstrass_carries_its_index_and_levels() {
        let o = CorpusOptions { points: 1024, indices: vec![0.6], ..Default::default() };
        let w = generate_corpus(0, CorpusKind::Weierstrass, &o).unwrap();
        assert_eq!(w[0].meta("index"), Some(0.6));
        // 2^j ≤ 256
        assert_eq!(w[0].meta("levels"), Some(9.0));
    }

    #[test]
    fn small_maps_are_invertible() {
        let o = CorpusOptions { map_grid: 16, ..Default::default() };
        for it in generate_corpus(0, CorpusKind::Diffeo, &o).unwrap() {
            assert!(it.meta("theta").unwrap() < 0.5);
        }
    }
}
