//! (0,1)- and (0,2)-forms with vector coefficients on the torus T^{2n}, the
//! ∂̄ operator, and the exact spectral homotopy a = ∂̄Pa + Q∂̄a on mean-zero
//! data. Axes are laid out [x_1..x_n, y_1..y_n] with z_j = x_j + i y_j.

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec, C64};

/// Σ_β A^α_β̄ dz̄_β for α in 0..values; `comps[α][β]`.
#[derive(Clone, Debug)]
pub struct Form01 {
    pub n: usize,
    pub comps: Vec<Vec<GridField>>,
}

/// Σ_{β<γ} F^α_{β̄γ̄} dz̄_β ∧ dz̄_γ; `comps[α][pair_index(n, β, γ)]`.
#[derive(Clone, Debug)]
pub struct Form02 {
    pub n: usize,
    pub comps: Vec<Vec<GridField>>,
}

/// Position of (β, γ), β < γ, in the packed list of pairs.
pub fn pair_index(n: usize, b: usize, g: usize) -> usize {
    debug_assert!(b < g && g < n);
    b * n - b * (b + 1) / 2 + (g - b - 1)
}

fn pair_count(n: usize) -> usize {
    n * (n.saturating_sub(1)) / 2
}

fn complex_dim(grid: &GridSpec) -> Result<usize> {
    let d = grid.dim();
    if !d.is_multiple_of(2) || d == 0 {
        return Err(Error::InvalidArgument(format!("a {d}-d grid carries no complex structure")));
    }
    Ok(d / 2)
}

/// Spectral symbol of ∂_β̄ = ½(∂_{x_β} + i∂_{y_β}) at every lattice point.
fn dbar_symbols(grid: &GridSpec, n: usize) -> Vec<Vec<C64>> {
    let mut out = vec![vec![C64::new(0.0, 0.0); grid.len()]; n];
    let mut idx = vec![0usize; grid.dim()];
    for k in 0..grid.len() {
        grid.unravel(k, &mut idx);
        for b in 0..n {
            let xi = grid.deriv_frequency(b, idx[b]);
            let eta = grid.deriv_frequency(n + b, idx[n + b]);
            out[b][k] = C64::new(0.0, 0.5) * C64::new(xi, eta);
        }
    }
    out
}

fn apply_sym(u: &GridField, sym: &[C64]) -> GridField {
    let mut s = u.spectrum();
    for (v, m) in s.iter_mut().zip(sym) {
        *v *= m;
    }
    GridField::from_spectrum(u.spec(), s)
}

impl Form01 {
    pub fn new(n: usize, comps: Vec<Vec<GridField>>) -> Result<Self> {
        if n == 0 || comps.is_empty() {
            return Err(Error::InvalidArgument("form needs at least one component".into()));
        }
        let grid = comps[0][0].spec().clone();
        if complex_dim(&grid)? != n {
            return Err(Error::GridMismatch(format!("grid of dimension {} for complex dimension {n}", grid.dim())));
        }
        for row in &comps {
            if row.len() != n {
                return Err(Error::InvalidArgument(format!("{} coefficients for complex dimension {n}", row.len())));
            }
            for f in row {
                grid.ensure_same(f.spec())?;
            }
        }
        Ok(Self { n, comps })
    }

    pub fn zeros(grid: &GridSpec, values: usize) -> Result<Self> {
        let n = complex_dim(grid)?;
        Ok(Self { n, comps: vec![vec![GridField::zeros(grid); n]; values] })
    }

    pub fn grid(&self) -> &GridSpec {
        self.comps[0][0].spec()
    }

    pub fn values(&self) -> usize {
        self.comps.len()
    }

    pub fn sub(&self, other: &Form01) -> Result<Form01> {
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.sub(y)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Ok(Form01 { n: self.n, comps })
    }

    pub fn add(&self, other: &Form01) -> Result<Form01> {
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.add(y)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Ok(Form01 { n: self.n, comps })
    }

    pub fn sup_norm(&self) -> f64 {
        self.comps.iter().flatten().map(|f| f.sup_norm()).fold(0.0, f64::max)
    }

    /// Per-coefficient means.
    pub fn means(&self) -> Vec<Vec<C64>> {
        self.comps.iter().map(|row| row.iter().map(|f| f.mean()).collect()).collect()
    }
}

impl Form02 {
    pub fn grid(&self) -> &GridSpec {
        self.comps[0][0].spec()
    }

    pub fn sup_norm(&self) -> f64 {
        self.comps.iter().flatten().map(|f| f.sup_norm()).fold(0.0, f64::max)
    }

    /// F_{β̄γ̄} with the antisymmetric extension to β ≥ γ.
    pub fn coefficient(&self, alpha: usize, b: usize, g: usize) -> Option<GridField> {
        match b.cmp(&g) {
            std::cmp::Ordering::Less => Some(self.comps[alpha][pair_index(self.n, b, g)].clone()),
            std::cmp::Ordering::Greater => Some(self.comps[alpha][pair_index(self.n, g, b)].scale_re(-1.0)),
            std::cmp::Ordering::Equal => None,
        }
    }
}

/// ∂̄ of vector-valued functions: (∂̄u)^α = Σ_β ∂_β̄ u^α dz̄_β.
pub fn dbar_function(u: &[GridField]) -> Result<Form01> {
    let grid = u.first().ok_or_else(|| Error::InvalidArgument("no components".into()))?.spec().clone();
    let n = complex_dim(&grid)?;
    let sym = dbar_symbols(&grid, n);
    let comps = u
        .iter()
        .map(|f| {
            grid.ensure_same(f.spec())?;
            Ok((0..n).map(|b| apply_sym(f, &sym[b])).collect())
        })
        .collect::<Result<_>>()?;
    Ok(Form01 { n, comps })
}

/// (∂̄a)^α_{β̄γ̄} = ∂_β̄ a^α_γ̄ − ∂_γ̄ a^α_β̄ for β < γ.
pub fn dbar_apply(a: &Form01) -> Form02 {
    let n = a.n;
    let grid = a.grid().clone();
    let sym = dbar_symbols(&grid, n);
    let comps = a
        .comps
        .iter()
        .map(|row| {
            let spectra: Vec<Vec<C64>> = row.iter().map(|f| f.spectrum()).collect();
            let mut out = Vec::with_capacity(pair_count(n));
            for b in 0..n {
                for g in b + 1..n {
                    let s: Vec<C64> = (0..grid.len())
                        .map(|k| sym[b][k] * spectra[g][k] - sym[g][k] * spectra[b][k])
                        .collect();
                    out.push(GridField::from_spectrum(&grid, s));
                }
            }
            out
        })
        .collect();
    Form02 { n, comps }
}

/// Largest coefficient magnitude over the lattice modes where every ∂̄
/// symbol vanishes (the mean, plus pure Nyquist combinations).
fn harmonic_content(grid: &GridSpec, spectra: &[Vec<C64>], sym: &[Vec<C64>]) -> f64 {
    let len = grid.len() as f64;
    let mut worst = 0.0f64;
    for k in 0..grid.len() {
        if sym.iter().all(|s| s[k].norm() == 0.0) {
            for s in spectra {
                worst = worst.max(s[k].norm() / len);
            }
        }
    }
    worst
}

/// Removes the constant part of every coefficient (and any content on
/// modes invisible to ∂̄), returning the stripped form and the means.
pub fn strip_harmonic(a: &Form01) -> (Form01, Vec<Vec<C64>>) {
    let grid = a.grid().clone();
    let sym = dbar_symbols(&grid, a.n);
    let null: Vec<bool> = (0..grid.len()).map(|k| sym.iter().all(|s| s[k].norm() == 0.0)).collect();
    let means = a.means();
    let comps = a
        .comps
        .iter()
        .map(|row| {
            row.iter()
                .map(|f| {
                    let mut s = f.spectrum();
                    for (v, &z) in s.iter_mut().zip(&null) {
                        if z {
                            *v = C64::new(0.0, 0.0);
                        }
                    }
                    GridField::from_spectrum(&grid, s)
                })
                .collect()
        })
        .collect();
    (Form01 { n: a.n, comps }, means)
}

/// Measured residual of the homotopy identity.
#[derive(Clone, Debug, PartialEq)]
pub struct HomotopyReport {
    pub residual: f64,
    pub input_size: f64,
}

/// Exact torus homotopy: P = ∂̄*□⁻¹ on (0,1)-forms and Q = ∂̄*□⁻¹ on
/// (0,2)-forms, with □ = −¼Δ.
#[derive(Clone, Debug)]
pub struct SpectralHomotopy {
    grid: GridSpec,
    n: usize,
    sym: Vec<Vec<C64>>,
    /// 1/Σ|b_β|², zero on the null modes.
    inv_box: Vec<f64>,
    pub harmonic_tol: f64,
}

impl SpectralHomotopy {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        let n = complex_dim(grid)?;
        let sym = dbar_symbols(grid, n);
        let inv_box = (0..grid.len())
            .map(|k| {
                let s: f64 = sym.iter().map(|b| b[k].norm_sqr()).sum();
                if s > 0.0 {
                    1.0 / s
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self { grid: grid.clone(), n, sym, inv_box, harmonic_tol: 1e-12 })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn check_mean(&self, spectra: &[Vec<C64>], scale: f64) -> Result<()> {
        let h = harmonic_content(&self.grid, spectra, &self.sym);
        if h > self.harmonic_tol * scale.max(1.0) {
            return Err(Error::NonzeroMean { mean: h });
        }
        Ok(())
    }

    /// Pa, one function per value index. Rejects data with a harmonic part.
    pub fn p(&self, a: &Form01) -> Result<Vec<GridField>> {
        self.grid.ensure_same(a.grid())?;
        let scale = a.sup_norm();
        a.comps
            .iter()
            .map(|row| {
                let spectra: Vec<Vec<C64>> = row.iter().map(|f| f.spectrum()).collect();
                self.check_mean(&spectra, scale)?;
                let s: Vec<C64> = (0..self.grid.len())
                    .map(|k| {
                        let mut acc = C64::new(0.0, 0.0);
                        for b in 0..self.n {
                            acc += self.sym[b][k].conj() * spectra[b][k];
                        }
                        acc * self.inv_box[k]
                    })
                    .collect();
                Ok(GridField::from_spectrum(&self.grid, s))
            })
            .collect()
    }

    /// (Qf)^α_γ̄ = ∂̄*□⁻¹: Σ_β conj(b_β) F^α_{β̄γ̄} / |b|².
    pub fn q(&self, f: &Form02) -> Result<Form01> {
        self.grid.ensure_same(f.grid())?;
        let n = self.n;
        let comps = f
            .comps
            .iter()
            .map(|row| {
                let spectra: Vec<Vec<C64>> = row.iter().map(|g| g.spectrum()).collect();
                (0..n)
                    .map(|g| {
                        let s: Vec<C64> = (0..self.grid.len())
                            .map(|k| {
                                let mut acc = C64::new(0.0, 0.0);
                                for b in 0..n {
                                    let coef = match b.cmp(&g) {
                                        std::cmp::Ordering::Less => spectra[pair_index(n, b, g)][k],
                                        std::cmp::Ordering::Greater => -spectra[pair_index(n, g, b)][k],
                                        std::cmp::Ordering::Equal => continue,
                                    };
                                    acc += self.sym[b][k].conj() * coef;
                                }
                                acc * self.inv_box[k]
                            })
                            .collect();
                        GridField::from_spectrum(&self.grid, s)
                    })
                    .collect()
            })
            .collect();
        Ok(Form01 { n, comps })
    }

    /// Pa together with ‖a − ∂̄Pa − Q∂̄a‖_∞.
    pub fn solve(&self, a: &Form01) -> Result<(Vec<GridField>, HomotopyReport)> {
        let u = self.p(a)?;
        let da = dbar_apply(a);
        let qa = self.q(&da)?;
        let rebuilt = dbar_function(&u)?.add(&qa)?;
        let residual = a.sub(&rebuilt)?.sup_norm();
        Ok((u, HomotopyReport { residual, input_size: a.sup_norm() }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec::cube(4, 8, 2.0 * PI).unwrap()
    }

    fn smooth_fn(grid: &GridSpec, seed: f64) -> GridField {
        GridField::from_fn(grid, |x| {
            C64::new((x[0] + seed * x[1]).sin() + 0.3 * (x[2] - x[3]).cos(), (seed * x[3] - x[1]).sin())
        })
        .unwrap()
    }

    #[test]
    fn pair_index_packs_upper_triangle() {
        assert_eq!(pair_index(3, 0, 1), 0);
        assert_eq!(pair_index(3, 0, 2), 1);
        assert_eq!(pair_index(3, 1, 2), 2);
        assert_eq!(pair_index(2, 0, 1), 0);
    }

    #[test]
    fn dbar_of_dbar_vanishes() {
        let g = grid();
        let u = vec![smooth_fn(&g, 1.0), smooth_fn(&g, 2.0)];
        let a = dbar_function(&u).unwrap();
        assert!(dbar_apply(&a).sup_norm() < 1e-12);
    }

    #[test]
    fn constants_are_closed_and_rejected_by_p() {
        let g = grid();
        let c = GridField::constant(&g, C64::new(0.4, -0.1));
        let a = Form01::new(2, vec![vec![c.clone(), c]]).unwrap();
        assert!(dbar_apply(&a).sup_norm() < 1e-14);
        let h = SpectralHomotopy::new(&g).unwrap();
        assert!(matches!(h.p(&a), Err(Error::NonzeroMean { .. })));
        let (stripped, means) = strip_harmonic(&a);
        assert!(stripped.sup_norm() < 1e-14);
        assert!((means[0][1] - C64::new(0.4, -0.1)).norm() < 1e-12);
    }

    #[test]
    fn homotopy_identity_on_generic_form() {
        let g = grid();
        let comps = vec![vec![smooth_fn(&g, 1.0), smooth_fn(&g, 3.0)], vec![smooth_fn(&g, -2.0), smooth_fn(&g, 0.5)]];
        let (a, _) = strip_harmonic(&Form01::new(2, comps).unwrap());
        let h = SpectralHomotopy::new(&g).unwrap();
        let (_, rep) = h.solve(&a).unwrap();
        assert!(rep.residual < 1e-12, "{}", rep.residual);
    }

    #[test]
    fn p_inverts_dbar_on_exact_forms() {
        let g = grid();
        let u = [smooth_fn(&g, 1.0)];
        let (u0, _) = {
            let m = u[0].mean();
            (vec![u[0].sub(&GridField::constant(&g, m)).unwrap()], m)
        };
        let a = dbar_function(&u0).unwrap();
        let h = SpectralHomotopy::new(&g).unwrap();
        let pa = h.p(&a).unwrap();
        let back = dbar_function(&pa).unwrap();
        assert!(back.sub(&a).unwrap().sup_norm() < 1e-12);
        // Pa − u is ∂̄-closed, hence constant on the torus, hence zero.
        assert!(pa[0].sub(&u0[0]).unwrap().sup_norm() < 1e-12);
        let z = Form01::zeros(&g, 1).unwrap();
        assert_eq!(h.p(&z).unwrap()[0].sup_norm(), 0.0);
    }
}
