//! Almost complex structures X_ᾱ = ∂_ᾱ + A^β_ᾱ ∂_β on the torus T^{2n}:
//! the integrability residual, maps F = I + f and their inverses, the
//! transformation rule for A under F, and linear straightening.
//!
//! Matrices are stored `m[α][β] = A^β_ᾱ`: the row is the barred index. In
//! that layout the new structure under F = I + f is
//! Ã = A'∘F = (I + K)^{-1}(A + ∂̄f + A·∂f) with K = ∂̄f̄ + A·∂f̄, where
//! (∂f)[β][γ] = ∂_β f^γ and (∂̄f)[α][γ] = ∂_ᾱ f^γ.

use crate::dbar::{dbar_apply, pair_index, strip_harmonic, Form01, Form02, SpectralHomotopy};
use crate::error::{Error, Result};
use crate::grid::{write_manifest, GridField, GridSpec, C64};
use crate::interp::{compose_shift, TrigInterpolant};
use crate::znorm::NormBackend;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use std::path::Path;

/// n×n matrix of fields, `m[α][β]`.
pub type MatrixField = Vec<Vec<GridField>>;

/// Relative tolerance of every spectral composition.
pub const COMPOSE_TOL: f64 = 1e-13;

/// Smallest admissible singular value of I + K.
pub const MIN_SINGULAR: f64 = 0.1;

const MAX_SWEEPS: usize = 200;

fn complex_dim(grid: &GridSpec) -> Result<usize> {
    let d = grid.dim();
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("a {d}-d grid carries no complex structure")));
    }
    Ok(d / 2)
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Pointwise matrix at flat index k.
fn at(m: &MatrixField, k: usize) -> DMatrix<C64> {
    let n = m.len();
    DMatrix::from_fn(n, n, |i, j| m[i][j].values()[k])
}

fn op_norm(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let h = m.adjoint() * m;
    let re = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)].re);
    let im = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)].im);
    // Hermitian H = R + iI has the same spectrum as [[R, −I], [I, R]].
    let n = h.nrows();
    let big = DMatrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => re[(i, j)],
        (true, false) => -im[(i, j - n)],
        (false, true) => im[(i - n, j)],
        (false, false) => re[(i - n, j - n)],
    });
    SymmetricEigen::new(big).eigenvalues.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt()
}

fn min_singular(m: &DMatrix<C64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Builds a matrix field from pointwise matrices.
fn assemble(grid: &GridSpec, n: usize, mats: &[DMatrix<C64>]) -> Result<MatrixField> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| GridField::new(grid.clone(), mats.iter().map(|m| m[(i, j)]).collect()))
                .collect()
        })
        .collect()
}

pub fn matrix_sup(m: &MatrixField) -> f64 {
    m.iter().flatten().map(|f| f.sup_norm()).fold(0.0, f64::max)
}

fn matrix_sub(a: &MatrixField, b: &MatrixField) -> Result<MatrixField> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u.sub(v)).collect()).collect()
}

/// Largest entry norm of a matrix field under `backend` at index `s`.
pub fn matrix_norm(m: &MatrixField, backend: &NormBackend, s: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for f in m.iter().flatten() {
        worst = worst.max(backend.norm(f, s, None)?);
    }
    Ok(worst)
}

/// Holomorphic and antiholomorphic first derivatives of `u`:
/// (∂_{z_b} u, ∂_{z̄_b} u) for b in 0..n, from one forward transform.
pub fn complex_derivatives(u: &GridField) -> Result<(Vec<GridField>, Vec<GridField>)> {
    let grid = u.spec();
    let n = complex_dim(grid)?;
    let spec = u.spectrum();
    let mut idx = vec![0usize; grid.dim()];
    let mut hol = vec![Vec::with_capacity(grid.len()); n];
    let mut anti = vec![Vec::with_capacity(grid.len()); n];
    for (k, &v) in spec.iter().enumerate() {
        grid.unravel(k, &mut idx);
        for b in 0..n {
            let xi = grid.deriv_frequency(b, idx[b]);
            let eta = grid.deriv_frequency(n + b, idx[n + b]);
            // ∂_x ↦ iξ, ∂_y ↦ iη
            hol[b].push(v * C64::new(0.0, 0.5) * C64::new(xi, -eta));
            anti[b].push(v * C64::new(0.0, 0.5) * C64::new(xi, eta));
        }
    }
    let back = |s: Vec<Vec<C64>>| s.into_iter().map(|x| GridField::from_spectrum(grid, x)).collect();
    Ok((back(hol), back(anti)))
}

#[derive(Clone, Debug)]
pub struct Acs {
    n: usize,
    a: MatrixField,
}

impl Acs {
    /// Validates shape and the small-perturbation bound sup‖A(x)‖ < 1.
    pub fn new(a: MatrixField) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::InvalidArgument("structure needs n ≥ 1".into()));
        }
        let grid = a[0].first().ok_or_else(|| Error::InvalidArgument("empty row".into()))?.spec().clone();
        if complex_dim(&grid)? != n {
            return Err(Error::GridMismatch(format!("{}-d grid for n = {n}", grid.dim())));
        }
        for row in &a {
            if row.len() != n {
                return Err(Error::InvalidArgument(format!("row of length {} for n = {n}", row.len())));
            }
            for f in row {
                grid.ensure_same(f.spec())?;
            }
        }
        let s = Self { n, a };
        let norm = s.sup_norm();
        if !(norm < 1.0) {
            return Err(Error::Contract(format!("sup ‖A‖ = {norm:.4} is not below 1")));
        }
        Ok(s)
    }

    pub fn zero(grid: &GridSpec) -> Result<Self> {
        let n = complex_dim(grid)?;
        Self::new(vec![vec![GridField::zeros(grid); n]; n])
    }

    pub fn constant(grid: &GridSpec, m: &[Vec<C64>]) -> Result<Self> {
        Self::new(m.iter().map(|row| row.iter().map(|&c| GridField::constant(grid, c)).collect()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &GridSpec {
        self.a[0][0].spec()
    }

    pub fn entries(&self) -> &MatrixField {
        &self.a
    }

    pub fn into_entries(self) -> MatrixField {
        self.a
    }

    /// sup over the grid of the operator norm of A(x).
    pub fn sup_norm(&self) -> f64 {
        (0..self.grid().len())
            .into_par_iter()
            .map(|k| op_norm(&at(&self.a, k)))
            .reduce(|| 0.0, f64::max)
    }

    /// Largest entry norm under `backend`.
    pub fn norm(&self, backend: &NormBackend, s: f64) -> Result<f64> {
        matrix_norm(&self.a, backend, s)
    }

    /// A^α = Σ_β A^α_β̄ dz̄_β for every α.
    pub fn to_form(&self) -> Form01 {
        let comps = (0..self.n).map(|al| (0..self.n).map(|b| self.a[b][al].clone()).collect()).collect();
        Form01 { n: self.n, comps }
    }

    pub fn from_form(form: &Form01) -> Result<Self> {
        let n = form.n;
        Self::new((0..n).map(|b| (0..n).map(|al| form.comps[al][b].clone()).collect()).collect())
    }

    /// Writes one binary file per entry (α-major) and a manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut order = Vec::new();
        for al in 0..self.n {
            for b in 0..self.n {
                let name = format!("entry_{al}_{b}.bin");
                self.a[al][b].save(&dir.join(&name))?;
                order.push(name);
            }
        }
        let g = self.grid();
        write_manifest(
            &dir.join("manifest.txt"),
            &[
                ("n", self.n.to_string()),
                ("domain", "torus".into()),
                ("shape", format!("{:?}", g.shape())),
                ("box", format!("{:?}", g.box_len())),
                ("entries", order.join(",")),
                ("entry", "row = barred index alpha, column = beta".into()),
            ],
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let n: usize = text
            .lines()
            .find_map(|l| l.strip_prefix("n="))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Config("manifest lacks n".into()))?;
        let a = (0..n)
            .map(|al| (0..n).map(|b| GridField::load(&dir.join(format!("entry_{al}_{b}.bin")))).collect())
            .collect::<Result<_>>()?;
        Self::new(a)
    }
}

/// N(A)^α_{β̄γ̄} = ∂_β̄A^α_γ̄ − ∂_γ̄A^α_β̄ + Σ_η (A^η_β̄ ∂_η A^α_γ̄ − A^η_γ̄ ∂_η A^α_β̄)
/// for β < γ, and its sup norm. Zero exactly when the structure is
/// formally integrable.
pub fn integrability_residual(x: &Acs) -> Result<(Form02, f64)> {
    let n = x.n;
    let mut res = dbar_apply(&x.to_form());
    // hol[β][α][η] = ∂_η A^α_β̄
    let hol: Vec<Vec<Vec<GridField>>> = x
        .a
        .iter()
        .map(|row| row.iter().map(|f| complex_derivatives(f).map(|d| d.0)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let len = x.grid().len();
    for al in 0..n {
        for b in 0..n {
            for g in b + 1..n {
                let slot = &mut res.comps[al][pair_index(n, b, g)];
                let mut v = slot.values().to_vec();
                for (k, out) in v.iter_mut().enumerate().take(len) {
                    let mut q = zero();
                    for eta in 0..n {
                        q += x.a[b][eta].values()[k] * hol[g][al][eta].values()[k]
                            - x.a[g][eta].values()[k] * hol[b][al][eta].values()[k];
                    }
                    *out += q;
                }
                *slot = GridField::new(slot.spec().clone(), v)?;
            }
        }
    }
    let sup = res.sup_norm();
    Ok((res, sup))
}

/// f^γ = d_γ + i d_{n+γ} from a real displacement laid out [x.., y..].
pub fn complex_map(disp: &[GridField]) -> Result<Vec<GridField>> {
    if !disp.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument("odd number of real components".into()));
    }
    let n = disp.len() / 2;
    (0..n).map(|g| disp[g].zip_map(&disp[n + g], |a, b| C64::new(a.re, b.re))).collect()
}

/// Inverse of [`complex_map`].
pub fn real_displacement(f: &[GridField]) -> Vec<GridField> {
    let re = f.iter().map(|u| u.re());
    let im = f.iter().map(|u| u.map(|v| C64::new(v.im, 0.0)));
    re.chain(im).collect()
}

/// u∘(I + disp) for each field.
pub fn compose_all(fields: &[GridField], disp: &[GridField]) -> Result<Vec<GridField>> {
    fields.iter().map(|u| compose_shift(u, disp, COMPOSE_TOL)).collect()
}

/// Real fields composed two at a time, packed as one complex field.
fn compose_real(fields: &[GridField], disp: &[GridField]) -> Result<Vec<GridField>> {
    compose_real_tol(fields, disp, COMPOSE_TOL)
}

/// Real fields composed at relative tolerance `tol`, two per complex pass.
pub fn compose_real_tol(fields: &[GridField], disp: &[GridField], tol: f64) -> Result<Vec<GridField>> {
    let mut out = Vec::with_capacity(fields.len());
    for pair in fields.chunks(2) {
        if pair.len() == 2 {
            let packed = pair[0].zip_map(&pair[1], |a, b| C64::new(a.re, b.re))?;
            let c = compose_shift(&packed, disp, tol)?;
            out.push(c.re());
            out.push(c.map(|v| C64::new(v.im, 0.0)));
        } else {
            out.push(compose_shift(&pair[0].re(), disp, tol)?.re());
        }
    }
    Ok(out)
}

/// sup over the grid of the operator norm of the real Jacobian of `disp`.
pub fn jacobian_norm(disp: &[GridField]) -> Result<f64> {
    let grid = disp.first().ok_or_else(|| Error::InvalidArgument("empty map".into()))?.spec().clone();
    let d = grid.dim();
    if disp.len() != d {
        return Err(Error::InvalidArgument(format!("{} components on a {d}-d grid", disp.len())));
    }
    let jac: Vec<Vec<GridField>> = disp.iter().map(|f| (0..d).map(|b| f.re().derivative(b)).collect()).collect();
    Ok((0..grid.len())
        .into_par_iter()
        .map(|k| {
            let m = DMatrix::from_fn(d, d, |i, j| jac[i][j].values()[k].re);
            m.svd(false, false).singular_values.max()
        })
        .reduce(|| 0.0, f64::max))
}

/// F = I + f together with its inverse G = I + g.
#[derive(Clone, Debug)]
pub struct Diffeo {
    /// Real displacement per axis.
    pub f: Vec<GridField>,
    pub g: Vec<GridField>,
    /// Measured ‖Df‖₀.
    pub theta: f64,
    /// Measured ‖Dg‖₀.
    pub dg_norm: f64,
    /// ‖G∘F − I‖_∞.
    pub inverse_error: f64,
    /// ‖F∘G − I‖_∞.
    pub forward_error: f64,
    pub sweeps: usize,
}

impl Diffeo {
    pub fn identity(grid: &GridSpec) -> Self {
        let z = vec![GridField::zeros(grid); grid.dim()];
        Self { f: z.clone(), g: z, theta: 0.0, dg_norm: 0.0, inverse_error: 0.0, forward_error: 0.0, sweeps: 0 }
    }

    pub fn grid(&self) -> &GridSpec {
        self.f[0].spec()
    }

    /// ‖Dg‖₀ ≤ 2‖Df‖₀.
    pub fn derivative_bound_holds(&self) -> bool {
        self.dg_norm <= 2.0 * self.theta + 1e-12
    }

    pub fn is_identity(&self) -> bool {
        self.f.iter().chain(&self.g).all(|u| u.sup_norm() == 0.0)
    }
}

/// Inverts F = I + f by the sweep g ← −f∘(I + g), which contracts at rate
/// ‖Df‖₀ when that is below 1/2.
pub fn invert_map(f: &[GridField], tol: f64) -> Result<Diffeo> {
    let grid = f.first().ok_or_else(|| Error::InvalidArgument("empty map".into()))?.spec().clone();
    let f: Vec<GridField> = f.iter().map(|u| u.re()).collect();
    let theta = jacobian_norm(&f)?;
    if theta >= 0.5 {
        return Err(Error::Contract(format!("‖Df‖₀ = {theta:.4} is not below 1/2")));
    }
    if f.iter().all(|u| u.sup_norm() == 0.0) {
        return Ok(Diffeo::identity(&grid));
    }
    let mut g: Vec<GridField> = f.iter().map(|u| u.scale_re(-1.0)).collect();
    let scale = f.iter().map(|u| u.sup_norm()).fold(0.0, f64::max);
    let mut sweeps = 0;
    // Early sweeps only need to beat the next contraction, so their
    // compositions run at a loose tolerance.
    let mut last = theta * scale;
    loop {
        sweeps += 1;
        let loose = (1e-2 * theta * last / scale).clamp(COMPOSE_TOL, 1e-3);
        let next: Vec<GridField> = compose_real_tol(&f, &g, loose)?.into_iter().map(|u| u.scale_re(-1.0)).collect();
        let change = next.iter().zip(&g).map(|(a, b)| a.sub(b).map(|d| d.sup_norm())).collect::<Result<Vec<_>>>()?;
        g = next;
        last = change.iter().cloned().fold(0.0, f64::max);
        if last < tol && loose == COMPOSE_TOL {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::Numerical(format!("inverse map did not converge in {MAX_SWEEPS} sweeps")));
        }
    }
    let fg = compose_real(&f, &g)?;
    let forward_error = fg.iter().zip(&g).map(|(a, b)| a.add(b).map(|d| d.sup_norm())).collect::<Result<Vec<_>>>()?;
    let gf = compose_real(&g, &f)?;
    let inverse_error = gf.iter().zip(&f).map(|(a, b)| a.add(b).map(|d| d.sup_norm())).collect::<Result<Vec<_>>>()?;
    let dg_norm = jacobian_norm(&g)?;
    Ok(Diffeo {
        f,
        g,
        theta,
        dg_norm,
        inverse_error: inverse_error.into_iter().fold(0.0, f64::max),
        forward_error: forward_error.into_iter().fold(0.0, f64::max),
        sweeps,
    })
}

/// First derivatives of a complex map: (∂f, ∂̄f) with `[β][γ] = ∂_β f^γ`.
fn map_derivatives(fc: &[GridField]) -> Result<(MatrixField, MatrixField)> {
    let n = fc.len();
    let mut d = vec![Vec::with_capacity(n); n];
    let mut db = vec![Vec::with_capacity(n); n];
    for f in fc {
        let (h, a) = complex_derivatives(f)?;
        for (b, (hb, ab)) in h.into_iter().zip(a).enumerate() {
            d[b].push(hb);
            db[b].push(ab);
        }
    }
    Ok((d, db))
}

/// Result of transporting a structure through F.
#[derive(Clone, Debug)]
pub struct Pushforward {
    /// A' on the image grid.
    pub structure: Acs,
    /// Ã = A'∘F on the source grid.
    pub tilde: MatrixField,
    /// K = ∂̄f̄ + A·∂f̄.
    pub k: MatrixField,
    /// min over the grid of the smallest singular value of I + K.
    pub min_singular: f64,
}

/// Pointwise (I + K)^{-1}·rhs with the singular-value guard. Returns the
/// product and min σ(I + K).
fn solve_pointwise(k: &MatrixField, rhs: &MatrixField) -> Result<(MatrixField, f64)> {
    let n = k.len();
    let grid = k[0][0].spec().clone();
    let id = DMatrix::<C64>::identity(n, n);
    let rows: Vec<(DMatrix<C64>, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let m = &id + at(k, p);
            let sigma = min_singular(&m);
            let r = at(rhs, p);
            let sol = if n == 2 {
                // adjugate: (I+K)^{-1} = adj / det
                let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
                let adj = DMatrix::from_row_slice(2, 2, &[m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]]);
                adj * r / det
            } else {
                m.lu().solve(&r).unwrap_or_else(|| DMatrix::from_element(n, n, C64::new(f64::NAN, 0.0)))
            };
            (sol, sigma)
        })
        .collect();
    let sigma = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    if !(sigma > MIN_SINGULAR) {
        return Err(Error::NearSingular { min_singular: sigma });
    }
    let mats: Vec<DMatrix<C64>> = rows.into_iter().map(|r| r.0).collect();
    Ok((assemble(&grid, n, &mats)?, sigma))
}

/// K, the numerator A + ∂̄f + A·∂f, and the map derivatives.
fn transport_parts(x: &Acs, fc: &[GridField]) -> Result<(MatrixField, MatrixField, MatrixField)> {
    let n = x.n;
    if fc.len() != n {
        return Err(Error::InvalidArgument(format!("map with {} components for n = {n}", fc.len())));
    }
    let (d, db) = map_derivatives(fc)?;
    let grid = x.grid().clone();
    let mut k = vec![Vec::with_capacity(n); n];
    let mut num = vec![Vec::with_capacity(n); n];
    for al in 0..n {
        for g in 0..n {
            let mut kv = Vec::with_capacity(grid.len());
            let mut nv = Vec::with_capacity(grid.len());
            for p in 0..grid.len() {
                let mut ksum = d[al][g].values()[p].conj();
                let mut nsum = x.a[al][g].values()[p] + db[al][g].values()[p];
                for b in 0..n {
                    let a = x.a[al][b].values()[p];
                    ksum += a * db[b][g].values()[p].conj();
                    nsum += a * d[b][g].values()[p];
                }
                kv.push(ksum);
                nv.push(nsum);
            }
            k[al].push(GridField::new(grid.clone(), kv)?);
            num[al].push(GridField::new(grid.clone(), nv)?);
        }
    }
    Ok((k, num, d))
}

/// Transports X through F: Ã = (I + K)^{-1}(A + ∂̄f + A·∂f), then
/// A' = Ã∘G on the same grid.
pub fn pushforward(x: &Acs, map: &Diffeo) -> Result<Pushforward> {
    x.grid().ensure_same(map.grid())?;
    if map.is_identity() {
        let k = vec![vec![GridField::zeros(x.grid()); x.n]; x.n];
        return Ok(Pushforward { structure: x.clone(), tilde: x.a.clone(), k, min_singular: 1.0 });
    }
    let fc = complex_map(&map.f)?;
    let (k, num, _) = transport_parts(x, &fc)?;
    let (tilde, min_singular) = solve_pointwise(&k, &num)?;
    let moved = tilde.iter().map(|row| compose_all(row, &map.g)).collect::<Result<MatrixField>>()?;
    Ok(Pushforward { structure: Acs::new(moved)?, tilde, k, min_singular })
}

/// Norms of one term: at the low index s, the high index m, and the fixed
/// auxiliary index 0.1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermNorm {
    pub s: f64,
    pub m: f64,
    pub eps: f64,
}

/// Index used for the auxiliary term norms.
pub const AUX_INDEX: f64 = 0.1;

/// Splitting of the numerator for the map f = −S_t P A:
/// A + ∂̄f + A·∂f = I₁ + I₂ + I₃ + I₄ + S_t H with I₁ = (I − S_t)A,
/// I₂ = S_t Q∂̄A, I₃ = [S_t, ∂̄]PA, I₄ = A·∂f and H the harmonic part of A.
#[derive(Clone, Debug)]
pub struct PushforwardTerms {
    pub k: MatrixField,
    pub i1: MatrixField,
    pub i2: MatrixField,
    pub i3: MatrixField,
    pub i4: MatrixField,
    pub harmonic: MatrixField,
    /// sup |(I+K)^{-1}(Σ terms) − Ã|.
    pub recombination_error: f64,
}

impl PushforwardTerms {
    /// Norms of K, I₁..I₄ in that order.
    pub fn norms(&self, backend: &NormBackend, s: f64, m: f64) -> Result<[TermNorm; 5]> {
        let one = |t: &MatrixField| -> Result<TermNorm> {
            Ok(TermNorm { s: matrix_norm(t, backend, s)?, m: matrix_norm(t, backend, m)?, eps: matrix_norm(t, backend, AUX_INDEX)? })
        };
        Ok([one(&self.k)?, one(&self.i1)?, one(&self.i2)?, one(&self.i3)?, one(&self.i4)?])
    }
}

/// One step's map f = −S_t P A with the quantities needed for the split.
#[derive(Clone, Debug)]
pub struct StepMap {
    /// Complex components f^γ.
    pub f: Vec<GridField>,
    /// Real displacement [Re f, Im f].
    pub disp: Vec<GridField>,
    /// Largest stripped harmonic coefficient.
    pub harmonic_size: f64,
    /// PA, one function per value index.
    pub pa: Vec<GridField>,
    stripped: Form01,
    harmonic: Form01,
}

/// Builds f = −S_t P A after removing the harmonic part of A. `smooth`
/// applies S_t to one field.
pub fn step_map(x: &Acs, homotopy: &SpectralHomotopy, smooth: &dyn Fn(&GridField) -> Result<GridField>) -> Result<StepMap> {
    let form = x.to_form();
    let (stripped, _) = strip_harmonic(&form);
    let harmonic = form.sub(&stripped)?;
    let harmonic_size = harmonic.sup_norm();
    let pa = homotopy.p(&stripped)?;
    let f = pa.iter().map(|u| smooth(u).map(|v| v.scale_re(-1.0))).collect::<Result<Vec<_>>>()?;
    let disp = real_displacement(&f);
    Ok(StepMap { f, disp, harmonic_size, pa, stripped, harmonic })
}

/// The I₁..I₄ split for a map produced by [`step_map`], checked against the
/// directly computed Ã.
pub fn pushforward_terms(
    x: &Acs,
    step: &StepMap,
    homotopy: &SpectralHomotopy,
    smooth: &dyn Fn(&GridField) -> Result<GridField>,
    tilde: &MatrixField,
) -> Result<PushforwardTerms> {
    let n = x.n;
    let (k, _, d) = transport_parts(x, &step.f)?;
    let grid = x.grid().clone();
    // Form index [α][β] ↦ matrix index [β][α].
    let to_matrix = |form: &Form01| -> MatrixField { (0..n).map(|b| (0..n).map(|al| form.comps[al][b].clone()).collect()).collect() };
    let i1 = x
        .a
        .iter()
        .map(|row| row.iter().map(|u| smooth(u).and_then(|s| u.sub(&s))).collect::<Result<Vec<_>>>())
        .collect::<Result<MatrixField>>()?;
    let q = homotopy.q(&dbar_apply(&step.stripped))?;
    let i2 = to_matrix(&q)
        .iter()
        .map(|row| row.iter().map(smooth).collect::<Result<Vec<_>>>())
        .collect::<Result<MatrixField>>()?;
    // [S, ∂̄]u = S∂̄u − ∂̄Su, per value index γ and barred index α.
    let mut i3 = vec![Vec::with_capacity(n); n];
    for al in 0..n {
        for g in 0..n {
            let u = &step.pa[g];
            let du = complex_derivatives(u)?.1;
            let su = smooth(u)?;
            let dsu = complex_derivatives(&su)?.1;
            i3[al].push(smooth(&du[al])?.sub(&dsu[al])?);
        }
    }
    let mut i4 = vec![Vec::with_capacity(n); n];
    for al in 0..n {
        for g in 0..n {
            let v = (0..grid.len())
                .map(|p| (0..n).map(|b| x.a[al][b].values()[p] * d[b][g].values()[p]).sum())
                .collect();
            i4[al].push(GridField::new(grid.clone(), v)?);
        }
    }
    let harmonic = to_matrix(&step.harmonic)
        .iter()
        .map(|row| row.iter().map(smooth).collect::<Result<Vec<_>>>())
        .collect::<Result<MatrixField>>()?;
    let mut sum = i1.clone();
    for t in [&i2, &i3, &i4, &harmonic] {
        for al in 0..n {
            for g in 0..n {
                sum[al][g] = sum[al][g].add(&t[al][g])?;
            }
        }
    }
    let (rebuilt, _) = solve_pointwise(&k, &sum)?;
    let recombination_error = matrix_sup(&matrix_sub(&rebuilt, tilde)?);
    Ok(PushforwardTerms { k, i1, i2, i3, i4, harmonic, recombination_error })
}

/// ℝ-linear change of coordinates w = z + B z̄.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    pub b: Vec<Vec<C64>>,
}

impl LinearMap {
    pub fn is_identity(&self) -> bool {
        self.b.iter().flatten().all(|c| c.norm() == 0.0)
    }
}

/// Ã = (I − A m̄)^{-1}(A − m): the structure after w = z − mᵀz̄, at the
/// image of each grid point.
fn straighten(x: &Acs, m: &DMatrix<C64>) -> Result<MatrixField> {
    let n = x.n;
    let grid = x.grid().clone();
    let mbar = m.map(|c| c.conj());
    let id = DMatrix::<C64>::identity(n, n);
    let mats: Vec<DMatrix<C64>> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let a = at(&x.a, p);
            let lhs = &id - &a * &mbar;
            lhs.lu().solve(&(a - m)).unwrap_or_else(|| DMatrix::from_element(n, n, C64::new(f64::NAN, 0.0)))
        })
        .collect();
    assemble(&grid, n, &mats)
}

fn matrix_mean(m: &MatrixField) -> DMatrix<C64> {
    let n = m.len();
    DMatrix::from_fn(n, n, |i, j| m[i][j].mean())
}

/// Linear normalisation. With a base point, A(p) becomes 0 exactly; on the
/// torus without one, the mean of the transformed A is driven to zero by
/// a fixed-point correction of the constant. Returned entries are the new
/// structure sampled at the images of the grid points.
pub fn linear_normalize(x: &Acs, base: Option<&[f64]>) -> Result<(Acs, LinearMap)> {
    let n = x.n;
    let mut m = match base {
        Some(p) => {
            let v = DMatrix::from_fn(n, n, |i, j| TrigInterpolant::new(&x.a[i][j]).eval(p));
            let norm = op_norm(&v);
            if norm >= 1.0 {
                return Err(Error::Contract(format!("‖A(p)‖ = {norm:.4} is not below 1")));
            }
            v
        }
        None => matrix_mean(&x.a),
    };
    let mut out = straighten(x, &m)?;
    if base.is_none() {
        for _ in 0..100 {
            let r = matrix_mean(&out);
            if r.iter().all(|c| c.norm() <= 1e-14) {
                break;
            }
            m += r;
            out = straighten(x, &m)?;
        }
    }
    let b = (0..n).map(|g| (0..n).map(|d| -m[(d, g)]).collect()).collect();
    Ok((Acs::new(out)?, LinearMap { b }))
}


/// One term amp·sin(wave·x + phase) of component `component`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigMode {
    pub component: usize,
    pub wave: Vec<i64>,
    pub amp: C64,
    pub phase: f64,
}

/// Map H = I + h of T^{2n} = [0, 2π)^{2n} with h a trigonometric
/// polynomial, evaluated in closed form. Structures generated from it are
/// integrable by construction and straightened exactly by H^{-1}.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigMap {
    n: usize,
    modes: Vec<TrigMode>,
}

impl TrigMap {
    pub fn new(n: usize, modes: Vec<TrigMode>) -> Result<Self> {
        for m in &modes {
            if m.component >= n || m.wave.len() != 2 * n {
                return Err(Error::InvalidArgument(format!("mode {m:?} does not fit n = {n}")));
            }
        }
        Ok(Self { n, modes })
    }

    /// `per_component` modes per component with waves in {−1, 0, 1}^{2n}
    /// and amplitudes of size ≤ `amplitude`.
    pub fn random(n: usize, per_component: usize, amplitude: f64, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut modes = Vec::new();
        for component in 0..n {
            for _ in 0..per_component {
                let wave = loop {
                    let w: Vec<i64> = (0..2 * n).map(|_| rng.random_range(-1..=1)).collect();
                    if w.iter().any(|&v| v != 0) {
                        break w;
                    }
                };
                let amp = C64::from_polar(amplitude * rng.random_range(0.5..1.0), rng.random_range(0.0..2.0 * std::f64::consts::PI));
                let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
                modes.push(TrigMode { component, wave, amp, phase });
            }
        }
        Self { n, modes }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn modes(&self) -> &[TrigMode] {
        &self.modes
    }

    pub fn scaled(&self, c: f64) -> Self {
        let modes = self.modes.iter().map(|m| TrigMode { amp: m.amp * c, ..m.clone() }).collect();
        Self { n: self.n, modes }
    }

    /// Average over the rotations z_k ↦ i z_k making h equivariant:
    /// h(R_k z) = R_k h(z). Structures generated from an equivariant map
    /// have zero mean on any grid invariant under the rotations.
    pub fn symmetrized(&self) -> Self {
        let n = self.n;
        let count = 4usize.pow(n as u32);
        let mut modes = Vec::with_capacity(self.modes.len() * count);
        for m in &self.modes {
            for code in 0..count {
                let turns: Vec<usize> = (0..n).map(|k| code / 4usize.pow(k as u32) % 4).collect();
                // w·(R x) = (Rᵀw)·x with Rᵀ(w_x, w_y) = (w_y, −w_x)
                let mut wave = m.wave.clone();
                for (k, &t) in turns.iter().enumerate() {
                    for _ in 0..t {
                        let (wx, wy) = (wave[k], wave[n + k]);
                        wave[k] = wy;
                        wave[n + k] = -wx;
                    }
                }
                let twist = C64::new(0.0, -1.0).powu(turns[m.component] as u32);
                modes.push(TrigMode { component: m.component, wave, amp: m.amp * twist / count as f64, phase: m.phase });
            }
        }
        Self { n, modes }
    }

    /// h(x) as complex components.
    pub fn eval(&self, x: &[f64]) -> Vec<C64> {
        let mut out = vec![zero(); self.n];
        for m in &self.modes {
            let arg: f64 = m.wave.iter().zip(x).map(|(&w, &v)| w as f64 * v).sum::<f64>() + m.phase;
            out[m.component] += m.amp * arg.sin();
        }
        out
    }

    /// (∂_β h^γ, ∂_β̄ h^γ) indexed `[β][γ]`.
    pub fn complex_jacobian(&self, x: &[f64]) -> (DMatrix<C64>, DMatrix<C64>) {
        let n = self.n;
        let mut hol = DMatrix::from_element(n, n, zero());
        let mut anti = DMatrix::from_element(n, n, zero());
        for m in &self.modes {
            let arg: f64 = m.wave.iter().zip(x).map(|(&w, &v)| w as f64 * v).sum::<f64>() + m.phase;
            let c = m.amp * arg.cos();
            for b in 0..n {
                let (wx, wy) = (m.wave[b] as f64, m.wave[n + b] as f64);
                hol[(b, m.component)] += c * C64::new(0.5 * wx, -0.5 * wy);
                anti[(b, m.component)] += c * C64::new(0.5 * wx, 0.5 * wy);
            }
        }
        (hol, anti)
    }

    /// Real Jacobian of the displacement [Re h, Im h] in axes [x.., y..].
    pub fn real_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for m in &self.modes {
            let arg: f64 = m.wave.iter().zip(x).map(|(&w, &v)| w as f64 * v).sum::<f64>() + m.phase;
            let c = m.amp * arg.cos();
            for a in 0..2 * n {
                let d = c * m.wave[a] as f64;
                j[(m.component, a)] += d.re;
                j[(n + m.component, a)] += d.im;
            }
        }
        j
    }

    fn real_eval(&self, x: &[f64]) -> Vec<f64> {
        let h = self.eval(x);
        h.iter().map(|v| v.re).chain(h.iter().map(|v| v.im)).collect()
    }

    /// H^{-1}(y) by Newton's method.
    pub fn invert_at(&self, y: &[f64]) -> Result<Vec<f64>> {
        let d = 2 * self.n;
        let mut x: Vec<f64> = y.iter().zip(self.real_eval(y)).map(|(a, b)| a - b).collect();
        for _ in 0..50 {
            let h = self.real_eval(&x);
            let r = nalgebra::DVector::from_fn(d, |a, _| x[a] + h[a] - y[a]);
            if r.amax() < 1e-15 {
                return Ok(x);
            }
            let j = DMatrix::<f64>::identity(d, d) + self.real_jacobian(&x);
            let step = j.lu().solve(&r).ok_or_else(|| Error::Numerical("singular Jacobian in map inversion".into()))?;
            for a in 0..d {
                x[a] -= step[a];
            }
        }
        let h = self.real_eval(&x);
        let res = (0..d).map(|a| (x[a] + h[a] - y[a]).abs()).fold(0.0, f64::max);
        if res < 1e-13 {
            Ok(x)
        } else {
            Err(Error::Numerical(format!("map inversion stalled at residual {res:.2e}")))
        }
    }

    /// Real displacement of H on a grid.
    pub fn displacement(&self, grid: &GridSpec) -> Result<Vec<GridField>> {
        let d = 2 * self.n;
        (0..d).map(|a| GridField::from_real_fn(grid, |x| self.real_eval(x)[a])).collect()
    }

    /// Pushforward of the standard structure: A₀∘H = (I + ∂̄h̄)^{-1}∂̄h at
    /// H^{-1}(y), and sup‖Dh‖ as a sanity bound.
    pub fn structure_at(&self, y: &[f64]) -> Result<(DMatrix<C64>, Vec<f64>)> {
        let x = self.invert_at(y)?;
        let (hol, anti) = self.complex_jacobian(&x);
        let m = DMatrix::<C64>::identity(self.n, self.n) + hol.map(|c| c.conj());
        let a = m.lu().solve(&anti).ok_or_else(|| Error::Numerical("singular I + ∂̄h̄".into()))?;
        let g: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        Ok((a, g))
    }

    /// Structure sampled on `grid` together with the exact displacement of
    /// H^{-1}.
    pub fn generate(&self, grid: &GridSpec) -> Result<GeneratedStructure> {
        if complex_dim(grid)? != self.n {
            return Err(Error::GridMismatch(format!("{}-d grid for n = {}", grid.dim(), self.n)));
        }
        let pts: Vec<(DMatrix<C64>, Vec<f64>)> = (0..grid.len())
            .into_par_iter()
            .map(|k| self.structure_at(&grid.coords(k)))
            .collect::<Result<_>>()?;
        let mats: Vec<DMatrix<C64>> = pts.iter().map(|p| p.0.clone()).collect();
        let a = assemble(grid, self.n, &mats)?;
        let inverse = (0..2 * self.n)
            .map(|c| GridField::from_real(grid.clone(), pts.iter().map(|p| p.1[c]).collect()))
            .collect::<Result<_>>()?;
        Ok(GeneratedStructure { acs: Acs::new(a)?, inverse })
    }

    /// Largest trigonometric-interpolation error over `samples` off-grid
    /// points for the generated structure and for H^{-1}: the resolution
    /// floor of `grid` for this map.
    pub fn resolution_error(&self, grid: &GridSpec, generated: &GeneratedStructure, samples: usize, seed: u64) -> Result<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..samples)
            .map(|_| (0..grid.dim()).map(|a| rng.random_range(0.0..grid.box_len()[a])).collect())
            .collect();
        let interps: Vec<TrigInterpolant> =
            generated.acs.entries().iter().flatten().chain(&generated.inverse).map(TrigInterpolant::new).collect();
        let n = self.n;
        let errs: Vec<f64> = pts
            .par_iter()
            .map(|x| {
                let (a, g) = self.structure_at(x)?;
                let mut e = 0.0f64;
                for i in 0..n {
                    for j in 0..n {
                        e = e.max((interps[i * n + j].eval(x) - a[(i, j)]).norm());
                    }
                }
                for (c, gv) in g.iter().enumerate() {
                    e = e.max((interps[n * n + c].eval(x).re - gv).abs());
                }
                Ok(e)
            })
            .collect::<Result<_>>()?;
        Ok(errs.into_iter().fold(0.0, f64::max))
    }
}

/// Output of [`TrigMap::generate`].
#[derive(Clone, Debug)]
pub struct GeneratedStructure {
    pub acs: Acs,
    /// Real displacement of H^{-1} at the grid points.
    pub inverse: Vec<GridField>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn torus(n: usize) -> GridSpec {
        GridSpec::cube(2 * n, n_points(n), 2.0 * PI).unwrap()
    }

    fn n_points(n: usize) -> usize {
        if n == 1 {
            32
        } else {
            8
        }
    }

    #[test]
    fn constant_structures_are_integrable() {
        let g = torus(2);
        let m = vec![vec![C64::new(0.1, 0.2), C64::new(-0.05, 0.0)], vec![C64::new(0.0, 0.3), C64::new(0.2, -0.1)]];
        let x = Acs::constant(&g, &m).unwrap();
        assert!(integrability_residual(&x).unwrap().1 < 1e-10);
        assert_eq!(integrability_residual(&Acs::zero(&g).unwrap()).unwrap().1, 0.0);
    }

    #[test]
    fn large_structures_are_rejected() {
        let g = torus(1);
        assert!(matches!(Acs::constant(&g, &[vec![C64::new(1.0, 0.0)]]), Err(Error::Contract(_))));
    }

    #[test]
    fn inverse_of_a_circle_map() {
        let g = GridSpec::cube(1, 64, 1.0).unwrap();
        let f = GridField::from_real_fn(&g, |x| 0.05 * (2.0 * PI * x[0]).sin()).unwrap();
        let d = invert_map(&[f], 1e-13).unwrap();
        assert!((d.theta - 0.1 * PI).abs() < 1e-10);
        assert!(d.inverse_error < 1e-8 && d.forward_error < 1e-8);
        assert!(d.derivative_bound_holds());
    }

    #[test]
    fn zero_map_inverts_to_zero() {
        let g = GridSpec::cube(2, 8, 1.0).unwrap();
        let d = invert_map(&[GridField::zeros(&g), GridField::zeros(&g)], 1e-12).unwrap();
        assert!(d.g.iter().all(|u| u.sup_norm() == 0.0));
    }

    #[test]
    fn steep_maps_are_rejected() {
        let g = GridSpec::cube(1, 64, 1.0).unwrap();
        let f = GridField::from_real_fn(&g, |x| 0.1 * (2.0 * PI * x[0]).sin()).unwrap();
        assert!(matches!(invert_map(&[f], 1e-12), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_pushforward_is_exact() {
        let g = torus(1);
        let a = GridField::from_fn(&g, |x| C64::new(0.1 * x[0].sin(), 0.05 * x[1].cos())).unwrap();
        let x = Acs::new(vec![vec![a]]).unwrap();
        let p = pushforward(&x, &Diffeo::identity(&g)).unwrap();
        assert_eq!(p.structure.entries()[0][0].values(), x.entries()[0][0].values());
    }

    #[test]
    fn holomorphic_maps_keep_the_standard_structure() {
        // periodic holomorphic maps of the torus are translations
        let g = torus(1);
        let f = vec![GridField::constant(&g, C64::new(0.3, 0.0)), GridField::constant(&g, C64::new(-0.2, 0.0))];
        let d = invert_map(&f, 1e-13).unwrap();
        let p = pushforward(&Acs::zero(&g).unwrap(), &d).unwrap();
        assert!(matrix_sup(p.structure.entries()) < 1e-14);
    }

    #[test]
    fn zero_structure_transforms_by_dbar_f() {
        let g = torus(1);
        let f = vec![
            GridField::from_real_fn(&g, |x| 0.05 * (x[0] + x[1]).sin()).unwrap(),
            GridField::from_real_fn(&g, |x| 0.04 * x[0].cos()).unwrap(),
        ];
        let d = invert_map(&f, 1e-13).unwrap();
        let p = pushforward(&Acs::zero(&g).unwrap(), &d).unwrap();
        // Ã = (1 + ∂̄f̄)^{-1}∂̄f in one variable
        let fc = complex_map(&f).unwrap();
        let (h, a) = complex_derivatives(&fc[0]).unwrap();
        let expect = a[0].zip_map(&h[0], |db, dh| db / (C64::new(1.0, 0.0) + dh.conj())).unwrap();
        assert!(expect.sub(&p.tilde[0][0]).unwrap().sup_norm() < 1e-13);
    }

    #[test]
    fn straightening_constants() {
        let g = torus(2);
        let m = vec![vec![C64::new(0.1, 0.2), C64::new(-0.05, 0.0)], vec![C64::new(0.0, 0.3), C64::new(0.2, -0.1)]];
        let x = Acs::constant(&g, &m).unwrap();
        let (y, t) = linear_normalize(&x, None).unwrap();
        assert!(matrix_sup(y.entries()) < 1e-14);
        assert!(!t.is_identity());
        let (_, t0) = linear_normalize(&Acs::zero(&g).unwrap(), Some(&[0.0; 4])).unwrap();
        assert!(t0.is_identity());
    }

    #[test]
    fn straightening_removes_the_mean() {
        let g = torus(1);
        let a = GridField::from_fn(&g, |x| C64::new(0.1 + 0.05 * x[0].sin(), 0.03 * (x[0] - x[1]).cos() - 0.02)).unwrap();
        let x = Acs::new(vec![vec![a]]).unwrap();
        let (y, _) = linear_normalize(&x, None).unwrap();
        assert!(y.entries()[0][0].mean().norm() <= 1e-10);
        let p = [g.coords(5)[0], g.coords(5)[1]];
        let (z, _) = linear_normalize(&x, Some(&p)).unwrap();
        assert!(z.entries()[0][0].values()[5].norm() < 1e-14);
    }

    #[test]
    fn save_and_load_round_trip() {
        let g = torus(1);
        let a = GridField::from_fn(&g, |x| C64::new(0.1 * x[0].sin(), 0.0)).unwrap();
        let x = Acs::new(vec![vec![a]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        x.save(dir.path()).unwrap();
        let y = Acs::load(dir.path()).unwrap();
        assert_eq!(x.entries()[0][0].values(), y.entries()[0][0].values());
    }

    #[test]
    fn generated_structures_are_integrable_and_mean_free() {
        let g = torus(2);
        let h = TrigMap::random(2, 2, 0.05, 3).symmetrized();
        let gen = h.generate(&g).unwrap();
        let x = &gen.acs;
        assert!(x.sup_norm() > 1e-3);
        for e in x.entries().iter().flatten() {
            assert!(e.mean().norm() < 1e-15);
        }
        let coarse = integrability_residual(x).unwrap().1;
        let fine = integrability_residual(&h.generate(&GridSpec::cube(4, 16, 2.0 * PI).unwrap()).unwrap().acs).unwrap().1;
        assert!(fine < coarse / 100.0, "{coarse:e} {fine:e}");
    }

    #[test]
    fn exact_inverse_straightens_the_generated_structure() {
        let g = torus(2);
        let h = TrigMap::random(2, 2, 0.03, 5).symmetrized();
        let gen = h.generate(&g).unwrap();
        let d = invert_map(&gen.inverse, 1e-14).unwrap();
        let p = pushforward(&gen.acs, &d).unwrap();
        let before = matrix_sup(gen.acs.entries());
        let after = matrix_sup(p.structure.entries());
        assert!(after < 1e-3 * before, "{before:e} {after:e}");
    }

    #[test]
    fn pushforward_preserves_integrability() {
        let g = torus(2);
        let h = TrigMap::random(2, 2, 0.03, 7).symmetrized();
        let x = h.generate(&g).unwrap().acs;
        let r0 = integrability_residual(&x).unwrap().1;
        let k = TrigMap::random(2, 2, 0.02, 8).symmetrized();
        let d = invert_map(&k.displacement(&g).unwrap(), 1e-14).unwrap();
        let y = pushforward(&x, &d).unwrap().structure;
        let r1 = integrability_residual(&y).unwrap().1;
        // a non-integrable perturbation of the same size is far off
        let bump = GridField::from_fn(&g, |p| C64::new(0.0, 0.02 * p[0].sin())).unwrap();
        let mut e = x.entries().clone();
        e[0][1] = e[0][1].add(&bump).unwrap();
        let r2 = integrability_residual(&Acs::new(e).unwrap()).unwrap().1;
        assert!(r1 < 0.1 * r2 && r0 < 0.1 * r2, "{r0:e} {r1:e} {r2:e}");
    }
}
