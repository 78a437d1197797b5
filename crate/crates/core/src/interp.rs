//! Off-grid evaluation: trigonometric interpolation on periodic grids and
//! tensor cubic Lagrange interpolation on bounded boxes.

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec, C64};
use crate::lp::multi_indices;

/// Grids up to this many points use the exact trigonometric sum.
pub const DIRECT_LIMIT: usize = 4096;
/// Largest grid on which a diverging series falls back to the exact sum.
pub const FALLBACK_LIMIT: usize = 1 << 14;

/// Per-axis factor of the ∂^p multiplier at FFT bin i. The Nyquist mode is
/// interpreted as a cosine, so its odd derivatives vanish on the grid.
fn deriv_factor(grid: &GridSpec, axis: usize, i: usize, p: usize) -> C64 {
    if p == 0 {
        return C64::new(1.0, 0.0);
    }
    let n = grid.shape()[axis];
    let xi = grid.frequency(axis, i);
    if n > 1 && i == n / 2 && p % 2 == 1 {
        return C64::new(0.0, 0.0);
    }
    C64::new(0.0, xi).powu(p as u32)
}

/// ∂^α u, spectral.
pub fn derivative_multi(u: &GridField, alpha: &[usize]) -> GridField {
    let spectrum = u.spectrum();
    derivative_from_spectrum(u.spec(), &spectrum, alpha)
}

fn derivative_from_spectrum(grid: &GridSpec, spectrum: &[C64], alpha: &[usize]) -> GridField {
    let d = grid.dim();
    let tables: Vec<Vec<C64>> = (0..d)
        .map(|a| (0..grid.shape()[a]).map(|i| deriv_factor(grid, a, i, alpha[a])).collect())
        .collect();
    let mut idx = vec![0usize; d];
    let s: Vec<C64> = spectrum
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            grid.unravel(k, &mut idx);
            let mut m = v;
            for a in 0..d {
                m *= tables[a][idx[a]];
            }
            m
        })
        .collect();
    GridField::from_spectrum(grid, s)
}

/// Exact evaluation of the trigonometric interpolant.
#[derive(Clone, Debug)]
pub struct TrigInterpolant {
    grid: GridSpec,
    coeffs: Vec<C64>,
}

impl TrigInterpolant {
    pub fn new(u: &GridField) -> Self {
        let n = u.len() as f64;
        let coeffs = u.spectrum().into_iter().map(|v| v / n).collect();
        Self { grid: u.spec().clone(), coeffs }
    }

    fn axis_basis(&self, axis: usize, x: f64, out: &mut Vec<C64>) {
        let n = self.grid.shape()[axis];
        out.clear();
        let w = 2.0 * std::f64::consts::PI / self.grid.box_len()[axis];
        let step = C64::from_polar(1.0, w * x);
        let mut pos = C64::new(1.0, 0.0);
        out.resize(n, C64::new(0.0, 0.0));
        // non-negative bins by recurrence, negative bins by conjugate-free recurrence
        for i in 0..=n / 2 {
            out[i] = pos;
            pos *= step;
        }
        let back = step.inv();
        let mut neg = back;
        for i in (n / 2 + 1..n).rev() {
            out[i] = neg;
            neg *= back;
        }
        if n > 1 {
            let ny = n / 2;
            out[ny] = C64::new((w * ny as f64 * x).cos(), 0.0);
        }
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        let d = self.grid.dim();
        let mut bases: Vec<Vec<C64>> = vec![Vec::new(); d];
        for a in 0..d {
            self.axis_basis(a, x[a], &mut bases[a]);
        }
        // contract the last axis first
        let mut cur = self.coeffs.clone();
        for a in (0..d).rev() {
            let n = self.grid.shape()[a];
            let outer = cur.len() / n;
            let mut next = vec![C64::new(0.0, 0.0); outer];
            for (o, slot) in next.iter_mut().enumerate() {
                let row = &cur[o * n..(o + 1) * n];
                *slot = row.iter().zip(&bases[a]).map(|(c, b)| c * b).sum();
            }
            cur = next;
        }
        cur[0]
    }
}

/// u(x + disp(x)) at every grid point x, with disp given per axis as real
/// fields. Exact sum on small grids and in 1-D, adaptive Taylor expansion
/// with spectral derivatives otherwise.
pub fn compose_shift(u: &GridField, disp: &[GridField], tol: f64) -> Result<GridField> {
    let grid = u.spec();
    if disp.len() != grid.dim() {
        return Err(Error::InvalidArgument(format!(
            "{} displacement components for a {}-d grid",
            disp.len(),
            grid.dim()
        )));
    }
    for g in disp {
        grid.ensure_same(g.spec())?;
    }
    if grid.len() <= DIRECT_LIMIT || grid.dim() == 1 {
        compose_direct(u, disp)
    } else {
        // Large shifts against fine grids make the series diverge; the exact
        // sum is slow but always valid.
        match compose_taylor(u, disp, tol) {
            Err(_) if grid.len() <= FALLBACK_LIMIT => compose_direct(u, disp),
            r => r,
        }
    }
}

pub fn compose_direct(u: &GridField, disp: &[GridField]) -> Result<GridField> {
    let grid = u.spec();
    let interp = TrigInterpolant::new(u);
    let values = (0..grid.len())
        .map(|k| {
            let mut x = grid.coords(k);
            for (a, g) in disp.iter().enumerate() {
                x[a] += g.values()[k].re;
            }
            interp.eval(&x)
        })
        .collect();
    GridField::new(grid.clone(), values)
}

pub fn compose_taylor(u: &GridField, disp: &[GridField], tol: f64) -> Result<GridField> {
    const MAX_ORDER: usize = 48;
    let grid = u.spec();
    let d = grid.dim();
    let spectrum = u.spectrum();
    let scale = u.sup_norm().max(f64::MIN_POSITIVE);
    let mut acc: Vec<C64> = u.values().to_vec();
    let g: Vec<Vec<f64>> = disp.iter().map(|f| f.values().iter().map(|v| v.re).collect()).collect();
    let mut quiet = 0;
    let mut prev = Vec::new();
    for order in 1..=MAX_ORDER {
        let alphas: Vec<Vec<usize>> = multi_indices(d, order).into_iter().filter(|a| a.iter().sum::<usize>() == order).collect();
        let mut contrib = vec![C64::new(0.0, 0.0); grid.len()];
        for alpha in &alphas {
            let der = derivative_from_spectrum(grid, &spectrum, alpha);
            let fact: f64 = alpha.iter().map(|&p| (1..=p).product::<usize>() as f64).product();
            for (k, (c, dv)) in contrib.iter_mut().zip(der.values()).enumerate() {
                let mut mono = 1.0 / fact;
                for a in 0..d {
                    if alpha[a] > 0 {
                        mono *= g[a][k].powi(alpha[a] as i32);
                    }
                }
                *c += dv * mono;
            }
        }
        let size = contrib.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, c) in acc.iter_mut().zip(&contrib) {
            *a += c;
        }
        prev.push(size);
        if size <= tol * scale {
            quiet += 1;
            if quiet >= 2 {
                return GridField::new(grid.clone(), acc);
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::Numerical(format!(
        "Taylor composition did not converge; last order sizes {:?}",
        &prev[prev.len().saturating_sub(3)..]
    )))
}

/// Per-axis node indices and Lagrange weights of the 4-point cubic stencil
/// around `x`. Periodic grids wrap; bounded ones use samples i·h for i in
/// 0..n and reject queries outside [0, (n-1)h].
fn cubic_stencil(grid: &GridSpec, x: &[f64], periodic: bool) -> Result<Vec<([usize; 4], [f64; 4])>> {
    let mut out = Vec::with_capacity(grid.dim());
    for a in 0..grid.dim() {
        let n = grid.shape()[a];
        let h = grid.spacing(a);
        if n < 4 {
            return Err(Error::OutOfBox { point: x.to_vec() });
        }
        let mut t = x[a] / h;
        let base: isize;
        if periodic {
            t = t.rem_euclid(n as f64);
            base = t.floor() as isize - 1;
        } else {
            if !(t >= -1e-12 && t <= (n - 1) as f64 + 1e-12) {
                return Err(Error::OutOfBox { point: x.to_vec() });
            }
            base = (t.floor() as isize).clamp(1, n as isize - 3) - 1;
        }
        let mut idx = [0usize; 4];
        let mut w = [0.0f64; 4];
        for m in 0..4 {
            idx[m] = (base + m as isize).rem_euclid(n as isize) as usize;
            let mut c = 1.0;
            for l in 0..4 {
                if l != m {
                    c *= (t - (base + l as isize) as f64) / (m as f64 - l as f64);
                }
            }
            w[m] = c;
        }
        out.push((idx, w));
    }
    Ok(out)
}

fn cubic_combine<T>(grid: &GridSpec, stencil: &[([usize; 4], [f64; 4])], sample: impl Fn(usize) -> T) -> T
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
{
    let d = grid.dim();
    let mut total = T::default();
    let mut idx = vec![0usize; d];
    for combo in 0..4usize.pow(d as u32) {
        let mut c = combo;
        let mut w = 1.0;
        for a in 0..d {
            let m = c % 4;
            c /= 4;
            idx[a] = stencil[a].0[m];
            w *= stencil[a].1[m];
        }
        if w != 0.0 {
            total = total + sample(grid.ravel(&idx)) * w;
        }
    }
    total
}

/// Tensor cubic Lagrange interpolation on a non-periodic box: samples are
/// taken at i·h for i in 0..n, and queries must stay inside [0, (n-1)h].
pub fn cubic_eval(u: &GridField, x: &[f64]) -> Result<C64> {
    let grid = u.spec();
    let st = cubic_stencil(grid, x, false)?;
    Ok(cubic_combine(grid, &st, |k| u.values()[k]))
}

/// Cubic interpolation of a real sample array laid out on `grid`.
pub fn cubic_sample(grid: &GridSpec, values: &[f64], x: &[f64], periodic: bool) -> Result<f64> {
    let st = cubic_stencil(grid, x, periodic)?;
    Ok(cubic_combine(grid, &st, |k| values[k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn trig_interpolant_reproduces_modes_off_grid() {
        let grid = GridSpec::cube(2, 16, 2.0 * PI).unwrap();
        let u = GridField::from_real_fn(&grid, |x| (2.0 * x[0] - x[1]).sin() + (3.0 * x[1]).cos()).unwrap();
        let it = TrigInterpolant::new(&u);
        let p = [0.37f64, 1.91];
        let want = (2.0 * p[0] - p[1]).sin() + (3.0 * p[1]).cos();
        assert!((it.eval(&p).re - want).abs() < 1e-12);
        assert!(it.eval(&p).im.abs() < 1e-12);
    }

    #[test]
    fn taylor_matches_direct_sum() {
        let grid = GridSpec::cube(2, 32, 2.0 * PI).unwrap();
        let u = GridField::from_real_fn(&grid, |x| (x[0] + 2.0 * x[1]).sin() * (3.0 * x[0]).cos()).unwrap();
        let g0 = GridField::from_real_fn(&grid, |x| 0.03 * (x[1]).sin()).unwrap();
        let g1 = GridField::from_real_fn(&grid, |x| 0.02 * (x[0] - x[1]).cos()).unwrap();
        let a = compose_direct(&u, &[g0.clone(), g1.clone()]).unwrap();
        let b = compose_taylor(&u, &[g0, g1], 1e-15).unwrap();
        assert!(a.sub(&b).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn cubic_exact_on_cubics() {
        let grid = GridSpec::new(vec![16, 8], vec![3.0, 2.0]).unwrap();
        let f = |x: &[f64]| x[0].powi(3) - 2.0 * x[0] * x[1] * x[1] + x[1].powi(3) + 1.0;
        let u = GridField::from_real_fn(&grid, f).unwrap();
        for p in [[0.1, 0.2], [2.7, 1.6], [1.33, 0.01]] {
            assert!((cubic_eval(&u, &p).unwrap().re - f(&p)).abs() < 1e-12);
        }
        assert!(matches!(cubic_eval(&u, &[-0.5, 0.2]), Err(Error::OutOfBox { .. })));
    }

    #[test]
    fn periodic_cubic_wraps() {
        let grid = GridSpec::cube(1, 64, 2.0 * PI).unwrap();
        let v: Vec<f64> = (0..64).map(|i| (i as f64 * grid.spacing(0)).cos()).collect();
        for x in [0.01, 6.27, -0.3, 7.0] {
            let got = cubic_sample(&grid, &v, &[x], true).unwrap();
            assert!((got - f64::cos(x)).abs() < 1e-5, "{x}: {got}");
        }
    }
}

/// Spectral zero-padding of `u` onto a grid refined `factor` times per
/// axis. The Nyquist bin is split evenly between ±n/2, which keeps real
/// fields real.
pub fn upsample(u: &GridField, factor: usize) -> Result<GridField> {
    let grid = u.spec();
    if factor == 0 {
        return Err(Error::InvalidArgument("upsampling factor must be positive".into()));
    }
    let fine_shape: Vec<usize> = grid.shape().iter().map(|&n| n * factor).collect();
    let fine = GridSpec::new(fine_shape.clone(), grid.box_len().to_vec())?;
    let d = grid.dim();
    let scale = (fine.len() / grid.len()) as f64;
    let spec = u.spectrum();
    let mut out = vec![C64::new(0.0, 0.0); fine.len()];
    let mut idx = vec![0usize; d];
    let mut tgt = vec![0usize; d];
    for (k, &v) in spec.iter().enumerate() {
        grid.unravel(k, &mut idx);
        // Each Nyquist axis doubles the number of target bins.
        let ny: Vec<usize> = (0..d).filter(|&a| grid.shape()[a] > 1 && idx[a] == grid.shape()[a] / 2).collect();
        let share = v * scale / (1usize << ny.len()) as f64;
        for mask in 0..1usize << ny.len() {
            for a in 0..d {
                let n = grid.shape()[a] as i64;
                let mut w = grid.wave_index(a, idx[a]);
                if let Some(pos) = ny.iter().position(|&b| b == a) {
                    if mask >> pos & 1 == 1 {
                        w -= n;
                    }
                }
                tgt[a] = w.rem_euclid(fine_shape[a] as i64) as usize;
            }
            out[fine.ravel(&tgt)] += share;
        }
    }
    Ok(GridField::from_spectrum(&fine, out))
}

/// Tensor Lagrange interpolation of several periodic fields sharing one
/// set of query points, after spectral upsampling. Stencil weights are
/// computed once per point and reused across fields.
#[derive(Clone, Debug)]
pub struct BatchInterpolant {
    fine: GridSpec,
    fields: Vec<Vec<C64>>,
    order: usize,
}

/// Default upsampling factor and stencil width.
pub const BATCH_FACTOR: usize = 2;
pub const BATCH_ORDER: usize = 8;

impl BatchInterpolant {
    pub fn new(fields: &[GridField]) -> Result<Self> {
        Self::with_params(fields, BATCH_FACTOR, BATCH_ORDER)
    }

    pub fn with_params(fields: &[GridField], factor: usize, order: usize) -> Result<Self> {
        let first = fields.first().ok_or_else(|| Error::InvalidArgument("no fields to interpolate".into()))?;
        for f in fields {
            first.spec().ensure_same(f.spec())?;
        }
        if order < 2 || !order.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("stencil width {order} must be even and ≥ 2")));
        }
        let up: Vec<GridField> = fields.iter().map(|f| upsample(f, factor)).collect::<Result<_>>()?;
        let fine = up[0].spec().clone();
        if fine.shape().iter().any(|&n| n < order) {
            return Err(Error::InvalidGrid(format!("stencil width {order} exceeds the refined grid")));
        }
        Ok(Self { fine, fields: up.into_iter().map(|f| f.into_values()).collect(), order })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Values of every field at `x`.
    pub fn eval(&self, x: &[f64]) -> Vec<C64> {
        let d = self.fine.dim();
        let p = self.order;
        let mut nodes = vec![vec![0usize; p]; d];
        let mut wts = vec![vec![0.0f64; p]; d];
        for a in 0..d {
            let n = self.fine.shape()[a];
            let t = (x[a] / self.fine.spacing(a)).rem_euclid(n as f64);
            let base = t.floor() as isize - (p as isize / 2 - 1);
            for m in 0..p {
                nodes[a][m] = (base + m as isize).rem_euclid(n as isize) as usize;
                let mut c = 1.0;
                for l in 0..p {
                    if l != m {
                        c *= (t - (base + l as isize) as f64) / (m as f64 - l as f64);
                    }
                }
                wts[a][m] = c;
            }
        }
        // Odometer over the stencil with running weight and flat offset.
        let strides: Vec<usize> = (0..d).map(|a| self.fine.stride(a)).collect();
        let mut out = vec![C64::new(0.0, 0.0); self.fields.len()];
        let mut m = vec![0usize; d];
        let mut w = vec![1.0f64; d + 1];
        let mut off = vec![0usize; d + 1];
        for a in 0..d {
            w[a + 1] = w[a] * wts[a][0];
            off[a + 1] = off[a] + nodes[a][0] * strides[a];
        }
        loop {
            let (wk, k) = (w[d], off[d]);
            for (o, f) in out.iter_mut().zip(&self.fields) {
                *o += f[k] * wk;
            }
            let mut a = d;
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                m[a] += 1;
                if m[a] < p {
                    break;
                }
                m[a] = 0;
            }
            for b in a..d {
                w[b + 1] = w[b] * wts[b][m[b]];
                off[b + 1] = off[b] + nodes[b][m[b]] * strides[b];
            }
        }
    }

    /// Every field evaluated at x + disp(x) for x on the coarse grid `grid`.
    pub fn compose(&self, grid: &GridSpec, disp: &[GridField]) -> Result<Vec<GridField>> {
        use rayon::prelude::*;
        if disp.len() != grid.dim() {
            return Err(Error::InvalidArgument(format!(
                "{} displacement components for a {}-d grid",
                disp.len(),
                grid.dim()
            )));
        }
        for g in disp {
            grid.ensure_same(g.spec())?;
        }
        let rows: Vec<Vec<C64>> = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let mut x = grid.coords(k);
                for (a, g) in disp.iter().enumerate() {
                    x[a] += g.values()[k].re;
                }
                self.eval(&x)
            })
            .collect();
        (0..self.fields.len())
            .map(|f| GridField::new(grid.clone(), rows.iter().map(|r| r[f]).collect()))
            .collect()
    }
}

/// Composes each field with x ↦ x + disp(x) through a [`BatchInterpolant`].
pub fn compose_batch(fields: &[GridField], disp: &[GridField]) -> Result<Vec<GridField>> {
    let grid = fields.first().ok_or_else(|| Error::InvalidArgument("no fields to compose".into()))?.spec().clone();
    BatchInterpolant::new(fields)?.compose(&grid, disp)
}
