//! Hölder-Zygmund norms estimated by finite differences and by dyadic
//! (Besov) suprema, plus the convexity, product and chain-rule monitors.

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec, C64};
use crate::interp::compose_shift;
use crate::lp::LpFamily;

/// Regularity index s > 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZygmundIndex(f64);

impl ZygmundIndex {
    pub fn new(s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidArgument(format!("regularity index must be positive, got {s}")));
        }
        Ok(Self(s))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Exact check: 1.0 and 2.0 take the second-difference branch, 1.0000001 does not.
    pub fn is_integer(self) -> bool {
        self.0.fract() == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Difference,
    Besov,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub backend: BackendKind,
    /// Dyadic levels (Besov) or offset step counts (difference) that entered the sup.
    pub levels_used: (usize, usize),
    pub resolution: Vec<usize>,
}

/// Either estimator, for callers that are generic over the backend.
#[derive(Clone, Debug)]
pub enum NormBackend {
    Difference,
    Besov(LpFamily),
}

impl NormBackend {
    pub fn besov_for(grid: &GridSpec) -> Self {
        NormBackend::Besov(LpFamily::standard(grid))
    }

    pub fn norm(&self, u: &GridField, s: f64, mask: Option<&[bool]>) -> Result<f64> {
        let s = ZygmundIndex::new(s)?;
        match self {
            NormBackend::Difference => zygmund_norm_diff(u, s, mask).map(|e| e.value),
            NormBackend::Besov(f) => zygmund_norm_besov(u, s, f, mask).map(|e| e.value),
        }
    }
}

fn check_mask(grid: &GridSpec, mask: Option<&[bool]>) -> Result<()> {
    let Some(m) = mask else { return Ok(()) };
    if m.len() != grid.len() {
        return Err(Error::GridMismatch(format!("mask of {} entries for {} samples", m.len(), grid.len())));
    }
    let d = grid.dim();
    let mut idx = vec![0usize; d];
    let interior = (0..grid.len()).any(|k| {
        if !m[k] {
            return false;
        }
        grid.unravel(k, &mut idx);
        (0..d).all(|a| {
            let n = grid.shape()[a];
            let i = idx[a];
            if i == 0 || i + 1 >= n {
                return false;
            }
            let st = grid.stride(a);
            m[k - st] && m[k + st]
        })
    });
    if interior {
        Ok(())
    } else {
        Err(Error::EmptyMask)
    }
}

/// Offset step vectors with physical length in [2·spacing, box/4].
pub fn difference_offsets(grid: &GridSpec) -> Vec<(Vec<i64>, f64)> {
    let d = grid.dim();
    let lo = 2.0 * grid.min_spacing() * (1.0 - 1e-12);
    let hi = grid.box_len().iter().cloned().fold(f64::INFINITY, f64::min) / 4.0 * (1.0 + 1e-12);
    let mut dirs: Vec<Vec<i64>> = Vec::new();
    for a in 0..d {
        let mut e = vec![0i64; d];
        e[a] = 1;
        dirs.push(e);
    }
    for a in 0..d {
        for b in a + 1..d {
            for sign in [1i64, -1] {
                let mut e = vec![0i64; d];
                e[a] = 1;
                e[b] = sign;
                dirs.push(e);
            }
        }
    }
    let max_n = *grid.shape().iter().max().unwrap_or(&1) as i64;
    let mut ladder: Vec<i64> = (1..=16).collect();
    let mut q = 1;
    loop {
        let m = (16.0 * 2f64.powf(q as f64 / 4.0)).round() as i64;
        if m > max_n {
            break;
        }
        ladder.push(m);
        q += 1;
    }
    let mut p = 1i64;
    while p <= max_n {
        ladder.push(p);
        p *= 2;
    }
    ladder.sort_unstable();
    ladder.dedup();
    let mut out = Vec::new();
    for dir in &dirs {
        let unit: f64 = dir
            .iter()
            .enumerate()
            .map(|(a, &c)| (c as f64 * grid.spacing(a)).powi(2))
            .sum::<f64>()
            .sqrt();
        for &m in &ladder {
            let len = unit * m as f64;
            if len >= lo && len <= hi {
                out.push((dir.iter().map(|c| c * m).collect(), len));
            }
        }
    }
    out
}

/// Index of `flat + steps` with periodic wrap; `None` if the shift wraps
/// and `allow_wrap` is false.
fn shifted(grid: &GridSpec, idx: &[usize], steps: &[i64], allow_wrap: bool) -> Option<usize> {
    let mut flat = 0usize;
    for (a, (&i, &s)) in idx.iter().zip(steps).enumerate() {
        let n = grid.shape()[a] as i64;
        let t = i as i64 + s;
        let w = t.rem_euclid(n);
        if w != t && !allow_wrap {
            return None;
        }
        flat = flat * n as usize + w as usize;
    }
    Some(flat)
}

fn difference_seminorm(u: &GridField, s: f64, mask: Option<&[bool]>) -> (f64, (usize, usize)) {
    let grid = u.spec();
    let d = grid.dim();
    let offsets = difference_offsets(grid);
    let allow_wrap = mask.is_none();
    let second = s == 1.0;
    let vals = u.values();
    let keep = |k: usize| mask.is_none_or(|m| m[k]);
    let mut best = 0.0f64;
    let mut used = (usize::MAX, 0usize);
    let mut idx = vec![0usize; d];
    let mut twice = vec![0i64; d];
    for (steps, len) in &offsets {
        let m = steps.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0);
        used.0 = used.0.min(m);
        used.1 = used.1.max(m);
        for (a, t) in twice.iter_mut().enumerate() {
            *t = 2 * steps[a];
        }
        let denom = if second { 2.0 * len } else { len.powf(s) };
        for k in 0..vals.len() {
            if !keep(k) {
                continue;
            }
            grid.unravel(k, &mut idx);
            let Some(k1) = shifted(grid, &idx, steps, allow_wrap) else { continue };
            if !keep(k1) {
                continue;
            }
            let q = if second {
                let Some(k2) = shifted(grid, &idx, &twice, allow_wrap) else { continue };
                if !keep(k2) {
                    continue;
                }
                (vals[k] + vals[k2] - 2.0 * vals[k1]).norm()
            } else {
                (vals[k1] - vals[k]).norm()
            };
            best = best.max(q / denom);
        }
    }
    if used.0 == usize::MAX {
        used.0 = 0;
    }
    (best, used)
}

fn diff_recursive(u: &GridField, s: f64, mask: Option<&[bool]>) -> (f64, (usize, usize)) {
    if s > 1.0 {
        let (mut total, used) = diff_recursive(u, s - 1.0, mask);
        for g in u.gradient() {
            total += diff_recursive(&g, s - 1.0, mask).0;
        }
        return (total, used);
    }
    let (semi, used) = difference_seminorm(u, s, mask);
    (u.sup_norm_masked(mask) + semi, used)
}

/// Finite-difference estimate: first differences for 0 < s < 1, midpoint
/// second differences at s = 1, recursion on the spectral gradient above.
pub fn zygmund_norm_diff(u: &GridField, s: ZygmundIndex, mask: Option<&[bool]>) -> Result<NormEstimate> {
    check_mask(u.spec(), mask)?;
    let (value, levels_used) = diff_recursive(u, s.value(), mask);
    Ok(NormEstimate {
        value,
        backend: BackendKind::Difference,
        levels_used,
        resolution: u.spec().shape().to_vec(),
    })
}

/// 2^{js}‖λ_j ∗ u‖ for j = 0..=J, followed by the tail term
/// 2^{(J+1)s}‖(1 − λ̂₀(2^{-J}·))û‖ that covers frequencies beyond 2^{J+1}.
pub fn besov_profile(u: &GridField, s: f64, family: &LpFamily, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let grid = u.spec();
    check_mask(grid, mask)?;
    let top = family.max_level.min(grid.max_level());
    let spectrum = u.spectrum();
    let norms = grid.frequency_norms();
    let mut out = Vec::with_capacity(top + 2);
    let piece_norm = |mult: &dyn Fn(f64) -> f64| -> f64 {
        let sp: Vec<C64> = spectrum.iter().zip(&norms).map(|(&v, &r)| v * mult(r)).collect();
        GridField::from_spectrum(grid, sp).sup_norm_masked(mask)
    };
    for j in family.min_level()..=top {
        let w = 2f64.powf(j as f64 * s);
        out.push(w * piece_norm(&|r| family.symbol(j, r)));
    }
    let scale = 2f64.powi(-(top as i32));
    let tail = piece_norm(&|r| 1.0 - family.profile.eval(r * scale));
    out.push(2f64.powf((top + 1) as f64 * s) * tail);
    Ok(out)
}

/// sup_j 2^{js}‖λ_j ∗ u‖ over the masked samples, level 0 carrying the
/// low frequencies.
pub fn zygmund_norm_besov(
    u: &GridField,
    s: ZygmundIndex,
    family: &LpFamily,
    mask: Option<&[bool]>,
) -> Result<NormEstimate> {
    let profile = besov_profile(u, s.value(), family, mask)?;
    let top = profile.len() - 1 + family.min_level();
    let value = profile.iter().cloned().fold(0.0, f64::max);
    Ok(NormEstimate {
        value,
        backend: BackendKind::Besov,
        levels_used: (family.min_level(), top),
        resolution: u.spec().shape().to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexityReport {
    pub interpolated: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// |u|_{(1−θ)a+θb} against |u|_a^{1−θ}|u|_b^θ.
pub fn check_convexity(u: &GridField, a: f64, b: f64, theta: f64, backend: &NormBackend) -> Result<ConvexityReport> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("theta {theta} outside [0, 1]")));
    }
    let na = backend.norm(u, a, None)?;
    let nb = backend.norm(u, b, None)?;
    let mid = (1.0 - theta) * a + theta * b;
    let interpolated = if theta == 0.0 {
        na
    } else if theta == 1.0 {
        nb
    } else {
        backend.norm(u, mid, None)?
    };
    let bound = na.powf(1.0 - theta) * nb.powf(theta);
    let ratio = if bound > 0.0 { interpolated / bound } else { 1.0 };
    Ok(ConvexityReport { interpolated, bound, ratio })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProductChainReport {
    pub product_lhs: f64,
    pub product_rhs: f64,
    pub product_ratio: f64,
    pub chain_lhs: f64,
    pub chain_rhs: f64,
    pub chain_ratio: f64,
}

/// Norms of a map I + f: sup of the Jacobian operator norm (at least 1, so
/// the identity has norm 1) and the Zygmund norm of its Jacobian entries.
fn map_norms(disp: &[GridField], order: f64, backend: &NormBackend) -> Result<(f64, f64)> {
    let d = disp.len();
    let grads: Vec<Vec<GridField>> = disp.iter().map(|f| f.gradient()).collect();
    let grid = disp[0].spec();
    let mut lip = 0.0f64;
    for k in 0..grid.len() {
        let m = nalgebra::DMatrix::from_fn(d, d, |r, c| grads[r][c].values()[k].re + if r == c { 1.0 } else { 0.0 });
        let sv = m.singular_values();
        lip = lip.max(sv.max());
    }
    let lip = lip.max(1.0);
    let mut higher = lip;
    if order > 0.0 {
        for row in &grads {
            for g in row {
                higher += backend.norm(g, order, None)? - g.sup_norm();
            }
        }
    }
    Ok((lip, higher))
}

/// Evaluates both sides of the product rule and of the chain rule for the
/// map I + disp (disp is one real field per axis).
pub fn check_product_chain(
    u: &GridField,
    v: &GridField,
    disp: &[GridField],
    a: f64,
    eps: f64,
    backend: &NormBackend,
) -> Result<ProductChainReport> {
    let uv = u.mul(v)?;
    let product_lhs = backend.norm(&uv, a, None)?;
    let product_rhs = backend.norm(u, a, None)? * backend.norm(v, eps, None)?
        + backend.norm(u, eps, None)? * backend.norm(v, a, None)?;
    let composed = compose_shift(u, disp, 1e-14)?;
    let chain_lhs = backend.norm(&composed, a, None)?;
    let chain_rhs = if a > 1.0 {
        let (_, map_eps) = map_norms(disp, eps, backend)?;
        let (_, map_a) = map_norms(disp, a - 1.0, backend)?;
        backend.norm(u, a, None)? * map_eps.powf((1.0 + 2.0 * eps) / (1.0 + eps))
            + backend.norm(u, 1.0 + eps, None)? * map_a
            + u.sup_norm()
    } else {
        let (lip, _) = map_norms(disp, 0.0, backend)?;
        backend.norm(u, a, None)? * lip.powf(a)
    };
    let ratio = |l: f64, r: f64| if r > 0.0 { l / r } else { 0.0 };
    Ok(ProductChainReport {
        product_lhs,
        product_rhs,
        product_ratio: ratio(product_lhs, product_rhs),
        chain_lhs,
        chain_rhs,
        chain_ratio: ratio(chain_lhs, chain_rhs),
    })
}

/// Least-squares slope of y against x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn idx(s: f64) -> ZygmundIndex {
        ZygmundIndex::new(s).unwrap()
    }

    #[test]
    fn rejects_nonpositive_index() {
        assert!(ZygmundIndex::new(0.0).is_err());
        assert!(ZygmundIndex::new(-1.0).is_err());
        assert!(idx(2.0).is_integer());
        assert!(!idx(1.0000001).is_integer());
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let grid = GridSpec::cube(1, 256, 1.0).unwrap();
        let u = GridField::zeros(&grid);
        for s in [0.3, 1.0, 1.7, 2.0] {
            assert_eq!(zygmund_norm_diff(&u, idx(s), None).unwrap().value, 0.0);
            assert_eq!(zygmund_norm_besov(&u, idx(s), &LpFamily::standard(&grid), None).unwrap().value, 0.0);
        }
    }

    #[test]
    fn sine_matches_exhaustive_pair_search() {
        let n = 1 << 14;
        let grid = GridSpec::cube(1, n, 1.0).unwrap();
        let u = GridField::from_real_fn(&grid, |x| (2.0 * PI * x[0]).sin()).unwrap();
        let got = zygmund_norm_diff(&u, idx(0.5), None).unwrap().value;
        let vals: Vec<f64> = u.values().iter().map(|v| v.re).collect();
        let h = 1.0 / n as f64;
        let mut best = 0.0f64;
        for m in 2..=n / 4 {
            let den = (m as f64 * h).sqrt();
            for i in 0..n {
                best = best.max((vals[(i + m) % n] - vals[i]).abs() / den);
            }
        }
        let sup = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((got - (best + sup)).abs() < 1e-12, "{got} vs {}", best + sup);
    }

    #[test]
    fn empty_mask_rejected() {
        let grid = GridSpec::cube(1, 64, 1.0).unwrap();
        let u = GridField::zeros(&grid);
        let mut mask = vec![false; 64];
        mask[10] = true;
        assert!(matches!(zygmund_norm_diff(&u, idx(0.5), Some(&mask)), Err(Error::EmptyMask)));
    }

    #[test]
    fn single_mode_besov_value() {
        let grid = GridSpec::cube(1, 1024, 2.0 * PI).unwrap();
        let fam = LpFamily::standard(&grid);
        let u = GridField::from_real_fn(&grid, |x| (64.0 * x[0]).cos()).unwrap();
        // |ξ| = 64 = 2^6 sits on the boundary of level 6 and 7; λ̂_6(64) = 1
        let v = zygmund_norm_besov(&u, idx(0.7), &fam, None).unwrap().value;
        assert!((v - 2f64.powf(6.0 * 0.7)).abs() < 1e-10);
    }

    #[test]
    fn convexity_endpoints() {
        let grid = GridSpec::cube(1, 256, 2.0 * PI).unwrap();
        let u = GridField::from_real_fn(&grid, |x| (3.0 * x[0]).sin() + 0.2 * (17.0 * x[0]).cos()).unwrap();
        let b = NormBackend::besov_for(&grid);
        assert_eq!(check_convexity(&u, 1.1, 2.5, 0.0, &b).unwrap().ratio, 1.0);
        assert_eq!(check_convexity(&u, 1.1, 2.5, 1.0, &b).unwrap().ratio, 1.0);
    }

    #[test]
    fn chain_with_identity_and_unit_factor() {
        let grid = GridSpec::cube(1, 256, 2.0 * PI).unwrap();
        let u = GridField::from_real_fn(&grid, |x| (3.0 * x[0]).sin()).unwrap();
        let one = GridField::constant(&grid, C64::new(1.0, 0.0));
        let zero = vec![GridField::zeros(&grid)];
        for backend in [NormBackend::Difference, NormBackend::besov_for(&grid)] {
            let r = check_product_chain(&u, &one, &zero, 1.7, 0.1, &backend).unwrap();
            assert!(r.product_ratio <= 2.0);
            assert!(r.chain_ratio <= 1.0 + 1e-12);
            let r = check_product_chain(&u, &one, &zero, 0.6, 0.1, &backend).unwrap();
            assert!((r.chain_ratio - 1.0).abs() < 1e-12);
        }
    }
}
