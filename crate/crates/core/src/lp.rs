//! Littlewood-Paley families applied as Fourier multipliers, cone-supported
//! kernel pairs, and the cross-decay quadrature.

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec, C64};
use nalgebra::{DMatrix, DVector};

/// C^∞ step: 0 for x ≤ 0, 1 for x ≥ 1.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

/// Standard C^∞ bump on (-1, 1), unnormalised.
pub fn bump(w: f64) -> f64 {
    if w.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - w * w)).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProfileShape {
    /// 1 on [0,1], 0 beyond 2, smooth in between.
    SmoothBump,
    /// exp(-r² e^{-1/r²}): equal to 1 to infinite order at 0, Gaussian tail.
    FlatGaussian,
    /// Piecewise-linear through the given (radius, value) knots, constant
    /// outside the knot range.
    Table(Vec<(f64, f64)>),
}

/// Radial profile of the level-0 multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralProfile {
    pub shape: ProfileShape,
    pub support_radius: f64,
}

impl SpectralProfile {
    pub fn smooth() -> Self {
        Self { shape: ProfileShape::SmoothBump, support_radius: 2.0 }
    }

    pub fn flat_gaussian() -> Self {
        Self { shape: ProfileShape::FlatGaussian, support_radius: f64::INFINITY }
    }

    pub fn table(mut knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidArgument("empty profile table".into()));
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        let support_radius = knots
            .iter()
            .find(|k| k.1 == 0.0)
            .map(|k| k.0)
            .unwrap_or(f64::INFINITY);
        Ok(Self { shape: ProfileShape::Table(knots), support_radius })
    }

    pub fn eval(&self, r: f64) -> f64 {
        match &self.shape {
            ProfileShape::SmoothBump => 1.0 - smooth_step(r - 1.0),
            ProfileShape::FlatGaussian => {
                if r == 0.0 {
                    1.0
                } else {
                    (-(r * r) * (-1.0 / (r * r)).exp()).exp()
                }
            }
            ProfileShape::Table(k) => {
                if r <= k[0].0 {
                    return k[0].1;
                }
                for w in k.windows(2) {
                    let (r0, v0) = w[0];
                    let (r1, v1) = w[1];
                    if r <= r1 {
                        let t = if r1 > r0 { (r - r0) / (r1 - r0) } else { 1.0 };
                        return v0 + t * (v1 - v0);
                    }
                }
                k[k.len() - 1].1
            }
        }
    }

    /// Checks plateau, support, range and monotonicity at the radii the
    /// family will touch on `grid` up to `max_level`.
    pub fn validate_classical(&self, grid: &GridSpec, max_level: usize) -> Result<()> {
        let mut radii: Vec<f64> = grid.frequency_norms();
        radii.sort_by(|a, b| a.total_cmp(b));
        radii.dedup();
        let mut probe: Vec<f64> = Vec::with_capacity(radii.len() * (max_level + 1));
        for j in 0..=max_level {
            let s = 2f64.powi(-(j as i32));
            probe.extend(radii.iter().map(|r| r * s));
        }
        // fixed probes so that the plateau and cut-off are checked on coarse grids too
        probe.extend([0.0, 0.5, 1.0, 1.5, 2.0, 2.5]);
        probe.sort_by(|a, b| a.total_cmp(b));
        probe.dedup();
        let mut prev = f64::INFINITY;
        for &r in &probe {
            let v = self.eval(r);
            let fail = |reason: &str| Err(Error::ProfileRejected { frequency: r, reason: reason.into() });
            if !(0.0..=1.0).contains(&v) {
                return fail("value outside [0, 1]");
            }
            if r <= 1.0 && v != 1.0 {
                return fail("plateau value is not 1 inside the unit ball");
            }
            if r >= 2.0 && v != 0.0 {
                return fail("nonzero outside the ball of radius 2");
            }
            if v > prev + 1e-15 {
                return fail("profile increases with radius");
            }
            prev = v;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyKind {
    Classical,
    Regular,
    /// Only levels j ≥ 1 are present.
    DyadicResolution,
}

/// Dyadic family defined by telescoping dilations of one radial profile.
#[derive(Clone, Debug)]
pub struct LpFamily {
    pub kind: FamilyKind,
    pub profile: SpectralProfile,
    pub max_level: usize,
}

/// Validates `profile` as a compactly supported plateau profile on `grid`.
pub fn build_classical_family(profile: SpectralProfile, max_level: usize, grid: &GridSpec) -> Result<LpFamily> {
    profile.validate_classical(grid, max_level)?;
    Ok(LpFamily { kind: FamilyKind::Classical, profile, max_level })
}

/// Family built on the flat Gaussian profile (not compactly supported).
pub fn build_regular_family(max_level: usize) -> LpFamily {
    LpFamily { kind: FamilyKind::Regular, profile: SpectralProfile::flat_gaussian(), max_level }
}

impl LpFamily {
    /// Classical family with the default smooth profile, levels up to the
    /// grid's admissible maximum.
    pub fn standard(grid: &GridSpec) -> Self {
        Self { kind: FamilyKind::Classical, profile: SpectralProfile::smooth(), max_level: grid.max_level() }
    }

    pub fn with_max_level(mut self, j: usize) -> Self {
        self.max_level = j;
        self
    }

    pub fn min_level(&self) -> usize {
        match self.kind {
            FamilyKind::DyadicResolution => 1,
            _ => 0,
        }
    }

    /// Level-j symbol at radius r.
    pub fn symbol(&self, level: usize, r: f64) -> f64 {
        let p = |s: f64| self.profile.eval(s);
        if level == 0 {
            p(r)
        } else {
            p(r * 2f64.powi(-(level as i32))) - p(r * 2f64.powi(1 - level as i32))
        }
    }

    pub fn check_level(&self, grid: &GridSpec, level: usize) -> Result<()> {
        let max_admissible = grid.max_level().min(self.max_level);
        if level > max_admissible {
            return Err(Error::ResolutionExhausted { requested: level, max_admissible });
        }
        if level < self.min_level() {
            return Err(Error::InvalidArgument(format!("level {level} is not part of this family")));
        }
        Ok(())
    }

    /// Level multiplier on the frequency lattice of `grid`.
    pub fn level_table(&self, grid: &GridSpec, level: usize) -> Result<Vec<f64>> {
        self.check_level(grid, level)?;
        Ok(grid.frequency_norms().into_iter().map(|r| self.symbol(level, r)).collect())
    }

    /// Spatial kernel whose periodic convolution (Riemann sum with cell
    /// volume) equals the multiplier.
    pub fn kernel(&self, grid: &GridSpec, level: usize) -> Result<GridField> {
        let table = self.level_table(grid, level)?;
        let vol = grid.cell_volume();
        let spec: Vec<C64> = table.iter().map(|&m| C64::new(m / vol, 0.0)).collect();
        Ok(GridField::from_spectrum(grid, spec))
    }

    /// All level pieces of `u` from one forward transform.
    pub fn pieces(&self, u: &GridField, levels: std::ops::RangeInclusive<usize>) -> Result<Vec<GridField>> {
        let grid = u.spec();
        self.check_level(grid, *levels.end())?;
        let spectrum = u.spectrum();
        let norms = grid.frequency_norms();
        let pieces = levels
            .map(|j| {
                let s: Vec<C64> = spectrum.iter().zip(&norms).map(|(&v, &r)| v * self.symbol(j, r)).collect();
                GridField::from_spectrum(grid, s)
            })
            .collect();
        Ok(pieces)
    }
}

/// λ_level ∗ u as a frequency-side multiplier.
pub fn dyadic_convolve(family: &LpFamily, level: usize, u: &GridField) -> Result<GridField> {
    let table = family.level_table(u.spec(), level)?;
    Ok(u.apply_table(&table))
}

/// Minimum-image coordinate of sample `i` on an axis of length `n`, spacing `h`.
pub(crate) fn signed_coord(i: usize, n: usize, h: f64) -> f64 {
    if i < n.div_ceil(2) {
        i as f64 * h
    } else {
        (i as f64 - n as f64) * h
    }
}

/// Samples a kernel at minimum-image coordinates.
pub fn sample_kernel(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> GridField {
    let d = grid.dim();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let values = (0..grid.len())
        .map(|k| {
            grid.unravel(k, &mut idx);
            for a in 0..d {
                x[a] = signed_coord(idx[a], grid.shape()[a], grid.spacing(a));
            }
            C64::new(f(&x), 0.0)
        })
        .collect();
    GridField::from_parts(grid.clone(), values)
}

/// Spectrum of a spatial kernel scaled by the cell volume, so that
/// multiplying by it performs the Riemann-sum convolution.
pub fn kernel_spectrum(k: &GridField) -> Vec<C64> {
    let vol = k.spec().cell_volume();
    k.spectrum().into_iter().map(|v| v * vol).collect()
}

/// One-dimensional bump-times-polynomial factor with prescribed discrete moments.
#[derive(Clone, Debug)]
struct Factor {
    center: f64,
    radius: f64,
    /// Legendre coefficients in the scaled variable w = (u - center)/radius.
    coeffs: Vec<f64>,
}

fn legendre(k: usize, w: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, w);
    if k == 0 {
        return p0;
    }
    for m in 1..k {
        let p2 = ((2 * m + 1) as f64 * w * p1 - m as f64 * p0) / (m + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

impl Factor {
    fn eval_scaled(&self, u: f64) -> f64 {
        let w = (u - self.center) / self.radius;
        let b = bump(w);
        if b == 0.0 {
            return 0.0;
        }
        b * self.coeffs.iter().enumerate().map(|(k, c)| c * legendre(k, w)).sum::<f64>()
    }

    /// Solves for the coefficients so that Σ_i du · u_i^m · a(u_i) = δ_{m0}
    /// for m ≤ order, on the sample set `us` with spacing `du`.
    fn solve(center: f64, radius: f64, us: &[f64], du: f64, order: usize) -> Option<Self> {
        let inside: Vec<f64> = us.iter().map(|u| (u - center) / radius).filter(|w| w.abs() < 1.0).collect();
        if inside.len() < 2 * (order + 1) {
            return None;
        }
        let m = order + 1;
        let mut a = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        let ratio = -center / radius;
        for row in 0..m {
            rhs[row] = ratio.powi(row as i32) / radius;
        }
        // moments are taken in w; dividing the target by radius accounts for du = radius·dw
        for &w in &inside {
            let b = bump(w);
            let mut wp = 1.0;
            for row in 0..m {
                for col in 0..m {
                    a[(row, col)] += du / radius * wp * legendre(col, w) * b;
                }
                wp *= w;
            }
        }
        let lu = a.clone().lu();
        let c = lu.solve(&rhs)?;
        // verify in the original variable
        let f = Factor { center, radius, coeffs: c.iter().copied().collect() };
        for mm in 0..m {
            let mut acc = 0.0;
            let mut scale = 0.0f64;
            for &u in us {
                let v = f.eval_scaled(u);
                if v != 0.0 {
                    acc += du * u.powi(mm as i32) * v;
                    scale += du * (u.powi(mm as i32) * v).abs();
                }
            }
            let target = if mm == 0 { 1.0 } else { 0.0 };
            if (acc - target).abs() > 1e-10 * scale.max(1.0) {
                return None;
            }
        }
        Some(f)
    }
}

/// Kernel pair supported in the downward cone below the level-dependent
/// offset, with the reproduction Σ_{j≤J} ψ̂_j φ̂_j = 3Ĝ_J² − 2Ĝ_J³.
#[derive(Clone, Debug)]
pub struct ConePair {
    pub phi: Vec<GridField>,
    pub psi: Vec<GridField>,
    phi_hat: Vec<Vec<C64>>,
    psi_hat: Vec<Vec<C64>>,
    g_hat: Vec<Vec<C64>>,
    pub cone_axis: usize,
    pub moment_order: usize,
    pub level_count: usize,
    /// -1: supported in x_axis < 0 (the standard pair); +1: reflected.
    pub orientation: f64,
}

/// Half-width of the level-0 axial support (-1 - 2w, -1). Narrow supports
/// force huge polynomial factors to reach the moment conditions.
pub const AXIAL_HALF_WIDTH: f64 = 4.0;

pub const DEFAULT_MOMENT_ORDER: usize = 8;

/// Builds the standard (downward) pair on `grid`; see [`build_cone_pair_oriented`].
pub fn build_cone_pair(grid: &GridSpec, moment_order: usize, level_count: usize) -> Result<ConePair> {
    build_cone_pair_oriented(grid, moment_order, level_count, -1.0)
}

/// Levels 0..level_count-1. The cone axis is the last grid axis.
pub fn build_cone_pair_oriented(
    grid: &GridSpec,
    moment_order: usize,
    level_count: usize,
    orientation: f64,
) -> Result<ConePair> {
    if moment_order > 12 {
        return Err(Error::InvalidArgument(format!("moment order {moment_order} exceeds 12")));
    }
    if level_count == 0 {
        return Err(Error::InvalidArgument("level_count must be positive".into()));
    }
    let d = grid.dim();
    let axis = d - 1;
    let reach = 2.0 * (1.0 + 2.0 * AXIAL_HALF_WIDTH);
    if grid.box_len()[axis] < 2.0 * reach {
        return Err(Error::InvalidArgument(format!(
            "cone axis length {} is too short; the level-0 kernels need at least {}",
            grid.box_len()[axis],
            2.0 * reach
        )));
    }
    let trans_radius = if d > 1 { 0.9 / ((d - 1) as f64).sqrt() } else { 0.0 };

    let mut g_fields: Vec<GridField> = Vec::with_capacity(level_count);
    for j in 0..level_count {
        let scale = 2f64.powi(j as i32);
        let mut factors: Vec<Factor> = Vec::with_capacity(d);
        for a in 0..d {
            let n = grid.shape()[a];
            let h = grid.spacing(a);
            let us: Vec<f64> = (0..n).map(|i| scale * signed_coord(i, n, h)).collect();
            let (center, radius) = if a == axis {
                (orientation * (1.0 + AXIAL_HALF_WIDTH), AXIAL_HALF_WIDTH)
            } else {
                (0.0, trans_radius)
            };
            let mut achieved = None;
            for order in (0..=moment_order).rev() {
                if let Some(f) = Factor::solve(center, radius, &us, scale * h, order) {
                    achieved = Some((order, f));
                    break;
                }
            }
            match achieved {
                Some((order, f)) if order == moment_order => factors.push(f),
                Some((order, _)) => {
                    return Err(Error::MomentSystem { requested: moment_order, achieved: order });
                }
                None => return Err(Error::MomentSystem { requested: moment_order, achieved: 0 }),
            }
        }
        let jac = scale.powi(d as i32);
        let g = sample_kernel(grid, |x| {
            let mut v = jac;
            for (a, f) in factors.iter().enumerate() {
                v *= f.eval_scaled(scale * x[a]);
                if v == 0.0 {
                    break;
                }
            }
            v
        });
        g_fields.push(g);
    }

    let g_hat: Vec<Vec<C64>> = g_fields.iter().map(kernel_spectrum).collect();
    let vol = grid.cell_volume();
    let to_field = |s: &[C64]| GridField::from_spectrum(grid, s.iter().map(|v| v / vol).collect());
    let mut phi_hat = Vec::with_capacity(level_count);
    let mut psi_hat = Vec::with_capacity(level_count);
    for j in 0..level_count {
        let gj = &g_hat[j];
        if j == 0 {
            phi_hat.push(gj.clone());
            psi_hat.push(gj.iter().map(|&g| 3.0 * g - 2.0 * g * g).collect::<Vec<_>>());
        } else {
            let gp = &g_hat[j - 1];
            phi_hat.push(gj.iter().zip(gp).map(|(&a, &b)| a - b).collect::<Vec<_>>());
            psi_hat.push(
                gj.iter()
                    .zip(gp)
                    .map(|(&a, &b)| 3.0 * (a + b) - 2.0 * (a * a + a * b + b * b))
                    .collect::<Vec<_>>(),
            );
        }
    }
    let phi = phi_hat.iter().map(|s| to_field(s)).collect();
    let psi = psi_hat.iter().map(|s| to_field(s)).collect();
    Ok(ConePair {
        phi,
        psi,
        phi_hat,
        psi_hat,
        g_hat,
        cone_axis: axis,
        moment_order,
        level_count,
        orientation,
    })
}

fn check_pair_grid(pair: &ConePair, u: &GridField) -> Result<()> {
    pair.phi[0].spec().ensure_same(u.spec())
}

impl ConePair {
    pub fn grid(&self) -> &GridSpec {
        self.phi[0].spec()
    }

    pub fn top_level(&self) -> usize {
        self.level_count - 1
    }

    fn check(&self, level: usize) -> Result<()> {
        if level >= self.level_count {
            return Err(Error::ResolutionExhausted { requested: level, max_admissible: self.top_level() });
        }
        Ok(())
    }

    /// Multiplier of Σ_{k≤level} ψ_k ∗ φ_k.
    pub fn partial_symbol(&self, level: usize) -> Result<Vec<C64>> {
        self.check(level)?;
        Ok(self.g_hat[level].iter().map(|&g| 3.0 * g * g - 2.0 * g * g * g).collect())
    }

    /// Σ_{k≤level} ψ̂_k φ̂_k accumulated term by term (used to check the closed form).
    pub fn partial_symbol_summed(&self, level: usize) -> Result<Vec<C64>> {
        self.check(level)?;
        let mut acc = vec![C64::new(0.0, 0.0); self.grid().len()];
        for k in 0..=level {
            for (a, (p, q)) in acc.iter_mut().zip(self.phi_hat[k].iter().zip(&self.psi_hat[k])) {
                *a += p * q;
            }
        }
        Ok(acc)
    }

    pub fn apply_partial(&self, level: usize, u: &GridField) -> Result<GridField> {
        check_pair_grid(self, u)?;
        let sym = self.partial_symbol(level)?;
        let mut s = u.spectrum();
        for (v, m) in s.iter_mut().zip(&sym) {
            *v *= m;
        }
        Ok(GridField::from_spectrum(u.spec(), s))
    }

    pub fn apply_phi(&self, level: usize, u: &GridField) -> Result<GridField> {
        self.apply_hat(&self.phi_hat, level, u)
    }

    pub fn apply_psi(&self, level: usize, u: &GridField) -> Result<GridField> {
        self.apply_hat(&self.psi_hat, level, u)
    }

    fn apply_hat(&self, table: &[Vec<C64>], level: usize, u: &GridField) -> Result<GridField> {
        check_pair_grid(self, u)?;
        self.check(level)?;
        let mut s = u.spectrum();
        for (v, m) in s.iter_mut().zip(&table[level]) {
            *v *= m;
        }
        Ok(GridField::from_spectrum(u.spec(), s))
    }

    /// sup |1 - Σψ̂φ̂| over lattice frequencies with |ξ| ≤ radius.
    pub fn truncation_bound(&self, level: usize, radius: f64) -> Result<f64> {
        let sym = self.partial_symbol(level)?;
        let norms = self.grid().frequency_norms();
        Ok(sym
            .iter()
            .zip(&norms)
            .filter(|(_, &r)| r <= radius)
            .map(|(m, _)| (C64::new(1.0, 0.0) - m).norm())
            .fold(0.0, f64::max))
    }

    /// Whether `x` (minimum-image) lies in the level-j support region.
    pub fn in_support_region(&self, level: usize, x: &[f64]) -> bool {
        let axis = self.cone_axis;
        let lateral: f64 = x
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != axis)
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt();
        // coordinate along the cone opening, negative inside
        let along = if self.orientation < 0.0 { x[axis] } else { -x[axis] };
        along < -lateral && along < -2f64.powi(-(level as i32))
    }

    /// L¹ mass of φ_level and ψ_level outside the support region, relative
    /// to the total mass.
    pub fn outside_mass(&self, level: usize) -> Result<f64> {
        self.check(level)?;
        let grid = self.grid();
        let d = grid.dim();
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        let mut worst = 0.0f64;
        for k in [&self.phi[level], &self.psi[level]] {
            let (mut out, mut total) = (0.0, 0.0);
            for (flat, v) in k.values().iter().enumerate() {
                grid.unravel(flat, &mut idx);
                for a in 0..d {
                    x[a] = signed_coord(idx[a], grid.shape()[a], grid.spacing(a));
                }
                let m = v.norm();
                total += m;
                if !self.in_support_region(level, &x) {
                    out += m;
                }
            }
            worst = worst.max(out / total);
        }
        Ok(worst)
    }

    /// Discrete moments ∫ x^α k(x) dx of ψ_level for every multi-index with
    /// |α| ≤ order, returned as (α, value).
    pub fn psi_moments(&self, level: usize, order: usize) -> Result<Vec<(Vec<usize>, f64)>> {
        self.check(level)?;
        Ok(kernel_moments(&self.psi[level], order))
    }
}

/// Every multi-index α with |α| ≤ order.
pub fn multi_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; dim];
    fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[pos] = v;
            rec(pos + 1, left - v, cur, out);
        }
        cur[pos] = 0;
    }
    rec(0, order, &mut cur, &mut out);
    out
}

/// Riemann-sum moments of a real kernel at minimum-image coordinates.
pub fn kernel_moments(k: &GridField, order: usize) -> Vec<(Vec<usize>, f64)> {
    let grid = k.spec();
    let d = grid.dim();
    let vol = grid.cell_volume();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let alphas = multi_indices(d, order);
    let mut acc = vec![0.0; alphas.len()];
    for (flat, v) in k.values().iter().enumerate() {
        if v.re == 0.0 {
            continue;
        }
        grid.unravel(flat, &mut idx);
        for a in 0..d {
            x[a] = signed_coord(idx[a], grid.shape()[a], grid.spacing(a));
        }
        for (slot, alpha) in acc.iter_mut().zip(&alphas) {
            let mono: f64 = alpha.iter().zip(&x).map(|(&p, &xv)| xv.powi(p as i32)).product();
            *slot += mono * v.re * vol;
        }
    }
    alphas.into_iter().zip(acc).collect()
}

/// ∫|η_j ∗ θ_k|(1 + 2^{max(j,k)}|x|)^N dx, with η_j(x) = 2^{jd}η(2^j x) and
/// likewise θ_k, evaluated by Riemann sums on `grid`.
pub fn measure_cross_decay(
    grid: &GridSpec,
    eta: &dyn Fn(&[f64]) -> f64,
    theta: &dyn Fn(&[f64]) -> f64,
    j: usize,
    k: usize,
    weight_power: i32,
) -> Result<f64> {
    let d = grid.dim() as i32;
    let dilate = |f: &dyn Fn(&[f64]) -> f64, lvl: usize| {
        let s = 2f64.powi(lvl as i32);
        sample_kernel(grid, move |x| {
            let y: Vec<f64> = x.iter().map(|v| v * s).collect();
            s.powi(d) * f(&y)
        })
    };
    let ej = dilate(eta, j);
    let tk = dilate(theta, k);
    let spec_e = kernel_spectrum(&ej);
    let spec_t = kernel_spectrum(&tk);
    let prod: Vec<C64> = spec_e.iter().zip(&spec_t).map(|(a, b)| a * b).collect();
    let vol = grid.cell_volume();
    let conv = GridField::from_spectrum(grid, prod.into_iter().map(|v| v / vol).collect());
    let scale = 2f64.powi(j.max(k) as i32);
    let dd = grid.dim();
    let mut idx = vec![0usize; dd];
    let mut total = 0.0;
    for (flat, v) in conv.values().iter().enumerate() {
        grid.unravel(flat, &mut idx);
        let r2: f64 = (0..dd)
            .map(|a| signed_coord(idx[a], grid.shape()[a], grid.spacing(a)).powi(2))
            .sum();
        total += v.norm() * (1.0 + scale * r2.sqrt()).powi(weight_power) * vol;
    }
    if !total.is_finite() {
        return Err(Error::Numerical("cross-decay quadrature overflowed".into()));
    }
    Ok(total)
}

/// Fourth derivative of the unit Gaussian in 1-D (four vanishing moments).
pub fn gaussian_fourth_derivative(x: &[f64]) -> f64 {
    let t = x[0];
    let g = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (t.powi(4) - 6.0 * t * t + 3.0) * g
}

pub fn gaussian(x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (-0.5 * r2).exp() / (2.0 * std::f64::consts::PI).powf(x.len() as f64 / 2.0)
}
