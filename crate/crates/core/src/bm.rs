//! Bochner-Martinelli quadrature on the unit ball of C² (axes
//! [x_1, x_2, y_1, y_2]). Data on the closed ball are extended by a radial
//! cutoff to compact support in a cube, and the kernel
//! K_j(w) = conj(w_j)/(π²|w|⁴) is summed with the midpoint rule at grid-node
//! targets. The cell holding the singularity is integrated from the
//! linear Taylor term of the data, which is exact up to O(h⁴) there.

use crate::error::{Error, Result};
use crate::grid::C64;
use crate::lp::smooth_step;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Values of a (0,1)-form (a_1, a_2) on a neighbourhood of the closed ball.
pub type FormSource<'a> = dyn Fn(&[f64; 4]) -> [C64; 2] + Sync + 'a;

/// Step of the finite differences applied to the (smooth) extended data.
const FD_STEP: f64 = 1e-3;

/// Radial cutoff that is 1 on |x| ≤ inner and 0 on |x| ≥ outer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallExtension {
    pub inner: f64,
    pub outer: f64,
}

impl Default for BallExtension {
    fn default() -> Self {
        Self { inner: 1.1, outer: 2.0 }
    }
}

impl BallExtension {
    pub fn cutoff(&self, x: &[f64; 4]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        1.0 - smooth_step((r - self.inner) / (self.outer - self.inner))
    }

    fn check(&self, half_width: f64) -> Result<()> {
        if !(self.inner >= 1.0 && self.outer > self.inner && self.outer + 2.0 * FD_STEP < half_width) {
            return Err(Error::Contract(format!(
                "extension truncation budget exceeded: cutoff ({}, {}) in a cube of half-width {half_width}",
                self.inner, self.outer
            )));
        }
        Ok(())
    }
}

/// Cube [-half_width, half_width)^4 with `n` nodes per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BmGrid {
    pub n: usize,
    pub half_width: f64,
}

impl BmGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn node(&self, idx: [usize; 4]) -> [f64; 4] {
        let h = self.spacing();
        idx.map(|i| -self.half_width + i as f64 * h)
    }

    /// Nearest node index; `None` if `x` is not a node.
    fn index_of(&self, x: &[f64; 4]) -> Option<[usize; 4]> {
        let h = self.spacing();
        let mut out = [0usize; 4];
        for a in 0..4 {
            let t = (x[a] + self.half_width) / h;
            let r = t.round();
            if (t - r).abs() > 1e-9 || r < 0.0 || r >= self.n as f64 {
                return None;
            }
            out[a] = r as usize;
        }
        Some(out)
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// ∫ over the unit cube centred at 0 in R⁴ of |y|^-2. Degree −2
/// homogeneity gives I(cube) = (4/3)·I(cube minus its half-size core), and
/// the shell is smooth, so tensor Gauss quadrature on its 15 sub-cubes per
/// orthant is accurate.
pub fn unit_cell_inverse_square() -> f64 {
    static CELL: OnceLock<f64> = OnceLock::new();
    *CELL.get_or_init(|| {
        let gl = gauss_legendre(12);
        let half = 0.25;
        let mut shell = 0.0;
        for corner in 1..16usize {
            // Sub-cube of [0, ½]^4 with offset ¼ on the set bits of `corner`.
            let lo: [f64; 4] = std::array::from_fn(|a| if corner >> a & 1 == 1 { half } else { 0.0 });
            for &(x0, w0) in &gl {
                for &(x1, w1) in &gl {
                    for &(x2, w2) in &gl {
                        for &(x3, w3) in &gl {
                            let y = [x0, x1, x2, x3];
                            let mut r2 = 0.0;
                            for a in 0..4 {
                                let v = lo[a] + 0.5 * half * (y[a] + 1.0);
                                r2 += v * v;
                            }
                            shell += w0 * w1 * w2 * w3 / r2;
                        }
                    }
                }
            }
        }
        let jac = (0.5 * half).powi(4);
        16.0 * (4.0 / 3.0) * shell * jac
    })
}

fn kernels(w: &[f64; 4]) -> Option<[C64; 2]> {
    let r2 = w.iter().map(|v| v * v).sum::<f64>();
    if r2 == 0.0 {
        return None;
    }
    let c = 1.0 / (PI * PI * r2 * r2);
    Some([C64::new(w[0] * c, -w[2] * c), C64::new(w[1] * c, -w[3] * c)])
}

/// Extended data χ·a at a point.
fn extended(a: &FormSource, ext: &BallExtension, x: &[f64; 4]) -> [C64; 2] {
    let c = ext.cutoff(x);
    if c == 0.0 {
        return [C64::new(0.0, 0.0); 2];
    }
    let v = a(x);
    [v[0] * c, v[1] * c]
}

/// ∂/∂x_axis of `f` by the 4th-order central difference.
fn fd<const K: usize>(f: &dyn Fn(&[f64; 4]) -> [C64; K], x: &[f64; 4], axis: usize) -> [C64; K] {
    let at = |s: f64| {
        let mut y = *x;
        y[axis] += s * FD_STEP;
        f(&y)
    };
    let (m2, m1, p1, p2) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
    std::array::from_fn(|j| (m2[j] - 8.0 * m1[j] + 8.0 * p1[j] - p2[j]) / (12.0 * FD_STEP))
}

/// d[m][j] = ∂_m̄ (χ a_j).
fn dbar_extended(a: &FormSource, ext: &BallExtension, x: &[f64; 4]) -> [[C64; 2]; 2] {
    let f = |y: &[f64; 4]| extended(a, ext, y);
    std::array::from_fn(|m| {
        let dx = fd(&f, x, m);
        let dy = fd(&f, x, 2 + m);
        std::array::from_fn(|j| 0.5 * (dx[j] + C64::new(0.0, 1.0) * dy[j]))
    })
}

/// ∂_{z_m} of a vector-valued function.
fn dz<const K: usize>(f: &dyn Fn(&[f64; 4]) -> [C64; K], x: &[f64; 4], m: usize) -> [C64; K] {
    let dx = fd(f, x, m);
    let dy = fd(f, x, 2 + m);
    std::array::from_fn(|j| 0.5 * (dx[j] - C64::new(0.0, 1.0) * dy[j]))
}

/// Outcome at one target.
#[derive(Clone, Debug, PartialEq)]
pub struct BmTarget {
    pub x: [f64; 4],
    /// Pa = Σ_j K_j ∗ (χa_j).
    pub p: C64,
    /// (∂̄Pa)_k = Σ_j K_j ∗ ∂_k̄(χa_j).
    pub dbar_p: [C64; 2],
    /// (Q-side)_k = Σ_j K_j ∗ (∂_j̄(χa_k) − ∂_k̄(χa_j)): Q applied to ∂̄ of the
    /// extension, which carries the commutator [∂̄, 𝓔]a.
    pub q_side: [C64; 2],
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BmReport {
    pub grid: BmGrid,
    pub targets: Vec<BmTarget>,
    pub max_residual: f64,
}

/// Grid nodes of the coarse grid with |x|² − 1 < −3·spacing: the shell where
/// the identity is checked. They remain nodes of every dyadic refinement.
pub fn shell_targets(coarse: BmGrid) -> Vec<[f64; 4]> {
    let h = coarse.spacing();
    let mut out = Vec::new();
    let n = coarse.n;
    for i in 0..n.pow(4) {
        let idx = [i / (n * n * n), i / (n * n) % n, i / n % n, i % n];
        let x = coarse.node(idx);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 - 1.0 < -3.0 * h {
            out.push(x);
        }
    }
    out
}

struct NodeData {
    x: Vec<[f32; 4]>,
    e: Vec<[C64; 2]>,
    d: Vec<[[C64; 2]; 2]>,
}

fn collect_nodes(a: &FormSource, ext: &BallExtension, grid: BmGrid) -> NodeData {
    let n = grid.n;
    let outer2 = ext.outer * ext.outer;
    let per_plane: Vec<NodeData> = (0..n)
        .into_par_iter()
        .map(|i0| {
            let mut nd = NodeData { x: Vec::new(), e: Vec::new(), d: Vec::new() };
            for i1 in 0..n {
                for i2 in 0..n {
                    for i3 in 0..n {
                        let x = grid.node([i0, i1, i2, i3]);
                        if x.iter().map(|v| v * v).sum::<f64>() >= outer2 {
                            continue;
                        }
                        nd.x.push([i0 as f32, i1 as f32, i2 as f32, i3 as f32]);
                        nd.e.push(extended(a, ext, &x));
                        nd.d.push(dbar_extended(a, ext, &x));
                    }
                }
            }
            nd
        })
        .collect();
    let mut all = NodeData { x: Vec::new(), e: Vec::new(), d: Vec::new() };
    for p in per_plane {
        all.x.extend(p.x);
        all.e.extend(p.e);
        all.d.extend(p.d);
    }
    all
}

/// Evaluates Pa, ∂̄Pa and the Q-side at grid-node `targets` and the
/// residual |a − ∂̄Pa − Q-side| there.
pub fn bm_homotopy(a: &FormSource, ext: &BallExtension, grid: BmGrid, targets: &[[f64; 4]]) -> Result<BmReport> {
    let h = grid.spacing();
    ext.check(grid.half_width)?;
    let mut tidx = Vec::with_capacity(targets.len());
    for t in targets {
        let idx = grid.index_of(t).ok_or_else(|| Error::InvalidArgument(format!("target {t:?} is not a grid node")))?;
        if t.iter().map(|v| v * v).sum::<f64>() > 1.0 {
            return Err(Error::InvalidArgument(format!("target {t:?} lies outside the ball")));
        }
        tidx.push(idx);
    }
    let nodes = collect_nodes(a, ext, grid);
    let vol = h.powi(4);
    let corr = -unit_cell_inverse_square() * h * h / (2.0 * PI * PI);

    let out: Vec<BmTarget> = targets
        .par_iter()
        .zip(&tidx)
        .map(|(z, zi)| {
            let mut p = C64::new(0.0, 0.0);
            let mut dp = [C64::new(0.0, 0.0); 2];
            let mut qs = [C64::new(0.0, 0.0); 2];
            let zf = zi.map(|v| v as f32);
            for k in 0..nodes.x.len() {
                let xi = nodes.x[k];
                if xi == zf {
                    continue;
                }
                let w: [f64; 4] = std::array::from_fn(|a| (zf[a] - xi[a]) as f64 * h);
                let kk = kernels(&w).expect("distinct nodes");
                let e = &nodes.e[k];
                let d = &nodes.d[k];
                p += kk[0] * e[0] + kk[1] * e[1];
                for c in 0..2 {
                    dp[c] += kk[0] * d[c][0] + kk[1] * d[c][1];
                    qs[c] += kk[0] * (d[0][c] - d[c][0]) + kk[1] * (d[1][c] - d[c][1]);
                }
            }
            // Singular cell: −(I h²/2π²) Σ_j ∂_{z_j} g_j(z).
            let ez = |y: &[f64; 4]| extended(a, ext, y);
            let dz_e: [[C64; 2]; 2] = std::array::from_fn(|m| dz(&ez, z, m));
            p = p * vol + corr * (dz_e[0][0] + dz_e[1][1]);
            let dflat = |y: &[f64; 4]| -> [C64; 4] {
                let d = dbar_extended(a, ext, y);
                [d[0][0], d[0][1], d[1][0], d[1][1]]
            };
            let dz_d: [[C64; 4]; 2] = std::array::from_fn(|m| dz(&dflat, z, m));
            // dz_d[m][2c + j] = ∂_{z_m} d[c][j].
            let g = |m: usize, c: usize, j: usize| dz_d[m][2 * c + j];
            let av = a(z);
            let mut residual = 0.0f64;
            for c in 0..2 {
                dp[c] = dp[c] * vol + corr * (g(0, c, 0) + g(1, c, 1));
                qs[c] = qs[c] * vol + corr * ((g(0, 0, c) - g(0, c, 0)) + (g(1, 1, c) - g(1, c, 1)));
                residual = residual.max((av[c] - dp[c] - qs[c]).norm());
            }
            BmTarget { x: *z, p, dbar_p: dp, q_side: qs, residual }
        })
        .collect();
    let max_residual = out.iter().map(|t| t.residual).fold(0.0, f64::max);
    Ok(BmReport { grid, targets: out, max_residual })
}

/// Least-squares order of max residual against spacing over a refinement
/// sequence.
pub fn refinement_order(reports: &[BmReport]) -> f64 {
    let x: Vec<f64> = reports.iter().map(|r| r.grid.spacing().log2()).collect();
    let y: Vec<f64> = reports.iter().map(|r| r.max_residual.log2()).collect();
    crate::znorm::fit_slope(&x, &y)
}

/// Hölder exponent of Pa along the x_1 axis through the centre, from the
/// scaling of second differences at steps h, 2h, 4h. Measurement only.
pub fn axis_regularity(a: &FormSource, ext: &BallExtension, grid: BmGrid, reach: f64) -> Result<f64> {
    let h = grid.spacing();
    let steps = (reach / h).floor() as isize;
    let targets: Vec<[f64; 4]> = (-steps..=steps)
        .map(|i| {
            let mut idx = [grid.n / 2; 4];
            idx[0] = (grid.n as isize / 2 + i) as usize;
            grid.node(idx)
        })
        .collect();
    let rep = bm_homotopy(a, ext, grid, &targets)?;
    let p: Vec<C64> = rep.targets.iter().map(|t| t.p).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in [1usize, 2, 4] {
        if 2 * k >= p.len() {
            break;
        }
        let m = (k..p.len() - k).map(|i| (p[i + k] - 2.0 * p[i] + p[i - k]).norm()).fold(0.0, f64::max);
        if m > 0.0 {
            xs.push(((k as f64) * h).log2());
            ys.push(m.log2());
        }
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("axis segment too short for a regularity estimate".into()));
    }
    Ok(crate::znorm::fit_slope(&xs, &ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let gl = gauss_legendre(6);
        let s: f64 = gl.iter().map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_square_cell_integral() {
        // Independent estimate: midpoint rule on a fine lattice over the
        // shell, rescaled by the same homogeneity argument.
        let m: usize = 24;
        let mut shell = 0.0;
        let hh = 1.0 / m as f64;
        for i in 0..m.pow(4) {
            let y: [f64; 4] = std::array::from_fn(|a| ((i / m.pow(a as u32)) % m) as f64 * hh + 0.5 * hh - 0.5);
            if y.iter().all(|v| v.abs() < 0.25) {
                continue;
            }
            shell += hh.powi(4) / y.iter().map(|v| v * v).sum::<f64>();
        }
        let est = shell * 4.0 / 3.0;
        let got = unit_cell_inverse_square();
        assert!((got - est).abs() < 2e-3 * got, "{got} vs {est}");
    }

    #[test]
    fn zero_form_gives_zero() {
        let zero = |_: &[f64; 4]| [C64::new(0.0, 0.0); 2];
        let grid = BmGrid { n: 16, half_width: 2.2 };
        let t = shell_targets(grid);
        let rep = bm_homotopy(&zero, &BallExtension::default(), grid, &t[..3]).unwrap();
        assert!(rep.targets.iter().all(|t| t.p.norm() == 0.0 && t.residual == 0.0));
    }

    #[test]
    fn truncation_budget_is_enforced() {
        let zero = |_: &[f64; 4]| [C64::new(0.0, 0.0); 2];
        let grid = BmGrid { n: 16, half_width: 2.0 };
        let r = bm_homotopy(&zero, &BallExtension::default(), grid, &[]);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
