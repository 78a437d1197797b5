//! Model domains given by defining functions: Levi forms on boundary
//! samples, composition with inverse maps, the C² stability budget of a
//! chain of domains, and the graph-domain chart used by the glued smoother.

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec, C64};
use crate::interp::{compose_shift, cubic_sample};
use crate::lp::smooth_step;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fmt::Write as _;

/// Newton-projected samples may drift at most this many grid spacings from
/// the sign-change edge they started on.
pub const SHELL_SPACINGS: f64 = 5.0;

/// Tolerance of the trigonometric composition used on periodic boxes.
const COMPOSE_TOL: f64 = 1e-14;

/// ρ sampled on the ambient box, with cached first and second derivatives.
/// Periodic boxes use spectral derivatives, bounded ones 4th-order
/// differences.
#[derive(Clone, Debug)]
pub struct DefiningFunction {
    rho: Vec<f64>,
    grid: GridSpec,
    periodic: bool,
    grad: Vec<Vec<f64>>,
    /// Packed upper triangle, row-major: (0,0),(0,1),..,(0,d-1),(1,1),..
    hess: Vec<Vec<f64>>,
}

fn packed(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * d - i * (i + 1) / 2 + j
}

/// Fourth-order first derivative along `axis` on a bounded box, one-sided
/// near the faces.
fn fd_derivative(grid: &GridSpec, v: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.shape()[axis];
    let h = grid.spacing(axis);
    let stride = grid.stride(axis);
    let mut out = vec![0.0; v.len()];
    let mut idx = vec![0usize; grid.dim()];
    for k in 0..v.len() {
        grid.unravel(k, &mut idx);
        let i = idx[axis];
        let at = |m: isize| v[(k as isize + (m - i as isize) * stride as isize) as usize];
        let i = i as isize;
        let n = n as isize;
        out[k] = if i >= 2 && i <= n - 3 {
            (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)) / (12.0 * h)
        } else if i == 0 {
            (-25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4)) / (12.0 * h)
        } else if i == 1 {
            (-3.0 * at(0) - 10.0 * at(1) + 18.0 * at(2) - 6.0 * at(3) + at(4)) / (12.0 * h)
        } else if i == n - 2 {
            (3.0 * at(n - 1) + 10.0 * at(n - 2) - 18.0 * at(n - 3) + 6.0 * at(n - 4) - at(n - 5)) / (12.0 * h)
        } else {
            (25.0 * at(n - 1) - 48.0 * at(n - 2) + 36.0 * at(n - 3) - 16.0 * at(n - 4) + 3.0 * at(n - 5)) / (12.0 * h)
        };
    }
    out
}

fn derivative_real(grid: &GridSpec, v: &[f64], axis: usize, periodic: bool) -> Result<Vec<f64>> {
    if periodic {
        let f = GridField::from_real(grid.clone(), v.to_vec())?;
        Ok(f.derivative(axis).values().iter().map(|c| c.re).collect())
    } else {
        Ok(fd_derivative(grid, v, axis))
    }
}

/// Gradient and upper-triangular Hessian samples.
type Caches = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn derivative_caches(grid: &GridSpec, v: &[f64], periodic: bool) -> Result<Caches> {
    let d = grid.dim();
    if !periodic && grid.shape().iter().any(|&n| n < 5) {
        return Err(Error::InvalidGrid("difference stencils need at least 5 points per axis".into()));
    }
    let grad: Vec<Vec<f64>> = (0..d).map(|a| derivative_real(grid, v, a, periodic)).collect::<Result<_>>()?;
    let mut hess = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            hess.push(derivative_real(grid, &grad[i], j, periodic)?);
        }
    }
    Ok((grad, hess))
}

/// sup|v| + sup|∇v| + sup‖∇²v‖_F.
pub fn c2_norm(grid: &GridSpec, v: &[f64], periodic: bool) -> Result<f64> {
    let (grad, hess) = derivative_caches(grid, v, periodic)?;
    let d = grid.dim();
    let sup0 = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut sup1 = 0.0f64;
    let mut sup2 = 0.0f64;
    for k in 0..v.len() {
        sup1 = sup1.max(grad.iter().map(|g| g[k] * g[k]).sum::<f64>().sqrt());
        let mut f = 0.0;
        for i in 0..d {
            for j in 0..d {
                f += hess[packed(d, i, j)][k].powi(2);
            }
        }
        sup2 = sup2.max(f.sqrt());
    }
    Ok(sup0 + sup1 + sup2)
}

/// Smallest eigenvalue of the complex Hessian restricted to the complex
/// tangent space, from a real gradient and Hessian in the layout
/// [x_1..x_n, y_1..y_n]. `None` when the gradient vanishes.
pub fn restricted_levi(grad: &[f64], hess: &DMatrix<f64>) -> Option<f64> {
    let d = grad.len();
    let n = d / 2;
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if gnorm < 1e-12 || !d.is_multiple_of(2) || n == 0 {
        return None;
    }
    // Normal direction conj(∂ρ/∂z).
    let normal: DVector<C64> = DVector::from_fn(n, |j, _| C64::new(0.5 * grad[j], 0.5 * grad[n + j]));
    let normal = normal.normalize();
    let mut levi = DMatrix::<C64>::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            let re = hess[(j, k)] + hess[(n + j, n + k)];
            let im = hess[(j, n + k)] - hess[(n + j, k)];
            // Quadratic form Σ L_jk v_j v̄_k is v* Lᵀ v.
            levi[(k, j)] = C64::new(0.25 * re, 0.25 * im);
        }
    }
    if n == 1 {
        return Some(f64::INFINITY);
    }
    let mut basis: Vec<DVector<C64>> = Vec::with_capacity(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| normal[a].norm().partial_cmp(&normal[b].norm()).unwrap());
    for &e in &order {
        let mut v = DVector::<C64>::zeros(n);
        v[e] = C64::new(1.0, 0.0);
        let c = normal.dotc(&v);
        v -= &normal * c;
        for b in &basis {
            let c = b.dotc(&v);
            v -= b * c;
        }
        let len = v.norm();
        if len > 1e-8 {
            basis.push(v / C64::new(len, 0.0));
        }
        if basis.len() == n - 1 {
            break;
        }
    }
    let b = DMatrix::from_columns(&basis);
    let restricted = b.adjoint() * &levi * &b;
    let restricted = (&restricted + restricted.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(restricted);
    Some(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

impl DefiningFunction {
    pub fn new(rho: &GridField, periodic: bool) -> Result<Self> {
        let grid = rho.spec().clone();
        let scale = rho.sup_norm().max(1.0);
        if rho.values().iter().any(|v| v.im.abs() > 1e-12 * scale) {
            return Err(Error::InvalidArgument("defining function must be real".into()));
        }
        let values: Vec<f64> = rho.values().iter().map(|v| v.re).collect();
        Self::from_values(grid, values, periodic)
    }

    pub fn from_fn(grid: &GridSpec, periodic: bool, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values: Vec<f64> = (0..grid.len()).map(|k| f(&grid.coords(k))).collect();
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Self::from_values(grid.clone(), values, periodic)
    }

    fn from_values(grid: GridSpec, rho: Vec<f64>, periodic: bool) -> Result<Self> {
        let (grad, hess) = derivative_caches(&grid, &rho, periodic)?;
        Ok(Self { rho, grid, periodic, grad, hess })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn periodic(&self) -> bool {
        self.periodic
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn to_field(&self) -> GridField {
        GridField::from_real(self.grid.clone(), self.rho.clone()).expect("finite by construction")
    }

    /// Interior mask {ρ < 0}.
    pub fn interior(&self) -> Vec<bool> {
        self.rho.iter().map(|&r| r < 0.0).collect()
    }

    pub fn value_at(&self, x: &[f64]) -> Result<f64> {
        cubic_sample(&self.grid, &self.rho, x, self.periodic)
    }

    pub fn gradient_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.grad.iter().map(|g| cubic_sample(&self.grid, g, x, self.periodic)).collect()
    }

    pub fn hessian_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.grid.dim();
        let mut h = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = cubic_sample(&self.grid, &self.hess[packed(d, i, j)], x, self.periodic)?;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(h)
    }

    /// Points of {ρ = 0}: linear zero on each sign-changing grid edge, then
    /// two Newton steps along ∇ρ.
    pub fn boundary_samples(&self) -> Result<Vec<Vec<f64>>> {
        let g = &self.grid;
        let d = g.dim();
        let mut starts = Vec::new();
        let mut idx = vec![0usize; d];
        for k in 0..g.len() {
            g.unravel(k, &mut idx);
            for a in 0..d {
                let n = g.shape()[a];
                if idx[a] + 1 == n && !self.periodic {
                    continue;
                }
                let q = if idx[a] + 1 == n { k - (n - 1) * g.stride(a) } else { k + g.stride(a) };
                let (r0, r1) = (self.rho[k], self.rho[q]);
                if (r0 < 0.0) != (r1 < 0.0) {
                    let theta = r0 / (r0 - r1);
                    let mut x = g.coords(k);
                    x[a] += theta * g.spacing(a);
                    starts.push(x);
                }
            }
        }
        let shell = SHELL_SPACINGS * g.min_spacing();
        starts
            .into_par_iter()
            .map(|x0| {
                let mut x = x0.clone();
                for _ in 0..2 {
                    let r = self.value_at(&x)?;
                    let gr = self.gradient_at(&x)?;
                    let g2: f64 = gr.iter().map(|v| v * v).sum();
                    if g2.sqrt() < 1e-10 {
                        return Err(Error::DegenerateGradient { sample: x });
                    }
                    for a in 0..d {
                        x[a] -= r * gr[a] / g2;
                    }
                }
                let moved = x.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if moved > shell {
                    return Err(Error::Numerical(format!(
                        "Newton projection of {x0:?} moved {moved:.3e}, beyond the {SHELL_SPACINGS}-spacing shell"
                    )));
                }
                Ok(x)
            })
            .collect()
    }

    /// Restricted Levi eigenvalue at one point.
    pub fn levi_at(&self, x: &[f64]) -> Result<f64> {
        let gr = self.gradient_at(x)?;
        let h = self.hessian_at(x)?;
        restricted_levi(&gr, &h).ok_or_else(|| Error::DegenerateGradient { sample: x.to_vec() })
    }

    /// Minimum over boundary samples of the restricted Levi eigenvalue.
    pub fn levi_min(&self) -> Result<f64> {
        let d = self.grid.dim();
        if !d.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("ambient dimension {d} is odd")));
        }
        let samples = self.boundary_samples()?;
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no boundary samples on the grid".into()));
        }
        let vals: Vec<f64> = samples.par_iter().map(|x| self.levi_at(x)).collect::<Result<_>>()?;
        Ok(vals.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// Smallest |∇ρ| over boundary samples.
    pub fn min_boundary_gradient(&self) -> Result<f64> {
        let samples = self.boundary_samples()?;
        let mut m = f64::INFINITY;
        for x in &samples {
            let g = self.gradient_at(x)?;
            m = m.min(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        Ok(m)
    }

    /// Distance from {ρ < 0} to the faces of the box; infinite on a torus.
    pub fn boundary_distance(&self) -> f64 {
        if self.periodic {
            return f64::INFINITY;
        }
        let g = &self.grid;
        let mut best = f64::INFINITY;
        for k in 0..g.len() {
            if self.rho[k] < 0.0 {
                let x = g.coords(k);
                for a in 0..g.dim() {
                    let far = (g.shape()[a] - 1) as f64 * g.spacing(a);
                    best = best.min(x[a]).min(far - x[a]);
                }
            }
        }
        best
    }

    /// C² distance to another defining function on the same grid.
    pub fn c2_distance(&self, other: &DefiningFunction) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        let diff: Vec<f64> = self.rho.iter().zip(&other.rho).map(|(a, b)| a - b).collect();
        c2_norm(&self.grid, &diff, self.periodic)
    }

    /// Perturbed copy ρ + c·p.
    pub fn perturbed(&self, p: &[f64], c: f64) -> Result<Self> {
        if p.len() != self.rho.len() {
            return Err(Error::GridMismatch("perturbation length differs from the grid".into()));
        }
        let v = self.rho.iter().zip(p).map(|(r, q)| r + c * q).collect();
        Self::from_values(self.grid.clone(), v, self.periodic)
    }
}

/// Result of composing a defining function with an inverse map.
#[derive(Clone, Debug)]
pub struct DefiningUpdate {
    pub rho: DefiningFunction,
    /// ‖ρ_new − ρ_baseline‖ in C².
    pub drift: f64,
}

/// ρ ∘ (I + g) with g given per axis. Trigonometric interpolation on a
/// torus, cubic on a bounded box, where leaving the box is an error.
pub fn update_defining(rho: &DefiningFunction, disp: &[GridField], baseline: &DefiningFunction) -> Result<DefiningUpdate> {
    let g = &rho.grid;
    if disp.len() != g.dim() {
        return Err(Error::InvalidArgument(format!("{} displacement components for a {}-d box", disp.len(), g.dim())));
    }
    for f in disp {
        g.ensure_same(f.spec())?;
    }
    let values: Vec<f64> = if disp.iter().all(|f| f.sup_norm() == 0.0) {
        rho.rho.clone()
    } else if rho.periodic {
        compose_shift(&rho.to_field(), disp, COMPOSE_TOL)?.values().iter().map(|v| v.re).collect()
    } else {
        (0..g.len())
            .into_par_iter()
            .map(|k| {
                let mut x = g.coords(k);
                for (a, f) in disp.iter().enumerate() {
                    x[a] += f.values()[k].re;
                }
                cubic_sample(g, &rho.rho, &x, false)
            })
            .collect::<Result<_>>()?
    };
    let next = DefiningFunction::from_values(g.clone(), values, rho.periodic)?;
    let drift = next.c2_distance(baseline)?;
    Ok(DefiningUpdate { rho: next, drift })
}

/// Tolerances carried along a chain of domains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityBudget {
    /// Allowed C² drift of the defining function.
    pub eps_d: f64,
    /// Per-step map budget: ‖f_j‖₂ ≤ δ/(j+1)².
    pub delta_rho0: f64,
    pub levi_floor: f64,
    /// dLevi/d‖Δρ‖₂, fitted.
    pub levi_sensitivity: f64,
}

impl StabilityBudget {
    pub fn new(eps_d: f64, delta_rho0: f64, levi_floor: f64, levi_sensitivity: f64) -> Result<Self> {
        for (name, v) in [
            ("eps_d", eps_d),
            ("delta_rho0", delta_rho0),
            ("levi_floor", levi_floor),
            ("levi_sensitivity", levi_sensitivity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { eps_d, delta_rho0, levi_floor, levi_sensitivity })
    }

    /// ε = floor/(10·sensitivity). With ‖ρ∘G − ρ‖₂ ≤ K‖g‖₂ per step, the
    /// drift after any number of steps is at most Kδ·π²/6, which fixes δ.
    pub fn derive(levi_floor: f64, levi_sensitivity: f64, drift_constant: f64) -> Result<Self> {
        let eps = levi_floor / (10.0 * levi_sensitivity);
        let delta = 6.0 * eps / (PI * PI * drift_constant);
        Self::new(eps, delta, levi_floor, levi_sensitivity)
    }

    pub fn step_bound(&self, step: usize) -> f64 {
        self.delta_rho0 / ((step + 1) * (step + 1)) as f64
    }

    pub fn levi_bound(&self) -> f64 {
        self.levi_floor - self.levi_sensitivity * self.eps_d
    }
}

/// Largest Levi drop per unit C² size of the perturbation, over the given
/// amplitudes of ρ + c·p.
pub fn fit_levi_sensitivity(rho: &DefiningFunction, p: &[f64], amplitudes: &[f64]) -> Result<f64> {
    let base = rho.levi_min()?;
    let size = c2_norm(&rho.grid, p, rho.periodic)?;
    let mut c = 0.0f64;
    for &amp in amplitudes {
        let l = rho.perturbed(p, amp)?.levi_min()?;
        c = c.max((base - l).abs() / (amp.abs() * size));
    }
    Ok(c)
}

/// Largest ‖ρ∘(I+g) − ρ‖₂ / max_a ‖g_a‖₂ over the supplied displacements.
pub fn fit_drift_constant(rho: &DefiningFunction, displacements: &[Vec<GridField>]) -> Result<f64> {
    let mut c = 0.0f64;
    for disp in displacements {
        let mut size = 0.0f64;
        for f in disp {
            let v: Vec<f64> = f.values().iter().map(|z| z.re).collect();
            size = size.max(c2_norm(&rho.grid, &v, rho.periodic)?);
        }
        let up = update_defining(rho, disp, rho)?;
        c = c.max(up.drift / size);
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainStep {
    pub step: usize,
    pub f_norm: f64,
    pub rho_drift: f64,
    pub levi_min: f64,
    pub boundary_dist: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainReport {
    pub steps: Vec<ChainStep>,
}

impl ChainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,f_norm,rho_drift,levi_min,dist_to_boundary\n");
        for r in &self.steps {
            let _ = writeln!(
                s,
                "{},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.step, r.f_norm, r.rho_drift, r.levi_min, r.boundary_dist
            );
        }
        s
    }
}

fn within(value: f64, bound: f64) -> bool {
    value <= bound * (1.0 + 1e-12)
}

/// `chain[0]` is ρ₀ and `chain[j+1]` follows from the map with
/// `f_norms[j] = ‖f_j‖₂`. The first violated budget is returned as an error.
pub fn check_chain_stability(
    chain: &[DefiningFunction],
    budget: &StabilityBudget,
    f_norms: &[f64],
) -> Result<ChainReport> {
    if chain.is_empty() {
        if f_norms.is_empty() {
            return Ok(ChainReport::default());
        }
        return Err(Error::InvalidArgument("map norms given without a chain".into()));
    }
    if chain.len() != f_norms.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "chain of {} defining functions needs {} map norms, got {}",
            chain.len(),
            chain.len() - 1,
            f_norms.len()
        )));
    }
    let base = &chain[0];
    let base_dist = base.boundary_distance();
    let dist_slack = if base.periodic { 0.0 } else { budget.eps_d / base.min_boundary_gradient()? };
    let mut report = ChainReport::default();
    for (j, &f) in f_norms.iter().enumerate() {
        let bound = budget.step_bound(j);
        if !within(f, bound) {
            return Err(Error::Budget { step: j, quantity: "map norm".into(), value: f, bound });
        }
        let rho = &chain[j + 1];
        let drift = rho.c2_distance(base)?;
        if !within(drift, budget.eps_d) {
            return Err(Error::Budget { step: j, quantity: "defining function drift".into(), value: drift, bound: budget.eps_d });
        }
        let levi = rho.levi_min()?;
        if levi < budget.levi_bound() {
            return Err(Error::Budget {
                step: j,
                quantity: "Levi deficit".into(),
                value: budget.levi_floor - levi,
                bound: budget.levi_sensitivity * budget.eps_d,
            });
        }
        let dist = rho.boundary_distance();
        if dist < base_dist - dist_slack {
            return Err(Error::Budget {
                step: j,
                quantity: "boundary distance loss".into(),
                value: base_dist - dist,
                bound: dist_slack,
            });
        }
        report.steps.push(ChainStep { step: j, f_norm: f, rho_drift: drift, levi_min: levi, boundary_dist: dist });
    }
    Ok(report)
}

/// One boundary piece of a graph domain. In its own coordinates (the last
/// axis flipped when `orientation` is +1) the piece is {x_d > graph(x')}.
#[derive(Clone, Debug)]
pub struct ChartPiece {
    /// -1 for the lower boundary (standard cone pair), +1 for the upper
    /// boundary (reflected pair).
    pub orientation: f64,
    /// Graph function sampled on the transverse grid (one value in 1-D).
    pub graph: Vec<f64>,
    pub cutoff: GridField,
    /// Indicator of the half-space {x_d > lower} or {x_d < upper}.
    pub half_space: Vec<bool>,
}

impl ChartPiece {
    /// The affine chart map: identity or reflection of the last axis.
    pub fn map(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        if self.orientation > 0.0 {
            let d = y.len();
            y[d - 1] = -y[d - 1];
        }
        y
    }
}

/// Graph domain {lower(x') < x_d < upper(x')} in a periodic box with a
/// smooth partition χ₀ + Σχ_ν² = 1 on its closure.
#[derive(Clone, Debug)]
pub struct DomainChart {
    grid: GridSpec,
    width: f64,
    pub interior_cutoff: GridField,
    pub pieces: Vec<ChartPiece>,
    closure: Vec<bool>,
    inside: Vec<bool>,
}

fn transverse_spec(grid: &GridSpec) -> Option<GridSpec> {
    let d = grid.dim();
    if d == 1 {
        None
    } else {
        Some(GridSpec::new(grid.shape()[..d - 1].to_vec(), grid.box_len()[..d - 1].to_vec()).expect("sub-grid of a valid grid"))
    }
}

fn graph_slope(t: &Option<GridSpec>, graph: &[f64]) -> Result<f64> {
    let Some(t) = t else { return Ok(0.0) };
    let f = GridField::from_real(t.clone(), graph.to_vec())?;
    let grads = f.gradient();
    let mut m = 0.0f64;
    for k in 0..t.len() {
        m = m.max(grads.iter().map(|g| g.values()[k].re.powi(2)).sum::<f64>().sqrt());
    }
    Ok(m)
}

impl DomainChart {
    /// `width` is the cutoff transition length δ: χ₀ lives where the
    /// distance to both graphs (along x_d) exceeds δ, the boundary cutoffs
    /// within 3δ of their graph.
    pub fn graph_domain(
        grid: &GridSpec,
        lower: impl Fn(&[f64]) -> f64,
        upper: impl Fn(&[f64]) -> f64,
        width: f64,
    ) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidArgument("cutoff width must be positive".into()));
        }
        let d = grid.dim();
        let ax = d - 1;
        let len = grid.box_len()[ax];
        let t = transverse_spec(grid);
        let tlen = t.as_ref().map_or(1, |t| t.len());
        let lo: Vec<f64> = (0..tlen).map(|k| lower(&t.as_ref().map_or(vec![], |t| t.coords(k)))).collect();
        let hi: Vec<f64> = (0..tlen).map(|k| upper(&t.as_ref().map_or(vec![], |t| t.coords(k)))).collect();
        for k in 0..tlen {
            if lo[k] < 3.0 * width || hi[k] > len - 3.0 * width || hi[k] - lo[k] < 6.0 * width {
                return Err(Error::InvalidArgument(format!(
                    "graphs ({}, {}) leave no room for cutoffs of width {width} in a box of length {len}",
                    lo[k], hi[k]
                )));
            }
        }
        let hi_graph: Vec<f64> = hi.iter().map(|v| -v).collect();
        for g in [&lo, &hi_graph] {
            let s = graph_slope(&t, g)?;
            if s >= 1.0 {
                return Err(Error::Contract(format!("graph slope {s:.3} violates the cone condition")));
            }
        }

        let n = grid.len();
        let mut w0 = vec![0.0; n];
        let mut wl = vec![0.0; n];
        let mut wh = vec![0.0; n];
        let mut chi_sum = vec![0.0; n];
        let mut closure = vec![false; n];
        let mut inside = vec![false; n];
        let mut below = vec![false; n];
        let mut above = vec![false; n];
        let dlt = width;
        for k in 0..n {
            let x = grid.coords(k);
            let tk = k / grid.shape()[ax];
            let a = x[ax] - lo[tk];
            let b = hi[tk] - x[ax];
            let m = a.min(b);
            w0[k] = smooth_step((m - dlt) / dlt);
            let near = |s: f64| (1.0 - smooth_step((s - 2.0 * dlt) / dlt)) * (1.0 - smooth_step((-s - dlt) / dlt));
            wl[k] = near(a);
            wh[k] = near(b);
            let ext = smooth_step(-a / dlt) + smooth_step(-b / dlt);
            chi_sum[k] = w0[k] + wl[k] * wl[k] + wh[k] * wh[k] + ext;
            closure[k] = a >= 0.0 && b >= 0.0;
            inside[k] = a > 0.0 && b > 0.0;
            below[k] = a > 0.0;
            above[k] = b > 0.0;
        }
        let to_field = |v: Vec<f64>| GridField::from_real(grid.clone(), v);
        let chi0 = to_field(w0.iter().zip(&chi_sum).map(|(w, z)| w / z).collect())?;
        let chil = to_field(wl.iter().zip(&chi_sum).map(|(w, z)| w / z.sqrt()).collect())?;
        let chih = to_field(wh.iter().zip(&chi_sum).map(|(w, z)| w / z.sqrt()).collect())?;
        Ok(Self {
            grid: grid.clone(),
            width,
            interior_cutoff: chi0,
            pieces: vec![
                ChartPiece { orientation: -1.0, graph: lo, cutoff: chil, half_space: below },
                ChartPiece { orientation: 1.0, graph: hi_graph, cutoff: chih, half_space: above },
            ],
            closure,
            inside,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Mask of the closed domain.
    pub fn closure(&self) -> &[bool] {
        &self.closure
    }

    /// Mask of the open domain.
    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    /// max over the closed domain of |χ₀ + Σχ_ν² − 1|.
    pub fn partition_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.grid.len() {
            if !self.closure[k] {
                continue;
            }
            let mut s = self.interior_cutoff.values()[k].re;
            for p in &self.pieces {
                s += p.cutoff.values()[k].re.powi(2);
            }
            worst = worst.max((s - 1.0).abs());
        }
        worst
    }

    /// Largest ‖∇ρ_ν‖_∞ over the pieces.
    pub fn max_graph_slope(&self) -> Result<f64> {
        let t = transverse_spec(&self.grid);
        let mut m = 0.0f64;
        for p in &self.pieces {
            m = m.max(graph_slope(&t, &p.graph)?);
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball_grid() -> GridSpec {
        GridSpec::cube(4, 16, 3.2).unwrap()
    }

    fn centred(x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v - 1.6).collect()
    }

    #[test]
    fn unit_sphere_levi_is_one() {
        let rho = DefiningFunction::from_fn(&ball_grid(), false, |x| centred(x).iter().map(|v| v * v).sum::<f64>() - 1.0).unwrap();
        let l = rho.levi_min().unwrap();
        assert!((l - 1.0).abs() < 1e-9, "{l}");
    }

    #[test]
    fn ellipsoid_levi_matches_pointwise_oracle() {
        // ρ = |z₁|² + 2|z₂|² − 1 with axes [x1, x2, y1, y2].
        let rho = DefiningFunction::from_fn(&ball_grid(), false, |x| {
            let c = centred(x);
            c[0] * c[0] + c[2] * c[2] + 2.0 * (c[1] * c[1] + c[3] * c[3]) - 1.0
        })
        .unwrap();
        let samples = rho.boundary_samples().unwrap();
        assert!(samples.len() > 100);
        let mut lo = f64::INFINITY;
        for x in &samples {
            let c = centred(x);
            let z1 = c[0] * c[0] + c[2] * c[2];
            let z2 = c[1] * c[1] + c[3] * c[3];
            let want = (4.0 * z2 + 2.0 * z1) / (4.0 * z2 + z1);
            let got = rho.levi_at(x).unwrap();
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
            lo = lo.min(got);
        }
        let l = rho.levi_min().unwrap();
        assert_eq!(l, lo);
        assert!((1.0 - 1e-9..=2.0 + 1e-9).contains(&l), "{l}");
    }

    #[test]
    fn degenerate_gradient_is_named() {
        let g = DMatrix::identity(4, 4);
        assert!(restricted_levi(&[0.0; 4], &g).is_none());
    }

    #[test]
    fn identity_update_is_exact() {
        let grid = GridSpec::cube(2, 32, 2.0 * PI).unwrap();
        let rho = DefiningFunction::from_fn(&grid, true, |x| 2.0 + x[0].cos() + x[1].cos() - 1.5).unwrap();
        let zero = vec![GridField::zeros(&grid), GridField::zeros(&grid)];
        let up = update_defining(&rho, &zero, &rho).unwrap();
        let err = up.rho.values().iter().zip(rho.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-13);
        assert!(up.drift < 1e-10);
    }

    #[test]
    fn translation_of_linear_function() {
        let grid = GridSpec::cube(2, 16, 4.0).unwrap();
        let rho = DefiningFunction::from_fn(&grid, false, |x| 0.3 * x[0] - 0.7 * x[1] + 0.1).unwrap();
        let tau = [0.05, -0.02];
        let disp: Vec<GridField> = tau.iter().map(|&t| GridField::constant(&grid, C64::new(t, 0.0))).collect();
        // Stay away from the far faces so the shifted points remain inside.
        let up = update_defining(&rho, &disp.iter().map(|f| f.scale_re(0.0)).collect::<Vec<_>>(), &rho).unwrap();
        assert!(up.drift < 1e-12);
        let shifted = update_defining(&rho, &disp, &rho);
        assert!(matches!(shifted, Err(Error::OutOfBox { .. })));
        let inner: Vec<GridField> = disp
            .iter()
            .map(|f| {
                GridField::from_fn(&grid, |x| {
                    let w = smooth_step((x[0] - 0.3) / 0.3) * smooth_step((3.4 - x[0]) / 0.3);
                    let v = smooth_step((x[1] - 0.3) / 0.3) * smooth_step((3.4 - x[1]) / 0.3);
                    f.values()[0] * (w * v)
                })
                .unwrap()
            })
            .collect();
        let up = update_defining(&rho, &inner, &rho).unwrap();
        let want = 0.3 * tau[0] - 0.7 * tau[1];
        for k in 0..grid.len() {
            let x = grid.coords(k);
            if (1.0..2.5).contains(&x[0]) && (1.0..2.5).contains(&x[1]) {
                assert!((up.rho.values()[k] - rho.values()[k] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_chain_passes_and_exact_budget_passes() {
        let budget = StabilityBudget::new(0.1, 0.01, 1.0, 1.0).unwrap();
        assert!(check_chain_stability(&[], &budget, &[]).unwrap().steps.is_empty());
        let grid = GridSpec::cube(2, 32, 2.0 * PI).unwrap();
        let rho = DefiningFunction::from_fn(&grid, true, |x| 1.0 + x[0].cos() + x[1].cos()).unwrap();
        let chain = vec![rho.clone(), rho.clone(), rho.clone(), rho];
        let norms: Vec<f64> = (0..3).map(|j| 0.01 * (1.0 / ((j + 1) * (j + 1)) as f64)).collect();
        // A 1-complex-dimensional torus has no tangential directions.
        let report = check_chain_stability(&chain, &budget, &norms).unwrap();
        assert_eq!(report.steps.len(), 3);
        let over = [0.0, 0.0026, 0.0];
        match check_chain_stability(&chain, &budget, &over) {
            Err(Error::Budget { step, quantity, .. }) => {
                assert_eq!(step, 1);
                assert_eq!(quantity, "map norm");
            }
            other => panic!("{other:?}"),
        }
        assert!(report.to_csv().starts_with("step,f_norm"));
    }

    #[test]
    fn partition_is_exact_in_two_dimensions() {
        let grid = GridSpec::new(vec![32, 256], vec![6.0, 64.0]).unwrap();
        let chart = DomainChart::graph_domain(
            &grid,
            |x| 16.0 + 0.5 * (2.0 * PI * x[0] / 6.0).sin(),
            |x| 48.0 + 0.3 * (4.0 * PI * x[0] / 6.0).cos(),
            2.0,
        )
        .unwrap();
        assert!(chart.partition_defect() < 1e-10);
        let s = chart.max_graph_slope().unwrap();
        assert!(s < 1.0 && s > 0.3, "{s}");
        let steep = DomainChart::graph_domain(&grid, |x| 16.0 + 2.0 * (2.0 * PI * x[0] / 6.0).sin(), |_| 48.0, 2.0);
        assert!(matches!(steep, Err(Error::Contract(_))));
    }
}
