//! Iteration driver: parameter feasibility, the step X_{i+1} = F_i∗X_i with
//! f_i = −S_{t_i}P A_i on the torus, norm monitoring against the schedule
//! t_{i+1} = t_i^d, and convergence of the composed maps.

use crate::acs::{
    complex_map, compose_real_tol, jacobian_norm, pushforward, pushforward_terms, step_map, Acs, Diffeo, TermNorm, COMPOSE_TOL,
};
use crate::dbar::SpectralHomotopy;
use crate::domain::{c2_norm, update_defining, DefiningFunction, StabilityBudget};
use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::smooth::{SmoothingLevel, SmoothingOperator};
use crate::znorm::NormBackend;
use std::fmt::Write as _;

/// d/(2(2−d)): the smallest r − s for which the parameter region is
/// nonempty in the limit λ, γ → 0.
pub fn p_of_d(d: f64) -> f64 {
    d / (2.0 * (2.0 - d))
}

/// The (α, β) triangle cut out by α(2−d) > 1/2 + λ, β(d−1) > λ and
/// αd + β < r − s − λ − γ.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleRegion {
    pub r: f64,
    pub s: f64,
    pub d: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha_min: f64,
    pub beta_min: f64,
    /// r − s − λ − γ.
    pub budget: f64,
    pub nonempty: bool,
    pub vertices: Vec<(f64, f64)>,
    pub area: f64,
}

pub fn feasible_region(r: f64, s: f64, d: f64, lambda: f64, gamma: f64) -> Result<FeasibleRegion> {
    if !(d > 1.0 && d < 2.0) {
        return Err(Error::InvalidArgument(format!("d = {d} outside (1, 2)")));
    }
    if lambda < 0.0 || gamma < 0.0 {
        return Err(Error::InvalidArgument("λ and γ must be non-negative".into()));
    }
    let alpha_min = (0.5 + lambda) / (2.0 - d);
    let beta_min = lambda / (d - 1.0);
    let budget = r - s - lambda - gamma;
    let slack = budget - alpha_min * d - beta_min;
    let nonempty = slack > 0.0;
    let (vertices, area) = if nonempty {
        (
            vec![(alpha_min, beta_min), (alpha_min + slack / d, beta_min), (alpha_min, beta_min + slack)],
            0.5 * slack * slack / d,
        )
    } else {
        (Vec::new(), 0.0)
    };
    Ok(FeasibleRegion { r, s, d, lambda, gamma, alpha_min, beta_min, budget, nonempty, vertices, area })
}

impl FeasibleRegion {
    pub fn center(&self) -> Option<(f64, f64)> {
        if !self.nonempty {
            return None;
        }
        let k = self.vertices.len() as f64;
        Some((self.vertices.iter().map(|v| v.0).sum::<f64>() / k, self.vertices.iter().map(|v| v.1).sum::<f64>() / k))
    }

    /// Margins of the three strict inequalities at (α, β); all positive
    /// inside.
    pub fn margins(&self, alpha: f64, beta: f64) -> [f64; 3] {
        [
            alpha * (2.0 - self.d) - 0.5 - self.lambda,
            beta * (self.d - 1.0) - self.lambda,
            self.budget - alpha * self.d - beta,
        ]
    }

    pub fn contains(&self, alpha: f64, beta: f64) -> bool {
        self.margins(alpha, beta).iter().all(|&m| m > 0.0)
    }
}

/// Run parameters. t0 must be a power of two so that every scheduled t_i
/// is a smoothing level.
#[derive(Clone, Debug, PartialEq)]
pub struct IterParams {
    pub alpha: f64,
    pub beta: f64,
    pub d: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub t0: f64,
    pub c_star: f64,
    pub r: f64,
    pub s: f64,
}

impl IterParams {
    pub fn validate(&self) -> Result<FeasibleRegion> {
        if !(self.s > 1.0) || !(self.r > 1.5) || !(self.r > self.s) {
            return Err(Error::Config(format!("need s > 1 and r > max(3/2, s); got r = {}, s = {}", self.r, self.s)));
        }
        if !(self.t0 > 0.0 && self.t0 < 1.0) {
            return Err(Error::Config(format!("t0 = {} outside (0, 1)", self.t0)));
        }
        SmoothingLevel::from_t(self.t0).map_err(|_| Error::Config(format!("t0 = {} is not a power of two", self.t0)))?;
        if !(self.c_star > 0.0) {
            return Err(Error::Config("C* must be positive".into()));
        }
        let region = feasible_region(self.r, self.s, self.d, self.lambda, self.gamma)?;
        if !region.contains(self.alpha, self.beta) {
            return Err(Error::Config(format!(
                "(α, β) = ({}, {}) outside the feasible region; margins {:?}",
                self.alpha,
                self.beta,
                region.margins(self.alpha, self.beta)
            )));
        }
        Ok(region)
    }

    pub fn level0(&self) -> SmoothingLevel {
        SmoothingLevel::from_t(self.t0).expect("validated power of two")
    }
}

/// N_{i+1} = ⌈d N_i⌉, which keeps t_{i+1} ≤ t_i^d.
pub fn next_level(n: usize, d: f64) -> usize {
    let x = d * n as f64;
    let c = x.ceil();
    // guard against d·N landing a rounding error above an integer
    if c - x > 1.0 - 1e-12 {
        x.floor() as usize
    } else {
        c as usize
    }
}

/// The four upper bounds on t0 and their minimum.
#[derive(Clone, Debug, PartialEq)]
pub struct T0Cap {
    /// (1/C*)^{2/(2α−1)}
    pub smallness: f64,
    /// (δ/C₂)^{1/(α−1/2)}
    pub domain: f64,
    /// (1/(2C_{r,s}))^{1/λ}
    pub remainder: f64,
    /// (1/L₀)^{1/γ}
    pub initial_size: f64,
    pub min: f64,
}

/// Constants the caps depend on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapInputs {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub c_star: f64,
    pub c2: f64,
    pub delta: f64,
    pub c_rs: f64,
    pub l0: f64,
}

pub fn compute_t0_cap(c: &CapInputs) -> Result<T0Cap> {
    if !(c.alpha > 0.5) {
        return Err(Error::Config(format!("α = {} must exceed 1/2", c.alpha)));
    }
    let pow = |base: f64, e: f64, what: &str| -> Result<f64> {
        if !(base > 0.0 && base.is_finite()) {
            return Err(Error::Config(format!("{what} cap has non-positive base {base}")));
        }
        // λ or γ = 0 lets the cap go to 0 or ∞ depending on the base
        let v = if e.is_infinite() {
            if base >= 1.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            base.powf(e)
        };
        if !(v > 0.0) {
            return Err(Error::Config(format!("{what} cap is {v}")));
        }
        Ok(v)
    };
    let smallness = pow(1.0 / c.c_star, 2.0 / (2.0 * c.alpha - 1.0), "smallness")?;
    let domain = pow(c.delta / c.c2, 1.0 / (c.alpha - 0.5), "domain")?;
    let remainder = pow(1.0 / (2.0 * c.c_rs), 1.0 / c.lambda, "remainder")?;
    let initial_size = pow(1.0 / c.l0, 1.0 / c.gamma, "initial size")?;
    let min = smallness.min(domain).min(remainder).min(initial_size);
    Ok(T0Cap { smallness, domain, remainder, initial_size, min })
}

/// Shared operators of a run.
#[derive(Clone, Debug)]
pub struct KamOperators {
    pub homotopy: SpectralHomotopy,
    pub smoothing: SmoothingOperator,
    pub backend: NormBackend,
    pub inversion_tol: f64,
    pub budget: StabilityBudget,
    /// ρ₀, the reference for drift.
    pub baseline: DefiningFunction,
}

impl KamOperators {
    /// S_t on one field; levels past the grid band use the same symbol.
    pub fn smooth(&self, level: SmoothingLevel, u: &GridField) -> Result<(GridField, bool)> {
        self.smoothing.apply_extended(level, u)
    }
}

/// Why a step was refused.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbortKind {
    /// Smallness or schedule inequality violated.
    Schedule,
    /// Pseudoconvexity or drift budget exhausted.
    Geometry,
    /// The map could not be inverted or I + K was near-singular.
    Inversion,
}

#[derive(Debug)]
pub struct StepFailure {
    pub kind: AbortKind,
    pub step: usize,
    pub error: Error,
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?} abort at step {}: {}", self.kind, self.step, self.error)
    }
}

/// Everything measured in one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub level: usize,
    pub t: f64,
    /// N beyond the grid's band, where S_t acts as the identity on the
    /// resolved frequencies.
    pub beyond_band: bool,
    pub a: f64,
    pub l: f64,
    pub a_bound: f64,
    pub l_bound: f64,
    pub f_sup: f64,
    /// ‖f‖ in C² over the real components.
    pub f_c2: f64,
    pub theta: f64,
    pub dg_norm: f64,
    pub sweeps: usize,
    pub inverse_error: f64,
    pub levi_min: f64,
    pub rho_drift: f64,
    /// K, I₁, I₂, I₃, I₄.
    pub terms: [TermNorm; 5],
    pub recombination_error: f64,
    pub harmonic: f64,
    /// t^{−1/2}a², the quadratic part of the a-estimate.
    pub quadratic_term: f64,
    /// t^{r−s}L, the smoothing part.
    pub smoothing_term: f64,
    pub a_next: f64,
    pub l_next: f64,
}

fn c2_of(disp: &[GridField]) -> Result<f64> {
    let mut worst = 0.0f64;
    for f in disp {
        let v: Vec<f64> = f.values().iter().map(|z| z.re).collect();
        worst = worst.max(c2_norm(f.spec(), &v, true)?);
    }
    Ok(worst)
}

/// Output of one step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub structure: Acs,
    pub rho: DefiningFunction,
    pub map: Diffeo,
    pub record: StepRecord,
}

/// One iteration: f = −S_t P A, F = I + f inverted, A pushed forward and
/// ρ replaced by ρ∘F^{-1}.
pub fn kam_step(
    x: &Acs,
    rho: &DefiningFunction,
    level: SmoothingLevel,
    params: &IterParams,
    ops: &KamOperators,
    step: usize,
) -> std::result::Result<StepOutcome, StepFailure> {
    let fail = |kind, error| StepFailure { kind, step, error };
    let sched = |e| fail(AbortKind::Schedule, e);
    let t = level.t();
    let a = x.norm(&ops.backend, params.s).map_err(sched)?;
    let l = x.norm(&ops.backend, params.r).map_err(sched)?;
    if t.powf(-0.5) * a > 1.0 / params.c_star {
        return Err(fail(
            AbortKind::Schedule,
            Error::Budget { step, quantity: "t^(-1/2) a".into(), value: t.powf(-0.5) * a, bound: 1.0 / params.c_star },
        ));
    }
    let beyond = std::cell::Cell::new(false);
    let smooth = |u: &GridField| -> Result<GridField> {
        let (v, b) = ops.smooth(level, u)?;
        beyond.set(b);
        Ok(v)
    };
    let sm = step_map(x, &ops.homotopy, &smooth).map_err(sched)?;
    let f_sup = sm.disp.iter().map(|u| u.sup_norm()).fold(0.0, f64::max);
    let f_c2 = c2_of(&sm.disp).map_err(sched)?;
    let map = crate::acs::invert_map(&sm.disp, ops.inversion_tol).map_err(|e| fail(AbortKind::Inversion, e))?;
    let push = pushforward(x, &map).map_err(|e| fail(AbortKind::Inversion, e))?;
    let terms = pushforward_terms(x, &sm, &ops.homotopy, &smooth, &push.tilde).map_err(sched)?;
    let term_norms = terms.norms(&ops.backend, params.s, params.r).map_err(sched)?;
    let geo = |e| fail(AbortKind::Geometry, e);
    let up = update_defining(rho, &map.g, &ops.baseline).map_err(geo)?;
    let levi_min = up.rho.levi_min().map_err(geo)?;
    if levi_min < ops.budget.levi_bound() {
        return Err(geo(Error::Budget {
            step,
            quantity: "Levi deficit".into(),
            value: ops.budget.levi_bound() - levi_min,
            bound: 0.0,
        }));
    }
    if up.drift > ops.budget.eps_d {
        return Err(geo(Error::Budget {
            step,
            quantity: "defining function drift".into(),
            value: up.drift,
            bound: ops.budget.eps_d,
        }));
    }
    let a_next = push.structure.norm(&ops.backend, params.s).map_err(sched)?;
    let l_next = push.structure.norm(&ops.backend, params.r).map_err(sched)?;
    let record = StepRecord {
        step,
        level: level.n(),
        t,
        beyond_band: beyond.get(),
        a,
        l,
        a_bound: t.powf(params.alpha),
        l_bound: f64::NAN,
        f_sup,
        f_c2,
        theta: map.theta,
        dg_norm: map.dg_norm,
        sweeps: map.sweeps,
        inverse_error: map.inverse_error,
        levi_min,
        rho_drift: up.drift,
        terms: term_norms,
        recombination_error: terms.recombination_error,
        harmonic: sm.harmonic_size,
        quadratic_term: t.powf(-0.5) * a * a,
        smoothing_term: t.powf(params.r - params.s) * l,
        a_next,
        l_next,
    };
    Ok(StepOutcome { structure: push.structure, rho: up.rho, map, record })
}

/// Per-run summary and per-step rows.
#[derive(Clone, Debug, PartialEq)]
pub struct IterTrace {
    pub steps: Vec<StepRecord>,
    /// Levels N_i actually scheduled, including the one after the last step.
    pub levels: Vec<usize>,
    pub final_a: f64,
    pub final_l: f64,
    /// t^α and L₀t^{−β} at the terminal iterate.
    pub final_a_bound: f64,
    pub final_l_bound: f64,
    pub l0: f64,
    pub converged: bool,
    /// A step failed to halve a: the data's resolution floor was reached.
    pub stalled: bool,
    pub failure: Option<String>,
    /// Growth exponent of L_i against t_i^{-1}, clamped at 0.
    pub eta: f64,
    /// Interpolation weight θ = ½·α/(α + η).
    pub weight: f64,
    /// ℓ = (1−θ)s + θr.
    pub ell: f64,
    /// |F̃_j − F̃_{j−1}| in Λ^{ℓ+1/2}.
    pub increments: Vec<f64>,
    /// First step where L_{i+1}/L_i ≤ t_i^{−λ}.
    pub cauchy_start: Option<usize>,
    /// ‖DF − I‖₀ of the composed map.
    pub jacobian_defect: f64,
    /// ‖G∘F − I‖_∞ for the inverse of the composed map.
    pub inverse_error: f64,
    /// max_j (|ρ_j|_r / |ρ₀|_r)^{1/j}.
    pub composition_growth: f64,
}

impl IterTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "step,level,t,beyond_band,a,a_bound,l,l_bound,f_sup,f_c2,theta,dg_norm,sweeps,inverse_error,levi_min,rho_drift,\
             k_s,i1_s,i2_s,i3_s,i4_s,i1_m,i2_m,i3_m,i4_m,recombination_error,harmonic,quadratic_term,smoothing_term,a_next,l_next,increment\n",
        );
        for (i, r) in self.steps.iter().enumerate() {
            let inc = self.increments.get(i).copied().unwrap_or(f64::NAN);
            let _ = writeln!(
                s,
                "{},{},{:.12e},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{:.12e},{:.12e},{:.12e},\
                 {:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.step,
                r.level,
                r.t,
                r.beyond_band as u8,
                r.a,
                r.a_bound,
                r.l,
                r.l_bound,
                r.f_sup,
                r.f_c2,
                r.theta,
                r.dg_norm,
                r.sweeps,
                r.inverse_error,
                r.levi_min,
                r.rho_drift,
                r.terms[0].s,
                r.terms[1].s,
                r.terms[2].s,
                r.terms[3].s,
                r.terms[4].s,
                r.terms[1].m,
                r.terms[2].m,
                r.terms[3].m,
                r.terms[4].m,
                r.recombination_error,
                r.harmonic,
                r.quadratic_term,
                r.smoothing_term,
                r.a_next,
                r.l_next,
                inc
            );
        }
        // terminal iterate: norms and bounds only, no step taken from it
        let n = *self.levels.last().expect("at least the initial level");
        let _ = write!(
            s,
            "{},{},{:.12e},,{:.12e},{:.12e},{:.12e},{:.12e}",
            self.steps.len(),
            n,
            2f64.powi(-(n as i32)),
            self.final_a,
            self.final_a_bound,
            self.final_l,
            self.final_l_bound
        );
        s.push_str(&",".repeat(24));
        s.push('\n');
        s
    }

    /// (a_i, t_i^α) for every iterate, the terminal one included.
    pub fn iterates(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self.steps.iter().map(|r| (r.a, r.a_bound)).collect();
        v.push((self.final_a, self.final_a_bound));
        v
    }

    /// Leading iterates with a_i ≤ t_i^α.
    pub fn iterates_within_schedule(&self) -> usize {
        self.iterates().iter().take_while(|(a, b)| *a <= b * (1.0 + SCHEDULE_SLACK)).count()
    }
}

/// Relative slack on the schedule inequalities, for the last bits of the
/// initial scaling.
pub const SCHEDULE_SLACK: f64 = 1e-9;

/// a_{i+1} > STALL_RATIO·a_i ends the run.
pub const STALL_RATIO: f64 = 0.5;

/// Output of a full run.
#[derive(Clone, Debug)]
pub struct IterOutcome {
    pub trace: IterTrace,
    /// Real displacement of the composed map F = I + u.
    pub composed: Vec<GridField>,
    pub structure: Acs,
    pub rho: DefiningFunction,
}

fn schedule_violation(i: usize, a: f64, l: f64, t: f64, l0: f64, params: &IterParams) -> Option<String> {
    let ab = t.powf(params.alpha);
    let lb = l0 * t.powf(-params.beta);
    if a > ab * (1.0 + SCHEDULE_SLACK) {
        return Some(format!("a_{i} = {a:.6e} > t_{i}^α = {ab:.6e} (margin {:.3e})", ab - a));
    }
    if l > lb * (1.0 + SCHEDULE_SLACK) {
        return Some(format!("L_{i} = {l:.6e} > L₀t_{i}^(−β) = {lb:.6e} (margin {:.3e})", lb - l));
    }
    None
}

/// Runs steps until a_i drops below `floor`, a check fails, or `max_steps`
/// is reached. Failures truncate the trace and are reported in it.
pub fn run_iteration(
    x0: &Acs,
    rho0: &DefiningFunction,
    params: &IterParams,
    ops: &KamOperators,
    max_steps: usize,
    floor: f64,
) -> Result<IterOutcome> {
    params.validate()?;
    let grid = x0.grid().clone();
    let a0 = x0.norm(&ops.backend, params.s)?;
    let l0 = x0.norm(&ops.backend, params.r)?;
    if a0 > params.t0.powf(params.alpha) * (1.0 + SCHEDULE_SLACK) {
        return Err(Error::Config(format!("|A₀|_s = {a0:.6e} exceeds t0^α = {:.6e}", params.t0.powf(params.alpha))));
    }
    let rho_r0 = ops.backend.norm(&rho0.to_field(), params.r, None)?;
    let mut x = x0.clone();
    let mut rho = rho0.clone();
    let mut level = params.level0();
    let mut levels = vec![level.n()];
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut composed: Vec<GridField> = vec![GridField::zeros(&grid); grid.dim()];
    let mut increments_fields: Vec<Vec<GridField>> = Vec::new();
    let mut failure = None;
    let mut converged = false;
    let mut stalled = false;
    let mut growth = 1.0f64;
    let (mut a, mut l) = (a0, l0);
    for i in 0..max_steps {
        let t = level.t();
        if let Some(msg) = schedule_violation(i, a, l, t, l0, params) {
            failure = Some(msg);
            break;
        }
        if a < floor {
            converged = true;
            break;
        }
        let out = match kam_step(&x, &rho, level, params, ops, i) {
            Ok(o) => o,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let mut rec = out.record;
        rec.l_bound = l0 * t.powf(-params.beta);
        // F̃_i = F_i ∘ F̃_{i−1}: u ← u + f_i∘(I + u)
        let reach = composed.iter().map(|u| u.sup_norm()).fold(0.0, f64::max);
        let moved = if reach == 0.0 {
            out.map.f.clone()
        } else {
            // absolute accuracy COMPOSE_TOL·|u| is all the sum can carry
            let size = out.map.f.iter().map(|u| u.sup_norm()).fold(f64::MIN_POSITIVE, f64::max);
            let tol = (COMPOSE_TOL * reach / size).clamp(COMPOSE_TOL, 1e-3);
            compose_real_tol(&out.map.f, &composed, tol)?
        };
        for (u, m) in composed.iter_mut().zip(&moved) {
            *u = u.add(m)?;
        }
        increments_fields.push(moved);
        stalled = rec.a_next > STALL_RATIO * rec.a;
        a = rec.a_next;
        l = rec.l_next;
        steps.push(rec);
        x = out.structure;
        rho = out.rho;
        let rn = ops.backend.norm(&rho.to_field(), params.r, None)?;
        growth = growth.max((rn / rho_r0).powf(1.0 / (i + 1) as f64));
        level = SmoothingLevel::new(next_level(level.n(), params.d));
        levels.push(level.n());
        if stalled {
            break;
        }
        if i + 1 == max_steps {
            failure = schedule_violation(i + 1, a, l, level.t(), l0, params);
        }
    }
    if failure.is_none() && !converged && a < floor {
        converged = true;
    }
    // η from L_i ≤ L₀ t_i^{−η}
    let mut eta = 0.0f64;
    for r in &steps {
        if r.l > 0.0 && r.step > 0 {
            eta = eta.max((r.l / l0).ln() / (-r.t.ln()));
        }
    }
    let weight = 0.5 * params.alpha / (params.alpha + eta);
    let ell = (1.0 - weight) * params.s + weight * params.r;
    let mut increments = Vec::with_capacity(increments_fields.len());
    for inc in &increments_fields {
        let mut worst = 0.0f64;
        for u in inc {
            worst = worst.max(ops.backend.norm(u, ell + 0.5, None)?);
        }
        increments.push(worst);
    }
    let cauchy_start = steps.iter().position(|r| r.l > 0.0 && r.l_next / r.l <= r.t.powf(-params.lambda));
    let jacobian_defect = jacobian_norm(&composed)?;
    let inverse_error = if jacobian_defect < 0.5 { crate::acs::invert_map(&composed, ops.inversion_tol)?.inverse_error } else { f64::NAN };
    let t_end = level.t();
    let trace = IterTrace {
        steps,
        levels,
        final_a: a,
        final_l: l,
        final_a_bound: t_end.powf(params.alpha),
        final_l_bound: l0 * t_end.powf(-params.beta),
        l0,
        converged,
        stalled,
        failure,
        eta,
        weight,
        ell,
        increments,
        cauchy_start,
        jacobian_defect,
        inverse_error,
        composition_growth: growth,
    };
    Ok(IterOutcome { trace, composed, structure: x, rho })
}

/// ‖F − F_exact‖_∞ over the grid after removing the best constant
/// translation, which is the only freedom left on the torus. Returns the
/// error and the translation.
pub fn oracle_error(composed: &[GridField], exact: &[GridField]) -> Result<(f64, Vec<f64>)> {
    if composed.len() != exact.len() {
        return Err(Error::InvalidArgument("maps of different dimension".into()));
    }
    let mut worst = 0.0f64;
    let mut shift = Vec::with_capacity(composed.len());
    for (u, v) in composed.iter().zip(exact) {
        let diff = u.re().sub(&v.re())?;
        let vals: Vec<f64> = diff.values().iter().map(|z| z.re).collect();
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let c = 0.5 * (lo + hi);
        worst = worst.max(0.5 * (hi - lo));
        shift.push(c);
    }
    Ok((worst, shift))
}

/// Complex form of a real displacement, for reporting.
pub fn map_components(disp: &[GridField]) -> Result<Vec<GridField>> {
    complex_map(disp)
}

/// Constants measured on a probe structure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasuredConstants {
    /// 2·‖D(S_t P A)‖₀ / |A|_s.
    pub c_star: f64,
    /// ‖S_t P A‖_{C²}·t^{1/2} / |A|_s.
    pub c2: f64,
    /// sup |(I − S_t)u|_s / (t^{r−s}|u|_r) over the probe entries and the
    /// grid's levels.
    pub c_rs: f64,
    /// |A|_r / |A|_s of the probe.
    pub norm_ratio: f64,
}

pub fn measure_constants(probe: &Acs, params: &IterParams, ops: &KamOperators) -> Result<MeasuredConstants> {
    let grid: GridSpec = probe.grid().clone();
    let a = probe.norm(&ops.backend, params.s)?;
    let l = probe.norm(&ops.backend, params.r)?;
    if !(a > 0.0) {
        return Err(Error::InvalidArgument("probe structure is zero".into()));
    }
    let level = params.level0();
    let smooth = |u: &GridField| ops.smooth(level, u).map(|v| v.0);
    let sm = step_map(probe, &ops.homotopy, &smooth)?;
    let c_star = 2.0 * jacobian_norm(&sm.disp)? / a;
    let c2 = c2_of(&sm.disp)? * level.t().sqrt() / a;
    let mut c_rs = 0.0f64;
    let top = ops.smoothing.max_level(&grid);
    for n in 0..=top {
        let lv = SmoothingLevel::new(n);
        for u in probe.entries().iter().flatten() {
            let ur = ops.backend.norm(u, params.r, None)?;
            if ur == 0.0 {
                continue;
            }
            let rem = u.sub(&ops.smooth(lv, u)?.0)?;
            let rs = ops.backend.norm(&rem, params.s, None)?;
            c_rs = c_rs.max(rs / (lv.t().powf(params.r - params.s) * ur));
        }
    }
    Ok(MeasuredConstants { c_star, c2, c_rs, norm_ratio: l / a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::C64;

    #[test]
    fn threshold_at_d_one() {
        assert_eq!(p_of_d(1.0), 0.5);
    }

    #[test]
    fn feasibility_matches_closed_form() {
        // p(d) = 0.7 at d = 7/6
        assert!(feasible_region(1.7, 1.0, 7.0 / 6.0 - 1e-6, 0.0, 0.0).unwrap().nonempty);
        assert!(!feasible_region(1.7, 1.0, 7.0 / 6.0 + 1e-6, 0.0, 0.0).unwrap().nonempty);
        for i in 1..20 {
            let d = 1.0 + i as f64 / 20.0;
            assert!(!feasible_region(1.4, 1.0, d, 0.0, 0.0).unwrap().nonempty);
        }
    }

    #[test]
    fn center_is_feasible() {
        let r = feasible_region(4.4, 1.1, 1.4, 0.3, 0.1).unwrap();
        let (a, b) = r.center().unwrap();
        assert!(r.contains(a, b));
    }

    #[test]
    fn caps_from_formulas() {
        let c = CapInputs { alpha: 0.75, lambda: 0.1, gamma: 0.05, c_star: 10.0, c2: 1.0, delta: 1.0, c_rs: 0.5, l0: 1.0 };
        let cap = compute_t0_cap(&c).unwrap();
        assert!((cap.smallness - 1e-4).abs() < 1e-16);
        assert_eq!(cap.initial_size, 1.0);
        assert!(compute_t0_cap(&CapInputs { c_star: -1.0, ..c }).is_err());
    }

    fn zero_setup() -> (Acs, DefiningFunction, KamOperators, IterParams) {
        let g = GridSpec::cube(4, 8, 2.0 * std::f64::consts::PI).unwrap();
        let fam = crate::lp::LpFamily::standard(&g);
        let rho = crate::torus::torus_domain(&g).unwrap();
        let levi = rho.levi_min().unwrap();
        let ops = KamOperators {
            homotopy: SpectralHomotopy::new(&g).unwrap(),
            smoothing: SmoothingOperator::multiplier(fam.clone()),
            backend: NormBackend::Besov(fam),
            inversion_tol: 1e-13,
            budget: StabilityBudget::derive(levi, 0.1, 1.0).unwrap(),
            baseline: rho.clone(),
        };
        let region = feasible_region(4.4, 1.1, 1.4, 0.3, 0.1).unwrap();
        let (alpha, beta) = region.center().unwrap();
        let params = IterParams { alpha, beta, d: 1.4, lambda: 0.3, gamma: 0.1, t0: 0.25, c_star: 2.0, r: 4.4, s: 1.1 };
        (Acs::zero(&g).unwrap(), rho, ops, params)
    }

    #[test]
    fn zero_structure_is_a_fixed_point() {
        let (x, rho, ops, params) = zero_setup();
        let out = kam_step(&x, &rho, params.level0(), &params, &ops, 0).unwrap();
        assert!(out.map.is_identity());
        assert_eq!(out.structure.sup_norm(), 0.0);
        assert_eq!(out.rho.values(), rho.values());
        assert_eq!(out.record.a_next, 0.0);
    }

    #[test]
    fn zero_structure_stops_at_once() {
        let (x, rho, ops, params) = zero_setup();
        let out = run_iteration(&x, &rho, &params, &ops, 5, 1e-12).unwrap();
        assert!(out.trace.converged);
        assert!(out.trace.steps.is_empty());
        assert_eq!(out.trace.iterates_within_schedule(), 1);
        assert!(out.composed.iter().all(|u| u.sup_norm() == 0.0));
    }

    #[test]
    fn oversized_start_is_rejected() {
        let (_, rho, ops, params) = zero_setup();
        let g = rho.grid().clone();
        let bumpy = crate::acs::Acs::new(vec![
            vec![GridField::from_fn(&g, |x| C64::new(0.3 * x[0].sin(), 0.0)).unwrap(), GridField::zeros(&g)],
            vec![GridField::zeros(&g), GridField::zeros(&g)],
        ])
        .unwrap();
        assert!(matches!(run_iteration(&bumpy, &rho, &params, &ops, 2, 1e-12), Err(Error::Config(_))));
    }

    #[test]
    fn schedule_rounds_up() {
        assert_eq!(next_level(4, 1.5), 6);
        assert_eq!(next_level(3, 1.5), 5);
        assert_eq!(next_level(5, 1.4), 7);
        assert_eq!(next_level(10, 1.3), 13);
    }
}
