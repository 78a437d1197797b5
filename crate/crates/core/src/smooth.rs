//! Smoothing operators S_t at dyadic scales t = 2^-N: a Fourier multiplier on
//! the torus, the cone-pair partial sums on half-spaces, and the partition
//! gluing of both on a graph domain. Also the extension operator built from
//! a cone pair.

use crate::domain::{ChartPiece, DomainChart};
use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec, C64};
use crate::lp::{ConePair, LpFamily};

/// t = 2^-N.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SmoothingLevel {
    n: usize,
}

impl SmoothingLevel {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    /// Accepts only exact powers of two in (0, 1].
    pub fn from_t(t: f64) -> Result<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidArgument(format!("smoothing scale {t} outside (0, 1]")));
        }
        let n = (-t.log2()).round();
        if 2f64.powi(-(n as i32)) != t {
            return Err(Error::InvalidArgument(format!("smoothing scale {t} is not a power of two")));
        }
        Ok(Self { n: n as usize })
    }

    pub fn n(self) -> usize {
        self.n
    }

    pub fn t(self) -> f64 {
        2f64.powi(-(self.n as i32))
    }
}

#[derive(Clone, Debug)]
pub enum SmoothingBackend {
    /// û ↦ λ̂₀(2^-N ξ) û.
    Multiplier(LpFamily),
    /// Σ_{k≤N} ψ_k ∗ φ_k ∗ u.
    Cone(ConePair),
    /// S⁰(χ₀u) + Σ χ_ν S^ν(1_ν χ_ν u) with S⁰ a multiplier and S^ν the cone
    /// pair matching each boundary piece.
    Glued { interior: LpFamily, lower: ConePair, upper: ConePair, chart: DomainChart },
}

#[derive(Clone, Debug)]
pub struct SmoothingOperator {
    pub backend: SmoothingBackend,
}

fn multiplier_apply(family: &LpFamily, level: SmoothingLevel, u: &GridField) -> Result<GridField> {
    let grid = u.spec();
    let max_admissible = grid.max_level().min(family.max_level);
    if level.n > max_admissible {
        return Err(Error::ResolutionExhausted { requested: level.n, max_admissible });
    }
    let scale = level.t();
    let table: Vec<f64> = grid.frequency_norms().into_iter().map(|r| family.profile.eval(r * scale)).collect();
    Ok(u.apply_table(&table))
}

fn mask_field(u: &GridField, mask: &[bool]) -> GridField {
    let v = u.values().iter().zip(mask).map(|(&x, &m)| if m { x } else { C64::new(0.0, 0.0) }).collect();
    GridField::new(u.spec().clone(), v).expect("masking keeps samples finite")
}

fn pair_for<'a>(piece: &ChartPiece, lower: &'a ConePair, upper: &'a ConePair) -> &'a ConePair {
    if piece.orientation < 0.0 {
        lower
    } else {
        upper
    }
}

impl SmoothingOperator {
    pub fn multiplier(family: LpFamily) -> Self {
        Self { backend: SmoothingBackend::Multiplier(family) }
    }

    pub fn cone(pair: ConePair) -> Self {
        Self { backend: SmoothingBackend::Cone(pair) }
    }

    /// Checks that the pairs point into their pieces and that the chart's
    /// partition is exact.
    pub fn glued(interior: LpFamily, lower: ConePair, upper: ConePair, chart: DomainChart) -> Result<Self> {
        if lower.orientation >= 0.0 || upper.orientation <= 0.0 {
            return Err(Error::Contract("lower piece needs the standard pair, upper the reflected one".into()));
        }
        for p in [&lower, &upper] {
            p.grid().ensure_same(chart.grid())?;
        }
        let defect = chart.partition_defect();
        if defect > 1e-10 {
            return Err(Error::Contract(format!("partition defect {defect:.3e} exceeds 1e-10")));
        }
        Ok(Self { backend: SmoothingBackend::Glued { interior, lower, upper, chart } })
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        match &self.backend {
            SmoothingBackend::Multiplier(_) => None,
            SmoothingBackend::Cone(p) => Some(p.grid()),
            SmoothingBackend::Glued { chart, .. } => Some(chart.grid()),
        }
    }

    /// Largest valid N on `grid`.
    pub fn max_level(&self, grid: &GridSpec) -> usize {
        match &self.backend {
            SmoothingBackend::Multiplier(f) => grid.max_level().min(f.max_level),
            SmoothingBackend::Cone(p) => p.top_level(),
            SmoothingBackend::Glued { interior, lower, upper, .. } => {
                grid.max_level().min(interior.max_level).min(lower.top_level()).min(upper.top_level())
            }
        }
    }

    fn check(&self, level: SmoothingLevel, u: &GridField) -> Result<()> {
        if let Some(g) = self.grid() {
            g.ensure_same(u.spec())?;
        }
        let max_admissible = self.max_level(u.spec());
        if level.n > max_admissible {
            return Err(Error::ResolutionExhausted { requested: level.n, max_admissible });
        }
        Ok(())
    }

    pub fn apply(&self, level: SmoothingLevel, u: &GridField) -> Result<GridField> {
        self.check(level, u)?;
        match &self.backend {
            SmoothingBackend::Multiplier(f) => multiplier_apply(f, level, u),
            SmoothingBackend::Cone(p) => p.apply_partial(level.n, u),
            SmoothingBackend::Glued { interior, lower, upper, chart } => {
                let mut out = multiplier_apply(interior, level, &u.mul(&chart.interior_cutoff)?)?;
                for piece in &chart.pieces {
                    let pair = pair_for(piece, lower, upper);
                    let local = mask_field(&u.mul(&piece.cutoff)?, &piece.half_space);
                    let smoothed = pair.apply_partial(level.n, &local)?;
                    out = out.add(&piece.cutoff.mul(&smoothed)?)?;
                }
                Ok(out)
            }
        }
    }

    /// Multiplier backend only: S_t at any N, including levels past the
    /// grid's Littlewood-Paley band, where the symbol is 1 on every
    /// resolved frequency once 2^N exceeds the largest lattice radius.
    /// Returns the result and whether N was past the band.
    pub fn apply_extended(&self, level: SmoothingLevel, u: &GridField) -> Result<(GridField, bool)> {
        match &self.backend {
            SmoothingBackend::Multiplier(f) if level.n > self.max_level(u.spec()) => {
                let scale = level.t();
                let table: Vec<f64> = u.spec().frequency_norms().into_iter().map(|r| f.profile.eval(r * scale)).collect();
                Ok((u.apply_table(&table), true))
            }
            _ => Ok((self.apply(level, u)?, false)),
        }
    }

    /// u − S_t u.
    pub fn remainder(&self, level: SmoothingLevel, u: &GridField) -> Result<GridField> {
        u.sub(&self.apply(level, u)?)
    }

    /// ∂_axis S_t u − S_t ∂_axis u with spectral derivatives.
    pub fn commutator(&self, level: SmoothingLevel, u: &GridField, axis: usize) -> Result<GridField> {
        if axis >= u.spec().dim() {
            return Err(Error::InvalidArgument(format!("axis {axis} on a {}-d grid", u.spec().dim())));
        }
        let a = self.apply(level, u)?.derivative(axis);
        let b = self.apply(level, &u.derivative(axis))?;
        a.sub(&b)
    }

    /// Glued backend only: (S⁰−I)((∂χ₀)u) + Σ(∂χ_ν)(S^ν−I)(χ_ν u)
    /// + Σχ_ν(S^ν−I)((∂χ_ν)u). Agrees with [`Self::commutator`] on the domain.
    pub fn commutator_cutoff_terms(&self, level: SmoothingLevel, u: &GridField, axis: usize) -> Result<GridField> {
        self.check(level, u)?;
        let SmoothingBackend::Glued { interior, lower, upper, chart } = &self.backend else {
            return Err(Error::InvalidArgument("cutoff expression exists only for the glued backend".into()));
        };
        let d0 = chart.interior_cutoff.derivative(axis);
        let v = u.mul(&d0)?;
        let mut out = multiplier_apply(interior, level, &v)?.sub(&v)?;
        for piece in &chart.pieces {
            let pair = pair_for(piece, lower, upper);
            let dchi = piece.cutoff.derivative(axis);
            let rem = |g: &GridField| -> Result<GridField> {
                let local = mask_field(g, &piece.half_space);
                pair.apply_partial(level.n, &local)?.sub(&local)
            };
            out = out.add(&dchi.mul(&rem(&u.mul(&piece.cutoff)?)?)?)?;
            out = out.add(&piece.cutoff.mul(&rem(&u.mul(&dchi)?)?)?)?;
        }
        Ok(out)
    }
}

/// Σ_{j≤J} ψ_j ∗ (1_ω · (φ_j ∗ f)) over all levels of the pair, where ω is
/// the half-space of `piece`. Values of f outside ω are ignored.
pub fn rychkov_extend(f: &GridField, pair: &ConePair, piece: &ChartPiece) -> Result<GridField> {
    pair.grid().ensure_same(f.spec())?;
    if pair.orientation != piece.orientation {
        return Err(Error::Contract(format!(
            "cone axis mismatch: pair orientation {} on a piece with orientation {}",
            pair.orientation, piece.orientation
        )));
    }
    let f = mask_field(f, &piece.half_space);
    let mut out = GridField::zeros(f.spec());
    for j in 0..pair.level_count {
        let inner = mask_field(&pair.apply_phi(j, &f)?, &piece.half_space);
        out = out.add(&pair.apply_psi(j, &inner)?)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::build_cone_pair_oriented;
    use std::f64::consts::PI;

    #[test]
    fn level_from_scale() {
        assert_eq!(SmoothingLevel::from_t(0.125).unwrap().n(), 3);
        assert!(SmoothingLevel::from_t(0.3).is_err());
        assert!(SmoothingLevel::from_t(0.0).is_err());
        assert_eq!(SmoothingLevel::new(5).t(), 1.0 / 32.0);
    }

    #[test]
    fn multiplier_keeps_low_modes_and_constants() {
        let grid = GridSpec::cube(2, 64, 2.0 * PI).unwrap();
        let op = SmoothingOperator::multiplier(LpFamily::standard(&grid));
        let u = GridField::from_real_fn(&grid, |x| (3.0 * x[0]).sin() + (x[0] - 4.0 * x[1]).cos() + 0.5).unwrap();
        let s = op.apply(SmoothingLevel::new(3), &u).unwrap();
        assert!(s.sub(&u).unwrap().sup_norm() < 1e-13);
        let r = op.remainder(SmoothingLevel::new(3), &u).unwrap();
        assert!(r.sup_norm() < 1e-13);
        let c = op.commutator(SmoothingLevel::new(2), &u, 1).unwrap();
        assert!(c.sup_norm() < 1e-10);
        let max = grid.max_level();
        assert!(matches!(
            op.apply(SmoothingLevel::new(max + 1), &u),
            Err(Error::ResolutionExhausted { .. })
        ));
    }

    #[test]
    fn nested_levels_are_idempotent() {
        let grid = GridSpec::cube(1, 256, 2.0 * PI).unwrap();
        let op = SmoothingOperator::multiplier(LpFamily::standard(&grid));
        let u = GridField::from_real_fn(&grid, |x| (x[0].sin() * 3.0).exp()).unwrap();
        let s = op.apply(SmoothingLevel::new(2), &u).unwrap();
        let ss = op.apply(SmoothingLevel::new(3), &s).unwrap();
        assert!(ss.sub(&s).unwrap().sup_norm() < 1e-13);
    }

    fn glued_1d() -> (GridSpec, SmoothingOperator) {
        let grid = GridSpec::cube(1, 1 << 14, 64.0).unwrap();
        let chart = DomainChart::graph_domain(&grid, |_| 16.0, |_| 48.0, 2.0).unwrap();
        let lower = build_cone_pair_oriented(&grid, 4, 8, -1.0).unwrap();
        let upper = build_cone_pair_oriented(&grid, 4, 8, 1.0).unwrap();
        let op = SmoothingOperator::glued(LpFamily::standard(&grid), lower, upper, chart).unwrap();
        (grid, op)
    }

    #[test]
    fn glued_commutator_matches_cutoff_terms() {
        let (grid, op) = glued_1d();
        let SmoothingBackend::Glued { chart, .. } = &op.backend else { unreachable!() };
        let u = GridField::from_real_fn(&grid, |x| (PI * x[0] / 8.0).sin() + 0.3 * (PI * x[0] / 2.0).cos()).unwrap();
        let lvl = SmoothingLevel::new(4);
        let direct = op.commutator(lvl, &u, 0).unwrap();
        let terms = op.commutator_cutoff_terms(lvl, &u, 0).unwrap();
        let diff = direct.sub(&terms).unwrap().sup_norm_masked(Some(chart.inside()));
        let size = direct.sup_norm_masked(Some(chart.inside()));
        assert!(diff < 1e-8 * size.max(1.0), "{diff} vs {size}");
    }

    #[test]
    fn glued_reproduces_constants_up_to_truncation() {
        let (grid, op) = glued_1d();
        let SmoothingBackend::Glued { chart, .. } = &op.backend else { unreachable!() };
        let u = GridField::constant(&grid, C64::new(2.5, 0.0));
        // The cone sums converge on the smooth cutoffs only once their scale
        // resolves the cutoff width.
        let s = op.apply(SmoothingLevel::new(7), &u).unwrap();
        let err = s.sub(&u).unwrap().sup_norm_masked(Some(chart.inside()));
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn extension_of_zero_and_orientation_mismatch() {
        let grid = GridSpec::cube(1, 1 << 10, 64.0).unwrap();
        let chart = DomainChart::graph_domain(&grid, |_| 16.0, |_| 48.0, 2.0).unwrap();
        let pair = build_cone_pair_oriented(&grid, 4, 4, -1.0).unwrap();
        let z = rychkov_extend(&GridField::zeros(&grid), &pair, &chart.pieces[0]).unwrap();
        assert_eq!(z.sup_norm(), 0.0);
        assert!(matches!(rychkov_extend(&z, &pair, &chart.pieces[1]), Err(Error::Contract(_))));
    }
}
