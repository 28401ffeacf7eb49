//! Sharp bounds on level-specific complier effects `Y_d^d - Y_d^0` given the
//! identified pooled untreated mean, and joint-sign feasibility.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::ComplierDecomposition;
use crate::simplex::{LinearProgram, LpOutcome, Relation};

const SHARE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Effects weakly decrease in `d` across consecutive levels with positive share.
    Decreasing,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsProblem {
    /// Complier shares for `d = 1..=dbar`.
    pub shares: Vec<f64>,
    /// `Y_d^d`; ignored where the share is zero.
    pub treated_means: Vec<f64>,
    pub untreated_mean: f64,
    pub support: (f64, f64),
    pub shape: Option<Shape>,
    pub names: Vec<String>,
}

impl BoundsProblem {
    pub fn new(shares: Vec<f64>, treated_means: Vec<f64>, untreated_mean: f64, support: (f64, f64)) -> Result<Self> {
        let names = (1..=shares.len()).map(|d| d.to_string()).collect();
        let p = BoundsProblem { shares, treated_means, untreated_mean, support, shape: None, names };
        p.validate()?;
        Ok(p)
    }

    pub fn with_shape(mut self, shape: Option<Shape>) -> Self {
        self.shape = shape;
        self
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.shares.len() {
            return Err(Error::InvalidShares(format!("{} names for {} levels", names.len(), self.shares.len())));
        }
        self.names = names;
        Ok(self)
    }

    /// Plug-in problem from an estimated decomposition. Negative estimated
    /// shares are rejected; see `from_decomposition_clamped`.
    pub fn from_decomposition(dec: &ComplierDecomposition, support: (f64, f64)) -> Result<Self> {
        let means = dec
            .treated_means
            .iter()
            .zip(&dec.shares)
            .map(|(m, &w)| if w > 0.0 { m.mean.unwrap_or(f64::NAN) } else { 0.0 })
            .collect();
        let names = dec.treated_means.iter().map(|m| m.name.clone()).collect();
        BoundsProblem::new(dec.shares.clone(), means, dec.untreated_mean_pooled, support)?.with_names(names)
    }

    /// As `from_decomposition`, but negative shares (sampling noise or an EMCO
    /// violation) are set to zero and the rest renormalized. Returns the
    /// levels that were clamped.
    pub fn from_decomposition_clamped(
        dec: &ComplierDecomposition,
        support: (f64, f64),
    ) -> Result<(Self, Vec<String>)> {
        let mut dec = dec.clone();
        let clamped: Vec<String> = dec
            .treated_means
            .iter()
            .zip(&dec.shares)
            .filter(|(_, &w)| w < 0.0)
            .map(|(m, _)| m.name.clone())
            .collect();
        if !clamped.is_empty() {
            dec.shares.iter_mut().for_each(|w| *w = w.max(0.0));
            let total: f64 = dec.shares.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidShares("no level has a positive complier share".into()));
            }
            dec.shares.iter_mut().for_each(|w| *w /= total);
        }
        Ok((BoundsProblem::from_decomposition(&dec, support)?, clamped))
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.support;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidShares(format!("invalid support [{lo}, {hi}]")));
        }
        if self.treated_means.len() != self.shares.len() {
            return Err(Error::InvalidShares(format!(
                "{} treated means for {} shares",
                self.treated_means.len(),
                self.shares.len()
            )));
        }
        if let Some(w) = self.shares.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidShares(format!("share {w} is not a nonnegative number")));
        }
        let total: f64 = self.shares.iter().sum();
        if (total - 1.0).abs() > SHARE_TOL {
            return Err(Error::InvalidShares(format!("shares sum to {total}, not 1")));
        }
        for d in self.active() {
            if !self.treated_means[d].is_finite() {
                return Err(Error::InvalidShares(format!("treated mean at level {} is not finite", self.names[d])));
            }
        }
        let m = self.untreated_mean;
        if !m.is_finite() || m < lo || m > hi {
            return Err(Error::InfeasibleProblem(format!("untreated mean {m} outside support [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Indices (0-based, level `d = index + 1`) with positive share.
    pub fn active(&self) -> Vec<usize> {
        (0..self.shares.len()).filter(|&d| self.shares[d] > 0.0).collect()
    }

    pub fn is_unbounded(&self) -> bool {
        !(self.support.0.is_finite() && self.support.1.is_finite())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectInterval {
    pub level: usize,
    pub name: String,
    pub share: f64,
    pub treated_mean: f64,
    /// Range of `Y_d^0` compatible with the constraints.
    pub untreated_lo: f64,
    pub untreated_hi: f64,
    pub lo: f64,
    pub hi: f64,
    /// `Y^0` vectors (active levels, in order) attaining `lo` and `hi`;
    /// absent when the endpoint is infinite.
    pub argmin: Option<Vec<f64>>,
    pub argmax: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsResult {
    /// One entry per level `d = 1..=dbar`; `None` for zero-share levels.
    pub intervals: Vec<Option<EffectInterval>>,
    pub feasible: bool,
    pub uninformative: bool,
    pub shape: Option<Shape>,
    pub support: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    ClosedForm,
    Simplex,
}

/// Closed form without a shape restriction, simplex with one.
pub fn effect_bounds(p: &BoundsProblem) -> Result<BoundsResult> {
    let solver = if p.shape.is_some() { Solver::Simplex } else { Solver::ClosedForm };
    effect_bounds_with(p, solver)
}

pub fn effect_bounds_with(p: &BoundsProblem, solver: Solver) -> Result<BoundsResult> {
    p.validate()?;
    if solver == Solver::ClosedForm && p.shape.is_some() {
        return Err(Error::InvalidTuning("the closed form does not handle shape restrictions".into()));
    }
    let active = p.active();
    let mut intervals = vec![None; p.shares.len()];
    for (pos, &d) in active.iter().enumerate() {
        let (y0_lo, y0_hi, arg_lo, arg_hi) = match solver {
            Solver::ClosedForm => closed_form(p, &active, pos),
            Solver::Simplex => simplex_range(p, &active, pos)?,
        };
        let yd = p.treated_means[d];
        intervals[d] = Some(EffectInterval {
            level: d + 1,
            name: p.names[d].clone(),
            share: p.shares[d],
            treated_mean: yd,
            untreated_lo: y0_lo,
            untreated_hi: y0_hi,
            lo: yd - y0_hi,
            hi: yd - y0_lo,
            argmin: arg_hi,
            argmax: arg_lo,
        });
    }
    let uninformative = intervals.iter().flatten().any(|iv| !(iv.lo.is_finite() && iv.hi.is_finite()));
    Ok(BoundsResult { intervals, feasible: true, uninformative, shape: p.shape, support: p.support })
}

type Range = (f64, f64, Option<Vec<f64>>, Option<Vec<f64>>);

fn closed_form(p: &BoundsProblem, active: &[usize], pos: usize) -> Range {
    let (ylo, yhi) = p.support;
    let m = p.untreated_mean;
    let d = active[pos];
    let w = p.shares[d];
    let others: f64 = active.iter().filter(|&&k| k != d).map(|&k| p.shares[k]).sum();
    let (lo, hi) = if others == 0.0 {
        (m, m)
    } else {
        (ylo.max((m - others * yhi) / w), yhi.min((m - others * ylo) / w))
    };
    (lo, hi, fill_others(p, active, pos, lo), fill_others(p, active, pos, hi))
}

/// A feasible `Y^0` with the `pos`-th active entry fixed at `v`: the others
/// start at the lower support end and are raised in order until the
/// weighted-average constraint holds.
fn fill_others(p: &BoundsProblem, active: &[usize], pos: usize, v: f64) -> Option<Vec<f64>> {
    let (ylo, yhi) = p.support;
    if !v.is_finite() {
        return None;
    }
    let mut y: Vec<f64> = vec![ylo; active.len()];
    y[pos] = v;
    if active.len() == 1 {
        return Some(y);
    }
    if !ylo.is_finite() || !yhi.is_finite() {
        // Put the whole remainder on a single other level.
        let other = if pos == 0 { 1 } else { 0 };
        let rest_lo = if ylo.is_finite() { ylo } else if yhi.is_finite() { yhi } else { 0.0 };
        for (k, yk) in y.iter_mut().enumerate() {
            if k != pos {
                *yk = rest_lo;
            }
        }
        let fixed: f64 = active
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != other)
            .map(|(k, &d)| p.shares[d] * y[k])
            .sum();
        y[other] = (p.untreated_mean - fixed) / p.shares[active[other]];
        return Some(y);
    }
    let mut gap = p.untreated_mean - active.iter().zip(&y).map(|(&d, yk)| p.shares[d] * yk).sum::<f64>();
    for (k, &d) in active.iter().enumerate() {
        if k == pos || gap <= 0.0 {
            continue;
        }
        let raise = (gap / p.shares[d]).min(yhi - ylo);
        y[k] += raise;
        gap -= raise * p.shares[d];
    }
    Some(y)
}

fn base_lp(p: &BoundsProblem, active: &[usize]) -> LinearProgram {
    let n = active.len();
    let mut lp = LinearProgram::new(n);
    lp.lower = vec![p.support.0; n];
    lp.upper = vec![p.support.1; n];
    lp.add(active.iter().map(|&d| p.shares[d]).collect(), Relation::Eq, p.untreated_mean);
    if p.shape == Some(Shape::Decreasing) {
        // Y_{d+1}^0 - Y_d^0 >= Y_{d+1}^{d+1} - Y_d^d over consecutive active levels.
        for k in 1..n {
            let mut row = vec![0.0; n];
            row[k] = 1.0;
            row[k - 1] = -1.0;
            lp.add(row, Relation::Ge, p.treated_means[active[k]] - p.treated_means[active[k - 1]]);
        }
    }
    lp
}

fn simplex_range(p: &BoundsProblem, active: &[usize], pos: usize) -> Result<Range> {
    let mut lp = base_lp(p, active);
    lp.objective[pos] = 1.0;
    let (lo, arg_lo) = match lp.minimize() {
        LpOutcome::Optimal { x, value } => (value, Some(x)),
        LpOutcome::Unbounded => (f64::NEG_INFINITY, None),
        LpOutcome::Infeasible => return Err(Error::InfeasibleProblem("bounds program has no feasible point".into())),
    };
    let (hi, arg_hi) = match lp.maximize() {
        LpOutcome::Optimal { x, value } => (value, Some(x)),
        LpOutcome::Unbounded => (f64::INFINITY, None),
        LpOutcome::Infeasible => return Err(Error::InfeasibleProblem("bounds program has no feasible point".into())),
    };
    Ok((lo, hi, arg_lo, arg_hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `Y_d^d - Y_d^0 >= 0` for every level.
    NonNegative,
    /// `Y_d^d - Y_d^0 <= 0` for every level.
    NonPositive,
    /// `Y_d^d - Y_d^0 >= eps` for every level (the closed version of `> 0`).
    Positive(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct SignFeasibility {
    pub feasible: bool,
    pub direction: Direction,
    /// `Y^0` over active levels satisfying every constraint.
    pub witness: Option<Vec<f64>>,
    /// Range of `sum_d share_d Y_d^0` attainable under the support and
    /// sign constraints; infeasible iff the untreated mean lies outside.
    pub attainable: (f64, f64),
    /// Active level whose sign-restricted range of `Y_d^0` is empty.
    pub empty_level: Option<usize>,
}

/// Per-level range of `Y_d^0` under support and sign constraints.
fn signed_ranges(p: &BoundsProblem, active: &[usize], dir: Direction) -> Vec<(f64, f64)> {
    let (ylo, yhi) = p.support;
    active
        .iter()
        .map(|&d| {
            let yd = p.treated_means[d];
            match dir {
                Direction::NonNegative => (ylo, yhi.min(yd)),
                Direction::Positive(eps) => (ylo, yhi.min(yd - eps)),
                Direction::NonPositive => (ylo.max(yd), yhi),
            }
        })
        .collect()
}

pub fn joint_sign_feasible(p: &BoundsProblem, dir: Direction) -> Result<SignFeasibility> {
    p.validate()?;
    if let Direction::Positive(eps) = dir {
        if !(eps >= 0.0) {
            return Err(Error::InvalidTuning(format!("epsilon must be nonnegative, got {eps}")));
        }
    }
    if p.shape.is_some() {
        return joint_sign_feasible_lp(p, dir);
    }
    let active = p.active();
    let ranges = signed_ranges(p, &active, dir);
    if let Some(k) = ranges.iter().position(|(lo, hi)| lo > hi) {
        return Ok(SignFeasibility {
            feasible: false,
            direction: dir,
            witness: None,
            attainable: (f64::NAN, f64::NAN),
            empty_level: Some(active[k] + 1),
        });
    }
    let weighted = |f: fn(&(f64, f64)) -> f64| -> f64 {
        active.iter().zip(&ranges).map(|(&d, r)| p.shares[d] * f(r)).sum()
    };
    let attainable = (weighted(|r| r.0), weighted(|r| r.1));
    let m = p.untreated_mean;
    let feasible = attainable.0 <= m && m <= attainable.1;
    let witness = feasible.then(|| clamp_witness(p, &active, &ranges));
    Ok(SignFeasibility { feasible, direction: dir, witness, attainable, empty_level: None })
}

/// Solves `sum_d w_d clamp(c, lo_d, hi_d) = m` for the common level `c`; the
/// left side is continuous, piecewise linear and nondecreasing in `c`.
fn clamp_witness(p: &BoundsProblem, active: &[usize], ranges: &[(f64, f64)]) -> Vec<f64> {
    let m = p.untreated_mean;
    if ranges.iter().all(|&(lo, hi)| lo <= m && m <= hi) {
        return vec![m; ranges.len()];
    }
    let f = |c: f64| -> f64 {
        active.iter().zip(ranges).map(|(&d, &(lo, hi))| p.shares[d] * c.clamp(lo, hi)).sum()
    };
    let mut knots: Vec<f64> = ranges.iter().flat_map(|&(lo, hi)| [lo, hi]).filter(|v| v.is_finite()).collect();
    knots.push(m);
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup();
    let slope_below: f64 = active.iter().zip(ranges).filter(|(_, r)| r.0 == f64::NEG_INFINITY).map(|(&d, _)| p.shares[d]).sum();
    let slope_above: f64 = active.iter().zip(ranges).filter(|(_, r)| r.1 == f64::INFINITY).map(|(&d, _)| p.shares[d]).sum();
    let first = knots[0];
    let last = *knots.last().unwrap();
    let c = if m < f(first) {
        first - (f(first) - m) / slope_below
    } else if m > f(last) {
        last + (m - f(last)) / slope_above
    } else {
        let mut c = m;
        for pair in knots.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (fa, fb) = (f(a), f(b));
            if fa <= m && m <= fb {
                c = if fb > fa { a + (m - fa) * (b - a) / (fb - fa) } else { a };
                break;
            }
        }
        c
    };
    ranges.iter().map(|&(lo, hi)| c.clamp(lo, hi)).collect()
}

/// Feasibility through the simplex; the only route when a shape restriction
/// is present and a cross-check otherwise.
pub fn joint_sign_feasible_lp(p: &BoundsProblem, dir: Direction) -> Result<SignFeasibility> {
    p.validate()?;
    let active = p.active();
    let ranges = signed_ranges(p, &active, dir);
    let mut lp = base_lp(p, &active);
    let empty_level = ranges.iter().position(|(lo, hi)| lo > hi).map(|k| active[k] + 1);
    if empty_level.is_none() {
        lp.lower = ranges.iter().map(|r| r.0).collect();
        lp.upper = ranges.iter().map(|r| r.1).collect();
    }
    // Attainable range of the weighted average without the equality row.
    let mut relaxed = lp.clone();
    relaxed.constraints.remove(0);
    relaxed.objective = active.iter().map(|&d| p.shares[d]).collect();
    let attainable = if empty_level.is_some() {
        (f64::NAN, f64::NAN)
    } else {
        let lo = match relaxed.minimize() {
            LpOutcome::Optimal { value, .. } => value,
            LpOutcome::Unbounded => f64::NEG_INFINITY,
            LpOutcome::Infeasible => f64::NAN,
        };
        let hi = match relaxed.maximize() {
            LpOutcome::Optimal { value, .. } => value,
            LpOutcome::Unbounded => f64::INFINITY,
            LpOutcome::Infeasible => f64::NAN,
        };
        (lo, hi)
    };
    let witness = if empty_level.is_some() {
        None
    } else {
        match lp.minimize() {
            LpOutcome::Optimal { x, .. } => Some(x),
            _ => None,
        }
    };
    Ok(SignFeasibility { feasible: witness.is_some(), direction: dir, witness, attainable, empty_level })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level(treated: (f64, f64)) -> BoundsProblem {
        BoundsProblem::new(vec![0.5, 0.5], vec![treated.0, treated.1], 0.4, (0.0, 1.0)).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn two_level_example() {
        let r = effect_bounds(&two_level((0.7, 0.6))).unwrap();
        let i1 = r.intervals[0].as_ref().unwrap();
        let i2 = r.intervals[1].as_ref().unwrap();
        assert!(close(i1.lo, -0.1) && close(i1.hi, 0.7), "{i1:?}");
        assert!(close(i2.lo, -0.2) && close(i2.hi, 0.6), "{i2:?}");
        let arg = i1.argmin.as_ref().unwrap();
        assert!(close(0.5 * arg[0] + 0.5 * arg[1], 0.4));
        assert!(close(arg[0], 0.8));
    }

    #[test]
    fn single_type_is_point_identified() {
        let p = BoundsProblem::new(vec![1.0], vec![0.9], 0.25, (0.0, 1.0)).unwrap();
        let iv = effect_bounds(&p).unwrap().intervals[0].clone().unwrap();
        assert!(close(iv.lo, 0.65) && close(iv.hi, 0.65));
    }

    #[test]
    fn zero_share_level_skipped() {
        let p = BoundsProblem::new(vec![0.0, 1.0], vec![f64::NAN, 0.9], 0.25, (0.0, 1.0)).unwrap();
        let r = effect_bounds(&p).unwrap();
        assert!(r.intervals[0].is_none());
        assert!(close(r.intervals[1].as_ref().unwrap().lo, 0.65));
    }

    #[test]
    fn unbounded_support_is_uninformative() {
        let p = BoundsProblem::new(vec![0.5, 0.5], vec![0.7, 0.6], 0.4, (f64::NEG_INFINITY, f64::INFINITY)).unwrap();
        let r = effect_bounds(&p).unwrap();
        assert!(r.uninformative);
        let iv = r.intervals[0].as_ref().unwrap();
        assert_eq!((iv.lo, iv.hi), (f64::NEG_INFINITY, f64::INFINITY));
        let s = effect_bounds_with(&p, Solver::Simplex).unwrap();
        assert_eq!(s.intervals[1].as_ref().unwrap().lo, f64::NEG_INFINITY);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            BoundsProblem::new(vec![0.5, 0.4], vec![0.0, 0.0], 0.4, (0.0, 1.0)),
            Err(Error::InvalidShares(_))
        ));
        assert!(matches!(
            BoundsProblem::new(vec![0.5, 0.5], vec![0.0, 0.0], 1.4, (0.0, 1.0)),
            Err(Error::InfeasibleProblem(_))
        ));
        assert!(matches!(
            BoundsProblem::new(vec![1.5, -0.5], vec![0.0, 0.0], 0.4, (0.0, 1.0)),
            Err(Error::InvalidShares(_))
        ));
    }

    #[test]
    fn sign_examples() {
        let s = joint_sign_feasible(&two_level((0.7, 0.6)), Direction::NonNegative).unwrap();
        assert!(s.feasible);
        assert_eq!(s.witness.unwrap(), vec![0.4, 0.4]);

        let low = two_level((0.1, 0.1));
        let s = joint_sign_feasible(&low, Direction::NonNegative).unwrap();
        assert!(!s.feasible);
        assert!(close(s.attainable.1, 0.1));
        let s = joint_sign_feasible(&low, Direction::NonPositive).unwrap();
        assert!(s.feasible);
        assert_eq!(s.witness.unwrap(), vec![0.4, 0.4]);
    }

    #[test]
    fn witness_when_common_level_fails() {
        // m = 0.4 but level 1 must have Y^0 <= 0.2: witness puts more on level 2.
        let p = two_level((0.2, 0.9));
        let s = joint_sign_feasible(&p, Direction::NonNegative).unwrap();
        let w = s.witness.unwrap();
        assert!(close(0.5 * w[0] + 0.5 * w[1], 0.4));
        assert!(w[0] <= 0.2 + 1e-12 && w[1] <= 0.9 + 1e-12);
        assert!(joint_sign_feasible_lp(&p, Direction::NonNegative).unwrap().feasible);
    }

    #[test]
    fn strict_margin() {
        let p = two_level((0.4, 0.4));
        assert!(joint_sign_feasible(&p, Direction::NonNegative).unwrap().feasible);
        assert!(!joint_sign_feasible(&p, Direction::Positive(1e-6)).unwrap().feasible);
    }

    #[test]
    fn shape_restriction_tightens() {
        let p = BoundsProblem::new(vec![0.3, 0.3, 0.4], vec![0.8, 0.5, 0.6], 0.4, (0.0, 1.0)).unwrap();
        let free = effect_bounds(&p).unwrap();
        let lp = effect_bounds_with(&p, Solver::Simplex).unwrap();
        let shaped = effect_bounds(&p.clone().with_shape(Some(Shape::Decreasing))).unwrap();
        for d in 0..3 {
            let (a, b, c) = (
                free.intervals[d].as_ref().unwrap(),
                lp.intervals[d].as_ref().unwrap(),
                shaped.intervals[d].as_ref().unwrap(),
            );
            assert!((a.lo - b.lo).abs() < 1e-9 && (a.hi - b.hi).abs() < 1e-9);
            assert!(c.lo >= a.lo - 1e-9 && c.hi <= a.hi + 1e-9);
        }
    }
}
