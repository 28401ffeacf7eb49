//! Moment-inequality systems implied by extensive-margin-compliers-only,
//! stored as per-observation contributions in `<= 0` orientation.

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::p_hat;
use crate::resample::quantile_sorted;

/// A set of outcome values used to split the joint (Y, D) mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum OutcomeSet {
    /// Half-open interval `(lo, hi]`; `lo = -inf` makes it closed below.
    Interval { lo: f64, hi: f64 },
    /// Exact values.
    Values(Vec<f64>),
    /// The whole outcome support.
    Everything,
}

impl OutcomeSet {
    pub fn contains(&self, y: f64) -> bool {
        match self {
            OutcomeSet::Interval { lo, hi } => y > *lo && y <= *hi,
            OutcomeSet::Values(v) => v.contains(&y),
            OutcomeSet::Everything => true,
        }
    }

    /// Label with cut points rounded to six significant digits.
    pub fn label(&self) -> String {
        self.label_with(short)
    }

    fn label_with(&self, f: fn(f64) -> String) -> String {
        match self {
            OutcomeSet::Interval { lo, hi } if lo.is_infinite() => format!("Y<={}", f(*hi)),
            OutcomeSet::Interval { lo, hi } if hi.is_infinite() => format!("Y>{}", f(*lo)),
            OutcomeSet::Interval { lo, hi } => format!("{}<Y<={}", f(*lo), f(*hi)),
            OutcomeSet::Values(v) => {
                let vals: Vec<String> = v.iter().map(|&x| f(x)).collect();
                format!("Y in {{{}}}", vals.join(","))
            }
            OutcomeSet::Everything => "all Y".into(),
        }
    }
}

fn short(x: f64) -> String {
    let r: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    format!("{r}")
}

fn exact(x: f64) -> String {
    format!("{x}")
}

/// Labels for a partition; falls back to full precision when rounding
/// would make two labels equal.
fn set_labels(partition: &[OutcomeSet]) -> Vec<String> {
    let labels: Vec<String> = partition.iter().map(OutcomeSet::label).collect();
    let mut sorted = labels.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() == labels.len() {
        labels
    } else {
        partition.iter().map(|s| s.label_with(exact)).collect()
    }
}

/// Interval bins cut at the sample quantiles `1/k, ..., (k-1)/k` of `y`
/// (type-1 quantiles). Duplicate cut points collapse, so a discrete outcome
/// yields one bin per distinct value when it has at most `k` of them.
pub fn quantile_partition(y: &[f64], k: usize) -> Vec<OutcomeSet> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max = *sorted.last().unwrap();
    let mut cuts: Vec<f64> = (1..k)
        .map(|j| quantile_sorted(&sorted, j as f64 / k as f64))
        .filter(|&c| c < max)
        .collect();
    cuts.dedup();
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(cuts);
    edges.push(f64::INFINITY);
    edges.windows(2).map(|w| OutcomeSet::Interval { lo: w[0], hi: w[1] }).collect()
}

/// Default partition: outcome deciles.
pub fn decile_partition(y: &[f64]) -> Vec<OutcomeSet> {
    quantile_partition(y, 10)
}

/// Which restriction a moment encodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MomentKind {
    /// Treatment-level mass change, `Pr(D=d|Z=0) - Pr(D=d|Z=1)` for d>0 and the
    /// reverse at d=0.
    Level { level: usize },
    /// Joint mass of `D=d` and `Y in A`, same orientation as `Level`.
    Joint { level: usize, set: String },
    /// `Pr(D>=d|Z=0) - Pr(D>=d|Z=1)`.
    Cdf { level: usize },
    /// `-(dCDF(d) - dCDF(d+1))`.
    AdjacentCdf { level: usize },
    /// A base moment restricted to one covariate cell.
    Cell { base: Box<MomentKind>, cell: u32 },
}

#[derive(Debug, Clone, Serialize)]
pub struct Moment {
    pub label: String,
    pub kind: MomentKind,
    #[serde(skip)]
    pub contributions: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    /// The defining event matched no observation.
    pub empty: bool,
}

impl Moment {
    pub fn new(label: String, kind: MomentKind, contributions: Vec<f64>, empty: bool) -> Self {
        let (mean, sd) = mean_sd(&contributions);
        Moment { label, kind, contributions, mean, sd, empty }
    }

    /// `sqrt(N) * mean / sd`, or `None` when the sd is (numerically) zero.
    pub fn studentized(&self) -> Option<f64> {
        (!self.is_degenerate()).then(|| (self.contributions.len() as f64).sqrt() * self.mean / self.sd)
    }

    pub fn is_degenerate(&self) -> bool {
        let scale = self.contributions.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.sd <= 1e-12 * scale.max(f64::MIN_POSITIVE) || self.sd == 0.0
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Studentizable sample moments, all in `E[m_j] <= 0` orientation.
#[derive(Debug, Clone, Serialize)]
pub struct MomentSet {
    pub moments: Vec<Moment>,
    pub n: usize,
    /// Resampling units for the bootstrap.
    #[serde(skip)]
    pub clusters: Option<Vec<u32>>,
    pub warnings: Vec<String>,
}

impl MomentSet {
    pub fn new(n: usize, clusters: Option<Vec<u32>>) -> Self {
        MomentSet { moments: Vec::new(), n, clusters, warnings: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    pub fn push(&mut self, m: Moment) -> Result<()> {
        if m.contributions.len() != self.n {
            return Err(Error::InvalidData(format!("moment `{}` has wrong length", m.label)));
        }
        if self.moments.iter().any(|o| o.label == m.label) {
            return Err(Error::InvalidData(format!("duplicate moment label `{}`", m.label)));
        }
        self.moments.push(m);
        Ok(())
    }

    /// Concatenate two moment sets over the same observations.
    pub fn extend(&mut self, other: MomentSet) -> Result<()> {
        if other.n != self.n {
            return Err(Error::InvalidData("moment sets cover different samples".into()));
        }
        for m in other.moments {
            self.push(m)?;
        }
        self.warnings.extend(other.warnings);
        Ok(())
    }

    pub fn means(&self) -> Vec<f64> {
        self.moments.iter().map(|m| m.mean).collect()
    }

    pub fn get(&self, label: &str) -> Option<&Moment> {
        self.moments.iter().find(|m| m.label == label)
    }
}

/// Per-observation weights `(w1, w0) = (1/p, 1/(1-p))` applied to Z=1 and Z=0 rows.
fn arm_weights(data: &Dataset) -> (f64, f64) {
    let p = p_hat(data);
    (1.0 / p, 1.0 / (1.0 - p))
}

/// Contribution of an event indicator in the orientation for `level`:
/// positive levels measure `Pr(.|Z=0) - Pr(.|Z=1)`, level 0 the reverse.
fn oriented(event: bool, z: u8, level: usize, w1: f64, w0: f64) -> f64 {
    if !event {
        return 0.0;
    }
    let dec = if z == 1 { -w1 } else { w0 };
    if level == 0 {
        -dec
    } else {
        dec
    }
}

fn level_label(data: &Dataset, d: usize) -> String {
    format!("d={}", data.level_names()[d])
}

/// The full moment system: for every treatment level and every outcome set in
/// `partition` plus the whole support, the joint-mass inequality. The
/// whole-support rows are the level (treatment-mass) inequalities, so
/// `len = (dbar + 1) * (partition.len() + 1)`.
pub fn build_emco_moments(data: &Dataset, partition: &[OutcomeSet]) -> Result<MomentSet> {
    let (w1, w0) = arm_weights(data);
    let mut ms = MomentSet::new(data.n(), data.cluster_id().map(<[u32]>::to_vec));
    let y = data.outcome();
    let d = data.treatment();
    let z = data.instrument();

    for level in 0..data.num_levels() {
        let contrib: Vec<f64> = (0..data.n()).map(|i| oriented(d[i] == level, z[i], level, w1, w0)).collect();
        let empty = !d.contains(&level);
        ms.push(Moment::new(level_label(data, level), MomentKind::Level { level }, contrib, empty))?;
    }
    for (set, set_label) in partition.iter().zip(set_labels(partition)) {
        let members: Vec<bool> = y.iter().map(|&v| set.contains(v)).collect();
        if !members.iter().any(|&m| m) {
            ms.warnings.push(format!("outcome set `{set_label}` matches no observation"));
        }
        for level in 0..data.num_levels() {
            let mut hit = false;
            let contrib: Vec<f64> = (0..data.n())
                .map(|i| {
                    let event = d[i] == level && members[i];
                    hit |= event;
                    oriented(event, z[i], level, w1, w0)
                })
                .collect();
            ms.push(Moment::new(
                format!("{} & {}", level_label(data, level), set_label),
                MomentKind::Joint { level, set: set_label.clone() },
                contrib,
                !hit,
            ))?;
        }
    }
    Ok(ms)
}

/// Treatment-CDF monotonicity moments `Pr(D>=d|Z=0) - Pr(D>=d|Z=1) <= 0`
/// for `d = 1..=dbar`, plus their adjacent differences, which coincide with
/// the positive-level mass moments.
pub fn build_late_cdf_moments(data: &Dataset) -> Result<MomentSet> {
    let (w1, w0) = arm_weights(data);
    let mut ms = MomentSet::new(data.n(), data.cluster_id().map(<[u32]>::to_vec));
    let d = data.treatment();
    let z = data.instrument();
    let cdf = |level: usize| -> Vec<f64> {
        (0..data.n()).map(|i| oriented(d[i] >= level, z[i], level.max(1), w1, w0)).collect()
    };
    let dbar = data.dbar();
    let cdfs: Vec<Vec<f64>> = (1..=dbar + 1).map(cdf).collect();
    for level in 1..=dbar {
        ms.push(Moment::new(
            format!("D>={}", data.level_names()[level]),
            MomentKind::Cdf { level },
            cdfs[level - 1].clone(),
            false,
        ))?;
    }
    for level in 1..=dbar {
        // (Pr0(D>=d) - Pr1(D>=d)) - (Pr0(D>=d+1) - Pr1(D>=d+1)), the sign-flipped
        // adjacent difference.
        let contrib: Vec<f64> = cdfs[level - 1].iter().zip(&cdfs[level]).map(|(a, b)| a - b).collect();
        ms.push(Moment::new(
            format!("D>={} minus D>={}", data.level_names()[level], level + 1),
            MomentKind::AdjacentCdf { level },
            contrib,
            !d.contains(&level),
        ))?;
    }
    Ok(ms)
}

/// Replicate each moment per covariate cell, multiplying contributions by
/// the cell indicator. `cells[i]` is observation `i`'s cell.
pub fn interact_with_covariates(ms: &MomentSet, cells: &[u32]) -> Result<MomentSet> {
    if cells.len() != ms.n {
        return Err(Error::InvalidData("cell ids have wrong length".into()));
    }
    let mut ids: Vec<u32> = cells.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() == 1 {
        return Ok(ms.clone());
    }
    let mut out = MomentSet::new(ms.n, ms.clusters.clone());
    out.warnings = ms.warnings.clone();
    for m in &ms.moments {
        for &cell in &ids {
            let mut hit = false;
            let contrib: Vec<f64> = m
                .contributions
                .iter()
                .zip(cells)
                .map(|(&v, &c)| {
                    if c == cell {
                        hit |= v != 0.0;
                        v
                    } else {
                        0.0
                    }
                })
                .collect();
            if !hit {
                out.warnings.push(format!("moment `{}` is identically zero in cell {cell}", m.label));
            }
            out.push(Moment::new(
                format!("{} | cell={cell}", m.label),
                MomentKind::Cell { base: Box::new(m.kind.clone()), cell },
                contrib,
                !hit,
            ))?;
        }
    }
    Ok(out)
}

/// Dense cell ids from strata and/or the distinct value combinations of the
/// covariates; `None` if the dataset has neither.
pub fn covariate_cells(data: &Dataset, use_strata: bool, use_covariates: bool) -> Option<Vec<u32>> {
    let mut keys: Vec<Vec<u64>> = vec![Vec::new(); data.n()];
    let mut any = false;
    if use_strata {
        if let Some(s) = data.strata_id() {
            any = true;
            for (k, &v) in keys.iter_mut().zip(s) {
                k.push(v as u64);
            }
        }
    }
    if use_covariates {
        if let Some(c) = data.covariates() {
            any = true;
            for col in &c.columns {
                for (k, &v) in keys.iter_mut().zip(col) {
                    k.push(v.to_bits());
                }
            }
        }
    }
    if !any {
        return None;
    }
    let mut distinct = keys.clone();
    distinct.sort();
    distinct.dedup();
    Some(keys.iter().map(|k| distinct.binary_search(k).unwrap() as u32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::new(
            vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0],
            &[0.0, 1.0, 2.0, 2.0, 0.0, 1.0, 1.0, 0.0],
            vec![1, 1, 1, 1, 0, 0, 0, 0],
        )
        .unwrap()
    }

    #[test]
    fn count_and_nesting() {
        let data = small();
        let part = vec![OutcomeSet::Values(vec![0.0]), OutcomeSet::Values(vec![1.0])];
        let ms = build_emco_moments(&data, &part).unwrap();
        assert_eq!(ms.len(), 3 * 3);
        // Sets partition the support: joint contributions sum to the level ones.
        for level in 0..3 {
            let lvl = &ms.moments[level];
            for i in 0..data.n() {
                let s: f64 = ms.moments.iter().filter(|m| matches!(m.kind, MomentKind::Joint { level: l, .. } if l == level)).map(|m| m.contributions[i]).sum();
                assert_eq!(s, lvl.contributions[i]);
            }
        }
        // Level d=1 mean: Pr(D=1|Z=0) - Pr(D=1|Z=1) = 0.5 - 0.25.
        assert!((ms.moments[1].mean - 0.25).abs() < 1e-15);
        // Level d=0 mean: Pr(D=0|Z=1) - Pr(D=0|Z=0) = 0.25 - 0.5.
        assert!((ms.moments[0].mean + 0.25).abs() < 1e-15);
    }

    #[test]
    fn whole_support_set_equals_level() {
        let data = small();
        let ms = build_emco_moments(&data, &[OutcomeSet::Everything]).unwrap();
        for level in 0..3 {
            assert_eq!(ms.moments[level].contributions, ms.moments[3 + level].contributions);
        }
    }

    #[test]
    fn empty_set_flagged() {
        let data = small();
        let ms = build_emco_moments(&data, &[OutcomeSet::Values(vec![7.0])]).unwrap();
        assert!(ms.moments[3..].iter().all(|m| m.empty && m.sd == 0.0));
        assert_eq!(ms.warnings.len(), 1);
    }

    #[test]
    fn adjacent_cdf_equals_level() {
        let data = small();
        let cdf = build_late_cdf_moments(&data).unwrap();
        let lvl = build_emco_moments(&data, &[]).unwrap();
        for level in 1..=2 {
            let adj = cdf.moments.iter().find(|m| m.kind == MomentKind::AdjacentCdf { level }).unwrap();
            assert_eq!(adj.contributions, lvl.moments[level].contributions);
        }
    }

    #[test]
    fn defier_mass_violates_cdf() {
        // Z=1 arm: D = 0,0,1 ; Z=0 arm: D = 2,2,0. Pr(D>=2) drops with Z.
        let data = Dataset::new(vec![0.0; 6], &[0.0, 0.0, 1.0, 2.0, 2.0, 0.0], vec![1, 1, 1, 0, 0, 0]).unwrap();
        let cdf = build_late_cdf_moments(&data).unwrap();
        let m = cdf.get("D>=2").unwrap();
        assert!((m.mean - 2.0 / 3.0).abs() < 1e-12);
        assert!(m.mean > 0.0);
    }

    #[test]
    fn decile_partition_of_binary_outcome() {
        let y: Vec<f64> = (0..100).map(|i| if i < 70 { 0.0 } else { 1.0 }).collect();
        let part = decile_partition(&y);
        assert_eq!(part.len(), 2);
        assert!(part[0].contains(0.0) && !part[0].contains(1.0));
        assert!(part[1].contains(1.0));
    }

    #[test]
    fn ties_go_to_lower_bin() {
        let y: Vec<f64> = (1..=20).map(f64::from).collect();
        let part = decile_partition(&y);
        assert_eq!(part.len(), 10);
        // 2.0 is the first cut point and belongs to the first bin.
        assert!(part[0].contains(2.0));
        assert!(!part[1].contains(2.0));
        for v in &y {
            assert_eq!(part.iter().filter(|s| s.contains(*v)).count(), 1);
        }
    }

    #[test]
    fn single_cell_interaction_is_identity() {
        let data = small();
        let ms = build_emco_moments(&data, &[]).unwrap();
        let out = interact_with_covariates(&ms, &vec![4; data.n()]).unwrap();
        assert_eq!(out.len(), ms.len());
        assert_eq!(out.moments[0].contributions, ms.moments[0].contributions);
    }

    #[test]
    fn interaction_multiplies_count() {
        let data = small();
        let ms = build_emco_moments(&data, &[]).unwrap();
        let cells = vec![0, 1, 0, 1, 0, 1, 0, 2];
        let out = interact_with_covariates(&ms, &cells).unwrap();
        assert_eq!(out.len(), 3 * ms.len());
        // Summing cells recovers the base contributions.
        for (k, m) in ms.moments.iter().enumerate() {
            for i in 0..data.n() {
                let s: f64 = (0..3).map(|c| out.moments[3 * k + c].contributions[i]).sum();
                assert_eq!(s, m.contributions[i]);
            }
        }
    }
}
