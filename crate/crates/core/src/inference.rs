//! Variance-adjusted max statistic for moment inequalities and two
//! bootstrap critical values: two-step recentering (RSW) and two-step
//! moment selection (CCK).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::moments::MomentSet;
use crate::resample::{quantile_sorted, sort_finite, Resampler};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
pub enum Method {
    #[serde(rename = "RSW")]
    Rsw,
    #[serde(rename = "CCK")]
    Cck,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Rsw => "RSW",
            Method::Cck => "CCK",
        })
    }
}

/// Default first-step level.
pub fn default_beta(alpha: f64) -> f64 {
    alpha / 10.0
}

#[derive(Debug, Clone, Serialize)]
pub struct KsStatistic {
    pub value: f64,
    /// Indices of moments with zero variance and non-positive mean, left out of the max.
    pub excluded: Vec<usize>,
    /// A zero-variance moment with a positive mean: the null fails with certainty.
    pub deterministic_violation: bool,
}

/// `T_n = max(max_j sqrt(N) mean_j / sd_j, 0)` over moments with positive
/// variance. A zero-variance moment with positive mean makes `T_n` infinite.
pub fn ks_statistic(ms: &MomentSet) -> KsStatistic {
    let mut value = 0.0f64;
    let mut excluded = Vec::new();
    let mut violation = false;
    for (j, m) in ms.moments.iter().enumerate() {
        match m.studentized() {
            Some(t) => value = value.max(t),
            None if m.mean > 0.0 => violation = true,
            None => excluded.push(j),
        }
    }
    if violation {
        value = f64::INFINITY;
    }
    KsStatistic { value, excluded, deterministic_violation: violation }
}

/// Nonzero entries of one moment's contribution vector.
struct SparseColumn {
    idx: Vec<u32>,
    val: Vec<f64>,
}

/// Bootstrap means and standard deviations of the active moments, one row per replication.
struct Draws {
    active: Vec<usize>,
    replications: usize,
    n_star: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Draws {
    fn compute(ms: &MomentSet, active: Vec<usize>, replications: usize, seed: u64) -> Draws {
        let columns: Vec<SparseColumn> = active
            .iter()
            .map(|&j| {
                let c = &ms.moments[j].contributions;
                let idx: Vec<u32> = (0..c.len()).filter(|&i| c[i] != 0.0).map(|i| i as u32).collect();
                let val = idx.iter().map(|&i| c[i as usize]).collect();
                SparseColumn { idx, val }
            })
            .collect();
        let resampler = Resampler::new(ms.n, ms.clusters.as_deref());
        let p = active.len();
        let rows: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..replications)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream(seed, &[b as u64]);
                let counts = resampler.counts(&mut rng);
                let n_star: f64 = counts.iter().map(|&c| c as f64).sum();
                let mut means = Vec::with_capacity(p);
                let mut sds = Vec::with_capacity(p);
                for col in &columns {
                    let mut w_nz = 0.0;
                    let mut s1 = 0.0;
                    for (&i, &v) in col.idx.iter().zip(&col.val) {
                        let c = counts[i as usize] as f64;
                        w_nz += c;
                        s1 += c * v;
                    }
                    let mean = s1 / n_star;
                    let mut ss = (n_star - w_nz) * mean * mean;
                    for (&i, &v) in col.idx.iter().zip(&col.val) {
                        let c = counts[i as usize] as f64;
                        ss += c * (v - mean) * (v - mean);
                    }
                    means.push(mean);
                    sds.push(if n_star > 1.0 { (ss / (n_star - 1.0)).sqrt() } else { 0.0 });
                }
                (n_star, means, sds)
            })
            .collect();
        let mut out = Draws {
            active,
            replications,
            n_star: Vec::with_capacity(replications),
            means: Vec::with_capacity(replications * p),
            sds: Vec::with_capacity(replications * p),
        };
        for (n, m, s) in rows {
            out.n_star.push(n);
            out.means.extend(m);
            out.sds.extend(s);
        }
        out
    }

    /// Sorted `max_{k in subset} sign * sqrt(N*) (mean*_k - center_k) / sd*_k`
    /// over replications; `subset` indexes into `active`.
    fn max_distribution(&self, subset: &[usize], center: &[f64], sign: f64, fallback_sd: &[f64]) -> Vec<f64> {
        let p = self.active.len();
        let vals = (0..self.replications)
            .map(|b| {
                let root = self.n_star[b].sqrt();
                subset
                    .iter()
                    .map(|&k| {
                        let mut sd = self.sds[b * p + k];
                        if !(sd > 1e-12 * fallback_sd[k]) {
                            sd = fallback_sd[k];
                        }
                        sign * root * (self.means[b * p + k] - center[k]) / sd
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        sort_finite(vals)
    }
}

/// Empirical distribution of a bootstrapped statistic with type-1 quantiles.
#[derive(Debug, Clone, Serialize)]
pub struct QuantileFunction {
    pub sorted: Vec<f64>,
}

impl QuantileFunction {
    pub fn quantile(&self, tau: f64) -> f64 {
        quantile_sorted(&self.sorted, tau)
    }
}

/// Bootstrap distribution of `max_j sqrt(N*) (mean*_j - centering_j) / sd*_j`
/// over the moments with positive sample variance (cluster-aware when the
/// moment set carries cluster ids).
pub fn bootstrap_max_distribution(
    ms: &MomentSet,
    centering: &[f64],
    replications: usize,
    seed: u64,
) -> Result<QuantileFunction> {
    if replications < 1 {
        return Err(Error::InvalidTuning("need at least one bootstrap replication".into()));
    }
    if centering.len() != ms.len() {
        return Err(Error::InvalidData("centering vector has wrong length".into()));
    }
    let active: Vec<usize> = (0..ms.len()).filter(|&j| !ms.moments[j].is_degenerate()).collect();
    if active.is_empty() {
        return Err(Error::InvalidData("no moment has positive variance".into()));
    }
    let center: Vec<f64> = active.iter().map(|&j| centering[j]).collect();
    let sd: Vec<f64> = active.iter().map(|&j| ms.moments[j].sd).collect();
    let draws = Draws::compute(ms, active, replications, seed);
    let subset: Vec<usize> = (0..draws.active.len()).collect();
    Ok(QuantileFunction { sorted: draws.max_distribution(&subset, &center, 1.0, &sd) })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentDiagnostic {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub studentized: Option<f64>,
    /// RSW: the recentering value `min(mean + bound, 0)`.
    pub recentered: Option<f64>,
    /// CCK: whether the moment survived selection.
    pub selected: Option<bool>,
    pub excluded: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub method: Method,
    pub alpha: f64,
    pub beta_n: f64,
    #[serde(rename = "B")]
    pub replications: usize,
    pub seed: u64,
    /// RSW: quantile defining the simultaneous upper bounds; CCK: selection threshold `c_{1-beta}`.
    pub first_step_quantile: f64,
    pub num_moments: usize,
    pub num_active: usize,
    pub per_moment: Vec<MomentDiagnostic>,
    pub warnings: Vec<String>,
}

impl TestResult {
    /// Diagnostics of the `k` moments with the largest studentized values.
    pub fn most_violated(&self, k: usize) -> Vec<&MomentDiagnostic> {
        let mut v: Vec<&MomentDiagnostic> = self.per_moment.iter().filter(|m| m.studentized.is_some()).collect();
        v.sort_by(|a, b| b.studentized.partial_cmp(&a.studentized).unwrap());
        v.truncate(k);
        v
    }
}

/// Shared bootstrap draws for running both procedures on one moment set.
pub struct MomentTest<'a> {
    ms: &'a MomentSet,
    ks: KsStatistic,
    draws: Option<Draws>,
    replications: usize,
    seed: u64,
    warnings: Vec<String>,
}

impl<'a> MomentTest<'a> {
    pub fn new(ms: &'a MomentSet, replications: usize, seed: u64) -> Result<Self> {
        if replications < 1 {
            return Err(Error::InvalidTuning("need at least one bootstrap replication".into()));
        }
        let mut warnings = ms.warnings.clone();
        if replications < 100 {
            warnings.push(format!("InsufficientReplications: B={replications} < 100"));
        }
        let ks = ks_statistic(ms);
        let active: Vec<usize> = (0..ms.len()).filter(|&j| !ms.moments[j].is_degenerate()).collect();
        for &j in &ks.excluded {
            warnings.push(format!("moment `{}` has zero variance and is excluded", ms.moments[j].label));
        }
        let draws = (!active.is_empty()).then(|| Draws::compute(ms, active, replications, seed));
        Ok(MomentTest { ms, ks, draws, replications, seed, warnings })
    }

    pub fn statistic(&self) -> &KsStatistic {
        &self.ks
    }

    fn check_levels(alpha: f64, beta: f64, method: Method) -> Result<()> {
        if !(0.0 < beta && beta < alpha && alpha < 1.0) {
            return Err(Error::InvalidTuning(format!("need 0 < beta ({beta}) < alpha ({alpha}) < 1")));
        }
        if method == Method::Cck && 2.0 * beta >= alpha {
            return Err(Error::InvalidTuning(format!("CCK needs beta ({beta}) < alpha/2")));
        }
        Ok(())
    }

    fn base_diagnostics(&self) -> Vec<MomentDiagnostic> {
        self.ms
            .moments
            .iter()
            .enumerate()
            .map(|(j, m)| MomentDiagnostic {
                label: m.label.clone(),
                mean: m.mean,
                sd: m.sd,
                studentized: m.studentized(),
                recentered: None,
                selected: None,
                excluded: self.ks.excluded.contains(&j),
            })
            .collect()
    }

    fn finish(&self, method: Method, alpha: f64, beta: f64, cv: f64, first: f64, per_moment: Vec<MomentDiagnostic>) -> TestResult {
        let statistic = self.ks.value;
        TestResult {
            statistic,
            critical_value: cv,
            reject: statistic > cv,
            method,
            alpha,
            beta_n: beta,
            replications: self.replications,
            seed: self.seed,
            first_step_quantile: first,
            num_moments: self.ms.len(),
            num_active: self.draws.as_ref().map_or(0, |d| d.active.len()),
            per_moment,
            warnings: self.warnings.clone(),
        }
    }

    fn active_stats(&self, draws: &Draws) -> (Vec<f64>, Vec<f64>) {
        let means = draws.active.iter().map(|&j| self.ms.moments[j].mean).collect();
        let sds = draws.active.iter().map(|&j| self.ms.moments[j].sd).collect();
        (means, sds)
    }

    /// Two-step recentering: simultaneous `1-beta` upper bounds on every moment,
    /// recenter at `min(mean + bound, 0)`, critical value at level `1-alpha+beta`.
    pub fn rsw(&self, alpha: f64, beta: f64) -> Result<TestResult> {
        Self::check_levels(alpha, beta, Method::Rsw)?;
        let mut diag = self.base_diagnostics();
        let Some(draws) = &self.draws else {
            return Ok(self.finish(Method::Rsw, alpha, beta, 0.0, 0.0, diag));
        };
        let (means, sds) = self.active_stats(draws);
        let all: Vec<usize> = (0..means.len()).collect();
        let root_n = (self.ms.n as f64).sqrt();

        let step1 = draws.max_distribution(&all, &means, -1.0, &sds);
        let k1 = quantile_sorted(&step1, 1.0 - beta);
        let lambda: Vec<f64> = means.iter().zip(&sds).map(|(m, s)| (m + s * k1 / root_n).min(0.0)).collect();
        let center: Vec<f64> = means.iter().zip(&lambda).map(|(m, l)| m - l).collect();
        let step2 = draws.max_distribution(&all, &center, 1.0, &sds);
        let cv = quantile_sorted(&step2, 1.0 - alpha + beta).max(0.0);
        for (k, &j) in draws.active.iter().enumerate() {
            diag[j].recentered = Some(lambda[k]);
        }
        Ok(self.finish(Method::Rsw, alpha, beta, cv, k1, diag))
    }

    /// Two-step moment selection: keep moments with studentized value above
    /// `-2 c_{1-beta}`, critical value at level `1-alpha+2 beta` over the kept ones.
    pub fn cck(&self, alpha: f64, beta: f64) -> Result<TestResult> {
        Self::check_levels(alpha, beta, Method::Cck)?;
        let mut diag = self.base_diagnostics();
        let Some(draws) = &self.draws else {
            return Ok(self.finish(Method::Cck, alpha, beta, 0.0, 0.0, diag));
        };
        let (means, sds) = self.active_stats(draws);
        let all: Vec<usize> = (0..means.len()).collect();
        let root_n = (self.ms.n as f64).sqrt();

        let step1 = draws.max_distribution(&all, &means, 1.0, &sds);
        let c1 = quantile_sorted(&step1, 1.0 - beta);
        let selected: Vec<usize> = all.iter().copied().filter(|&k| root_n * means[k] / sds[k] > -2.0 * c1).collect();
        for (k, &j) in draws.active.iter().enumerate() {
            diag[j].selected = Some(selected.contains(&k));
        }
        let cv = if selected.is_empty() {
            0.0
        } else {
            let step2 = draws.max_distribution(&selected, &means, 1.0, &sds);
            quantile_sorted(&step2, 1.0 - alpha + 2.0 * beta).max(0.0)
        };
        Ok(self.finish(Method::Cck, alpha, beta, cv, c1, diag))
    }

    pub fn run(&self, method: Method, alpha: f64, beta: f64) -> Result<TestResult> {
        match method {
            Method::Rsw => self.rsw(alpha, beta),
            Method::Cck => self.cck(alpha, beta),
        }
    }
}

pub fn rsw_test(ms: &MomentSet, alpha: f64, replications: usize, beta: f64, seed: u64) -> Result<TestResult> {
    MomentTest::new(ms, replications, seed)?.rsw(alpha, beta)
}

pub fn cck_test(ms: &MomentSet, alpha: f64, replications: usize, beta: f64, seed: u64) -> Result<TestResult> {
    MomentTest::new(ms, replications, seed)?.cck(alpha, beta)
}
