//! Wald-type point estimators, complier shares and means, kappa weighting,
//! covariate adjustment and cluster-bootstrap standard errors.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::resample::{quantile_sorted, sort_finite, Resampler};
use crate::rng::stream;

/// Differences of arm means `E[f|Z=1] - E[f|Z=0]` for many functions at once.
fn arm_diffs(data: &Dataset, f: impl Fn(usize) -> f64) -> f64 {
    let mut sum = [0.0; 2];
    let mut cnt = [0usize; 2];
    for i in 0..data.n() {
        let z = data.instrument()[i] as usize;
        sum[z] += f(i);
        cnt[z] += 1;
    }
    sum[1] / cnt[1] as f64 - sum[0] / cnt[0] as f64
}

/// Sample share of `Z = 1`.
pub fn p_hat(data: &Dataset) -> f64 {
    data.instrument().iter().filter(|&&z| z == 1).count() as f64 / data.n() as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstStage {
    /// `Pr(D=d|Z=1) - Pr(D=d|Z=0)` for `d = 0..=dbar`.
    pub delta_pr: Vec<f64>,
    /// `Pr(D>=d|Z=1) - Pr(D>=d|Z=0)` for `d = 0..=dbar` (entry 0 is zero).
    pub delta_cdf: Vec<f64>,
    pub delta_mean: f64,
    pub delta_any: f64,
    pub p_hat: f64,
    pub arm_sizes: [usize; 2],
}

impl FirstStage {
    /// Weights on the unit-dose effects recovered by the raw-treatment Wald
    /// ratio, proportional to `Pr(D>=d|Z=1) - Pr(D>=d|Z=0)`, for `d = 1..=dbar`.
    pub fn acr_weights(&self) -> Vec<f64> {
        let total: f64 = self.delta_cdf[1..].iter().sum();
        self.delta_cdf[1..].iter().map(|w| w / total).collect()
    }
}

pub fn first_stage_diffs(data: &Dataset) -> Result<FirstStage> {
    let levels = data.num_levels();
    let mut counts = vec![[0usize; 2]; levels];
    let mut sum_d = [0.0; 2];
    for (&d, &z) in data.treatment().iter().zip(data.instrument()) {
        counts[d][z as usize] += 1;
        sum_d[z as usize] += d as f64;
    }
    let arm = [
        counts.iter().map(|c| c[0]).sum::<usize>(),
        counts.iter().map(|c| c[1]).sum::<usize>(),
    ];
    for z in 0..2 {
        if arm[z] == 0 {
            return Err(Error::DegenerateArm(z as u8));
        }
    }
    let pr = |d: usize, z: usize| counts[d][z] as f64 / arm[z] as f64;
    let delta_pr: Vec<f64> = (0..levels).map(|d| pr(d, 1) - pr(d, 0)).collect();
    let mut delta_cdf = vec![0.0; levels];
    for (d, slot) in delta_cdf.iter_mut().enumerate().skip(1) {
        let ge = |z: usize| counts[d..].iter().map(|c| c[z]).sum::<usize>() as f64 / arm[z] as f64;
        *slot = ge(1) - ge(0);
    }
    Ok(FirstStage {
        delta_any: delta_cdf[1],
        delta_pr,
        delta_cdf,
        delta_mean: sum_d[1] / arm[1] as f64 - sum_d[0] / arm[0] as f64,
        p_hat: arm[1] as f64 / data.n() as f64,
        arm_sizes: arm,
    })
}

/// Outcome side of a Wald ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OutcomeTransform {
    Y,
    /// `Y * 1(D = d)`
    YAtLevel(usize),
    /// `Y * 1(D > 0)`
    YAnyTreatment,
}

/// Endogenous side of a Wald ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EndoTransform {
    RawD,
    /// `1(D > 0)`
    AnyTreatment,
    /// `1(D = d)`
    Indicator(usize),
    /// `1(D >= d)`
    AtLeast(usize),
}

impl OutcomeTransform {
    pub fn eval(self, y: f64, d: usize) -> f64 {
        match self {
            OutcomeTransform::Y => y,
            OutcomeTransform::YAtLevel(l) => if d == l { y } else { 0.0 },
            OutcomeTransform::YAnyTreatment => if d > 0 { y } else { 0.0 },
        }
    }
}

impl EndoTransform {
    pub fn eval(self, d: usize) -> f64 {
        match self {
            EndoTransform::RawD => d as f64,
            EndoTransform::AnyTreatment => f64::from(u8::from(d > 0)),
            EndoTransform::Indicator(l) => f64::from(u8::from(d == l)),
            EndoTransform::AtLeast(l) => f64::from(u8::from(d >= l)),
        }
    }

    fn describe(self) -> String {
        match self {
            EndoTransform::RawD => "D".into(),
            EndoTransform::AnyTreatment => "1(D>0)".into(),
            EndoTransform::Indicator(l) => format!("1(D={l})"),
            EndoTransform::AtLeast(l) => format!("1(D>={l})"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WaldEstimate {
    pub value: f64,
    pub reduced_form: f64,
    pub first_stage: f64,
    pub se: Option<f64>,
    pub n: usize,
}

pub fn wald(data: &Dataset, outcome: OutcomeTransform, endo: EndoTransform) -> Result<WaldEstimate> {
    let y = data.outcome();
    let d = data.treatment();
    let reduced_form = arm_diffs(data, |i| outcome.eval(y[i], d[i]));
    let first_stage = arm_diffs(data, |i| endo.eval(d[i]));
    if first_stage == 0.0 {
        return Err(Error::ZeroFirstStage(endo.describe()));
    }
    Ok(WaldEstimate {
        value: reduced_form / first_stage,
        reduced_form,
        first_stage,
        se: None,
        n: data.n(),
    })
}

/// Heteroskedasticity-robust (HC0) standard error of the just-identified IV
/// estimator with an intercept, `sqrt(sum (Z-Zbar)^2 u^2) / |sum (Z-Zbar)(D-Dbar)|`.
pub fn wald_robust_se(data: &Dataset, outcome: OutcomeTransform, endo: EndoTransform) -> Result<f64> {
    let est = wald(data, outcome, endo)?;
    let n = data.n() as f64;
    let y: Vec<f64> = (0..data.n())
        .map(|i| outcome.eval(data.outcome()[i], data.treatment()[i]))
        .collect();
    let x: Vec<f64> = data.treatment().iter().map(|&d| endo.eval(d)).collect();
    let z: Vec<f64> = data.instrument().iter().map(|&z| z as f64).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (ybar, xbar, zbar) = (mean(&y), mean(&x), mean(&z));
    let intercept = ybar - est.value * xbar;
    let mut meat = 0.0;
    let mut bread = 0.0;
    for i in 0..data.n() {
        let u = y[i] - intercept - est.value * x[i];
        let zc = z[i] - zbar;
        meat += zc * zc * u * u;
        bread += zc * (x[i] - xbar);
    }
    Ok(meat.sqrt() / bread.abs())
}

/// Treated mean of one complier type, flagged when its first stage is not positive.
#[derive(Debug, Clone, Serialize)]
pub struct LevelMean {
    pub level: usize,
    pub name: String,
    pub first_stage: f64,
    pub reduced_form: f64,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionSes {
    pub beta_recoded: f64,
    pub untreated_mean_pooled: f64,
    pub treated_means: Vec<Option<f64>>,
    pub shares: Vec<f64>,
    pub replications: usize,
    pub failed_replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplierDecomposition {
    pub beta_recoded: f64,
    /// Complier shares for `d = 1..=dbar`.
    pub shares: Vec<f64>,
    pub total_complier_share: f64,
    /// Treated means for `d = 1..=dbar`.
    pub treated_means: Vec<LevelMean>,
    pub untreated_mean_pooled: f64,
    pub ses: Option<DecompositionSes>,
}

impl ComplierDecomposition {
    /// `sum_d share_d * treated_mean_d - untreated_mean`, using the raw ratios
    /// so it is defined even where a level's first stage is not positive.
    /// A level with an exactly zero first stage contributes `RF_d / delta_any`,
    /// the limit of `share_d * RF_d / first_stage_d`.
    pub fn reconstructed_recoded(&self) -> f64 {
        let treated: f64 = self
            .treated_means
            .iter()
            .zip(&self.shares)
            .map(|(m, w)| {
                if m.first_stage == 0.0 {
                    m.reduced_form / self.total_complier_share
                } else {
                    w * (m.reduced_form / m.first_stage)
                }
            })
            .sum();
        treated - self.untreated_mean_pooled
    }

    fn as_vector(&self) -> Vec<f64> {
        let mut v = vec![self.beta_recoded, self.untreated_mean_pooled];
        v.extend(self.treated_means.iter().map(|m| m.mean.unwrap_or(f64::NAN)));
        v.extend(&self.shares);
        v
    }
}

pub fn complier_decomposition(data: &Dataset) -> Result<ComplierDecomposition> {
    let fs = first_stage_diffs(data)?;
    if fs.delta_any == 0.0 {
        return Err(Error::ZeroFirstStage("1(D>0)".into()));
    }
    let y = data.outcome();
    let d = data.treatment();
    let recoded = wald(data, OutcomeTransform::Y, EndoTransform::AnyTreatment)?;
    let untreated_rf = arm_diffs(data, |i| OutcomeTransform::YAtLevel(0).eval(y[i], d[i]));
    let treated_means = (1..=data.dbar())
        .map(|level| {
            let rf = arm_diffs(data, |i| OutcomeTransform::YAtLevel(level).eval(y[i], d[i]));
            let fsd = fs.delta_pr[level];
            LevelMean {
                level,
                name: data.level_names()[level].clone(),
                first_stage: fsd,
                reduced_form: rf,
                mean: (fsd > 0.0).then(|| rf / fsd),
            }
        })
        .collect();
    Ok(ComplierDecomposition {
        beta_recoded: recoded.value,
        shares: fs.delta_pr[1..].iter().map(|p| p / fs.delta_any).collect(),
        total_complier_share: fs.delta_any,
        treated_means,
        untreated_mean_pooled: untreated_rf / fs.delta_pr[0],
        ses: None,
    })
}

/// Decomposition with cluster-bootstrap standard errors attached.
pub fn complier_decomposition_with_se(
    data: &Dataset,
    replications: usize,
    seed: u64,
) -> Result<ComplierDecomposition> {
    let mut dec = complier_decomposition(data)?;
    let summaries = cluster_bootstrap(data, |s| Ok(complier_decomposition(s)?.as_vector()), replications, seed)?;
    let k = data.dbar();
    let failed = summaries[0].failed;
    dec.ses = Some(DecompositionSes {
        beta_recoded: summaries[0].se,
        untreated_mean_pooled: summaries[1].se,
        treated_means: (0..k)
            .map(|j| {
                let s = &summaries[2 + j];
                (dec.treated_means[j].mean.is_some() && s.used >= 2).then_some(s.se)
            })
            .collect(),
        shares: (0..k).map(|j| summaries[2 + k + j].se).collect(),
        replications,
        failed_replications: failed,
        seed,
    });
    Ok(dec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KappaVariant {
    /// Weights for functions of `(Y, 1(D>0), X)` over all compliers.
    AllCompliers,
    /// Weights isolating `d`-type compliers' treated outcomes.
    Level(usize),
    /// Weights isolating compliers' untreated outcomes.
    Untreated,
}

/// Kappa-weighted complier mean of `g` (evaluated per observation by the
/// caller), normalized by the estimated complier share. `Pr(Z=1)` is the sample share.
pub fn kappa_estimate(data: &Dataset, g: &[f64], variant: KappaVariant) -> Result<f64> {
    assert_eq!(g.len(), data.n(), "g must have one value per observation");
    let fs = first_stage_diffs(data)?;
    let p = fs.p_hat;
    let q = 1.0 - p;
    let n = data.n() as f64;
    let mut acc = 0.0;
    for i in 0..data.n() {
        let z = data.instrument()[i] as f64;
        let d = data.treatment()[i];
        let any = f64::from(u8::from(d > 0));
        let kappa = match variant {
            KappaVariant::AllCompliers => 1.0 - (1.0 - any) * z / p - any * (1.0 - z) / q,
            KappaVariant::Level(l) => f64::from(u8::from(d == l)) * (z - p) / (q * p),
            KappaVariant::Untreated => (1.0 - any) * ((1.0 - z) - q) / (q * p),
        };
        acc += kappa * g[i];
    }
    let share = match variant {
        KappaVariant::AllCompliers | KappaVariant::Untreated => fs.delta_any,
        KappaVariant::Level(l) => {
            if l == 0 || l > data.dbar() {
                return Err(Error::InvalidData(format!("kappa level {l} out of range")));
            }
            fs.delta_pr[l]
        }
    };
    if share == 0.0 {
        return Err(Error::ZeroFirstStage(format!("{variant:?}")));
    }
    Ok(acc / n / share)
}

/// Mean of each covariate among `d`-type compliers, `[covariate][d-1]`;
/// `None` where the level's first stage is not positive.
pub fn complier_covariate_means(data: &Dataset) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let Some(cov) = data.covariates() else {
        return Ok(Vec::new());
    };
    let fs = first_stage_diffs(data)?;
    cov.names
        .iter()
        .zip(&cov.columns)
        .map(|(name, col)| {
            let means = (1..=data.dbar())
                .map(|l| {
                    if fs.delta_pr[l] > 0.0 {
                        kappa_estimate(data, col, KappaVariant::Level(l)).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((name.clone(), means))
        })
        .collect()
}

/// Control matrix: intercept (unless a covariate is already constant),
/// covariates, and strata dummies with the first stratum dropped.
pub fn control_matrix(data: &Dataset) -> DMatrix<f64> {
    let n = data.n();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let has_constant = data
        .covariates()
        .map(|c| c.columns.iter().any(|col| col.iter().all(|&v| v == col[0])))
        .unwrap_or(false);
    if !has_constant {
        cols.push(vec![1.0; n]);
    }
    if let Some(c) = data.covariates() {
        cols.extend(c.columns.iter().cloned());
    }
    if let Some(strata) = data.strata_id() {
        let mut ids: Vec<u32> = strata.to_vec();
        ids.sort_unstable();
        ids.dedup();
        for &s in ids.iter().skip(1) {
            cols.push(strata.iter().map(|&v| f64::from(u8::from(v == s))).collect());
        }
    }
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let qr = m.clone().col_piv_qr();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    if k == 0 {
        return 0;
    }
    let scale = r[(0, 0)].abs();
    (0..k).filter(|&i| r[(i, i)].abs() > 1e-10 * scale.max(1e-300)).count()
}

fn ensure_full_rank(w: &DMatrix<f64>) -> Result<()> {
    let rank = numeric_rank(w);
    if rank < w.ncols() {
        return Err(Error::RankDeficientCovariates { rank, cols: w.ncols() });
    }
    Ok(())
}

/// Covariate-adjusted Wald ratio via residualized instrument:
/// `sum Z~ T / sum Z~ D~` where `Z~` is the residual of `Z` on the controls.
pub fn fwl_adjust(data: &Dataset, outcome: OutcomeTransform, endo: EndoTransform) -> Result<WaldEstimate> {
    let w = control_matrix(data);
    ensure_full_rank(&w)?;
    let z = DVector::from_iterator(data.n(), data.instrument().iter().map(|&v| v as f64));
    let wtw = w.transpose() * &w;
    let chol = wtw
        .cholesky()
        .ok_or(Error::RankDeficientCovariates { rank: 0, cols: w.ncols() })?;
    let gamma = chol.solve(&(w.transpose() * &z));
    let z_res = &z - &w * gamma;
    let zz: f64 = z_res.dot(&z_res);
    if zz <= 1e-12 * data.n() as f64 {
        return Err(Error::ZeroFirstStage("instrument is collinear with controls".into()));
    }
    let y = data.outcome();
    let d = data.treatment();
    let mut rf = 0.0;
    let mut fs = 0.0;
    for i in 0..data.n() {
        rf += z_res[i] * outcome.eval(y[i], d[i]);
        fs += z_res[i] * endo.eval(d[i]);
    }
    let (rf, fs) = (rf / zz, fs / zz);
    if fs == 0.0 {
        return Err(Error::ZeroFirstStage(endo.describe()));
    }
    Ok(WaldEstimate { value: rf / fs, reduced_form: rf, first_stage: fs, se: None, n: data.n() })
}

/// Same estimand as [`fwl_adjust`], computed from the `Z` coefficients of two
/// full OLS regressions on `[Z, controls]`.
pub fn fwl_direct(data: &Dataset, outcome: OutcomeTransform, endo: EndoTransform) -> Result<WaldEstimate> {
    let w = control_matrix(data);
    ensure_full_rank(&w)?;
    let n = data.n();
    let k = w.ncols();
    let m = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { data.instrument()[i] as f64 } else { w[(i, j - 1)] });
    let mtm = m.transpose() * &m;
    let lu = mtm.lu();
    let coef_on_z = |t: DVector<f64>| -> Result<f64> {
        let sol = lu
            .solve(&(m.transpose() * t))
            .ok_or(Error::ZeroFirstStage("instrument is collinear with controls".into()))?;
        Ok(sol[0])
    };
    let y = data.outcome();
    let d = data.treatment();
    let rf = coef_on_z(DVector::from_fn(n, |i, _| outcome.eval(y[i], d[i])))?;
    let fs = coef_on_z(DVector::from_fn(n, |i, _| endo.eval(d[i])))?;
    if fs == 0.0 {
        return Err(Error::ZeroFirstStage(endo.describe()));
    }
    Ok(WaldEstimate { value: rf / fs, reduced_form: rf, first_stage: fs, se: None, n })
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapSummary {
    pub estimate: f64,
    pub se: f64,
    /// 95% percentile interval.
    pub lo: f64,
    pub hi: f64,
    /// Replications where this entry was defined.
    pub used: usize,
    /// Replications where the statistic could not be computed at all.
    pub failed: usize,
}

/// Cluster nonparametric bootstrap of a vector-valued statistic. Replication
/// `b` uses its own RNG stream derived from `(seed, b)`, so the result is the
/// same for any thread count. Resamples where `stat` errors are counted as
/// failed; NaN entries are skipped per coordinate.
pub fn cluster_bootstrap<F>(data: &Dataset, stat: F, replications: usize, seed: u64) -> Result<Vec<BootstrapSummary>>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    if replications < 2 {
        return Err(Error::InvalidTuning("bootstrap needs at least 2 replications".into()));
    }
    let estimate = stat(data)?;
    let resampler = Resampler::new(data.n(), data.cluster_id());
    let draws: Vec<Option<Vec<f64>>> = (0..replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, &[b as u64]);
            let idx = resampler.indices(&mut rng);
            data.select(&idx).and_then(|s| stat(&s)).ok()
        })
        .collect();
    let failed = draws.iter().filter(|d| d.is_none()).count();
    Ok(estimate
        .iter()
        .enumerate()
        .map(|(j, &est)| {
            let vals: Vec<f64> = draws.iter().flatten().map(|v| v[j]).collect();
            let sorted = sort_finite(vals);
            let used = sorted.len();
            let (se, lo, hi) = if used >= 2 {
                let mean = sorted.iter().sum::<f64>() / used as f64;
                let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (used - 1) as f64;
                (var.sqrt(), quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975))
            } else {
                (f64::NAN, f64::NAN, f64::NAN)
            };
            BootstrapSummary { estimate: est, se, lo, hi, used, failed }
        })
        .collect())
}

/// Scalar convenience wrapper around [`cluster_bootstrap`].
pub fn cluster_bootstrap_se<F>(data: &Dataset, stat: F, replications: usize, seed: u64) -> Result<BootstrapSummary>
where
    F: Fn(&Dataset) -> Result<f64> + Sync,
{
    let mut out = cluster_bootstrap(data, |d| Ok(vec![stat(d)?]), replications, seed)?;
    Ok(out.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Covariates, Dataset};

    fn four_rows() -> Dataset {
        // Z=1: (Y=2,D=1), (Y=0,D=0); Z=0: (Y=1,D=0), (Y=3,D=0)
        Dataset::new(vec![2.0, 0.0, 1.0, 3.0], &[1.0, 0.0, 0.0, 0.0], vec![1, 1, 0, 0]).unwrap()
    }

    #[test]
    fn hand_enumerated_decomposition() {
        let dec = complier_decomposition(&four_rows()).unwrap();
        assert_eq!(dec.shares, vec![1.0]);
        assert_eq!(dec.treated_means[0].mean, Some(2.0));
        // Untreated: (E[Y1(D=0)|Z=1]-E[Y1(D=0)|Z=0]) / (Pr(D=0|Z=1)-Pr(D=0|Z=0)) = (0-2)/(-0.5)
        assert_eq!(dec.untreated_mean_pooled, 4.0);
        assert_eq!(dec.beta_recoded, (1.0 - 2.0) / 0.5);
        assert!((dec.reconstructed_recoded() - dec.beta_recoded).abs() < 1e-12);
    }

    #[test]
    fn wald_formula_plug() {
        // E[Y|Z=1]=2, E[Y|Z=0]=1, E[D|Z=1]=1.5, E[D|Z=0]=1.0
        let data = Dataset::new(
            vec![2.0, 2.0, 1.0, 1.0],
            &[1.0, 2.0, 1.0, 1.0],
            vec![1, 1, 0, 0],
        )
        .unwrap();
        let w = wald(&data, OutcomeTransform::Y, EndoTransform::RawD).unwrap();
        assert_eq!(w.value, 2.0);
    }

    #[test]
    fn zero_first_stage_is_error() {
        let data = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 0.0, 1.0], vec![0, 0, 1, 1]).unwrap();
        let err = wald(&data, OutcomeTransform::Y, EndoTransform::RawD).unwrap_err();
        assert!(matches!(err, Error::ZeroFirstStage(_)));
        assert!(complier_decomposition(&data).is_err());
    }

    /// Population enumerated as integer replicate counts: never takers at 0,
    /// always takers at 1 and 2, compliers 0->1, 0->2 and 1->2, all with
    /// Y = base + tau * D.
    #[test]
    fn constant_effect_recovered_by_acr() {
        let tau = 0.75;
        // (count, d0, d1, base)
        let types = [(30, 0, 0, 1.0), (10, 1, 1, -0.5), (15, 2, 2, 2.0), (12, 0, 1, 0.3), (8, 0, 2, 1.1), (9, 1, 2, -1.0)];
        let mut y = Vec::new();
        let mut d = Vec::new();
        let mut z = Vec::new();
        for &(count, d0, d1, base) in &types {
            for zz in 0..2u8 {
                let dd = if zz == 1 { d1 } else { d0 };
                for _ in 0..count {
                    y.push(base + tau * dd as f64);
                    d.push(dd as f64);
                    z.push(zz);
                }
            }
        }
        let data = Dataset::new(y, &d, z).unwrap();
        let w = wald(&data, OutcomeTransform::Y, EndoTransform::RawD).unwrap();
        assert!((w.value - tau).abs() < 1e-12, "{}", w.value);
        let fs = first_stage_diffs(&data).unwrap();
        let weights = fs.acr_weights();
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_stage_sums_to_zero() {
        let fs = first_stage_diffs(&four_rows()).unwrap();
        assert!(fs.delta_pr.iter().sum::<f64>().abs() < 1e-15);
        assert_eq!(fs.delta_any, 0.5);
    }

    #[test]
    fn kappa_normalizations() {
        let data = Dataset::new(
            vec![1.0, 2.0, 0.5, 3.0, 1.5, 2.5, 0.0, 4.0],
            &[0.0, 1.0, 2.0, 2.0, 0.0, 0.0, 1.0, 0.0],
            vec![1, 1, 1, 1, 0, 0, 0, 0],
        )
        .unwrap();
        let ones = vec![1.0; data.n()];
        let v = kappa_estimate(&data, &ones, KappaVariant::Untreated).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let v = kappa_estimate(&data, &ones, KappaVariant::AllCompliers).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let dec = complier_decomposition(&data).unwrap();
        let v = kappa_estimate(&data, data.outcome(), KappaVariant::Level(2)).unwrap();
        assert!((v - dec.treated_means[1].mean.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fwl_intercept_only_equals_unadjusted() {
        let data = four_rows();
        let a = fwl_adjust(&data, OutcomeTransform::Y, EndoTransform::AnyTreatment).unwrap();
        let b = wald(&data, OutcomeTransform::Y, EndoTransform::AnyTreatment).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn fwl_orthogonal_covariate_equals_unadjusted() {
        // x is balanced across arms, so it is orthogonal to Z after demeaning.
        let data = Dataset::new(
            vec![2.0, 0.0, 1.0, 3.0, 1.0, 2.5],
            &[1.0, 0.0, 0.0, 0.0, 2.0, 1.0],
            vec![1, 1, 1, 0, 0, 0],
        )
        .unwrap()
        .with_covariates(Covariates { names: vec!["x".into()], columns: vec![vec![1.0, 2.0, 3.0, 3.0, 2.0, 1.0]] })
        .unwrap();
        let a = fwl_adjust(&data, OutcomeTransform::Y, EndoTransform::RawD).unwrap();
        let b = wald(&data, OutcomeTransform::Y, EndoTransform::RawD).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_controls() {
        let data = four_rows()
            .with_covariates(Covariates {
                names: vec!["a".into(), "b".into()],
                columns: vec![vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 8.0]],
            })
            .unwrap();
        let err = fwl_adjust(&data, OutcomeTransform::Y, EndoTransform::AnyTreatment).unwrap_err();
        assert!(matches!(err, Error::RankDeficientCovariates { .. }));
    }

    #[test]
    fn bootstrap_of_constant_is_degenerate() {
        let data = four_rows();
        let s = cluster_bootstrap_se(&data, |_| Ok(3.5), 50, 1).unwrap();
        assert_eq!(s.se, 0.0);
        assert_eq!((s.lo, s.hi), (3.5, 3.5));
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let data = Dataset::new(
            (0..40).map(|i| (i as f64 * 0.37).sin()).collect(),
            &(0..40).map(|i| (i % 3) as f64).collect::<Vec<_>>(),
            (0..40).map(|i| (i % 2) as u8).collect(),
        )
        .unwrap();
        let f = |d: &Dataset| Ok(d.outcome().iter().sum::<f64>() / d.n() as f64);
        let a = cluster_bootstrap_se(&data, f, 200, 9).unwrap();
        let b = cluster_bootstrap_se(&data, f, 200, 9).unwrap();
        assert_eq!(a.se.to_bits(), b.se.to_bits());
        assert_eq!(a.lo.to_bits(), b.lo.to_bits());
    }
}
