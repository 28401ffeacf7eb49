//! Synthetic data: the four-type binary-outcome design used for the
//! size/power study, the two-factor hurdle selection model, exact
//! population values for both, and the rejection-rate harness.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::inference::{default_beta, Method, MomentTest};
use crate::moments::{build_emco_moments, quantile_partition, OutcomeSet};
use crate::rng::{derive_seed, stream};

const SHARE_TOL: f64 = 1e-12;

/// How non-compliers are spread over the three treatment levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// `a = Pr(D(0)=0)`, `b = Pr(D(0)=1)`; non-complier level masses are
    /// `a - ext1 - ext2`, `b - int`, `1 - a - b`.
    Explicit { a: f64, b: f64 },
    /// Non-compliers sit at each level with equal probability.
    EqualLevels,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub baseline: Baseline,
    pub delta_ext1: f64,
    pub delta_ext2: f64,
    pub delta_int: f64,
    /// Intensive compliers draw `Y ~ Bernoulli(base_y_prob + delta_y)`.
    pub delta_y: f64,
    pub base_y_prob: f64,
    pub z_prob: f64,
    pub n_obs: usize,
    pub n_sims: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            baseline: Baseline::EqualLevels,
            delta_ext1: 0.1,
            delta_ext2: 0.1,
            delta_int: 0.0,
            delta_y: 0.0,
            base_y_prob: 0.3,
            z_prob: 0.5,
            n_obs: 1000,
            n_sims: 1000,
            seed: 0,
        }
    }
}

/// Latent type of a unit in the four-type design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum UnitType {
    NeverShifted(u8),
    Extensive1,
    Extensive2,
    Intensive,
}

impl UnitType {
    /// `(D(0), D(1))`.
    pub fn potential(self) -> (u8, u8) {
        match self {
            UnitType::NeverShifted(d) => (d, d),
            UnitType::Extensive1 => (0, 1),
            UnitType::Extensive2 => (0, 2),
            UnitType::Intensive => (1, 2),
        }
    }
}

impl SimConfig {
    /// Sets `delta_int` so intensive compliers make up `share` of all
    /// compliers, keeping the extensive shares fixed.
    pub fn with_intensive_share(mut self, share: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&share) {
            return Err(Error::InvalidShares(format!("intensive share must lie in [0, 1), got {share}")));
        }
        self.delta_int = share * (self.delta_ext1 + self.delta_ext2) / (1.0 - share);
        Ok(self)
    }

    pub fn intensive_share(&self) -> f64 {
        let total = self.delta_ext1 + self.delta_ext2 + self.delta_int;
        if total > 0.0 {
            self.delta_int / total
        } else {
            0.0
        }
    }

    pub fn noncomplier_share(&self) -> f64 {
        1.0 - self.delta_ext1 - self.delta_ext2 - self.delta_int
    }

    /// Population mass of non-compliers at each level.
    pub fn noncomplier_levels(&self) -> [f64; 3] {
        match self.baseline {
            Baseline::Explicit { a, b } => {
                [a - self.delta_ext1 - self.delta_ext2, b - self.delta_int, 1.0 - a - b]
            }
            Baseline::EqualLevels => [self.noncomplier_share() / 3.0; 3],
        }
    }

    pub fn type_shares(&self) -> Vec<(UnitType, f64)> {
        let nc = self.noncomplier_levels();
        vec![
            (UnitType::NeverShifted(0), nc[0]),
            (UnitType::NeverShifted(1), nc[1]),
            (UnitType::NeverShifted(2), nc[2]),
            (UnitType::Extensive1, self.delta_ext1),
            (UnitType::Extensive2, self.delta_ext2),
            (UnitType::Intensive, self.delta_int),
        ]
    }

    pub fn y_prob(&self, t: UnitType) -> f64 {
        match t {
            UnitType::Intensive => self.base_y_prob + self.delta_y,
            _ => self.base_y_prob,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta_ext1", self.delta_ext1),
            ("delta_ext2", self.delta_ext2),
            ("delta_int", self.delta_int),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidShares(format!("{name} = {v} is not a share")));
            }
        }
        for (t, s) in self.type_shares() {
            if s < -SHARE_TOL {
                return Err(Error::InvalidShares(format!("implied share of {t} is {s}")));
            }
        }
        if self.noncomplier_share() < -SHARE_TOL {
            return Err(Error::InvalidShares("complier shares exceed one".into()));
        }
        for (name, p) in [
            ("base_y_prob", self.base_y_prob),
            ("base_y_prob + delta_y", self.base_y_prob + self.delta_y),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidShares(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.z_prob > 0.0 && self.z_prob < 1.0) {
            return Err(Error::InvalidShares(format!("z_prob = {} must lie in (0, 1)", self.z_prob)));
        }
        if self.n_obs < 2 {
            return Err(Error::InvalidShares("n_obs must be at least 2".into()));
        }
        Ok(())
    }
}

impl fmt::Display for UnitType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitType::NeverShifted(d) => write!(f, "non-complier at {d}"),
            UnitType::Extensive1 => write!(f, "0->1 complier"),
            UnitType::Extensive2 => write!(f, "0->2 complier"),
            UnitType::Intensive => write!(f, "1->2 complier"),
        }
    }
}

/// A generated sample with its latent types.
#[derive(Debug, Clone)]
pub struct TypedDraw {
    pub data: Dataset,
    pub types: Vec<UnitType>,
}

impl TypedDraw {
    pub fn count(&self, t: UnitType) -> usize {
        self.types.iter().filter(|&&u| u == t).count()
    }
}

/// Draw `draw` of the four-type design, seeded by `(cfg.seed, draw)`.
pub fn generate_table1(cfg: &SimConfig, draw: u64) -> Result<TypedDraw> {
    generate_table1_with(cfg, &mut stream(cfg.seed, &[draw]))
}

/// Complier types get exactly `floor(share * n)` units; the rest are
/// non-compliers whose level is drawn from the non-complier level masses.
pub fn generate_table1_with(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<TypedDraw> {
    cfg.validate()?;
    let n = cfg.n_obs;
    let mut types = Vec::with_capacity(n);
    for (t, share) in [
        (UnitType::Extensive1, cfg.delta_ext1),
        (UnitType::Extensive2, cfg.delta_ext2),
        (UnitType::Intensive, cfg.delta_int),
    ] {
        let k = ((share * n as f64) + 1e-9).floor() as usize;
        types.extend(std::iter::repeat_n(t, k));
    }
    if types.len() > n {
        return Err(Error::InvalidShares("complier shares exceed one".into()));
    }
    let nc = cfg.noncomplier_levels();
    let nc_total: f64 = nc.iter().sum();
    while types.len() < n {
        let u: f64 = rng.gen::<f64>() * nc_total;
        let level = if u < nc[0] {
            0
        } else if u < nc[0] + nc[1] {
            1
        } else {
            2
        };
        types.push(UnitType::NeverShifted(level));
    }
    types.shuffle(rng);

    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for &t in &types {
        let zi = u8::from(rng.gen::<f64>() < cfg.z_prob);
        let (d0, d1) = t.potential();
        let yi = f64::from(u8::from(rng.gen::<f64>() < cfg.y_prob(t)));
        z.push(zi);
        d.push(usize::from(if zi == 1 { d1 } else { d0 }));
        y.push(yi);
    }
    let data = Dataset::from_levels(y, d, z, vec![0.0, 1.0, 2.0], vec!["0".into(), "1".into(), "2".into()])?;
    Ok(TypedDraw { data, types })
}

/// Three parts of the reduced form of `Y 1(D=d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReducedFormParts {
    /// Shifted into `d` from zero.
    pub extensive_in: f64,
    /// Shifted into `d` from a positive level.
    pub intensive_in: f64,
    /// Shifted out of `d` to a higher level.
    pub intensive_out: f64,
}

impl ReducedFormParts {
    pub fn total(&self) -> f64 {
        self.extensive_in + self.intensive_in - self.intensive_out
    }
}

/// Exact population quantities of the four-type design.
#[derive(Debug, Clone, Serialize)]
pub struct PopulationOracle {
    pub config: SimConfig,
    /// `Pr(D=d|Z=1) - Pr(D=d|Z=0)`, `d = 0, 1, 2`.
    pub delta_pr: [f64; 3],
    /// `Pr(D=d, Y=1|Z=1) - Pr(D=d, Y=1|Z=0)`.
    pub delta_joint_y1: [f64; 3],
    pub delta_mean_y: f64,
    pub delta_mean_d: f64,
    pub beta_acr: f64,
    pub beta_recoded: f64,
    /// Complier shares of levels 1 and 2.
    pub shares: [f64; 2],
    /// Ratio `dE[Y 1(D=d)] / dPr(D=d)` for levels 1 and 2 (a true complier
    /// mean only when there are no intensive compliers).
    pub treated_means: [Option<f64>; 2],
    pub untreated_mean: f64,
    pub reduced_form_parts: [ReducedFormParts; 3],
}

pub fn population_oracle(cfg: &SimConfig) -> Result<PopulationOracle> {
    cfg.validate()?;
    let (e1, e2, int) = (cfg.delta_ext1, cfg.delta_ext2, cfg.delta_int);
    let py = cfg.base_y_prob;
    let pi = cfg.base_y_prob + cfg.delta_y;
    // Non-compliers and Z-invariant outcomes cancel in every difference.
    let delta_pr = [-(e1 + e2), e1 - int, e2 + int];
    let delta_joint_y1 = [-py * (e1 + e2), py * e1 - pi * int, py * e2 + pi * int];
    let delta_mean_y = 0.0;
    let delta_mean_d = delta_pr[1] + 2.0 * delta_pr[2];
    let any = delta_pr[1] + delta_pr[2];
    let ratio = |num: f64, den: f64| if den == 0.0 { f64::NAN } else { num / den };
    let parts = [
        ReducedFormParts { extensive_in: 0.0, intensive_in: 0.0, intensive_out: py * (e1 + e2) },
        ReducedFormParts { extensive_in: py * e1, intensive_in: 0.0, intensive_out: pi * int },
        ReducedFormParts { extensive_in: py * e2, intensive_in: pi * int, intensive_out: 0.0 },
    ];
    Ok(PopulationOracle {
        config: cfg.clone(),
        delta_pr,
        delta_joint_y1,
        delta_mean_y,
        delta_mean_d,
        beta_acr: ratio(delta_mean_y, delta_mean_d),
        beta_recoded: ratio(delta_mean_y, any),
        shares: [ratio(delta_pr[1], any), ratio(delta_pr[2], any)],
        treated_means: [
            (delta_pr[1] > 0.0).then(|| delta_joint_y1[1] / delta_pr[1]),
            (delta_pr[2] > 0.0).then(|| delta_joint_y1[2] / delta_pr[2]),
        ],
        untreated_mean: ratio(delta_joint_y1[0], delta_pr[0]),
        reduced_form_parts: parts,
    })
}

impl PopulationOracle {
    /// `Pr(D=d, Y in A|Z=1) - Pr(D=d, Y in A|Z=0)` for a binary outcome.
    pub fn delta_joint(&self, level: usize, set: &OutcomeSet) -> f64 {
        let has1 = set.contains(1.0);
        let has0 = set.contains(0.0);
        let y1 = self.delta_joint_y1[level];
        let y0 = self.delta_pr[level] - y1;
        f64::from(u8::from(has1)) * y1 + f64::from(u8::from(has0)) * y0
    }

    /// Population value of the moment for `(level, set)` in the `<= 0`
    /// orientation used by `build_emco_moments`.
    pub fn moment(&self, level: usize, set: &OutcomeSet) -> f64 {
        let diff = self.delta_joint(level, set);
        if level == 0 {
            diff
        } else {
            -diff
        }
    }

    /// Every moment in `build_emco_moments` order for the given partition.
    pub fn moments(&self, partition: &[OutcomeSet]) -> Vec<f64> {
        let mut out: Vec<f64> = (0..3).map(|d| self.moment(d, &OutcomeSet::Everything)).collect();
        for set in partition {
            out.extend((0..3).map(|d| self.moment(d, set)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Copula {
    Independent,
    Gaussian { rho: f64 },
}

/// `Y(d) = level_means[d] + ext_loading * U_ext + int_loading * U_int + noise_sd * e`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeModel {
    pub level_means: Vec<f64>,
    pub ext_loading: f64,
    pub int_loading: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HurdleConfig {
    pub pi0_z0: f64,
    pub pi0_z1: f64,
    /// `pi_1 = 1 >= pi_2 >= ... >= pi_{dbar+1} = 0`.
    pub pi: Vec<f64>,
    pub copula: Copula,
    pub outcome: OutcomeModel,
    pub z_prob: f64,
}

impl HurdleConfig {
    /// Thresholds giving levels `1..=dbar` the intensity masses `masses`.
    pub fn from_masses(pi0_z0: f64, pi0_z1: f64, masses: &[f64], outcome: OutcomeModel) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if masses.iter().any(|m| *m < 0.0) || total <= 0.0 {
            return Err(Error::InvalidHurdle("level masses must be nonnegative and not all zero".into()));
        }
        let mut pi = vec![1.0];
        let mut acc = 1.0;
        for m in &masses[..masses.len() - 1] {
            acc -= m / total;
            pi.push(acc.max(0.0));
        }
        pi.push(0.0);
        let cfg = HurdleConfig { pi0_z0, pi0_z1, pi, copula: Copula::Independent, outcome, z_prob: 0.5 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dbar(&self) -> usize {
        self.pi.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.pi0_z0) || !in_unit(self.pi0_z1) {
            return Err(Error::InvalidHurdle("participation thresholds must lie in [0, 1]".into()));
        }
        if self.pi0_z1 > self.pi0_z0 {
            return Err(Error::InvalidHurdle(format!(
                "pi0(1) = {} exceeds pi0(0) = {}; the instrument must not lower participation",
                self.pi0_z1, self.pi0_z0
            )));
        }
        if self.pi.len() < 2 || self.pi[0] != 1.0 || *self.pi.last().unwrap() != 0.0 {
            return Err(Error::InvalidHurdle("pi must start at 1 and end at 0".into()));
        }
        if self.pi.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidHurdle("pi must be weakly decreasing".into()));
        }
        if self.outcome.level_means.len() != self.dbar() + 1 {
            return Err(Error::InvalidHurdle(format!(
                "outcome model has {} level means for {} levels",
                self.outcome.level_means.len(),
                self.dbar() + 1
            )));
        }
        if let Copula::Gaussian { rho } = self.copula {
            if !(rho > -1.0 && rho < 1.0) {
                return Err(Error::InvalidHurdle(format!("copula correlation {rho} must lie in (-1, 1)")));
            }
        }
        if !(self.z_prob > 0.0 && self.z_prob < 1.0) {
            return Err(Error::InvalidHurdle("z_prob must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Level chosen at instrument value `z` for latent draws `(u_ext, u_int)`.
    pub fn choice(&self, z: u8, u_ext: f64, u_int: f64) -> usize {
        let pi0 = if z == 1 { self.pi0_z1 } else { self.pi0_z0 };
        if u_ext <= pi0 {
            return 0;
        }
        // pi_{d+1} <= u < pi_d; u_int = 1 falls in level 1.
        (1..=self.dbar()).find(|&d| self.pi[d] <= u_int).unwrap_or(self.dbar())
    }

    fn draw_latent(&self, rng: &mut ChaCha8Rng, normal: &Normal) -> (f64, f64) {
        match self.copula {
            Copula::Independent => (rng.gen(), rng.gen()),
            Copula::Gaussian { rho } => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let c = rho * a + (1.0 - rho * rho).sqrt() * b;
                (normal.cdf(a), normal.cdf(c))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct HurdleDraw {
    pub data: Dataset,
    pub u_ext: Vec<f64>,
    pub u_int: Vec<f64>,
    pub d0: Vec<usize>,
    pub d1: Vec<usize>,
}

impl HurdleDraw {
    /// Units with `D(1) > D(0) > 0`.
    pub fn intensive_compliers(&self) -> usize {
        self.d0.iter().zip(&self.d1).filter(|&(&a, &b)| b > a && a > 0).count()
    }

    /// Units with `D(1) < D(0)`.
    pub fn defiers(&self) -> usize {
        self.d0.iter().zip(&self.d1).filter(|&(&a, &b)| b < a).count()
    }
}

pub fn generate_hurdle(cfg: &HurdleConfig, n: usize, seed: u64) -> Result<HurdleDraw> {
    cfg.validate()?;
    let mut rng = stream(seed, &[]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let dbar = cfg.dbar();
    let mut out = HurdleDraw {
        data: Dataset::from_levels(vec![0.0, 0.0], vec![0, 0], vec![0, 1], vec![0.0, 1.0], vec!["0".into(), "1".into()])?,
        u_ext: Vec::with_capacity(n),
        u_int: Vec::with_capacity(n),
        d0: Vec::with_capacity(n),
        d1: Vec::with_capacity(n),
    };
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let om = &cfg.outcome;
    for _ in 0..n {
        let (ue, ui) = cfg.draw_latent(&mut rng, &normal);
        let zi = u8::from(rng.gen::<f64>() < cfg.z_prob);
        let d0 = cfg.choice(0, ue, ui);
        let d1 = cfg.choice(1, ue, ui);
        let di = if zi == 1 { d1 } else { d0 };
        let noise: f64 = if om.noise_sd > 0.0 { om.noise_sd * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        y.push(om.level_means[di] + om.ext_loading * ue + om.int_loading * ui + noise);
        d.push(di);
        z.push(zi);
        out.u_ext.push(ue);
        out.u_int.push(ui);
        out.d0.push(d0);
        out.d1.push(d1);
    }
    let labels: Vec<f64> = (0..=dbar).map(|l| l as f64).collect();
    let names = (0..=dbar).map(|l| l.to_string()).collect();
    out.data = Dataset::from_levels(y, d, z, labels, names)?;
    Ok(out)
}

/// Complier quantities implied by a hurdle configuration.
#[derive(Debug, Clone, Serialize)]
pub struct HurdleTruth {
    pub complier_share: f64,
    /// `d = 1..=dbar`.
    pub shares: Vec<f64>,
    pub treated_means: Vec<Option<f64>>,
    pub untreated_mean: f64,
    pub beta_recoded: f64,
    /// `d = 0..=dbar`.
    pub delta_pr: Vec<f64>,
}

/// Mass and first moments of `(U_ext, U_int)` over a rectangle
/// `(a, b] x [c, d)` of the unit square.
fn rectangle_moments(copula: Copula, a: f64, b: f64, c: f64, d: f64) -> (f64, f64, f64) {
    if b <= a || d <= c {
        return (0.0, 0.0, 0.0);
    }
    match copula {
        Copula::Independent => {
            let mass = (b - a) * (d - c);
            (mass, mass * (a + b) / 2.0, mass * (c + d) / 2.0)
        }
        Copula::Gaussian { rho } => {
            // Midpoint rule on the copula density.
            const K: usize = 1200;
            let normal = Normal::new(0.0, 1.0).unwrap();
            let s = 1.0 - rho * rho;
            let hu = (b - a) / K as f64;
            let hv = (d - c) / K as f64;
            let xs: Vec<(f64, f64)> = (0..K)
                .map(|i| {
                    let u = a + (i as f64 + 0.5) * hu;
                    (u, normal.inverse_cdf(u))
                })
                .collect();
            let ys: Vec<(f64, f64)> = (0..K)
                .map(|j| {
                    let v = c + (j as f64 + 0.5) * hv;
                    (v, normal.inverse_cdf(v))
                })
                .collect();
            let (mut mass, mut mu, mut mv) = (0.0, 0.0, 0.0);
            for &(u, x) in &xs {
                for &(v, y) in &ys {
                    let dens = ((2.0 * rho * x * y - rho * rho * (x * x + y * y)) / (2.0 * s)).exp() / s.sqrt();
                    mass += dens;
                    mu += dens * u;
                    mv += dens * v;
                }
            }
            let cell = hu * hv;
            (mass * cell, mu * cell, mv * cell)
        }
    }
}

pub fn hurdle_truth(cfg: &HurdleConfig) -> Result<HurdleTruth> {
    cfg.validate()?;
    let dbar = cfg.dbar();
    let om = &cfg.outcome;
    let (a, b) = (cfg.pi0_z1, cfg.pi0_z0);
    let complier_share = b - a;
    let mut shares = Vec::with_capacity(dbar);
    let mut treated_means = Vec::with_capacity(dbar);
    let (mut tot_ue, mut tot_ui, mut tot_mass) = (0.0, 0.0, 0.0);
    let mut delta_pr = vec![-complier_share];
    for d in 1..=dbar {
        let (mass, eu, ev) = rectangle_moments(cfg.copula, a, b, cfg.pi[d], cfg.pi[d - 1]);
        tot_mass += mass;
        tot_ue += eu;
        tot_ui += ev;
        delta_pr.push(mass);
        shares.push(if complier_share > 0.0 { mass / complier_share } else { f64::NAN });
        treated_means.push(
            (mass > 0.0).then(|| om.level_means[d] + om.ext_loading * eu / mass + om.int_loading * ev / mass),
        );
    }
    let untreated_mean = if tot_mass > 0.0 {
        om.level_means[0] + om.ext_loading * tot_ue / tot_mass + om.int_loading * tot_ui / tot_mass
    } else {
        f64::NAN
    };
    let treated: f64 = shares.iter().zip(&treated_means).filter_map(|(w, m)| m.map(|m| w * m)).sum();
    Ok(HurdleTruth {
        complier_share,
        shares,
        treated_means,
        untreated_mean,
        beta_recoded: treated - untreated_mean,
        delta_pr,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerCell {
    pub cell: usize,
    pub config: SimConfig,
    pub method: Method,
    pub rejections: usize,
    pub completed: usize,
    pub failed: usize,
    pub rate: f64,
    /// Binomial standard error of `rate`.
    pub se: f64,
    pub mean_statistic: f64,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "B")]
    pub replications: usize,
    pub seed: u64,
    pub cells: Vec<PowerCell>,
}

impl SimResult {
    pub fn rate(&self, cell: usize, method: Method) -> Option<&PowerCell> {
        self.cells.iter().find(|c| c.cell == cell && c.method == method)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "cell", "method", "baseline", "delta_ext1", "delta_ext2", "delta_int", "intensive_share", "delta_y",
            "n_obs", "n_sims", "completed", "failed", "rejections", "rate", "se", "mean_statistic",
        ])?;
        for c in &self.cells {
            let cfg = &c.config;
            let baseline = match cfg.baseline {
                Baseline::Explicit { a, b } => format!("a={a};b={b}"),
                Baseline::EqualLevels => "equal".into(),
            };
            out.write_record([
                c.cell.to_string(),
                c.method.to_string(),
                baseline,
                cfg.delta_ext1.to_string(),
                cfg.delta_ext2.to_string(),
                cfg.delta_int.to_string(),
                format!("{:.6}", cfg.intensive_share()),
                cfg.delta_y.to_string(),
                cfg.n_obs.to_string(),
                cfg.n_sims.to_string(),
                c.completed.to_string(),
                c.failed.to_string(),
                c.rejections.to_string(),
                format!("{:.6}", c.rate),
                format!("{:.6}", c.se),
                format!("{:.6}", c.mean_statistic),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PowerSettings {
    pub alpha: f64,
    pub beta: Option<f64>,
    pub replications: usize,
    pub seed: u64,
    /// Number of quantile bins for the outcome partition.
    pub outcome_bins: usize,
}

impl PowerSettings {
    pub fn new(alpha: f64, replications: usize, seed: u64) -> Self {
        PowerSettings { alpha, beta: None, replications, seed, outcome_bins: 10 }
    }
}

/// Rejection rates per grid cell and method. Simulation `s` of cell `c`
/// draws its data from `(seed, c, s, 0)` and its bootstrap from
/// `(seed, c, s, 1)`; all methods see the same data and bootstrap draws.
pub fn power_curve(grid: &[SimConfig], methods: &[Method], settings: &PowerSettings) -> Result<SimResult> {
    if grid.is_empty() {
        return Err(Error::Config("power grid is empty".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no test method selected".into()));
    }
    let beta = settings.beta.unwrap_or_else(|| default_beta(settings.alpha));
    let jobs: Vec<(usize, usize)> =
        grid.iter().enumerate().flat_map(|(c, cfg)| (0..cfg.n_sims).map(move |s| (c, s))).collect();
    let outcomes: Vec<std::result::Result<Vec<(bool, f64)>, String>> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let cfg = &grid[c];
            let run = || -> Result<Vec<(bool, f64)>> {
                let mut rng = stream(settings.seed, &[c as u64, s as u64, 0]);
                let draw = generate_table1_with(cfg, &mut rng)?;
                let partition = quantile_partition(draw.data.outcome(), settings.outcome_bins);
                let ms = build_emco_moments(&draw.data, &partition)?;
                let boot_seed = derive_seed(settings.seed, &[c as u64, s as u64, 1]);
                let test = MomentTest::new(&ms, settings.replications, boot_seed)?;
                methods
                    .iter()
                    .map(|&m| test.run(m, settings.alpha, beta).map(|r| (r.reject, r.statistic)))
                    .collect()
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut cells = Vec::with_capacity(grid.len() * methods.len());
    let mut offset = 0;
    for (c, cfg) in grid.iter().enumerate() {
        let slice = &outcomes[offset..offset + cfg.n_sims];
        offset += cfg.n_sims;
        for (k, &method) in methods.iter().enumerate() {
            let mut rejections = 0;
            let mut completed = 0;
            let mut stat_sum = 0.0;
            let mut errors: Vec<String> = Vec::new();
            for o in slice {
                match o {
                    Ok(v) => {
                        completed += 1;
                        rejections += usize::from(v[k].0);
                        if v[k].1.is_finite() {
                            stat_sum += v[k].1;
                        }
                    }
                    Err(e) => {
                        if !errors.contains(e) {
                            errors.push(e.clone());
                        }
                    }
                }
            }
            let rate = if completed > 0 { rejections as f64 / completed as f64 } else { f64::NAN };
            cells.push(PowerCell {
                cell: c,
                config: cfg.clone(),
                method,
                rejections,
                completed,
                failed: cfg.n_sims - completed,
                rate,
                se: (rate * (1.0 - rate) / completed.max(1) as f64).sqrt(),
                mean_statistic: stat_sum / completed.max(1) as f64,
                errors,
            });
        }
    }
    Ok(SimResult { alpha: settings.alpha, beta, replications: settings.replications, seed: settings.seed, cells })
}

/// Parses a whitespace- or comma-separated grid table. The header names
/// columns among `a b delta_ext1 delta_ext2 delta_int intensive_share
/// delta_y base_y_prob z_prob n_obs n_sims`; unspecified fields come from
/// `defaults`. Giving both `a` and `b` selects the explicit baseline.
/// `intensive_share` sets `delta_int` relative to the extensive shares.
pub fn parse_grid(text: &str, defaults: &SimConfig) -> Result<Vec<SimConfig>> {
    const KNOWN: [&str; 11] = [
        "a", "b", "delta_ext1", "delta_ext2", "delta_int", "intensive_share", "delta_y", "base_y_prob", "z_prob",
        "n_obs", "n_sims",
    ];
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap().trim()))
        .filter(|(_, l)| !l.is_empty());
    let split = |l: &str| -> Vec<String> {
        l.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(str::to_string).collect()
    };
    let (_, header) = lines.next().ok_or_else(|| Error::Config("grid file has no header".into()))?;
    let cols = split(header);
    for c in &cols {
        if !KNOWN.contains(&c.as_str()) {
            return Err(Error::Config(format!("unknown grid column `{c}`")));
        }
    }
    if cols.iter().any(|c| c == "delta_int") && cols.iter().any(|c| c == "intensive_share") {
        return Err(Error::Config("give either delta_int or intensive_share, not both".into()));
    }
    let mut grid = Vec::new();
    for (lineno, line) in lines {
        let fields = split(line);
        if fields.len() != cols.len() {
            return Err(Error::Config(format!(
                "grid line {lineno}: {} fields for {} columns",
                fields.len(),
                cols.len()
            )));
        }
        let mut cfg = defaults.clone();
        let (mut a, mut b, mut share) = (None, None, None);
        for (name, raw) in cols.iter().zip(&fields) {
            let bad = || Error::Config(format!("grid line {lineno}: cannot parse `{raw}` for {name}"));
            let num = f64::from_str(raw).map_err(|_| bad());
            match name.as_str() {
                "n_obs" => cfg.n_obs = raw.parse().map_err(|_| bad())?,
                "n_sims" => cfg.n_sims = raw.parse().map_err(|_| bad())?,
                "a" => a = Some(num?),
                "b" => b = Some(num?),
                "delta_ext1" => cfg.delta_ext1 = num?,
                "delta_ext2" => cfg.delta_ext2 = num?,
                "delta_int" => cfg.delta_int = num?,
                "intensive_share" => share = Some(num?),
                "delta_y" => cfg.delta_y = num?,
                "base_y_prob" => cfg.base_y_prob = num?,
                _ => cfg.z_prob = num?,
            }
        }
        match (a, b) {
            (Some(a), Some(b)) => cfg.baseline = Baseline::Explicit { a, b },
            (None, None) => {}
            _ => return Err(Error::Config(format!("grid line {lineno}: give both a and b"))),
        }
        if let Some(s) = share {
            cfg = cfg.with_intensive_share(s)?;
        }
        cfg.validate().map_err(|e| Error::Config(format!("grid line {lineno}: {e}")))?;
        grid.push(cfg);
    }
    if grid.is_empty() {
        return Err(Error::Config("grid file has no rows".into()));
    }
    Ok(grid)
}
