//! Command-line front end. `run` parses arguments, executes one subcommand,
//! prints a human-readable summary and writes a JSON report to `--out-dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::bounds::{self, BoundsProblem, Direction, Shape};
use crate::dataset::{load_csv, validate, Bins, Dataset, LoadReport, Schema};
use crate::error::{Error, Result};
use crate::estimators::{
    cluster_bootstrap, complier_covariate_means, complier_decomposition, complier_decomposition_with_se, first_stage_diffs, fwl_adjust,
    wald, wald_robust_se, EndoTransform, OutcomeTransform,
};
use crate::inference::{default_beta, Method, MomentTest, TestResult};
use crate::moments::{
    build_emco_moments, build_late_cdf_moments, covariate_cells, interact_with_covariates, quantile_partition,
    OutcomeSet,
};
use crate::simulate::{
    generate_hurdle, generate_table1, parse_grid, power_curve, Baseline, Copula, HurdleConfig, OutcomeModel,
    PowerSettings, SimConfig,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser, Serialize)]
#[command(name = "emco", version, about = "IV analysis of ordered treatments under extensive-margin-only compliance")]
struct Cli {
    /// Seed for every random procedure.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (falls back to EMCO_THREADS, then all cores).
    #[arg(long, global = true, env = "EMCO_THREADS")]
    threads: Option<usize>,
    /// Directory for the JSON report and other outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Suppress the text summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Wald estimands with raw and recoded treatment.
    Estimate(EstimateArgs),
    /// Complier shares and treated/untreated complier means.
    Decompose(DecomposeArgs),
    /// Moment-inequality test of extensive-margin-only compliance.
    Test(TestArgs),
    /// Bounds on level-specific complier effects.
    Bounds(BoundsArgs),
    /// Rejection rates over a grid of simulated designs.
    Simulate(SimulateArgs),
    /// CSV series for first-stage and joint-mass plots.
    Plotdata(PlotArgs),
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// Input CSV with a header row.
    data: Option<PathBuf>,
    /// Outcome column.
    #[arg(long)]
    y: Option<String>,
    /// Ordered treatment column.
    #[arg(long)]
    d: Option<String>,
    /// Binary instrument column.
    #[arg(long)]
    z: Option<String>,
    /// Instrument value coded as Z=1 (default: the larger value).
    #[arg(long)]
    z_one: Option<String>,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    x: Vec<String>,
    /// Cluster id column for resampling.
    #[arg(long)]
    cluster: Option<String>,
    /// Strata column.
    #[arg(long)]
    strata: Option<String>,
    /// Treatment bins, e.g. "0,1-6,7-12,13-".
    #[arg(long)]
    bins: Option<String>,
}

impl DataArgs {
    fn given(&self) -> bool {
        self.data.is_some()
    }

    fn load(&self) -> Result<(Dataset, LoadReport)> {
        let missing = |what: &str| Error::Config(format!("missing required argument {what}"));
        let path = self.data.as_ref().ok_or_else(|| missing("<DATA>"))?;
        let mut schema = Schema::new(
            self.y.as_deref().ok_or_else(|| missing("--y"))?,
            self.d.as_deref().ok_or_else(|| missing("--d"))?,
            self.z.as_deref().ok_or_else(|| missing("--z"))?,
        );
        schema.z_one = self.z_one.clone();
        schema.x = self.x.clone();
        schema.cluster = self.cluster.clone();
        schema.strata = self.strata.clone();
        schema.bins = self.bins.as_deref().map(Bins::parse).transpose()?;
        load_csv(path, &schema)
    }

    fn adjusted(&self) -> bool {
        !self.x.is_empty() || self.strata.is_some()
    }
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Bootstrap replications for standard errors (0 = analytic only).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
}

#[derive(Debug, Args, Serialize)]
struct DecomposeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Bootstrap replications for standard errors.
    #[arg(long, default_value_t = 500)]
    bootstrap: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MethodChoice {
    Rsw,
    Cck,
    Both,
}

impl MethodChoice {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Rsw => vec![Method::Rsw],
            MethodChoice::Cck => vec![Method::Cck],
            MethodChoice::Both => vec![Method::Rsw, Method::Cck],
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = MethodChoice::Rsw)]
    method: MethodChoice,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// First-step level (default alpha/10).
    #[arg(long)]
    beta: Option<f64>,
    /// Bootstrap replications.
    #[arg(short = 'B', long = "replications", default_value_t = 1000)]
    replications: usize,
    /// Quantile bins of the outcome used to split the joint mass.
    #[arg(long, default_value_t = 10)]
    outcome_bins: usize,
    /// Add treatment-CDF monotonicity moments.
    #[arg(long)]
    late_cdf: bool,
    /// Number of most violated moments to print.
    #[arg(long, default_value_t = 5)]
    top: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SignChoice {
    Pos,
    Neg,
    Strict,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ShapeChoice {
    Decreasing,
}

#[derive(Debug, Args, Serialize)]
struct BoundsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Decomposition JSON (a `decompose` report) instead of data.
    #[arg(long)]
    from_json: Option<PathBuf>,
    /// Outcome support "lo,hi" (default: observed sample range).
    #[arg(long, allow_hyphen_values = true)]
    support: Option<String>,
    #[arg(long, value_enum)]
    shape: Option<ShapeChoice>,
    /// Also check whether all effects can share this sign.
    #[arg(long, value_enum)]
    sign: Option<SignChoice>,
    /// Margin for `--sign strict`.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// Grid table; see the README for the column names.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodChoice::Both)]
    method: MethodChoice,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(short = 'B', long = "replications", default_value_t = 1000)]
    replications: usize,
    #[arg(long, default_value_t = 1000)]
    n_obs: usize,
    #[arg(long, default_value_t = 1000)]
    n_sims: usize,
    #[arg(long, default_value_t = 10)]
    outcome_bins: usize,
    /// Rejection-rate CSV (default: <out-dir>/simulate.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct PlotArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 500)]
    bootstrap: usize,
    #[arg(long, default_value_t = 10)]
    outcome_bins: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Design {
    FourType,
    Hurdle,
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = Design::FourType)]
    design: Design,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Output CSV (default: <out-dir>/generated.csv).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    delta_ext1: f64,
    #[arg(long, default_value_t = 0.1)]
    delta_ext2: f64,
    #[arg(long, default_value_t = 0.0)]
    delta_int: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    delta_y: f64,
    /// Baseline `a,b` = Pr(D(0)=0), Pr(D(0)=1); default spreads non-compliers evenly.
    #[arg(long)]
    baseline: Option<String>,
    /// Hurdle participation thresholds `pi0(0),pi0(1)`.
    #[arg(long, default_value = "0.6,0.3")]
    pi0: String,
    /// Hurdle intensity masses of levels 1..dbar.
    #[arg(long, default_value = "0.5,0.3,0.2")]
    masses: String,
    /// Gaussian-copula correlation of the two latent factors.
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    /// Outcome intercepts of levels 0..dbar (default: 0, 1, 2, ...).
    #[arg(long, allow_hyphen_values = true)]
    level_means: Option<String>,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    ext_loading: f64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    int_loading: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: u64,
    pub threads: usize,
    pub elapsed_seconds: f64,
    pub results: Value,
    pub warnings: Vec<String>,
}

struct Outcome {
    text: String,
    results: Value,
    warnings: Vec<String>,
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code: 0 on success, 2 for usage or input errors, 3 for statistical
/// degeneracy.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let threads = match cli.threads {
        Some(0) => return Err(Error::Config("--threads must be positive".into())),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    fs::create_dir_all(&cli.out_dir)?;
    let start = Instant::now();
    let outcome = pool.install(|| dispatch(cli))?;
    let name = command_name(&cli.command);
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command: name.to_string(),
        argv,
        config: serde_json::to_value(&cli.command)?,
        seed: cli.seed,
        threads,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        results: outcome.results,
        warnings: outcome.warnings.clone(),
    };
    let path = cli.out_dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    if !cli.quiet {
        print!("{}", outcome.text);
        for w in &outcome.warnings {
            println!("warning: {w}");
        }
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Estimate(_) => "estimate",
        Command::Decompose(_) => "decompose",
        Command::Test(_) => "test",
        Command::Bounds(_) => "bounds",
        Command::Simulate(_) => "simulate",
        Command::Plotdata(_) => "plotdata",
        Command::Generate(_) => "generate",
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Estimate(a) => estimate(a, cli.seed),
        Command::Decompose(a) => decompose(a, cli.seed),
        Command::Test(a) => test(a, cli.seed),
        Command::Bounds(a) => bounds_cmd(a),
        Command::Simulate(a) => simulate(a, cli.seed, &cli.out_dir),
        Command::Plotdata(a) => plotdata(a, cli.seed, &cli.out_dir),
        Command::Generate(a) => generate(a, cli.seed, &cli.out_dir),
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else if x.is_nan() {
        "NA".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn paren(x: Option<f64>) -> String {
    x.map_or(String::new(), |s| format!("({})", num(s)))
}

fn load_with_checks(data: &DataArgs) -> Result<(Dataset, Vec<String>, Value)> {
    let (ds, load) = data.load()?;
    let check = validate(&ds);
    let mut warnings = check.warnings.clone();
    if load.dropped_missing > 0 {
        warnings.push(format!("dropped {} rows with missing values", load.dropped_missing));
    }
    if load.dropped_unbinned > 0 {
        warnings.push(format!("dropped {} rows outside every treatment bin", load.dropped_unbinned));
    }
    let summary = json!({ "load": load, "validation": check });
    Ok((ds, warnings, summary))
}

fn sample_header(ds: &Dataset) -> String {
    let mut s = format!("N = {}, treatment levels = {}", ds.n(), ds.level_names().join(" "));
    if let Some(c) = ds.cluster_id() {
        let mut ids = c.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let _ = write!(s, ", clusters = {}", ids.len());
    }
    s.push('\n');
    s
}

fn estimate(a: &EstimateArgs, seed: u64) -> Result<Outcome> {
    let (ds, mut warnings, summary) = load_with_checks(&a.data)?;
    let adjusted = a.data.adjusted();
    let fs = first_stage_diffs(&ds)?;
    let endos = [("beta_acr", EndoTransform::RawD), ("beta_recoded", EndoTransform::AnyTreatment)];
    let mut rows = Vec::new();
    for (name, endo) in endos {
        let mut est = if adjusted {
            fwl_adjust(&ds, OutcomeTransform::Y, endo)?
        } else {
            wald(&ds, OutcomeTransform::Y, endo)?
        };
        if !adjusted && ds.cluster_id().is_none() {
            est.se = Some(wald_robust_se(&ds, OutcomeTransform::Y, endo)?);
        }
        let boot = if a.bootstrap > 0 {
            let stat = |s: &Dataset| -> Result<Vec<f64>> {
                let e = if adjusted { fwl_adjust(s, OutcomeTransform::Y, endo)? } else { wald(s, OutcomeTransform::Y, endo)? };
                Ok(vec![e.value])
            };
            Some(cluster_bootstrap(&ds, stat, a.bootstrap, seed)?.remove(0))
        } else {
            None
        };
        rows.push((name, est, boot));
    }
    if ds.cluster_id().is_some() && a.bootstrap == 0 {
        warnings.push("clustered data: pass --bootstrap B for cluster-robust standard errors".into());
    }

    let mut text = sample_header(&ds);
    let _ = writeln!(text, "{:<16}{:>12}{:>12}{:>12}", "", "estimate", "robust se", "boot se");
    for (name, est, boot) in &rows {
        let _ = writeln!(
            text,
            "{:<16}{:>12}{:>12}{:>12}",
            name,
            num(est.value),
            est.se.map_or("".into(), num),
            boot.as_ref().map_or("".into(), |b| num(b.se))
        );
    }
    let _ = writeln!(text, "\nfirst stage: dE[D] = {}, dPr(D>0) = {}", num(fs.delta_mean), num(fs.delta_any));
    for (l, name) in ds.level_names().iter().enumerate() {
        let _ = writeln!(text, "  dPr(D={name}) = {}", num(fs.delta_pr[l]));
    }
    if adjusted {
        text.push_str("estimates adjusted for covariates/strata by partialling out\n");
    }
    let results = json!({
        "sample": summary,
        "adjusted": adjusted,
        "first_stage": fs,
        "estimates": rows.iter().map(|(name, est, boot)| json!({"name": name, "estimate": est, "bootstrap": boot})).collect::<Vec<_>>(),
        "bootstrap_seed": (a.bootstrap > 0).then_some(seed),
    });
    Ok(Outcome { text, results, warnings })
}

fn decompose(a: &DecomposeArgs, seed: u64) -> Result<Outcome> {
    let (ds, mut warnings, summary) = load_with_checks(&a.data)?;
    if a.bootstrap == 1 {
        return Err(Error::Config("--bootstrap must be 0 (no standard errors) or at least 2".into()));
    }
    let dec = if a.bootstrap == 0 {
        complier_decomposition(&ds)?
    } else {
        complier_decomposition_with_se(&ds, a.bootstrap, seed)?
    };
    let ses = dec.ses.as_ref();
    let mut text = sample_header(&ds);
    let _ = writeln!(text, "{:<32}{:>12}{:>12}", "", "estimate", "(se)");
    let _ = writeln!(text, "{:<32}{:>12}{:>12}", "2SLS, any treatment", num(dec.beta_recoded), paren(ses.map(|s| s.beta_recoded)));
    let _ = writeln!(
        text,
        "{:<32}{:>12}{:>12}",
        "untreated compliers (pooled)",
        num(dec.untreated_mean_pooled),
        paren(ses.map(|s| s.untreated_mean_pooled))
    );
    for (j, m) in dec.treated_means.iter().enumerate() {
        let label = format!("treated compliers, D={}", m.name);
        let se = ses.and_then(|s| s.treated_means[j]);
        let _ = writeln!(text, "{:<32}{:>12}{:>12}", label, m.mean.map_or("NA".into(), num), paren(se));
        if m.mean.is_none() {
            warnings.push(format!("treated mean at D={} undefined: first stage {} is not positive", m.name, num(m.first_stage)));
        }
    }
    for (j, m) in dec.treated_means.iter().enumerate() {
        let label = format!("share of compliers, D={}", m.name);
        let _ = writeln!(text, "{:<32}{:>12}{:>12}", label, num(dec.shares[j]), paren(ses.map(|s| s.shares[j])));
    }
    let _ = writeln!(
        text,
        "{:<32}{:>12}",
        "share-weighted means difference",
        num(dec.reconstructed_recoded())
    );
    let covs = complier_covariate_means(&ds)?;
    if !covs.is_empty() {
        text.push_str("\ncomplier covariate means by treated level\n");
        for (name, means) in &covs {
            let cells: Vec<String> = means.iter().map(|m| m.map_or("NA".into(), num)).collect();
            let _ = writeln!(text, "  {name:<20}{}", cells.join("  "));
        }
    }
    let results = json!({
        "sample": summary,
        "decomposition": dec,
        "complier_covariate_means": covs.iter().map(|(n, m)| json!({"covariate": n, "means": m})).collect::<Vec<_>>(),
    });
    Ok(Outcome { text, results, warnings })
}

fn test_moments(ds: &Dataset, a: &TestArgs, warnings: &mut Vec<String>) -> Result<crate::moments::MomentSet> {
    if a.outcome_bins == 0 {
        return Err(Error::Config("--outcome-bins must be positive".into()));
    }
    let partition = quantile_partition(ds.outcome(), a.outcome_bins);
    let mut ms = build_emco_moments(ds, &partition)?;
    if a.late_cdf {
        ms.extend(build_late_cdf_moments(ds)?)?;
    }
    if a.data.adjusted() {
        if let Some(cells) = covariate_cells(ds, a.data.strata.is_some(), !a.data.x.is_empty()) {
            let ncells = cells.iter().max().map_or(0, |m| *m as usize + 1);
            if ncells * 20 > ds.n() {
                warnings.push(format!("{ncells} covariate cells for {} observations; many moments will be empty", ds.n()));
            }
            ms = interact_with_covariates(&ms, &cells)?;
        }
    }
    warnings.extend(ms.warnings.iter().cloned());
    Ok(ms)
}

fn describe_test(r: &TestResult, top: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} test: {} moments ({} active), B = {}, seed = {}",
        r.method, r.num_moments, r.num_active, r.replications, r.seed
    );
    let _ = writeln!(
        s,
        "  T_n = {}   critical value = {}   {} at alpha = {} (beta = {})",
        num(r.statistic),
        num(r.critical_value),
        if r.reject { "REJECT" } else { "do not reject" },
        r.alpha,
        r.beta_n
    );
    let worst = r.most_violated(top);
    if !worst.is_empty() {
        let _ = writeln!(s, "  most violated moments:");
        for m in worst {
            let _ = writeln!(
                s,
                "    {:<40} mean = {:>9}  sd = {:>8}  t = {:>8}",
                m.label,
                num(m.mean),
                num(m.sd),
                m.studentized.map_or("excluded".into(), num)
            );
        }
    }
    s
}

fn test(a: &TestArgs, seed: u64) -> Result<Outcome> {
    let (ds, mut warnings, summary) = load_with_checks(&a.data)?;
    let ms = test_moments(&ds, a, &mut warnings)?;
    let beta = a.beta.unwrap_or_else(|| default_beta(a.alpha));
    let engine = MomentTest::new(&ms, a.replications, seed)?;
    let mut text = sample_header(&ds);
    let mut results = Vec::new();
    for method in a.method.methods() {
        let r = engine.run(method, a.alpha, beta)?;
        text.push_str(&describe_test(&r, a.top));
        warnings.extend(r.warnings.iter().cloned());
        results.push(r);
    }
    let mut seen = std::collections::HashSet::new();
    warnings.retain(|w| seen.insert(w.clone()));
    let results = json!({ "sample": summary, "tests": results });
    Ok(Outcome { text, results, warnings })
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let parse = |t: &str| -> Result<f64> {
        match t {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => t.parse().map_err(|_| Error::Config(format!("cannot parse `{t}` in {what}"))),
        }
    };
    if parts.len() != 2 {
        return Err(Error::Config(format!("{what} needs two comma-separated numbers, got `{s}`")));
    }
    Ok((parse(parts[0])?, parse(parts[1])?))
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::Config(format!("cannot parse `{t}` in {what}"))))
        .collect()
}

/// Inputs for bounds from a `decompose` report or a bare decomposition object.
fn decomposition_from_json(path: &Path) -> Result<(Vec<f64>, Vec<f64>, f64, Vec<String>)> {
    let v: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let dec = v.pointer("/results/decomposition").unwrap_or(&v);
    let bad = |what: &str| Error::Config(format!("{}: missing or invalid `{what}`", path.display()));
    let shares: Vec<f64> = dec
        .get("shares")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("shares"))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| bad("shares")))
        .collect::<Result<_>>()?;
    let levels = dec.get("treated_means").and_then(Value::as_array).ok_or_else(|| bad("treated_means"))?;
    if levels.len() != shares.len() {
        return Err(bad("treated_means"));
    }
    let means = levels.iter().map(|m| m.get("mean").and_then(Value::as_f64).unwrap_or(f64::NAN)).collect();
    let names = levels
        .iter()
        .enumerate()
        .map(|(j, m)| m.get("name").and_then(Value::as_str).map_or((j + 1).to_string(), str::to_string))
        .collect();
    let m = dec.get("untreated_mean_pooled").and_then(Value::as_f64).ok_or_else(|| bad("untreated_mean_pooled"))?;
    Ok((shares, means, m, names))
}

fn bounds_cmd(a: &BoundsArgs) -> Result<Outcome> {
    let mut warnings = Vec::new();
    let support_arg = a.support.as_deref().map(|s| parse_pair(s, "--support")).transpose()?;
    let (mut shares, mut means, m, names, observed) = match (&a.from_json, a.data.given()) {
        (Some(_), true) => return Err(Error::Config("give either data or --from-json, not both".into())),
        (None, false) => return Err(Error::Config("bounds needs a data file or --from-json".into())),
        (Some(path), false) => {
            let (s, t, m, n) = decomposition_from_json(path)?;
            (s, t, m, n, None)
        }
        (None, true) => {
            let (ds, w, _) = load_with_checks(&a.data)?;
            warnings.extend(w);
            let dec = crate::estimators::complier_decomposition(&ds)?;
            let y = ds.outcome();
            let range = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let names = dec.treated_means.iter().map(|t| t.name.clone()).collect();
            let means = dec.treated_means.iter().map(|t| t.mean.unwrap_or(f64::NAN)).collect();
            (dec.shares, means, dec.untreated_mean_pooled, names, Some(range))
        }
    };
    let support = match (support_arg, observed) {
        (Some(s), _) => s,
        (None, Some(r)) => {
            warnings.push(format!("support assumed equal to the observed outcome range [{}, {}]", num(r.0), num(r.1)));
            r
        }
        (None, None) => return Err(Error::Config("--support is required with --from-json".into())),
    };
    if shares.iter().any(|w| *w < 0.0) {
        let clamped: Vec<&String> = names.iter().zip(&shares).filter(|(_, w)| **w < 0.0).map(|(n, _)| n).collect();
        warnings.push(format!(
            "negative estimated complier shares at levels {:?} set to zero and the rest renormalized",
            clamped
        ));
        shares.iter_mut().for_each(|w| *w = w.max(0.0));
        let total: f64 = shares.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidShares("no level has a positive complier share".into()));
        }
        shares.iter_mut().for_each(|w| *w /= total);
    }
    for (w, t) in shares.iter().zip(means.iter_mut()) {
        if *w == 0.0 {
            *t = 0.0;
        }
    }
    // Estimated shares sum to one up to rounding.
    let total: f64 = shares.iter().sum();
    shares.iter_mut().for_each(|w| *w /= total);
    let shape = a.shape.map(|_| Shape::Decreasing);
    let problem = BoundsProblem::new(shares, means, m, support)?.with_names(names)?.with_shape(shape);
    let result = bounds::effect_bounds(&problem)?;

    let mut text = format!(
        "bounds on complier effects Y_d^d - Y_d^0, support [{}, {}]{}\n",
        num(support.0),
        num(support.1),
        if shape.is_some() { ", effects decreasing in d" } else { "" }
    );
    let _ = writeln!(text, "  pooled untreated complier mean = {}", num(m));
    let _ = writeln!(text, "  {:<8}{:>10}{:>12}{:>12}{:>12}", "level", "share", "Y_d^d", "lower", "upper");
    for iv in result.intervals.iter().flatten() {
        let _ = writeln!(
            text,
            "  {:<8}{:>10}{:>12}{:>12}{:>12}",
            iv.name,
            num(iv.share),
            num(iv.treated_mean),
            num(iv.lo),
            num(iv.hi)
        );
    }
    if result.uninformative {
        warnings.push("unbounded support: some intervals are uninformative".into());
    }
    let sign = match a.sign {
        None => None,
        Some(choice) => {
            let dir = match choice {
                SignChoice::Pos => Direction::NonNegative,
                SignChoice::Neg => Direction::NonPositive,
                SignChoice::Strict => Direction::Positive(a.eps),
            };
            let s = bounds::joint_sign_feasible(&problem, dir)?;
            let _ = writeln!(
                text,
                "  all effects {}: {}",
                match choice {
                    SignChoice::Pos => ">= 0",
                    SignChoice::Neg => "<= 0",
                    SignChoice::Strict => "> 0 (closed at eps)",
                },
                if s.feasible { "feasible" } else { "infeasible" }
            );
            Some(s)
        }
    };
    let results = json!({ "problem": problem, "bounds": result, "joint_sign": sign });
    Ok(Outcome { text, results, warnings })
}

fn simulate(a: &SimulateArgs, seed: u64, out_dir: &Path) -> Result<Outcome> {
    let defaults = SimConfig { n_obs: a.n_obs, n_sims: a.n_sims, seed, ..SimConfig::default() };
    let grid = parse_grid(&fs::read_to_string(&a.grid)?, &defaults)?;
    let mut settings = PowerSettings::new(a.alpha, a.replications, seed);
    settings.beta = a.beta;
    settings.outcome_bins = a.outcome_bins;
    let result = power_curve(&grid, &a.method.methods(), &settings)?;
    let out = a.out.clone().unwrap_or_else(|| out_dir.join("simulate.csv"));
    result.write_csv(fs::File::create(&out)?)?;

    let mut warnings = Vec::new();
    let mut text = format!(
        "{} grid cells, alpha = {}, B = {}, seed = {}\n",
        grid.len(),
        a.alpha,
        a.replications,
        seed
    );
    let _ = writeln!(text, "  {:<5}{:<6}{:>10}{:>10}{:>10}{:>10}{:>10}", "cell", "test", "d_int", "share", "d_y", "rate", "se");
    for c in &result.cells {
        let _ = writeln!(
            text,
            "  {:<5}{:<6}{:>10.4}{:>10.4}{:>10.3}{:>10.3}{:>10.3}",
            c.cell,
            c.method.to_string(),
            c.config.delta_int,
            c.config.intensive_share(),
            c.config.delta_y,
            c.rate,
            c.se
        );
        if c.failed > 0 {
            warnings.push(format!("cell {} ({}): {} simulations failed: {}", c.cell, c.method, c.failed, c.errors.join("; ")));
        }
    }
    let _ = writeln!(text, "rates written to {}", out.display());
    let results = json!({ "csv": out, "result": result });
    Ok(Outcome { text, results, warnings })
}

/// `Pr(D=d, Y in A|Z=1) - Pr(D=d, Y in A|Z=0)` for every level and set.
fn joint_mass_diffs(ds: &Dataset, sets: &[OutcomeSet]) -> Vec<f64> {
    let k = ds.num_levels();
    let mut counts = vec![[0.0f64; 2]; k * sets.len()];
    let mut arm = [0.0f64; 2];
    for i in 0..ds.n() {
        let z = ds.instrument()[i] as usize;
        arm[z] += 1.0;
        let d = ds.treatment()[i];
        for (s, set) in sets.iter().enumerate() {
            if set.contains(ds.outcome()[i]) {
                counts[s * k + d][z] += 1.0;
            }
        }
    }
    counts.iter().map(|c| c[1] / arm[1] - c[0] / arm[0]).collect()
}

fn plotdata(a: &PlotArgs, seed: u64, out_dir: &Path) -> Result<Outcome> {
    let (ds, warnings, summary) = load_with_checks(&a.data)?;
    if a.bootstrap < 2 {
        return Err(Error::Config("--bootstrap must be at least 2".into()));
    }
    let partition = quantile_partition(ds.outcome(), a.outcome_bins.max(1));
    let k = ds.num_levels();
    let levels = cluster_bootstrap(&ds, |s| Ok(first_stage_diffs(s)?.delta_pr), a.bootstrap, seed)?;
    let joint = cluster_bootstrap(&ds, |s| Ok(joint_mass_diffs(s, &partition)), a.bootstrap, crate::rng::derive_seed(seed, &[1]))?;

    let level_path = out_dir.join("first_stage.csv");
    let mut f = String::new();
    f.push_str("# Difference in treatment mass between instrument arms, Pr(D=d|Z=1) - Pr(D=d|Z=0).\n");
    f.push_str("# level: treatment level; estimate: difference; se, lo, hi: bootstrap standard error and 95% percentile interval.\n");
    let _ = writeln!(f, "# bootstrap replications {}, seed {seed}", a.bootstrap);
    f.push_str("level,estimate,se,lo,hi\n");
    for (l, s) in levels.iter().enumerate() {
        let _ = writeln!(f, "{},{},{},{},{}", ds.level_names()[l], s.estimate, s.se, s.lo, s.hi);
    }
    fs::write(&level_path, f)?;

    let joint_path = out_dir.join("joint_mass.csv");
    let mut f = String::new();
    f.push_str("# Difference in joint (treatment level, outcome bin) mass between instrument arms,\n");
    f.push_str("# Pr(D=d, Y in bin|Z=1) - Pr(D=d, Y in bin|Z=0). Bins are outcome quantile intervals (lo, hi].\n");
    f.push_str("# level, bin_lo, bin_hi: cell; estimate: difference; se, lo, hi: bootstrap standard error and 95% percentile interval.\n");
    let _ = writeln!(f, "# bootstrap replications {}, seed {}", a.bootstrap, crate::rng::derive_seed(seed, &[1]));
    f.push_str("level,bin_lo,bin_hi,estimate,se,lo,hi\n");
    for (s, set) in partition.iter().enumerate() {
        let (lo, hi) = match set {
            OutcomeSet::Interval { lo, hi } => (*lo, *hi),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        };
        for l in 0..k {
            let b = &joint[s * k + l];
            let _ = writeln!(f, "{},{lo},{hi},{},{},{},{}", ds.level_names()[l], b.estimate, b.se, b.lo, b.hi);
        }
    }
    fs::write(&joint_path, f)?;

    let mut text = sample_header(&ds);
    let _ = writeln!(text, "  {:<8}{:>10}{:>10}{:>10}", "level", "dPr", "lo", "hi");
    for (l, s) in levels.iter().enumerate() {
        let _ = writeln!(text, "  {:<8}{:>10}{:>10}{:>10}", ds.level_names()[l], num(s.estimate), num(s.lo), num(s.hi));
    }
    let _ = writeln!(text, "series written to {} and {}", level_path.display(), joint_path.display());
    let results = json!({
        "sample": summary,
        "first_stage_csv": level_path,
        "joint_mass_csv": joint_path,
        "first_stage": levels,
        "joint_mass_cells": partition.len() * k,
    });
    Ok(Outcome { text, results, warnings })
}

fn generate(a: &GenerateArgs, seed: u64, out_dir: &Path) -> Result<Outcome> {
    let out = a.out.clone().unwrap_or_else(|| out_dir.join("generated.csv"));
    let (data, truth) = match a.design {
        Design::FourType => {
            let baseline = match &a.baseline {
                Some(s) => {
                    let (x, y) = parse_pair(s, "--baseline")?;
                    Baseline::Explicit { a: x, b: y }
                }
                None => Baseline::EqualLevels,
            };
            let cfg = SimConfig {
                baseline,
                delta_ext1: a.delta_ext1,
                delta_ext2: a.delta_ext2,
                delta_int: a.delta_int,
                delta_y: a.delta_y,
                n_obs: a.n,
                seed,
                ..SimConfig::default()
            };
            let draw = generate_table1(&cfg, 0)?;
            (draw.data, serde_json::to_value(crate::simulate::population_oracle(&cfg)?)?)
        }
        Design::Hurdle => {
            let (p0, p1) = parse_pair(&a.pi0, "--pi0")?;
            let masses = parse_list(&a.masses, "--masses")?;
            let level_means = match &a.level_means {
                Some(s) => parse_list(s, "--level-means")?,
                None => (0..=masses.len()).map(|l| l as f64).collect(),
            };
            let outcome = OutcomeModel {
                level_means,
                ext_loading: a.ext_loading,
                int_loading: a.int_loading,
                noise_sd: a.noise_sd,
            };
            let mut cfg = HurdleConfig::from_masses(p0, p1, &masses, outcome)?;
            if let Some(rho) = a.rho {
                cfg.copula = Copula::Gaussian { rho };
                cfg.validate()?;
            }
            let draw = generate_hurdle(&cfg, a.n, seed)?;
            let truth = crate::simulate::hurdle_truth(&cfg)?;
            (draw.data, json!({ "config": cfg, "truth": truth }))
        }
    };
    data.save_csv(&out)?;
    let text = format!("wrote {} rows to {}\n", data.n(), out.display());
    Ok(Outcome { text, results: json!({ "csv": out, "population": truth }), warnings: Vec::new() })
}
