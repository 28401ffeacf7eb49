//! Data model, CSV ingestion and treatment-level canonicalization.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Named real covariates stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

/// A validated sample of (Y, D, Z) with optional covariates, cluster and strata ids.
///
/// Treatment is stored as canonical levels `0..=dbar`; `level_labels` maps each
/// level back to the raw value (or bin lower bound) it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    outcome: Vec<f64>,
    treatment: Vec<usize>,
    instrument: Vec<u8>,
    covariates: Option<Covariates>,
    cluster_id: Option<Vec<u32>>,
    strata_id: Option<Vec<u32>>,
    level_labels: Vec<f64>,
    level_names: Vec<String>,
}

fn format_label(v: f64) -> String {
    format!("{v}")
}

impl Dataset {
    /// Build a dataset from raw treatment values, relabeling the sorted unique
    /// values to `0..=dbar`.
    pub fn new(outcome: Vec<f64>, raw_treatment: &[f64], instrument: Vec<u8>) -> Result<Self> {
        if raw_treatment.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidData("treatment contains non-finite values".into()));
        }
        let mut labels: Vec<f64> = raw_treatment.to_vec();
        labels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        labels.dedup();
        let treatment = raw_treatment
            .iter()
            .map(|d| labels.partition_point(|l| l < d))
            .collect();
        let names = labels.iter().map(|&l| format_label(l)).collect();
        Self::from_levels(outcome, treatment, instrument, labels, names)
    }

    /// Build a dataset from already-canonical levels. Levels with no
    /// observations are allowed; `level_labels.len()` fixes `dbar + 1`.
    pub fn from_levels(
        outcome: Vec<f64>,
        treatment: Vec<usize>,
        instrument: Vec<u8>,
        level_labels: Vec<f64>,
        level_names: Vec<String>,
    ) -> Result<Self> {
        let n = outcome.len();
        if treatment.len() != n || instrument.len() != n {
            return Err(Error::InvalidData(format!(
                "length mismatch: y={n}, d={}, z={}",
                treatment.len(),
                instrument.len()
            )));
        }
        if n == 0 {
            return Err(Error::EmptyAfterFiltering { dropped: 0 });
        }
        if outcome.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidData("outcome contains non-finite values".into()));
        }
        if level_labels.len() < 2 {
            return Err(Error::InvalidData(
                "treatment must take at least two levels".into(),
            ));
        }
        if level_labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidData("level labels must be strictly increasing".into()));
        }
        if level_names.len() != level_labels.len() {
            return Err(Error::InvalidData("level names and labels differ in length".into()));
        }
        if let Some(bad) = treatment.iter().find(|&&d| d >= level_labels.len()) {
            return Err(Error::InvalidData(format!("treatment level {bad} out of range")));
        }
        if let Some(bad) = instrument.iter().find(|&&z| z > 1) {
            return Err(Error::InvalidData(format!("instrument value {bad} is not 0/1")));
        }
        for arm in 0..=1u8 {
            if !instrument.contains(&arm) {
                return Err(Error::DegenerateArm(arm));
            }
        }
        Ok(Dataset {
            outcome,
            treatment,
            instrument,
            covariates: None,
            cluster_id: None,
            strata_id: None,
            level_labels,
            level_names,
        })
    }

    pub fn with_covariates(mut self, covariates: Covariates) -> Result<Self> {
        if covariates.names.len() != covariates.columns.len() {
            return Err(Error::InvalidData("covariate names and columns differ".into()));
        }
        for (name, col) in covariates.names.iter().zip(&covariates.columns) {
            if col.len() != self.n() {
                return Err(Error::InvalidData(format!("covariate `{name}` has wrong length")));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("covariate `{name}` is not finite")));
            }
        }
        self.covariates = Some(covariates);
        Ok(self)
    }

    pub fn with_clusters(mut self, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::InvalidData("cluster ids have wrong length".into()));
        }
        self.cluster_id = Some(ids);
        Ok(self)
    }

    pub fn with_strata(mut self, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::InvalidData("strata ids have wrong length".into()));
        }
        self.strata_id = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    /// Highest canonical treatment level.
    pub fn dbar(&self) -> usize {
        self.level_labels.len() - 1
    }

    pub fn num_levels(&self) -> usize {
        self.level_labels.len()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment(&self) -> &[usize] {
        &self.treatment
    }

    pub fn instrument(&self) -> &[u8] {
        &self.instrument
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    pub fn cluster_id(&self) -> Option<&[u32]> {
        self.cluster_id.as_deref()
    }

    pub fn strata_id(&self) -> Option<&[u32]> {
        self.strata_id.as_deref()
    }

    pub fn level_labels(&self) -> &[f64] {
        &self.level_labels
    }

    pub fn level_names(&self) -> &[String] {
        &self.level_names
    }

    /// Rows `idx` (with repetition) as a new dataset sharing the level structure.
    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        let pick_f = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pick_u = |v: &[u32]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut out = Dataset::from_levels(
            pick_f(&self.outcome),
            idx.iter().map(|&i| self.treatment[i]).collect(),
            idx.iter().map(|&i| self.instrument[i]).collect(),
            self.level_labels.clone(),
            self.level_names.clone(),
        )?;
        if let Some(c) = &self.covariates {
            out.covariates = Some(Covariates {
                names: c.names.clone(),
                columns: c.columns.iter().map(|col| pick_f(col)).collect(),
            });
        }
        out.cluster_id = self.cluster_id.as_deref().map(pick_u);
        out.strata_id = self.strata_id.as_deref().map(pick_u);
        Ok(out)
    }

    /// Write the dataset as CSV with columns `y,d,z`, covariates by name,
    /// then `cluster` and `strata` when present. `d` holds the level labels.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string(), "d".to_string(), "z".to_string()];
        if let Some(c) = &self.covariates {
            header.extend(c.names.iter().cloned());
        }
        if self.cluster_id.is_some() {
            header.push("cluster".into());
        }
        if self.strata_id.is_some() {
            header.push("strata".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = vec![
                format!("{}", self.outcome[i]),
                format_label(self.level_labels[self.treatment[i]]),
                self.instrument[i].to_string(),
            ];
            if let Some(c) = &self.covariates {
                row.extend(c.columns.iter().map(|col| format!("{}", col[i])));
            }
            if let Some(ids) = &self.cluster_id {
                row.push(ids[i].to_string());
            }
            if let Some(ids) = &self.strata_id {
                row.push(ids[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// One closed interval `[lo, hi]` of raw treatment values mapped to a level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub name: String,
}

/// Declared binning of a raw treatment into ordered levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bins(pub Vec<Bin>);

impl Bins {
    /// Parse `"0,1-6,7-12,13-"`: comma-separated closed ranges, a single value,
    /// or an open-ended `lo-`. Ranges must be increasing and disjoint.
    pub fn parse(spec: &str) -> Result<Bins> {
        let mut bins = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidBins(format!("`{s}` is not a number")))
            };
            // A leading '-' would be a negative number; treatments are non-negative.
            let (lo, hi) = match part.split_once('-') {
                None => {
                    let v = num(part)?;
                    (v, v)
                }
                Some((a, b)) if b.trim().is_empty() => (num(a)?, f64::INFINITY),
                Some((a, b)) => (num(a)?, num(b)?),
            };
            if lo > hi {
                return Err(Error::InvalidBins(format!("empty range `{part}`")));
            }
            if let Some(prev) = bins.last() {
                let prev: &Bin = prev;
                if lo <= prev.hi {
                    return Err(Error::InvalidBins(format!("`{part}` overlaps `{}`", prev.name)));
                }
            }
            bins.push(Bin { lo, hi, name: part.to_string() });
        }
        if bins.len() < 2 {
            return Err(Error::InvalidBins("need at least two bins".into()));
        }
        Ok(Bins(bins))
    }

    pub fn level_of(&self, raw: f64) -> Option<usize> {
        self.0.iter().position(|b| raw >= b.lo && raw <= b.hi)
    }
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct Schema {
    pub y: String,
    pub d: String,
    pub z: String,
    /// Raw instrument value that means `Z = 1`. Without it the larger of two
    /// numeric values is used.
    pub z_one: Option<String>,
    pub x: Vec<String>,
    pub cluster: Option<String>,
    pub strata: Option<String>,
    pub bins: Option<Bins>,
}

impl Schema {
    pub fn new(y: &str, d: &str, z: &str) -> Self {
        Schema {
            y: y.into(),
            d: d.into(),
            z: z.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped_missing: usize,
    pub dropped_unbinned: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "." | "null"
    )
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<(Dataset, LoadReport)> {
    let f = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(f), schema)
}

/// Parse a CSV with a header row according to `schema`. Rows with a missing
/// value in any mapped column are dropped and counted.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let iy = col(&schema.y)?;
    let id = col(&schema.d)?;
    let iz = col(&schema.z)?;
    let ix: Vec<usize> = schema.x.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let ic = schema.cluster.as_deref().map(col).transpose()?;
    let is = schema.strata.as_deref().map(col).transpose()?;

    let mut required = vec![iy, id, iz];
    required.extend(&ix);
    required.extend(ic);
    required.extend(is);

    let parse = |rec: &csv::StringRecord, idx: usize, name: &str, row: usize| -> Result<f64> {
        let cell = &rec[idx];
        cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
            Error::UnparseableCell {
                column: name.to_string(),
                row,
                value: cell.to_string(),
            }
        })
    };

    let mut report = LoadReport { rows_read: 0, dropped_missing: 0, dropped_unbinned: 0 };
    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut z_raw: Vec<String> = Vec::new();
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); ix.len()];
    let mut clusters: Vec<String> = Vec::new();
    let mut strata: Vec<String> = Vec::new();

    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        report.rows_read += 1;
        if required.iter().any(|&i| rec.get(i).is_none_or(is_missing)) {
            report.dropped_missing += 1;
            continue;
        }
        let raw_d = parse(&rec, id, &schema.d, row)?;
        if raw_d < 0.0 {
            return Err(Error::UnparseableCell {
                column: schema.d.clone(),
                row,
                value: rec[id].to_string(),
            });
        }
        let dv = match &schema.bins {
            Some(bins) => match bins.level_of(raw_d) {
                Some(level) => level as f64,
                None => {
                    report.dropped_unbinned += 1;
                    continue;
                }
            },
            None => raw_d,
        };
        y.push(parse(&rec, iy, &schema.y, row)?);
        d.push(dv);
        z_raw.push(rec[iz].to_string());
        for (k, &i) in ix.iter().enumerate() {
            xs[k].push(parse(&rec, i, &schema.x[k], row)?);
        }
        if let Some(i) = ic {
            clusters.push(rec[i].to_string());
        }
        if let Some(i) = is {
            strata.push(rec[i].to_string());
        }
    }

    if y.is_empty() {
        return Err(Error::EmptyAfterFiltering {
            dropped: report.dropped_missing + report.dropped_unbinned,
        });
    }

    let z = map_instrument(&z_raw, schema)?;

    let mut data = match &schema.bins {
        Some(bins) => {
            let levels = d.iter().map(|&v| v as usize).collect();
            let labels = bins.0.iter().map(|b| b.lo).collect();
            let names = bins.0.iter().map(|b| b.name.clone()).collect();
            Dataset::from_levels(y, levels, z, labels, names)?
        }
        None => Dataset::new(y, &d, z)?,
    };
    if !ix.is_empty() {
        data = data.with_covariates(Covariates { names: schema.x.clone(), columns: xs })?;
    }
    if ic.is_some() {
        data = data.with_clusters(intern(&clusters))?;
    }
    if is.is_some() {
        data = data.with_strata(intern(&strata))?;
    }
    Ok((data, report))
}

/// Map string ids to dense integers in order of first appearance.
fn intern(raw: &[String]) -> Vec<u32> {
    let mut map: HashMap<&str, u32> = HashMap::new();
    raw.iter()
        .map(|s| {
            let next = map.len() as u32;
            *map.entry(s.as_str()).or_insert(next)
        })
        .collect()
}

fn map_instrument(raw: &[String], schema: &Schema) -> Result<Vec<u8>> {
    let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    if let (1, Some(v)) = (distinct.len(), &schema.z_one) {
        // Only one arm observed; which one is known from the declared coding.
        return Err(Error::DegenerateArm(u8::from(!distinct.contains(v.as_str()))));
    }
    if distinct.len() != 2 {
        return Err(Error::NonBinaryInstrument {
            column: schema.z.clone(),
            count: distinct.len(),
            values: distinct.iter().take(5).cloned().collect::<Vec<_>>().join(","),
        });
    }
    let one: String = match &schema.z_one {
        Some(v) => {
            if !distinct.contains(v.as_str()) {
                return Err(Error::InvalidData(format!(
                    "instrument value `{v}` declared as Z=1 does not occur"
                )));
            }
            v.clone()
        }
        None => {
            let nums: Vec<(f64, &str)> = distinct
                .iter()
                .filter_map(|s| s.parse::<f64>().ok().map(|v| (v, *s)))
                .collect();
            if nums.len() != 2 {
                return Err(Error::InvalidData(format!(
                    "instrument `{}` is not numeric; declare which value means Z=1",
                    schema.z
                )));
            }
            let hi = if nums[0].0 > nums[1].0 { nums[0].1 } else { nums[1].1 };
            hi.to_string()
        }
    };
    Ok(raw.iter().map(|s| u8::from(*s == one)).collect())
}

/// Summary statistics reported by [`validate`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub dbar: usize,
    pub level_names: Vec<String>,
    /// `cell_counts[d] = [count with Z=0, count with Z=1]`.
    pub cell_counts: Vec<[usize; 2]>,
    pub arm_sizes: [usize; 2],
    pub mean_treatment: [f64; 2],
    pub relevance_holds: bool,
    pub n_clusters: Option<usize>,
    pub n_strata: Option<usize>,
    pub warnings: Vec<String>,
}

pub fn validate(data: &Dataset) -> ValidationReport {
    let mut cells = vec![[0usize; 2]; data.num_levels()];
    let mut sum_d = [0.0; 2];
    for (&d, &z) in data.treatment().iter().zip(data.instrument()) {
        cells[d][z as usize] += 1;
        sum_d[z as usize] += d as f64;
    }
    let arm = [
        cells.iter().map(|c| c[0]).sum::<usize>(),
        cells.iter().map(|c| c[1]).sum::<usize>(),
    ];
    let mean = [sum_d[0] / arm[0] as f64, sum_d[1] / arm[1] as f64];
    let relevance = mean[1] > mean[0];
    let mut warnings = Vec::new();
    if !relevance {
        warnings.push(format!(
            "relevance fails: E[D|Z=1]={:.6} is not above E[D|Z=0]={:.6}",
            mean[1], mean[0]
        ));
    }
    if data.level_labels()[0] != 0.0 && data.level_names()[0] != "0" {
        warnings.push(format!(
            "lowest treatment level is `{}`, which is treated as no treatment",
            data.level_names()[0]
        ));
    }
    for (d, c) in cells.iter().enumerate() {
        if c[0] == 0 || c[1] == 0 {
            warnings.push(format!(
                "empty cell at level `{}` (Z=0: {}, Z=1: {})",
                data.level_names()[d],
                c[0],
                c[1]
            ));
        }
    }
    let count_distinct = |ids: &[u32]| ids.iter().collect::<BTreeSet<_>>().len();
    ValidationReport {
        n: data.n(),
        dbar: data.dbar(),
        level_names: data.level_names().to_vec(),
        cell_counts: cells,
        arm_sizes: arm,
        mean_treatment: mean,
        relevance_holds: relevance,
        n_clusters: data.cluster_id().map(count_distinct),
        n_strata: data.strata_id().map(count_distinct),
        warnings,
    }
}
