//! Canned reproductions of the published tables and figure data, and the
//! tabular writer every experiment emits through.
//!
//! Each experiment draws from its own seed subspace
//! (`mix_seed(master, experiment, cell)`), so experiments can run in any
//! order or concurrently without changing each other's numbers.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mimo::{simulate_mimo_schemes, MimoConfig, SchemeKind};
use crate::single::{
    capacity_worst_sweep, esnr_grid_average, training_duration, CapacityEstimate, EsnrEstimate, ProtocolKind,
    SingleAntennaConfig,
};
use crate::stats::{mix_seed, McPlan};

/// Estimate variances of the capacity table, ascending.
pub const TABLE2_ESTIMATES: [f64; 3] = [0.1, 0.5, 0.9];
/// Relay count of the capacity table.
pub const TABLE2_K: usize = 7;
/// Minimum trials per capacity cell.
pub const TABLE2_MIN_TRIALS: u64 = 100_000;

/// Published capacities in bits per channel use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table2Target {
    pub protocol: ProtocolKind,
    /// `cells[row][col]`: rows `sigma_ghat^2 = 0.9, 0.5, 0.1`, columns
    /// `sigma_hhat^2 = 0.1, 0.5, 0.9`.
    pub cells: [[f64; 3]; 3],
    /// Perfect channel knowledge.
    pub perfect: f64,
}

impl Table2Target {
    pub fn at(&self, h_est: f64, g_est: f64) -> Option<f64> {
        if h_est == 1.0 && g_est == 1.0 {
            return Some(self.perfect);
        }
        let col = TABLE2_ESTIMATES.iter().position(|&v| v == h_est)?;
        let row = 2 - TABLE2_ESTIMATES.iter().position(|&v| v == g_est)?;
        Some(self.cells[row][col])
    }
}

pub fn table2_targets() -> [Table2Target; 3] {
    [
        Table2Target {
            protocol: ProtocolKind::P1,
            cells: [[0.14, 0.52, 0.84], [0.10, 0.37, 0.56], [0.03, 0.11, 0.17]],
            perfect: 0.99,
        },
        Table2Target {
            protocol: ProtocolKind::P2,
            cells: [[0.17, 0.58, 0.87], [0.12, 0.42, 0.64], [0.03, 0.14, 0.22]],
            perfect: 0.99,
        },
        Table2Target {
            protocol: ProtocolKind::P3,
            cells: [[0.26, 0.82, 1.26], [0.21, 0.71, 1.11], [0.11, 0.43, 0.74]],
            perfect: 1.4,
        },
    ]
}

fn target_for(protocol: ProtocolKind) -> Table2Target {
    table2_targets()
        .into_iter()
        .find(|t| t.protocol == protocol)
        .expect("every protocol has a target")
}

/// `(h_est, g_est, seed index)` of each table cell in published order,
/// followed by the perfect-knowledge cell.
fn table2_layout() -> Vec<(f64, f64, u64)> {
    let mut cells = Vec::with_capacity(10);
    for (row, &g) in TABLE2_ESTIMATES.iter().rev().enumerate() {
        for (col, &h) in TABLE2_ESTIMATES.iter().enumerate() {
            cells.push((h, g, (row * 3 + col) as u64));
        }
    }
    cells.push((1.0, 1.0, 9));
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table2Cell {
    pub protocol: ProtocolKind,
    pub h_est: f64,
    pub g_est: f64,
    pub capacity: CapacityEstimate,
    pub target: f64,
    pub seed: u64,
}

impl Table2Cell {
    pub fn is_perfect(&self) -> bool {
        self.h_est == 1.0 && self.g_est == 1.0
    }

    pub fn deviation(&self) -> f64 {
        self.capacity.bits_per_channel_use - self.target
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2 {
    pub sigma_n_sq: f64,
    /// Per protocol: nine cells in published order, then the perfect cell.
    pub cells: Vec<Table2Cell>,
}

impl Table2 {
    pub fn cell(&self, protocol: ProtocolKind, h_est: f64, g_est: f64) -> Option<&Table2Cell> {
        self.cells
            .iter()
            .find(|c| c.protocol == protocol && c.h_est == h_est && c.g_est == g_est)
    }

    /// Largest `|capacity - target|` over the nine imperfect cells.
    pub fn max_abs_deviation(&self, protocol: ProtocolKind) -> f64 {
        self.cells
            .iter()
            .filter(|c| c.protocol == protocol && !c.is_perfect())
            .map(|c| c.deviation().abs())
            .fold(0.0, f64::max)
    }
}

fn table2_sweep(sigma_n_sq: &[f64], plan: &McPlan) -> Result<Vec<Table2>> {
    if plan.trials() < TABLE2_MIN_TRIALS {
        return Err(Error::invalid(format!(
            "capacity table needs at least {TABLE2_MIN_TRIALS} trials per cell, got {}",
            plan.trials()
        )));
    }
    let mut tables: Vec<Table2> = sigma_n_sq
        .iter()
        .map(|&n| Table2 {
            sigma_n_sq: n,
            cells: Vec::new(),
        })
        .collect();
    for protocol in ProtocolKind::ALL {
        let target = target_for(protocol);
        for (h, g, index) in table2_layout() {
            // All protocols share a cell's draws.
            let seed = mix_seed(plan.master_seed(), "table2", index);
            let cfg = SingleAntennaConfig::unit(TABLE2_K, h, g)?;
            let caps = capacity_worst_sweep(protocol, &cfg, sigma_n_sq, &plan.with_seed(seed))?;
            for (table, capacity) in tables.iter_mut().zip(caps) {
                table.cells.push(Table2Cell {
                    protocol,
                    h_est: h,
                    g_est: g,
                    capacity,
                    target: target.at(h, g).expect("layout matches targets"),
                    seed,
                });
            }
        }
    }
    Ok(tables)
}

/// Capacity bounds for all protocols on the published grid plus the
/// perfect-knowledge column, at relay noise `sigma_n_sq`.
pub fn reproduce_table2(sigma_n_sq: f64, plan: &McPlan) -> Result<Table2> {
    Ok(table2_sweep(&[sigma_n_sq], plan)?.remove(0))
}

/// Relay noise values scanned by [`calibrate_sigma_n`]: 0.1 to 2.0 in steps
/// of 0.05.
pub fn calibration_grid() -> Vec<f64> {
    (0..=38).map(|i| (10 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    /// Relay noise minimizing the P1/P2 max-abs deviation.
    pub sigma_n_sq: f64,
    /// `(sigma_n_sq, max deviation P1, P2, P3)` for every scanned value.
    pub scan: Vec<(f64, [f64; 3])>,
    /// The table at the chosen relay noise.
    pub table: Table2,
}

/// Scans the relay noise and keeps the value whose P1 and P2 cells deviate
/// least (max-abs) from the published ones. P3 is reported, not fitted.
pub fn calibrate_sigma_n(plan: &McPlan) -> Result<Calibration> {
    let grid = calibration_grid();
    let tables = table2_sweep(&grid, plan)?;
    let scan: Vec<(f64, [f64; 3])> = tables
        .iter()
        .map(|t| (t.sigma_n_sq, ProtocolKind::ALL.map(|p| t.max_abs_deviation(p))))
        .collect();
    let best = scan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1[0].max(a.1 .1[1]).total_cmp(&b.1 .1[0].max(b.1 .1[1])))
        .map(|(i, _)| i)
        .expect("grid is nonempty");
    Ok(Calibration {
        sigma_n_sq: grid[best],
        scan,
        table: tables.into_iter().nth(best).expect("index in range"),
    })
}

/// Grid-averaged closed-form eSNRs in the order `(P3, P2, P1)`.
pub fn reproduce_esnr_averages(k: usize) -> Result<(f64, f64, f64)> {
    if k < 2 {
        return Err(Error::invalid("grid averages are defined for K >= 2"));
    }
    Ok((
        esnr_grid_average(ProtocolKind::P3, k)?,
        esnr_grid_average(ProtocolKind::P2, k)?,
        esnr_grid_average(ProtocolKind::P1, k)?,
    ))
}

/// Training symbols per protocol.
pub fn timing_table(k: usize) -> Result<Vec<(ProtocolKind, usize)>> {
    ProtocolKind::ALL
        .iter()
        .map(|&p| Ok((p, training_duration(p, k)?)))
        .collect()
}

/// Which estimate variance a figure sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Backward estimate varies, forward estimate held.
    Backward,
    /// Forward estimate varies, backward estimate held.
    Forward,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Backward => "backward",
            SweepAxis::Forward => "forward",
        }
    }

    pub fn mirrored(&self) -> SweepAxis {
        match self {
            SweepAxis::Backward => SweepAxis::Forward,
            SweepAxis::Forward => SweepAxis::Backward,
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backward" => Ok(SweepAxis::Backward),
            "forward" => Ok(SweepAxis::Forward),
            other => Err(Error::invalid(format!(
                "unknown sweep axis {other:?}, expected backward or forward"
            ))),
        }
    }
}

/// One-dimensional sweep over an estimate variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Estimate variance of the other channel.
    pub held: f64,
    pub plan: McPlan,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, values: Vec<f64>, held: f64, plan: McPlan) -> Result<Self> {
        let spec = Self {
            axis,
            values,
            held,
            plan,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The published sweep: 0.1, 0.5, 0.9 against a held 0.9.
    pub fn published(axis: SweepAxis, plan: McPlan) -> Self {
        Self {
            axis,
            values: TABLE2_ESTIMATES.to_vec(),
            held: 0.9,
            plan,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep needs at least one value"));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("sweep values must be strictly increasing"));
        }
        for &v in self.values.iter().chain(std::iter::once(&self.held)) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("estimate variance {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// `(h_est, g_est)` at a sweep value.
    pub fn estimates(&self, value: f64) -> (f64, f64) {
        match self.axis {
            SweepAxis::Backward => (value, self.held),
            SweepAxis::Forward => (self.held, value),
        }
    }
}

/// Noise settings applied on top of the homogeneous unit-variance network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FigureNoise {
    pub sigma_n_sq: f64,
    pub sigma_z_sq: f64,
    pub sigma_zf_sq: f64,
}

impl Default for FigureNoise {
    fn default() -> Self {
        Self {
            sigma_n_sq: 1.0,
            sigma_z_sq: 1.0,
            sigma_zf_sq: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FigureRow {
    pub scheme: SchemeKind,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub axis: SweepAxis,
    pub axis_value: f64,
    pub esnr: EsnrEstimate,
    pub seed: u64,
}

/// Homogeneous unit-variance network for a figure point.
pub fn figure_config(m: usize, n: usize, k: usize, h_est: f64, g_est: f64, noise: &FigureNoise) -> Result<MimoConfig> {
    let mut cfg = MimoConfig::unit(m, n, k, h_est, g_est)?.with_destination_noise(noise.sigma_z_sq);
    cfg.sigma_n_sq = vec![noise.sigma_n_sq; m];
    cfg.sigma_zf_sq = noise.sigma_zf_sq;
    cfg.validate()?;
    Ok(cfg)
}

/// Monte Carlo eSNR of every scheme at every `(N, sweep value)` point.
///
/// A point's seed depends on `(N, value index)` only, so mirrored sweeps and
/// different relay counts reuse the same streams.
pub fn reproduce_figures(
    k: usize,
    m: usize,
    n_range: &[usize],
    sweep: &SweepSpec,
    noise: &FigureNoise,
) -> Result<Vec<FigureRow>> {
    sweep.validate()?;
    if n_range.is_empty() {
        return Err(Error::invalid("antenna range is empty"));
    }
    let mut rows = Vec::with_capacity(n_range.len() * sweep.values.len() * 3);
    for &n in n_range {
        for (vi, &value) in sweep.values.iter().enumerate() {
            let (h, g) = sweep.estimates(value);
            let cfg = figure_config(m, n, k, h, g, noise)?;
            let seed = mix_seed(sweep.plan.master_seed(), "figures", ((n as u64) << 16) | vi as u64);
            let report = simulate_mimo_schemes(&cfg, &sweep.plan.with_seed(seed))?;
            for scheme in SchemeKind::ALL {
                rows.push(FigureRow {
                    scheme,
                    m,
                    n,
                    k,
                    axis: sweep.axis,
                    axis_value: value,
                    esnr: report.scheme(scheme),
                    seed,
                });
            }
        }
    }
    Ok(rows)
}

/// A single output value.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Field {
    /// Floats keep 17 significant digits so they parse back bit-exactly.
    pub fn render(&self) -> String {
        match self {
            Field::Int(v) => v.to_string(),
            Field::Float(v) if v.is_nan() => "NaN".into(),
            Field::Float(v) if v.is_infinite() => if *v > 0.0 { "inf" } else { "-inf" }.into(),
            Field::Float(v) => format!("{v:.16e}"),
            Field::Text(s) => s.clone(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Field::Int(v) => json!(v),
            Field::Float(v) if v.is_finite() => json!(v),
            Field::Float(_) => json!(self.render()),
            Field::Text(s) => json!(s),
        }
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Float(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

impl From<u64> for Field {
    fn from(v: u64) -> Self {
        // Seeds use the full 64 bits; keep them exact as text.
        i64::try_from(v)
            .map(Field::Int)
            .unwrap_or_else(|_| Field::Text(v.to_string()))
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}

/// Column-named rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the column count");
        self.rows.push(row);
    }

    /// Column line and data rows as CSV.
    pub fn csv_body(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("writing to memory");
        for row in &self.rows {
            w.write_record(row.iter().map(Field::render))
                .expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("fields are UTF-8")
    }
}

/// Provenance attached to every output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    /// Fully resolved parameters, in emission order.
    pub params: Vec<(String, String)>,
    /// Caveats downstream comparisons should know about.
    pub notes: Vec<String>,
    /// Taken from `SOURCE_DATE_EPOCH` when set; omitted otherwise so that
    /// reruns are byte-identical.
    pub timestamp: Option<String>,
    /// `sha256:` of the CSV column line and rows.
    pub digest: String,
}

/// A table together with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub manifest: RunManifest,
    pub table: Table,
}

impl Report {
    pub fn new(experiment: &str, seed: u64, params: Vec<(String, String)>, notes: Vec<String>, table: Table) -> Self {
        let digest = format!("sha256:{}", hex::encode(Sha256::digest(table.csv_body().as_bytes())));
        let timestamp = std::env::var("SOURCE_DATE_EPOCH").ok().filter(|s| !s.is_empty());
        Self {
            manifest: RunManifest {
                experiment: experiment.to_string(),
                version: crate::VERSION.to_string(),
                seed,
                params,
                notes,
                timestamp,
                digest,
            },
            table,
        }
    }

    /// `# key: value` header followed by the CSV body.
    pub fn to_csv(&self) -> String {
        let m = &self.manifest;
        let mut out = String::new();
        let mut line = |k: &str, v: &str| {
            out.push_str("# ");
            out.push_str(k);
            out.push_str(": ");
            out.push_str(&v.replace('\n', " "));
            out.push('\n');
        };
        line("experiment", &m.experiment);
        line("version", &m.version);
        line("seed", &m.seed.to_string());
        for (k, v) in &m.params {
            line(&format!("param.{k}"), v);
        }
        for note in &m.notes {
            line("note", note);
        }
        if let Some(ts) = &m.timestamp {
            line("timestamp", ts);
        }
        line("digest", &m.digest);
        out + &self.table.csv_body()
    }

    /// `{"manifest": {...}, "rows": [{column: value, ...}, ...]}`.
    pub fn to_json(&self) -> String {
        let m = &self.manifest;
        let params: Map<String, Value> = m.params.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        let rows: Vec<Value> = self
            .table
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self
                    .table
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, f)| (c.to_string(), f.to_json()))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        let doc = json!({
            "manifest": {
                "experiment": m.experiment,
                "version": m.version,
                "seed": m.seed,
                "params": params,
                "notes": m.notes,
                "timestamp": m.timestamp,
                "digest": m.digest,
            },
            "rows": rows,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("JSON values serialize");
        s.push('\n');
        s
    }
}
