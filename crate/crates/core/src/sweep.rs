//! Parameter sweeps, tables and simulation-vs-analytic comparison.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::analytic::config_ber;
use crate::equalizer::EqualizerConfig;
use crate::error::{Error, Result};
use crate::genie::run_point;
use crate::model::{BSqMeanMode, LinkConfig, SnrVariant};
use crate::rng::point_seed;

/// Analytic BER below which simulation disagreement is tolerated.
pub const BER_QUALIFY_THRESHOLD: f64 = 1e-4;

/// Two-sided confidence level of the binomial acceptance interval.
pub const CI_LEVEL: f64 = 0.95;

/// Sweep axes as they appear under `"sweep"` in a run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub snr_db_list: Vec<f64>,
    /// `null` entries mean no reflection.
    pub mpi_db_list: Vec<Option<f64>>,
    pub linewidth_list: Vec<f64>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            snr_db_list: (12..=22).map(f64::from).collect(),
            mpi_db_list: vec![Some(-30.0), Some(-27.0), Some(-24.0), Some(-21.0)],
            linewidth_list: vec![1e6, 1e7],
        }
    }
}

/// A full grid: axes plus the template every point is derived from.
///
/// Point seeds are mixed from `base.seed` and the grid index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axes: SweepAxes,
    pub base: LinkConfig,
}

impl SweepSpec {
    pub fn new(axes: SweepAxes, base: LinkConfig) -> Self {
        Self { axes, base }
    }

    pub fn len(&self) -> usize {
        self.axes.snr_db_list.len() * self.axes.mpi_db_list.len() * self.axes.linewidth_list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.axes;
        if a.snr_db_list.is_empty() || a.mpi_db_list.is_empty() || a.linewidth_list.is_empty() {
            return Err(Error::InvalidConfig("sweep lists must be non-empty".into()));
        }
        self.points().try_for_each(|(_, c)| c.validate())
    }

    /// Grid points in index order: linewidth-major, then MPI, then SNR.
    pub fn points(&self) -> impl Iterator<Item = (usize, LinkConfig)> + '_ {
        let a = &self.axes;
        a.linewidth_list
            .iter()
            .flat_map(move |&lw| a.mpi_db_list.iter().map(move |&mpi| (lw, mpi)))
            .flat_map(move |(lw, mpi)| a.snr_db_list.iter().map(move |&snr| (lw, mpi, snr)))
            .enumerate()
            .map(move |(index, (lw, mpi, snr))| {
                let config = LinkConfig {
                    linewidth_hz: lw,
                    mpi_ratio_db: mpi,
                    snr_db: Some(snr),
                    seed: point_seed(self.base.seed, index),
                    ..self.base.clone()
                };
                (index, config)
            })
    }

    pub fn point(&self, index: usize) -> Option<LinkConfig> {
        self.points().nth(index).map(|(_, c)| c)
    }
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub grid_index: usize,
    pub snr_db: f64,
    /// `-inf` when there is no reflection.
    pub mpi_db: f64,
    pub linewidth_hz: f64,
    pub er_db: f64,
    pub n_bits: u64,
    pub seed: u64,
    pub ber_analytic_half: f64,
    pub ber_analytic_empirical: f64,
    pub ber_sim: f64,
    pub n_errors: u64,
    pub residual_mse_emp: f64,
    pub b_sq_mean_emp: f64,
    pub error: String,
}

impl SweepRow {
    fn skeleton(index: usize, c: &LinkConfig) -> Self {
        Self {
            grid_index: index,
            snr_db: c.snr_db.unwrap_or(f64::INFINITY),
            mpi_db: c.mpi_ratio_db.unwrap_or(f64::NEG_INFINITY),
            linewidth_hz: c.linewidth_hz,
            er_db: c.er_db().unwrap_or(f64::NAN),
            n_bits: c.n_bits as u64,
            seed: c.seed,
            ber_analytic_half: f64::NAN,
            ber_analytic_empirical: f64::NAN,
            ber_sim: f64::NAN,
            n_errors: 0,
            residual_mse_emp: f64::NAN,
            b_sq_mean_emp: f64::NAN,
            error: String::new(),
        }
    }

    /// Configuration this row was produced from, given the sweep template.
    pub fn config(&self, base: &LinkConfig) -> LinkConfig {
        LinkConfig {
            snr_db: self.snr_db.is_finite().then_some(self.snr_db),
            mpi_ratio_db: self.mpi_db.is_finite().then_some(self.mpi_db),
            linewidth_hz: self.linewidth_hz,
            extinction_ratio_db: Some(self.er_db),
            bias_voltage: None,
            n_bits: self.n_bits as usize,
            seed: self.seed,
            ..base.clone()
        }
    }

    pub fn ber_analytic(&self, mode: BSqMeanMode) -> f64 {
        match mode {
            BSqMeanMode::AsymptoticHalf => self.ber_analytic_half,
            BSqMeanMode::Empirical => self.ber_analytic_empirical,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }
}

fn analytic_pair(c: &LinkConfig, b_sq_emp: f64) -> Result<(f64, f64)> {
    let half = config_ber(&LinkConfig { b_sq_mean_mode: BSqMeanMode::AsymptoticHalf, ..c.clone() }, None)?;
    let emp = config_ber(&LinkConfig { b_sq_mean_mode: BSqMeanMode::Empirical, ..c.clone() }, Some(b_sq_emp))?;
    Ok((half, emp))
}

/// Simulates one grid point; failures land in the `error` column.
pub fn run_row(index: usize, config: &LinkConfig) -> SweepRow {
    let mut row = SweepRow::skeleton(index, config);
    let outcome = run_point(config).and_then(|p| {
        let (half, emp) = analytic_pair(config, p.b_sq_mean_empirical)?;
        Ok((p, half, emp))
    });
    match outcome {
        Ok((p, half, emp)) => {
            row.ber_analytic_half = half;
            row.ber_analytic_empirical = emp;
            row.ber_sim = p.ber_sim;
            row.n_errors = p.n_bit_errors;
            row.n_bits = p.n_bits;
            row.residual_mse_emp = p.residual_mse_empirical;
            row.b_sq_mean_emp = p.b_sq_mean_empirical;
        }
        Err(e) => row.error = e.to_string(),
    }
    row
}

/// Runs every grid point on up to `jobs` worker threads (all cores when
/// `None`). Rows come back sorted by grid index.
pub fn run_sweep(spec: &SweepSpec, jobs: Option<usize>) -> Result<Vec<SweepRow>> {
    if spec.is_empty() {
        return Err(Error::InvalidConfig("sweep lists must be non-empty".into()));
    }
    let points: Vec<(usize, LinkConfig)> = spec.points().collect();
    let mut rows: Vec<SweepRow> = match jobs {
        Some(1) => points.iter().map(|(i, c)| run_row(*i, c)).collect(),
        _ => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.unwrap_or(0))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
            pool.install(|| points.par_iter().map(|(i, c)| run_row(*i, c)).collect())
        }
    };
    rows.sort_by_key(|r| r.grid_index);
    Ok(rows)
}

/// Recomputes both analytic columns for another reading of the effective
/// SNR, keeping the simulated columns.
pub fn with_variant(rows: &[SweepRow], base: &LinkConfig, variant: SnrVariant) -> Vec<SweepRow> {
    rows.iter()
        .map(|row| {
            let mut out = row.clone();
            if row.is_ok() {
                let c = LinkConfig { snr_variant: variant, ..row.config(base) };
                match analytic_pair(&c, row.b_sq_mean_emp) {
                    Ok((half, emp)) => {
                        out.ber_analytic_half = half;
                        out.ber_analytic_empirical = emp;
                    }
                    Err(e) => out.error = e.to_string(),
                }
            }
            out
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

/// Column order of the sweep CSV.
pub const CSV_COLUMNS: [&str; 14] = [
    "grid_index",
    "snr_db",
    "mpi_db",
    "linewidth_hz",
    "er_db",
    "n_bits",
    "seed",
    "ber_analytic_half",
    "ber_analytic_empirical",
    "ber_sim",
    "n_errors",
    "residual_mse_emp",
    "b_sq_mean_emp",
    "error",
];

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Format(format!("unexpected sweep columns {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_json<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    #[derive(Deserialize)]
    struct Loose {
        grid_index: usize,
        snr_db: Option<f64>,
        mpi_db: Option<f64>,
        linewidth_hz: f64,
        er_db: Option<f64>,
        n_bits: u64,
        seed: u64,
        ber_analytic_half: Option<f64>,
        ber_analytic_empirical: Option<f64>,
        ber_sim: Option<f64>,
        n_errors: u64,
        residual_mse_emp: Option<f64>,
        b_sq_mean_emp: Option<f64>,
        error: String,
    }
    // JSON has no non-finite numbers; they come back as null.
    let loose: Vec<Loose> = serde_json::from_reader(input)?;
    Ok(loose
        .into_iter()
        .map(|l| SweepRow {
            grid_index: l.grid_index,
            snr_db: l.snr_db.unwrap_or(f64::INFINITY),
            mpi_db: l.mpi_db.unwrap_or(f64::NEG_INFINITY),
            linewidth_hz: l.linewidth_hz,
            er_db: l.er_db.unwrap_or(f64::NAN),
            n_bits: l.n_bits,
            seed: l.seed,
            ber_analytic_half: l.ber_analytic_half.unwrap_or(f64::NAN),
            ber_analytic_empirical: l.ber_analytic_empirical.unwrap_or(f64::NAN),
            ber_sim: l.ber_sim.unwrap_or(f64::NAN),
            n_errors: l.n_errors,
            residual_mse_emp: l.residual_mse_emp.unwrap_or(f64::NAN),
            b_sq_mean_emp: l.b_sq_mean_emp.unwrap_or(f64::NAN),
            error: l.error,
        })
        .collect())
}

/// Reads a table, picking the format from the file extension.
pub fn read_table(path: &Path) -> Result<Vec<SweepRow>> {
    let f = std::fs::File::open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_json(f),
        _ => read_csv(f),
    }
}

/// Central `CI_LEVEL` acceptance interval `[lo, hi]` of the error count
/// for `n` Bernoulli trials with probability `p`.
pub fn binomial_interval(p: f64, n: u64) -> Result<(u64, u64)> {
    if n == 0 {
        return Err(Error::Empty("trials"));
    }
    let tail = (1.0 - CI_LEVEL) / 2.0;
    let b = Binomial::new(p.clamp(0.0, 1.0), n).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok((b.inverse_cdf(tail), b.inverse_cdf(1.0 - tail)))
}

/// Agreement of one sweep row with its analytic value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointAgreement {
    pub grid_index: usize,
    pub snr_db: f64,
    pub mpi_db: f64,
    pub linewidth_hz: f64,
    pub ber_analytic: f64,
    pub ber_sim: f64,
    pub n_errors: u64,
    pub ci_lo: u64,
    pub ci_hi: u64,
    /// `|log10 ber_sim - log10 ber_analytic| / |log10 ber_analytic|`.
    pub log_deviation: f64,
    pub within_ci: bool,
    /// Counted towards the pass metric (analytic BER above the threshold).
    pub qualifying: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub points: Vec<PointAgreement>,
    pub n_qualifying: usize,
    pub n_qualifying_outside_ci: usize,
    pub max_log_deviation: f64,
    pub pass: bool,
    /// Rows skipped because their simulation failed.
    pub n_failed_rows: usize,
}

/// Compares simulated and analytic BER point by point.
pub fn compare(rows: &[SweepRow], mode: BSqMeanMode) -> Result<AgreementReport> {
    if rows.is_empty() {
        return Err(Error::Empty("sweep table"));
    }
    let mut points = Vec::with_capacity(rows.len());
    let mut n_failed_rows = 0;
    for row in rows {
        let analytic = row.ber_analytic(mode);
        if !row.is_ok() || !analytic.is_finite() || !row.ber_sim.is_finite() {
            n_failed_rows += 1;
            continue;
        }
        let (ci_lo, ci_hi) = binomial_interval(analytic, row.n_bits)?;
        let log_deviation = if analytic > 0.0 && analytic < 1.0 {
            // A zero count sits at the 1/n floor on a log axis.
            let sim = row.ber_sim.max(1.0 / row.n_bits as f64);
            (sim.log10() - analytic.log10()).abs() / analytic.log10().abs()
        } else {
            f64::NAN
        };
        points.push(PointAgreement {
            grid_index: row.grid_index,
            snr_db: row.snr_db,
            mpi_db: row.mpi_db,
            linewidth_hz: row.linewidth_hz,
            ber_analytic: analytic,
            ber_sim: row.ber_sim,
            n_errors: row.n_errors,
            ci_lo,
            ci_hi,
            log_deviation,
            within_ci: (ci_lo..=ci_hi).contains(&row.n_errors),
            qualifying: analytic > BER_QUALIFY_THRESHOLD,
        });
    }
    let qualifying: Vec<&PointAgreement> = points.iter().filter(|p| p.qualifying).collect();
    let n_qualifying_outside_ci = qualifying.iter().filter(|p| !p.within_ci).count();
    let max_log_deviation = qualifying.iter().map(|p| p.log_deviation).fold(0.0, f64::max);
    Ok(AgreementReport {
        n_qualifying: qualifying.len(),
        n_qualifying_outside_ci,
        max_log_deviation,
        pass: n_failed_rows == 0 && n_qualifying_outside_ci == 0,
        points,
        n_failed_rows,
    })
}

impl AgreementReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Contents of a run file: a flat link configuration plus optional
/// `"sweep"` and `"equalizer"` objects.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunFile {
    pub link: LinkConfig,
    pub sweep: SweepAxes,
    pub equalizer: EqualizerConfig,
}

impl RunFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value.as_object_mut().ok_or_else(|| Error::InvalidConfig("run file must be a JSON object".into()))?;
        let sweep = obj.remove("sweep").map(serde_json::from_value).transpose()?.unwrap_or_default();
        let equalizer = obj.remove("equalizer").map(serde_json::from_value).transpose()?.unwrap_or_default();
        let link = serde_json::from_value(value)?;
        Ok(Self { link, sweep, equalizer })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
