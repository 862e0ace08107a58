//! Command-line front end for the PAM4 MPI link model.
//!
//! Settings are resolved in three layers: built-in defaults, then the
//! `--config` file, then individual flags.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mpi_pam4::analytic::{AnalyticInputs, B_SQ_MEAN_HALF};
use mpi_pam4::channel::write_raw_dump;
use mpi_pam4::equalizer::{run_two_stage, EqualizerConfig};
use mpi_pam4::genie::realize;
use mpi_pam4::model::{BSqMeanMode, SnrVariant};
use mpi_pam4::sweep::{self, RunFile, SweepAxes, SweepRow, SweepSpec};
use mpi_pam4::{Error, LinkConfig};
use serde::Serialize;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_COMPARE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "mpi-pam4", version, about = "PAM4 link BER under multipath interference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form BER only, over the SNR x MPI values given.
    Analytic,
    /// Simulate one point with the genie canceller.
    Simulate {
        /// Also write the received samples as little-endian f64 (plus a
        /// `.json` sidecar).
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Run the full SNR x MPI x linewidth grid.
    Sweep,
    /// Check a sweep table against the closed form.
    Compare {
        /// Sweep table (CSV, or JSON by extension).
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Two-stage equalizer on a noise-free reflection channel.
    DspDemo,
}

#[derive(Args, Debug, Default)]
struct Opts {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated list for `sweep`; `none` means noise-free.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Vec<String>,
    /// Comma-separated list for `sweep`; `none` means no reflection.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    mpi_db: Vec<String>,
    #[arg(long, global = true, value_delimiter = ',')]
    linewidth_hz: Vec<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    er_db: Option<f64>,
    #[arg(long, global = true)]
    bits: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    taps: Option<usize>,
    #[arg(long, global = true)]
    mu_w: Option<f64>,
    #[arg(long, global = true)]
    mu_b: Option<f64>,
    #[arg(long, global = true, value_enum)]
    b2_mode: Option<B2Mode>,
    #[arg(long = "eq6-variant", global = true, value_enum)]
    snr_variant: Option<Variant>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads for `sweep`; all cores when absent.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum B2Mode {
    Half,
    Empirical,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Variant {
    MpiOnly,
    Literal,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Default)]
enum Format {
    #[default]
    Csv,
    Json,
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME };
        Self { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self { code: EXIT_RUNTIME, message: e.to_string() }
    }
}

type Outcome<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Outcome<()> {
    let resolved = resolve(&cli.opts)?;
    match &cli.command {
        Command::Analytic => analytic(&cli.opts, &resolved),
        Command::Simulate { dump } => simulate(&cli.opts, &resolved, dump.as_deref()),
        Command::Sweep => run_sweep(&cli.opts, &resolved),
        Command::Compare { input } => compare(&cli.opts, &resolved, input),
        Command::DspDemo => dsp_demo(&cli.opts, &resolved),
    }
}

/// Defaults, overlaid with the config file, overlaid with flags.
struct Resolved {
    link: LinkConfig,
    axes: SweepAxes,
    equalizer: EqualizerConfig,
    /// Whether the MPI ratio was set explicitly by file or flag.
    mpi_given: bool,
}

fn parse_optional_db(text: &str, what: &str) -> Outcome<Option<f64>> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|_| Failure::config(format!("--{what}: cannot parse {t:?}")))?;
    // -inf dB reflection and +inf dB SNR both mean "absent".
    Ok(v.is_finite().then_some(v))
}

fn resolve(o: &Opts) -> Outcome<Resolved> {
    let (mut link, mut axes, mut equalizer, mut mpi_given) = match &o.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            let file = RunFile::from_json(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            let mpi_given = file.link.mpi_ratio_db.is_some();
            (file.link, file.sweep, file.equalizer, mpi_given)
        }
        None => (LinkConfig::default(), SweepAxes::default(), EqualizerConfig::default(), false),
    };

    if !o.snr_db.is_empty() {
        let list = o.snr_db.iter().map(|s| parse_optional_db(s, "snr-db")).collect::<Outcome<Vec<_>>>()?;
        if list.len() > 1 && list.iter().any(Option::is_none) {
            return Err(Failure::config("--snr-db lists must be finite"));
        }
        link.snr_db = list[0];
        axes.snr_db_list = list.into_iter().flatten().collect();
    }
    if !o.mpi_db.is_empty() {
        let list = o.mpi_db.iter().map(|s| parse_optional_db(s, "mpi-db")).collect::<Outcome<Vec<_>>>()?;
        link.mpi_ratio_db = list[0];
        axes.mpi_db_list = list;
        mpi_given = true;
    }
    if !o.linewidth_hz.is_empty() {
        link.linewidth_hz = o.linewidth_hz[0];
        axes.linewidth_list = o.linewidth_hz.clone();
    }
    if let Some(er) = o.er_db {
        link.extinction_ratio_db = Some(er);
        link.bias_voltage = None;
    }
    if let Some(b) = o.bits {
        link.n_bits = b;
    }
    if let Some(s) = o.seed {
        link.seed = s;
    }
    if let Some(m) = o.b2_mode {
        link.b_sq_mean_mode = match m {
            B2Mode::Half => BSqMeanMode::AsymptoticHalf,
            B2Mode::Empirical => BSqMeanMode::Empirical,
        };
    }
    if let Some(v) = o.snr_variant {
        link.snr_variant = match v {
            Variant::MpiOnly => SnrVariant::MpiOnly,
            Variant::Literal => SnrVariant::Literal,
        };
    }
    if let Some(t) = o.taps {
        equalizer.n_taps = t;
    }
    if let Some(m) = o.mu_w {
        equalizer.mu_w = m;
    }
    if let Some(m) = o.mu_b {
        equalizer.mu_b = m;
    }
    if o.jobs == Some(0) {
        return Err(Failure::config("--jobs must be at least 1"));
    }
    Ok(Resolved { link, axes, equalizer, mpi_given })
}

fn single_valued(o: &Opts) -> Outcome<()> {
    if o.snr_db.len() > 1 || o.mpi_db.len() > 1 || o.linewidth_hz.len() > 1 {
        return Err(Failure::config("value lists are only accepted by `sweep` and `analytic`"));
    }
    Ok(())
}

fn output(o: &Opts) -> Outcome<Box<dyn Write>> {
    Ok(match &o.out {
        Some(p) => Box::new(io::BufWriter::new(
            File::create(p).map_err(|e| Failure { code: EXIT_RUNTIME, message: format!("{}: {e}", p.display()) })?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_rows(o: &Opts, rows: &[SweepRow]) -> Outcome<()> {
    let out = output(o)?;
    match o.format {
        Format::Csv => sweep::write_csv(rows, out)?,
        Format::Json => sweep::write_json(rows, out)?,
    }
    Ok(())
}

fn write_records<T: Serialize>(o: &Opts, header: &[&str], records: &[Vec<String>], json: &T) -> Outcome<()> {
    let mut out = output(o)?;
    match o.format {
        Format::Csv => {
            writeln!(out, "{}", header.join(","))?;
            for r in records {
                writeln!(out, "{}", r.join(","))?;
            }
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, json)
                .map_err(|e| Failure { code: EXIT_RUNTIME, message: e.to_string() })?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AnalyticRow {
    snr_db: Option<f64>,
    mpi_db: Option<f64>,
    er_db: f64,
    v_b: f64,
    b_sq_mean: f64,
    residual_variance: f64,
    ber_analytic: f64,
}

fn analytic(o: &Opts, r: &Resolved) -> Outcome<()> {
    if r.link.b_sq_mean_mode == BSqMeanMode::Empirical {
        return Err(Failure::config("--b2-mode empirical needs a simulation; use `simulate` or `sweep`"));
    }
    let snrs: Vec<Option<f64>> =
        if o.snr_db.is_empty() { vec![r.link.snr_db] } else { r.axes.snr_db_list.iter().map(|&s| Some(s)).collect() };
    let mpis = if o.mpi_db.is_empty() { vec![r.link.mpi_ratio_db] } else { r.axes.mpi_db_list.clone() };
    let mut rows = Vec::new();
    for &mpi in &mpis {
        for &snr in &snrs {
            let c = LinkConfig { snr_db: snr, mpi_ratio_db: mpi, ..r.link.clone() };
            c.validate()?;
            let inputs = AnalyticInputs {
                rho2: c.rho2(),
                v_b: c.v_b_normalized()?,
                b_sq_mean: B_SQ_MEAN_HALF,
                snr_o_linear: c.snr_linear(),
            };
            rows.push(AnalyticRow {
                snr_db: snr,
                mpi_db: mpi,
                er_db: c.er_db()?,
                v_b: inputs.v_b,
                b_sq_mean: inputs.b_sq_mean,
                residual_variance: inputs.residual_variance()?,
                ber_analytic: inputs.ber(c.snr_variant)?,
            });
        }
    }
    let header = ["snr_db", "mpi_db", "er_db", "v_b", "b_sq_mean", "residual_variance", "ber_analytic"];
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|a| {
            vec![
                a.snr_db.unwrap_or(f64::INFINITY).to_string(),
                a.mpi_db.unwrap_or(f64::NEG_INFINITY).to_string(),
                a.er_db.to_string(),
                a.v_b.to_string(),
                a.b_sq_mean.to_string(),
                a.residual_variance.to_string(),
                a.ber_analytic.to_string(),
            ]
        })
        .collect();
    write_records(o, &header, &records, &rows)
}

fn simulate(o: &Opts, r: &Resolved, dump: Option<&Path>) -> Outcome<()> {
    single_valued(o)?;
    r.link.validate()?;
    let row = sweep::run_row(0, &r.link);
    if let Some(path) = dump {
        let realization = realize(&r.link)?;
        write_raw_dump(path, &realization, &r.link)?;
    }
    write_rows(o, std::slice::from_ref(&row))?;
    if !row.is_ok() {
        return Err(Failure { code: EXIT_RUNTIME, message: row.error });
    }
    Ok(())
}

fn run_sweep(o: &Opts, r: &Resolved) -> Outcome<()> {
    let spec = SweepSpec::new(r.axes.clone(), r.link.clone());
    spec.validate()?;
    let rows = sweep::run_sweep(&spec, o.jobs)?;
    write_rows(o, &rows)?;
    let failed: Vec<&SweepRow> = rows.iter().filter(|row| !row.is_ok()).collect();
    if let Some(first) = failed.first() {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!("{} of {} points failed; first: {}", failed.len(), rows.len(), first.error),
        });
    }
    Ok(())
}

fn compare(o: &Opts, r: &Resolved, input: &Path) -> Outcome<()> {
    let rows = sweep::read_table(input).map_err(|e| Failure::config(format!("{}: {e}", input.display())))?;
    let rows = sweep::with_variant(&rows, &r.link, r.link.snr_variant);
    let report = sweep::compare(&rows, r.link.b_sq_mean_mode)?;
    match o.format {
        Format::Csv => report.write_csv(output(o)?)?,
        Format::Json => {
            let mut out = output(o)?;
            serde_json::to_writer_pretty(&mut out, &report)
                .map_err(|e| Failure { code: EXIT_RUNTIME, message: e.to_string() })?;
            writeln!(out)?;
        }
    }
    eprintln!(
        "{}: {} qualifying points, {} outside the 95% interval, max log deviation {:.4}, {} failed rows",
        if report.pass { "PASS" } else { "FAIL" },
        report.n_qualifying,
        report.n_qualifying_outside_ci,
        report.max_log_deviation,
        report.n_failed_rows,
    );
    if report.pass {
        Ok(())
    } else {
        Err(Failure { code: EXIT_COMPARE, message: "simulation disagrees with the closed form".into() })
    }
}

fn dsp_demo(o: &Opts, r: &Resolved) -> Outcome<()> {
    single_valued(o)?;
    let mut link = r.link.clone();
    if !r.mpi_given {
        link.mpi_ratio_db = Some(-24.0);
    }
    let report = run_two_stage(&link, &r.equalizer)?;
    match o.format {
        Format::Csv => report.write_csv(output(o)?)?,
        Format::Json => {
            let mut out = output(o)?;
            serde_json::to_writer_pretty(&mut out, &report)
                .map_err(|e| Failure { code: EXIT_RUNTIME, message: e.to_string() })?;
            writeln!(out)?;
        }
    }
    let ratio = |s: &mpi_pam4::equalizer::LevelStats| {
        s.get(-3).map_or(f64::NAN, |l| l.variance) / s.get(3).map_or(f64::NAN, |l| l.variance)
    };
    eprintln!(
        "var(-3)/var(+3): raw {:.4}, common bias {:.4}, modified bias {:.4}",
        ratio(&report.before),
        ratio(&report.common_bias),
        ratio(&report.modified_bias)
    );
    eprintln!(
        "mse: stage 1 {:.5}, stage 2 {:.5}; ber: stage 1 {:.3e}, stage 2 {:.3e}; {} symbols analysed",
        report.mse_stage1, report.mse_stage2, report.ber_stage1, report.ber_stage2, report.n_analyzed
    );
    Ok(())
}
