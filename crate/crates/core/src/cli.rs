//! Command-line front end. Every artifact starts with a provenance line
//! and every run prints one JSON summary line on standard output.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backcast::{cnn_backcast, deep_backcast, monthly_moments, shallow_backcast, write_reports_csv, ResidualSet, TrainParams};
use crate::dual::{determination_matrix, diagnostics, fit_beta_with, read_beta_csv, read_rows_csv, write_beta_csv, write_rows_csv, DEFAULT_IMAG_TOLERANCE};
use crate::error::{Error, Result};
use crate::index::{read_index_csv, write_index_csv};
use crate::liquidity::{cost_series, event_study, write_lambda_avg_csv, write_lambda_csv, write_report_csv, EventStudyConfig};
use crate::nn::Activation;
use crate::panel::{build_panels_with, write_fine_csv, write_panels_csv, BucketConfig, PanelSeries, ReferenceStrategy};
use crate::pdo::{beta_symbol, pdo_evolve, write_grid_csv, DiffusionParams, SpectralGrid};
use crate::provenance::{bytes_hash, stamp, Provenance};
use crate::state::{read_state_csv, state_matrix, write_state_csv, VolumeMode};
use crate::synth::{generate, MarketConfig, Shock};
use crate::tape::{parse_tape, summarize, validate, write_tape, ColumnMap, ParsedTape, SideFilter};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "DUALBOOK_OUT";

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dualbook", version, about = "Dual state-space analysis of trade tapes")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a tape.
    Ingest(IngestArgs),
    /// Descriptive statistics of a tape.
    Summarize(SummarizeArgs),
    /// Daily price-bucket panels.
    Panels(PanelsArgs),
    /// Interday correlation state matrix.
    Statespace(StatespaceArgs),
    /// Dual-space operator regression.
    Fit(FitArgs),
    /// Residual backcast of a monthly index.
    Backcast(BackcastArgs),
    /// Trading cost and dynamic Amihud lambda.
    Liquidity(LiquidityArgs),
    /// Event-study hypothesis tests on lambda.
    Eventstudy(EventArgs),
    /// Seeded synthetic tapes and indexes.
    Synth(SynthArgs),
    /// Spectral diffusion demo and propagator symbol.
    PdoDemo(PdoArgs),
    /// Plot-ready long-format CSV from an artifact.
    Plotdata(PlotArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    tape: PathBuf,
    /// Write the accepted records as a canonical tape.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SideArg {
    All,
    Buy,
    Sell,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    tape: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    side: SideArg,
}

#[derive(Debug, Args)]
struct PanelsArgs {
    tape: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the fine sub-cell profiles.
    #[arg(long)]
    fine: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatespaceArgs {
    tape: PathBuf,
    /// buy, sell or imbalance.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    states: PathBuf,
    /// Further state files for the determination matrix.
    #[arg(long = "with", num_args = 1..)]
    with: Vec<PathBuf>,
    /// Beta matrix output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    residuals: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    determination: Option<PathBuf>,
    #[arg(long)]
    imag_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ProtocolArg {
    Shallow,
    Deep,
    Cnn,
}

#[derive(Debug, Args)]
struct BackcastArgs {
    /// Residual rows of the trader trained with index labels.
    #[arg(long)]
    train: PathBuf,
    /// Residual rows of the trader predicted; defaults to `--train`.
    #[arg(long)]
    predict: Option<PathBuf>,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    min_month_days: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LiquidityArgs {
    tape: PathBuf,
    /// Per-bucket pi and lambda.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Daily average lambda.
    #[arg(long)]
    avg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EventArgs {
    #[arg(long)]
    tape: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    permutation_draws: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_traders: Option<usize>,
    #[arg(long)]
    n_days: Option<usize>,
    #[arg(long)]
    g_sent: Option<f64>,
    #[arg(long)]
    g_ret: Option<f64>,
    #[arg(long)]
    g_yield: Option<f64>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    pairing: Option<f64>,
    /// `start:end:volume_mult:spread_mult`, repeatable.
    #[arg(long)]
    shock: Vec<String>,
}

#[derive(Debug, Args)]
struct PdoArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    drift: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    /// Evolved grid output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Beta matrix whose propagator symbol is written to `--symbol`.
    #[arg(long, requires = "symbol")]
    beta: Option<PathBuf>,
    #[arg(long)]
    symbol: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlotKind {
    Heatmap,
    Series,
    Bars,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: PlotKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Configuration file contents. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    /// Output directory for artifacts without an explicit path.
    out: Option<PathBuf>,
    synth: Option<MarketConfig>,
    statespace: Option<StatespaceFile>,
    backcast: Option<BackcastFile>,
    eventstudy: Option<EventFile>,
    pdo: Option<PdoFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatespaceFile {
    mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackcastFile {
    protocol: Option<ProtocolArg>,
    seeds: Option<Vec<u64>>,
    rounds: Option<usize>,
    learning_rate: Option<f64>,
    activation: Option<String>,
    min_month_days: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct EventFile {
    #[serde(flatten)]
    config: Option<EventStudyConfig>,
    seeds: Option<Vec<u64>>,
    activation: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PdoFile {
    n: Option<usize>,
    length: Option<f64>,
    width: Option<f64>,
    drift: Option<f64>,
    sigma2: Option<f64>,
    t: Option<f64>,
}

/// Resolved settings of the diffusion demo.
#[derive(Debug, Clone, Serialize)]
struct PdoSettings {
    n: usize,
    length: f64,
    width: f64,
    drift: f64,
    sigma2: f64,
    t: f64,
}

struct Ctx {
    file: FileConfig,
}

impl Ctx {
    /// Flag, then the file's output directory, then the environment,
    /// then the working directory.
    fn out(&self, flag: Option<PathBuf>, default_name: &str) -> PathBuf {
        if let Some(p) = flag {
            return p;
        }
        let dir = self
            .file
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        dir.join(default_name)
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.file.seed).unwrap_or(0)
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    toml::from_str(&text).map_err(|e| Error::ConfigMismatch(format!("{}: {e}", path.display())))
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path).map(BufReader::new).map_err(|e| io_context(path, e))
}

fn write_artifact(path: &Path, prov: &Provenance, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    body(&mut buf)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_context(dir, e))?;
    }
    fs::write(path, stamp(prov, &buf)).map_err(|e| io_context(path, e))
}

fn read_tape(path: &Path) -> Result<ParsedTape> {
    parse_tape(open(path)?, &ColumnMap::default())
}

fn panels_of(path: &Path) -> Result<PanelSeries> {
    let tape = read_tape(path)?;
    build_panels_with(&tape.records, &BucketConfig::default(), ReferenceStrategy::PriorDayVwap, None)
}

fn trader_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "trader".to_string(), |s| s.to_string_lossy().into_owned())
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

/// Content hash of an input file, so provenance does not depend on where it lives.
fn digest(p: &Path) -> Result<String> {
    let bytes = fs::read(p).map_err(|e| io_context(p, e))?;
    Ok(bytes_hash(&bytes))
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { stdout } else { stderr };
            let _ = write!(sink, "{text}");
            return code;
        }
    };
    match dispatch(cli) {
        Ok(summary) => {
            let _ = writeln!(stdout, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "dualbook: {e}");
            if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_DATA
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<Value> {
    let ctx = Ctx { file: load_config(cli.config.as_deref())? };
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Panels(a) => panels(&ctx, a),
        Command::Statespace(a) => statespace(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Backcast(a) => backcast(&ctx, a),
        Command::Liquidity(a) => liquidity(&ctx, a),
        Command::Eventstudy(a) => eventstudy(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::PdoDemo(a) => pdo_demo(&ctx, a),
        Command::Plotdata(a) => plotdata(&ctx, a),
    }
}

fn ingest(a: IngestArgs) -> Result<Value> {
    let tape = read_tape(&a.tape)?;
    let report = validate(&tape);
    if let Some(out) = &a.out {
        let prov = Provenance::new("ingest", &digest(&a.tape)?, None)?;
        write_artifact(out, &prov, |w| write_tape(&tape.records, w))?;
    }
    Ok(json!({
        "command": "ingest",
        "tape": show(&a.tape),
        "records": report.records,
        "rejected": tape.rejected.len(),
        "rejected_by_reason": report.rejected_by_reason,
        "unknown_side_fraction": report.unknown_side_fraction,
        "unknown_side_flagged": report.unknown_side_flagged,
    }))
}

fn summarize_cmd(a: SummarizeArgs) -> Result<Value> {
    let tape = read_tape(&a.tape)?;
    let side = match a.side {
        SideArg::All => SideFilter::All,
        SideArg::Buy => SideFilter::Buy,
        SideArg::Sell => SideFilter::Sell,
    };
    let s = summarize(&tape.records, side)?;
    Ok(json!({ "command": "summarize", "tape": show(&a.tape), "summary": s }))
}

fn panels(ctx: &Ctx, a: PanelsArgs) -> Result<Value> {
    let series = panels_of(&a.tape)?;
    let prov = Provenance::new("panels", &(digest(&a.tape)?, series.config), None)?;
    let out = ctx.out(a.out, "panels.csv");
    write_artifact(&out, &prov, |w| write_panels_csv(&series, w))?;
    if let Some(fine) = &a.fine {
        write_artifact(fine, &prov, |w| write_fine_csv(&series, w))?;
    }
    Ok(json!({ "command": "panels", "days": series.len(), "out": show(&out) }))
}

fn statespace(ctx: &Ctx, a: StatespaceArgs) -> Result<Value> {
    let mode = a
        .mode
        .or_else(|| ctx.file.statespace.as_ref().and_then(|s| s.mode.clone()))
        .map_or(Ok(VolumeMode::Buy), |m| VolumeMode::parse(&m))?;
    let states = state_matrix(&panels_of(&a.tape)?, mode)?;
    let prov = Provenance::new("statespace", &(digest(&a.tape)?, mode), None)?;
    let out = ctx.out(a.out, "states.csv");
    write_artifact(&out, &prov, |w| write_state_csv(&states, w))?;
    Ok(json!({
        "command": "statespace",
        "mode": mode.name(),
        "rows": states.rows(),
        "cols": states.cols(),
        "out": show(&out),
    }))
}

fn fit(ctx: &Ctx, a: FitArgs) -> Result<Value> {
    let tol = a.imag_tolerance.unwrap_or(DEFAULT_IMAG_TOLERANCE);
    let states = read_state_csv(open(&a.states)?)?;
    let output = fit_beta_with(&states, tol)?;
    let diag = diagnostics(&output, &states)?;
    let prov = Provenance::new("fit", &(digest(&a.states)?, tol), None)?;
    let out = ctx.out(a.out, "beta.csv");
    write_artifact(&out, &prov, |w| write_beta_csv(&output.beta, w))?;
    if let Some(p) = &a.residuals {
        write_artifact(p, &prov, |w| write_rows_csv(&output.dates, &output.residuals, w))?;
    }
    if let Some(p) = &a.predictions {
        write_artifact(p, &prov, |w| write_rows_csv(&output.dates, &output.predictions, w))?;
    }
    let mut summary = json!({
        "command": "fit",
        "rows": diag.rows,
        "rank": diag.rank,
        "max_imag": diag.max_imag,
        "reconstruction_error": diag.reconstruction_error,
        "max_orthogonality_defect": diag.max_orthogonality_defect,
        "max_abs_residual": diag.max_abs_residual,
        "out": show(&out),
    });
    if !a.with.is_empty() {
        let mut outputs = vec![output];
        for p in &a.with {
            outputs.push(fit_beta_with(&read_state_csv(open(p)?)?, tol)?);
        }
        let refs: Vec<_> = outputs.iter().collect();
        let d = determination_matrix(&refs)?;
        let off = (0..d.len())
            .flat_map(|i| (0..d.len()).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| d[i][j])
            .fold(0.0, f64::max);
        summary["max_off_diagonal_determination"] = json!(off);
        if let Some(p) = &a.determination {
            write_artifact(p, &prov, |w| {
                for row in &d {
                    let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    writeln!(w, "{}", vals.join(","))?;
                }
                Ok(())
            })?;
        }
    }
    Ok(summary)
}

fn read_residuals(path: &Path) -> Result<ResidualSet> {
    let (dates, rows) = read_rows_csv(open(path)?)?;
    ResidualSet::new(trader_name(path), dates, rows)
}

fn seeds_from(flag: Option<Vec<u64>>, file: Option<Vec<u64>>, base: u64, count: u64) -> Result<Vec<u64>> {
    let seeds = flag.or(file).unwrap_or_else(|| (base..base + count).collect());
    if seeds.is_empty() {
        return Err(Error::invalid("no seeds given"));
    }
    Ok(seeds)
}

fn backcast(ctx: &Ctx, a: BackcastArgs) -> Result<Value> {
    let f = ctx.file.backcast.as_ref();
    let protocol = a.protocol.or(f.and_then(|f| f.protocol)).unwrap_or(ProtocolArg::Cnn);
    let mut params = match protocol {
        ProtocolArg::Shallow => TrainParams::shallow(),
        ProtocolArg::Deep => TrainParams::deep(),
        ProtocolArg::Cnn => TrainParams::cnn(),
    };
    if let Some(r) = a.rounds.or(f.and_then(|f| f.rounds)) {
        params.rounds = r;
    }
    if let Some(lr) = a.learning_rate.or(f.and_then(|f| f.learning_rate)) {
        params.learning_rate = lr;
    }
    if let Some(act) = a.activation.or(f.and_then(|f| f.activation.clone())) {
        params.activation = Activation::parse(&act)?;
    }
    if let Some(m) = a.min_month_days.or(f.and_then(|f| f.min_month_days)) {
        params.min_month_days = m;
    }
    let seeds = seeds_from(a.seeds, f.and_then(|f| f.seeds.clone()), ctx.seed(a.seed), 6)?;
    let index = read_index_csv(open(&a.index)?, None)?;
    let train_set = read_residuals(&a.train)?;
    let predict_set = match &a.predict {
        Some(p) => read_residuals(p)?,
        None => train_set.clone(),
    };
    let mut report = match protocol {
        ProtocolArg::Shallow => shallow_backcast(&monthly_moments(&train_set), &index, &seeds, &params)?,
        ProtocolArg::Deep => deep_backcast(&train_set, &predict_set, &index, &seeds, &params)?,
        ProtocolArg::Cnn => cnn_backcast(&train_set, &predict_set, &index, &seeds, &params)?,
    };
    if protocol == ProtocolArg::Shallow {
        report.train_trader = train_set.trader.clone();
        report.predict_trader = train_set.trader.clone();
    }
    let settings = (protocol, &params, &seeds, digest(&a.train)?, a.predict.as_deref().map(digest).transpose()?, digest(&a.index)?);
    let prov = Provenance::new("backcast", &settings, seeds.first().copied())?;
    let out = ctx.out(a.out, "backcast.csv");
    write_artifact(&out, &prov, |w| write_reports_csv(std::slice::from_ref(&report), w))?;
    Ok(json!({
        "command": "backcast",
        "protocol": protocol,
        "index": index.name.name(),
        "seeds": seeds,
        "runs": report.runs,
        "mean": report.mean,
        "dispersion": report.dispersion,
        "band_covers_zero": report.band_covers_zero(),
        "undefined_runs": report.undefined_runs,
        "out": show(&out),
    }))
}

fn liquidity(ctx: &Ctx, a: LiquidityArgs) -> Result<Value> {
    let costs = cost_series(&panels_of(&a.tape)?)?;
    let prov = Provenance::new("liquidity", &digest(&a.tape)?, None)?;
    let out = ctx.out(a.out, "lambda.csv");
    write_artifact(&out, &prov, |w| write_lambda_csv(&costs, w))?;
    if let Some(p) = &a.avg {
        write_artifact(p, &prov, |w| write_lambda_avg_csv(&costs, w))?;
    }
    let defined: Vec<f64> = costs.lambda_avg.iter().copied().filter(|v| v.is_finite()).collect();
    let illiquid: usize = costs.illiquid.iter().map(|d| d.iter().filter(|f| **f).count()).sum();
    Ok(json!({
        "command": "liquidity",
        "days": costs.len(),
        "mean_lambda": crate::stats::mean(&defined),
        "illiquid_cells": illiquid,
        "out": show(&out),
    }))
}

fn eventstudy(ctx: &Ctx, a: EventArgs) -> Result<Value> {
    let f = ctx.file.eventstudy.as_ref();
    let mut config = f.and_then(|f| f.config.clone()).unwrap_or_default();
    if let Some(r) = a.rounds {
        config.rounds = r;
    }
    if let Some(lr) = a.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(d) = a.permutation_draws {
        config.permutation_draws = d;
    }
    let activation = a
        .activation
        .or(f.and_then(|f| f.activation.clone()))
        .map_or(Ok(Activation::ReLU), |s| Activation::parse(&s))?;
    let seeds = seeds_from(a.seeds, f.and_then(|f| f.seeds.clone()), ctx.seed(a.seed), 5)?;
    let index = read_index_csv(open(&a.index)?, None)?;
    let costs = cost_series(&panels_of(&a.tape)?)?;
    let report = event_study(&costs, &index, &config, activation, &seeds)?;
    let prov = Provenance::new("eventstudy", &(&config, activation, &seeds, digest(&a.tape)?, digest(&a.index)?), seeds.first().copied())?;
    let out = ctx.out(a.out, "eventstudy.csv");
    write_artifact(&out, &prov, |w| write_report_csv(std::slice::from_ref(&report), w))?;
    Ok(json!({
        "command": "eventstudy",
        "index": index.name.name(),
        "reference_pearson": report.reference_pearson,
        "reference_spearman": report.reference_spearman,
        "windows": report.windows,
        "rejections_10pct": report.rejections(0.10),
        "out": show(&out),
    }))
}

fn parse_shock(s: &str) -> Result<Shock> {
    let bad = || Error::invalid(format!("shock '{s}' is not start:end:volume_mult:spread_mult"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 4 {
        return Err(bad());
    }
    Ok(Shock {
        start: parts[0].parse().map_err(|_| bad())?,
        end: parts[1].parse().map_err(|_| bad())?,
        volume_mult: parts[2].parse().map_err(|_| bad())?,
        spread_mult: parts[3].parse().map_err(|_| bad())?,
    })
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<Value> {
    let mut cfg = ctx.file.synth.clone().unwrap_or_default();
    if let Some(s) = a.seed.or(ctx.file.seed) {
        cfg.seed = s;
    }
    let overrides = [
        (a.g_sent, &mut cfg.couplings.g_sent),
        (a.g_ret, &mut cfg.couplings.g_ret),
        (a.g_yield, &mut cfg.couplings.g_yield),
    ];
    for (flag, slot) in overrides {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(v) = a.n_traders {
        cfg.n_traders = v;
    }
    if let Some(v) = a.n_days {
        cfg.n_days = v;
    }
    if let Some(v) = a.spread {
        cfg.spread = v;
    }
    if let Some(v) = a.pairing {
        cfg.pairing = v;
    }
    for s in &a.shock {
        cfg.shocks.push(parse_shock(s)?);
    }
    let (tapes, truth) = generate(&cfg)?;
    let prov = Provenance::new("synth", &cfg, Some(cfg.seed))?;
    let dir = a.out.unwrap_or_else(|| ctx.out(None, ""));
    for (i, t) in tapes.iter().enumerate() {
        write_artifact(&dir.join(format!("t{i}.csv")), &prov, |w| write_tape(t, w))?;
    }
    for s in &truth.indexes {
        write_artifact(&dir.join(format!("index_{}.csv", s.name.name())), &prov, |w| write_index_csv(s, w))?;
    }
    let truth_path = dir.join("truth.json");
    let doc = json!({ "provenance": prov, "config": cfg, "truth": truth });
    fs::write(&truth_path, serde_json::to_string(&doc)? + "\n").map_err(|e| io_context(&truth_path, e))?;
    Ok(json!({
        "command": "synth",
        "seed": cfg.seed,
        "tapes": tapes.len(),
        "trades": tapes.iter().map(Vec::len).collect::<Vec<_>>(),
        "out": show(&dir),
    }))
}

fn pdo_demo(ctx: &Ctx, a: PdoArgs) -> Result<Value> {
    let f = ctx.file.pdo.as_ref();
    let s = PdoSettings {
        n: a.n.or(f.and_then(|f| f.n)).unwrap_or(256),
        length: a.length.or(f.and_then(|f| f.length)).unwrap_or(40.0),
        width: a.width.or(f.and_then(|f| f.width)).unwrap_or(1.0),
        drift: a.drift.or(f.and_then(|f| f.drift)).unwrap_or(0.0),
        sigma2: a.sigma2.or(f.and_then(|f| f.sigma2)).unwrap_or(0.5),
        t: a.t.or(f.and_then(|f| f.t)).unwrap_or(1.0),
    };
    if s.n < 2 || !(s.length > 0.0 && s.width > 0.0) {
        return Err(Error::invalid("demo grid needs n >= 2 and positive length and width"));
    }
    let h = s.length / s.n as f64;
    let w2 = s.width * s.width;
    let grid = SpectralGrid::sample_1d(s.n, -s.length / 2.0, h, |x| (-x * x / (2.0 * w2)).exp())?;
    let params = DiffusionParams::scalar(s.drift, s.sigma2)?;
    let evolved = pdo_evolve(&grid, &params, s.t)?;
    // Closed form: the Gaussian widens by 2 sigma2 t and moves by -drift t.
    let v = w2 + 2.0 * s.sigma2 * s.t;
    let max_error = grid
        .axis(0)
        .iter()
        .zip(&evolved.values)
        .map(|(x, got)| {
            let y = x + s.drift * s.t;
            let want = (w2 / v).sqrt() * (-y * y / (2.0 * v)).exp();
            (got - Complex64::new(want, 0.0)).norm()
        })
        .fold(0.0, f64::max);
    let prov = Provenance::new("pdo-demo", &s, None)?;
    let out = ctx.out(a.out, "pdo_grid.csv");
    write_artifact(&out, &prov, |w| write_grid_csv(&evolved, w))?;
    let mut summary = json!({
        "command": "pdo-demo",
        "settings": s,
        "max_error": max_error,
        "mass_in": grid.sum().re,
        "mass_out": evolved.sum().re,
        "out": show(&out),
    });
    if let (Some(b), Some(sym)) = (&a.beta, &a.symbol) {
        let beta = read_beta_csv(open(b)?)?;
        let symbol = beta_symbol(&beta, 0.0, s.t)?;
        write_artifact(sym, &prov, |w| write_beta_csv(&symbol, w))?;
        summary["symbol"] = json!(show(sym));
    }
    Ok(summary)
}

/// Non-comment lines of a CSV artifact split into header and rows.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut header = None;
    let mut rows = Vec::new();
    for line in open(path)?.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if header.is_none() {
            header = Some(fields);
        } else {
            rows.push(fields);
        }
    }
    Ok((header.unwrap_or_default(), rows))
}

fn plotdata(ctx: &Ctx, a: PlotArgs) -> Result<Value> {
    let (header, rows) = read_table(&a.input)?;
    let mut body = String::new();
    let mut count = 0usize;
    match a.kind {
        PlotKind::Heatmap => {
            body.push_str("x,y,value\n");
            for row in &rows {
                if row.len() != header.len() {
                    return Err(Error::shape(format!("row of {} fields under a header of {}", row.len(), header.len())));
                }
                for (j, field) in row.iter().enumerate().skip(1) {
                    if let Ok(v) = field.parse::<f64>() {
                        body.push_str(&format!("{},{},{v}\n", row[0], header[j]));
                        count += 1;
                    }
                }
            }
        }
        PlotKind::Series | PlotKind::Bars => {
            let key = if a.kind == PlotKind::Series { "date" } else { "label" };
            if !header.is_empty() && header.len() != 2 {
                return Err(Error::shape(format!("{:?} needs two columns, found {}", a.kind, header.len())));
            }
            body.push_str(&format!("{key},value\n"));
            for row in &rows {
                if row.len() != 2 {
                    return Err(Error::shape(format!("row of {} fields, expected 2", row.len())));
                }
                let v: f64 = row[1]
                    .parse()
                    .map_err(|_| Error::invalid(format!("non-numeric value '{}'", row[1])))?;
                body.push_str(&format!("{},{v}\n", row[0]));
                count += 1;
            }
        }
    }
    let prov = Provenance::new("plotdata", &(digest(&a.input)?, format!("{:?}", a.kind)), None)?;
    let out = ctx.out(a.out, "plot.csv");
    write_artifact(&out, &prov, |w| {
        w.extend_from_slice(body.as_bytes());
        Ok(())
    })?;
    Ok(json!({ "command": "plotdata", "kind": format!("{:?}", a.kind).to_lowercase(), "rows": count, "out": show(&out) }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("dualbook").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_capture(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["fit"]).0, EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("eventstudy"));
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let (code, _, err) = run_capture(&["ingest", "/nonexistent/tape.csv"]);
        assert_eq!(code, EXIT_DATA);
        assert!(err.contains("/nonexistent/tape.csv"));
    }

    #[test]
    fn shock_flag_parses() {
        let s = parse_shock("240:300:1:3").unwrap();
        assert_eq!((s.start, s.end, s.volume_mult, s.spread_mult), (240, 300, 1.0, 3.0));
        assert!(parse_shock("1:2:3").is_err());
    }

    #[test]
    fn file_config_accepts_partial_tables() {
        let c: FileConfig = toml::from_str("seed = 3\n[synth]\nn_traders = 2\n[synth.couplings]\ng_yield = 0.5\n").unwrap();
        let s = c.synth.unwrap();
        assert_eq!(s.n_traders, 2);
        assert_eq!(s.couplings.g_yield, 0.5);
        assert_eq!(s.couplings.g_sent, MarketConfig::default().couplings.g_sent);
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }
}
