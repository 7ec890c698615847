//! Command-line front end: `run`, `sweep`, `diag` and `spinup`.
//!
//! Settings resolve as preset defaults, then the `--config` file, then
//! flags. The resolved configuration is written to every run manifest.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use toml::{Table, Value};

use crate::config::{parse_overlay, resolve, ExperimentConfig, FilterKind, Preset};
use crate::diagnostics::{
    consistency_ratio, error_and_spread_spectra, ke_spectrum, percent_improvement, write_spectrum, write_spectrum_csv,
    Spectrum,
};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::osse::{
    load, mean_analysis_rmse, mean_file, member_file, run_experiment, spin_up_nature, truth_file, RunDirectory,
    FIELDS_DIR,
};
use crate::sqg::{read_field, write_field, FieldMeta, SqgModel};

/// Environment variable capping the worker threads of a process.
pub const THREADS_ENV: &str = "ENSF_DA_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ensf-da", version, about = "Cycled EnSF / LETKF experiments on a two-surface SQG model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one cycled experiment into `<out>/<preset>_<filter>_<seed>/`.
    Run(RunArgs),
    /// Run a grid of localization / RTPS settings and summarize each cell.
    Sweep(SweepArgs),
    /// Time-averaged spectra from the field dumps of run directories.
    Diag(DiagArgs),
    /// Spin up a nature run and write the final field.
    Spinup(SpinupArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub filter: Option<String>,
    /// TOML file with overrides; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub members: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: ExperimentArgs,
    /// LETKF localization cutoff radius (km).
    #[arg(long = "loc-km")]
    pub loc_km: Option<f64>,
    /// RTPS coefficient of the selected filter.
    #[arg(long)]
    pub rtps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ExperimentArgs,
    /// Value or `start:stop:step` range of localization radii (km).
    #[arg(long = "loc-km")]
    pub loc_km: Option<String>,
    /// Value or `start:stop:step` range of RTPS coefficients.
    #[arg(long)]
    pub rtps: Option<String>,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    /// Run directories; the first is the reference for improvements.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value = "diag")]
    pub out: PathBuf,
    /// First cycle of the time average.
    #[arg(long, default_value_t = 101)]
    pub from: usize,
    /// Last cycle of the time average (default: last dumped cycle).
    #[arg(long)]
    pub to: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpinupArgs {
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Spin-up length (days); defaults to `init.spinup_days`.
    #[arg(long)]
    pub days: Option<f64>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

/// A failure tagged with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("{e}");
        return e.exit_code();
    }
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> std::result::Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    // a pool that already exists (tests calling twice) keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn dispatch(command: Command) -> std::result::Result<(), CliError> {
    match command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Diag(args) => cmd_diag(&args),
        Command::Spinup(args) => cmd_spinup(&args),
    }
}

fn read_layer(path: &Option<PathBuf>) -> std::result::Result<Option<Table>, CliError> {
    let Some(path) = path else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    parse_overlay(&text).map(Some).map_err(usage)
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

fn section<'a>(table: &'a mut Table, name: &str) -> &'a mut Table {
    table
        .entry(name)
        .or_insert_with(|| Value::Table(Table::new()))
        .as_table_mut()
        .expect("section is a table")
}

/// Resolves the experiment for `common` plus extra flag overrides. `extra`
/// sees the filter already selected by the lower layers and the flags.
pub fn resolve_experiment(
    common: &ExperimentArgs,
    extra: impl Fn(FilterKind, &mut Table),
) -> std::result::Result<ExperimentConfig, CliError> {
    let preset = common.preset.as_deref().map(Preset::parse).transpose().map_err(usage)?;
    let mut flags = Table::new();
    if let Some(f) = &common.filter {
        flags.insert("filter".into(), Value::String(FilterKind::parse(f).map_err(usage)?.name().into()));
    }
    if let Some(s) = common.seed {
        let s = i64::try_from(s).map_err(|_| usage(format!("--seed {s} exceeds the config range")))?;
        flags.insert("seed".into(), Value::Integer(s));
    }
    if let Some(c) = common.cycles {
        flags.insert("cycles".into(), int(c));
    }
    if let Some(m) = common.members {
        flags.insert("members".into(), int(m));
    }
    if let Some(g) = common.grid {
        if g != 64 && g != 96 {
            log::warn!("grid {g} is outside the studied 64/96 configurations");
        }
        flags.insert("grid".into(), int(g));
    }
    let mut layers = Vec::new();
    layers.extend(read_layer(&common.config)?);
    layers.push(flags.clone());
    let base = resolve(preset, &layers).map_err(usage)?;
    extra(base.filter, &mut flags);
    *layers.last_mut().expect("flag layer") = flags;
    resolve(preset, &layers).map_err(usage)
}

fn apply_filter_flags(filter: FilterKind, table: &mut Table, loc_km: Option<f64>, rtps: Option<f64>) {
    if let Some(loc) = loc_km {
        section(table, "letkf").insert("loc_km".into(), Value::Float(loc));
    }
    if let Some(r) = rtps {
        let name = match filter {
            FilterKind::Ensf => "ensf",
            _ => "letkf",
        };
        section(table, name).insert("rtps".into(), Value::Float(r));
    }
}

fn check_filter_flags(cfg: &ExperimentConfig, loc_km: bool, rtps: bool) -> std::result::Result<(), CliError> {
    if loc_km && cfg.filter != FilterKind::Letkf {
        return Err(usage(format!("--loc-km only applies to the letkf filter, not {}", cfg.filter.name())));
    }
    if rtps && !matches!(cfg.filter, FilterKind::Letkf | FilterKind::Ensf) {
        return Err(usage(format!("--rtps does not apply to the {} filter", cfg.filter.name())));
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> std::result::Result<(), CliError> {
    let cfg = resolve_experiment(&args.common, |f, t| apply_filter_flags(f, t, args.loc_km, args.rtps))?;
    check_filter_flags(&cfg, args.loc_km.is_some(), args.rtps.is_some())?;
    let mut sink = RunDirectory::new(&args.common.out, &cfg);
    let records = run_experiment(&cfg, &mut sink).map_err(runtime)?;
    let tail = mean_analysis_rmse(&records, time_mean_start(cfg.cycles), cfg.cycles).unwrap_or(f64::NAN);
    println!("{}: {} cycles, time-mean analysis RMSE {tail:.4}", sink.path().display(), records.len());
    Ok(())
}

/// First cycle of the time means: cycle 101 of 300, the final two thirds in
/// general.
pub fn time_mean_start(cycles: usize) -> usize {
    cycles / 3 + 1
}

/// Parses `v` or `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_range(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad range `{text}`: expected a number or start:stop:step"));
    let parts = text.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
    match parts.as_slice() {
        [v] if v.is_finite() => Ok(vec![*v]),
        [start, stop, step] if start.is_finite() && stop.is_finite() && *step > 0.0 && stop >= start => {
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(bad()),
    }
}

/// One row of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SweepCell {
    pub loc_km: f64,
    pub rtps: f64,
    pub time_mean_rmse: f64,
    pub status: String,
    pub run_dir: String,
}

pub const SWEEP_SUMMARY: &str = "sweep_summary.csv";

fn cmd_sweep(args: &SweepArgs) -> std::result::Result<(), CliError> {
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let base = resolve_experiment(&args.common, |_, _| {})?;
    check_filter_flags(&base, args.loc_km.is_some(), args.rtps.is_some())?;
    let locs = match &args.loc_km {
        Some(r) => parse_range(r).map_err(usage)?,
        None => vec![base.letkf.loc_km],
    };
    let default_rtps = if base.filter == FilterKind::Ensf { base.ensf.rtps } else { base.letkf.rtps };
    let rtps = match &args.rtps {
        Some(r) => parse_range(r).map_err(usage)?,
        None => vec![default_rtps],
    };
    let mut cells = Vec::new();
    for &l in &locs {
        for &r in &rtps {
            let cfg = resolve_experiment(&args.common, |f, t| {
                apply_filter_flags(f, t, args.loc_km.is_some().then_some(l), Some(r))
            })?;
            cells.push((l, r, cfg));
        }
    }
    fs::create_dir_all(&args.common.out).map_err(runtime)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build().map_err(runtime)?;
    let rows: Vec<SweepCell> = pool.install(|| {
        cells
            .par_iter()
            .map(|(l, r, cfg)| {
                let dir = args.common.out.join(format!("loc{l}_rtps{r}"));
                let mut sink = RunDirectory::new(&dir, cfg);
                let (mean, status) = match run_experiment(cfg, &mut sink) {
                    Ok(recs) => (
                        mean_analysis_rmse(&recs, time_mean_start(cfg.cycles), cfg.cycles).unwrap_or(f64::NAN),
                        "complete".to_string(),
                    ),
                    Err(e) => {
                        log::warn!("sweep cell loc {l} rtps {r}: {e}");
                        (f64::NAN, "failed".to_string())
                    }
                };
                SweepCell {
                    loc_km: *l,
                    rtps: *r,
                    time_mean_rmse: mean,
                    status,
                    run_dir: sink.path().display().to_string(),
                }
            })
            .collect()
    });
    let path = args.common.out.join(SWEEP_SUMMARY);
    let mut w = csv::Writer::from_path(&path).map_err(runtime)?;
    for row in &rows {
        w.serialize(row).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    println!("{}: {} cells", path.display(), rows.len());
    Ok(())
}

/// Time-averaged spectra of one run.
#[derive(Debug, Clone)]
pub struct RunSpectra {
    pub name: String,
    pub cycles: Vec<usize>,
    pub error: Spectrum,
    pub spread: Option<Spectrum>,
}

/// Reads the dumps of `run` for cycles in `from..=to` and averages the
/// error and (when members were dumped) perturbation spectra. Every missing
/// file is reported.
pub fn run_spectra(run: &Path, from: usize, to: Option<usize>) -> Result<RunSpectra> {
    let (manifest, _) = load(run)?;
    let cfg = &manifest.config;
    let fields = run.join(FIELDS_DIR);
    let mut cycles = dumped_cycles(&fields)?;
    cycles.retain(|&c| c >= from && to.is_none_or(|t| c <= t));
    if cycles.is_empty() {
        return Err(Error::Schema(format!(
            "{}: no truth dumps in cycles {from}..{}",
            fields.display(),
            to.map_or("end".into(), |t| t.to_string())
        )));
    }
    let with_members = cfg.output.dump_members && cfg.members >= 2;
    let mut missing = Vec::new();
    for &c in &cycles {
        let mut names = vec![mean_file(c)];
        if with_members {
            names.extend((0..cfg.members).map(|k| member_file(c, k)));
        }
        for n in names {
            let p = fields.join(&n);
            if !p.exists() {
                missing.push(p.display().to_string());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing field dumps:\n  {}", missing.join("\n  "))));
    }
    let model = SqgModel::new(cfg.model.clone())?;
    let mut errors = Vec::new();
    let mut spreads = Vec::new();
    for &c in &cycles {
        let truth = read_field(&fields.join(truth_file(c)))?.0;
        if with_members {
            let members = (0..cfg.members)
                .map(|k| read_field(&fields.join(member_file(c, k))).map(|f| f.0))
                .collect::<Result<Vec<_>>>()?;
            let (e, s) = error_and_spread_spectra(&Ensemble::from_members(members)?, &truth, &model)?;
            errors.push(e);
            spreads.push(s);
        } else {
            let mean = read_field(&fields.join(mean_file(c)))?.0;
            let diff = mean.iter().zip(&truth).map(|(a, b)| a - b).collect::<Vec<_>>();
            errors.push(ke_spectrum(&diff, &model)?);
        }
    }
    Ok(RunSpectra {
        name: manifest.run_name,
        cycles,
        error: Spectrum::average(&errors)?,
        spread: (!spreads.is_empty()).then(|| Spectrum::average(&spreads)).transpose()?,
    })
}

fn dumped_cycles(fields: &Path) -> Result<Vec<usize>> {
    let entries = fs::read_dir(fields)
        .map_err(|e| Error::Schema(format!("{}: no field dumps ({e})", fields.display())))?;
    let mut cycles = Vec::new();
    for entry in entries {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(c) = name.strip_prefix("truth_").and_then(|s| s.strip_suffix(".bin")) {
            if let Ok(c) = c.parse() {
                cycles.push(c);
            }
        }
    }
    cycles.sort_unstable();
    Ok(cycles)
}

#[derive(Serialize)]
struct DiagMeta<'a> {
    surfaces: &'a str,
    from: usize,
    to: Option<usize>,
    runs: BTreeMap<String, Vec<usize>>,
}

fn cmd_diag(args: &DiagArgs) -> std::result::Result<(), CliError> {
    let mut spectra = Vec::new();
    let mut failures = Vec::new();
    for run in &args.runs {
        match run_spectra(run, args.from, args.to) {
            Ok(s) => spectra.push(s),
            Err(e) => failures.push(format!("{}: {e}", run.display())),
        }
    }
    if !failures.is_empty() {
        return Err(runtime(failures.join("\n")));
    }
    write_diagnostics(&spectra, &args.out, args.from, args.to).map_err(runtime)?;
    println!("{}: spectra for {} run(s)", args.out.display(), spectra.len());
    Ok(())
}

/// Writes `<run>_error.csv`, `<run>_spread.csv`, `<run>_ratio.csv` and
/// `improvement_<candidate>_vs_<reference>.csv` (first run as reference).
pub fn write_diagnostics(spectra: &[RunSpectra], out: &Path, from: usize, to: Option<usize>) -> Result<()> {
    fs::create_dir_all(out)?;
    for s in spectra {
        write_spectrum(&out.join(format!("{}_error.csv", s.name)), &s.error)?;
        if let Some(spread) = &s.spread {
            write_spectrum(&out.join(format!("{}_spread.csv", s.name)), spread)?;
            let ratio = consistency_ratio(spread, &s.error)?;
            write_spectrum_csv(&out.join(format!("{}_ratio.csv", s.name)), &s.error.wavenumbers, &ratio)?;
        }
    }
    if let Some((reference, rest)) = spectra.split_first() {
        for cand in rest {
            let imp = percent_improvement(&reference.error, &cand.error)?;
            let name = format!("improvement_{}_vs_{}.csv", cand.name, reference.name);
            write_spectrum_csv(&out.join(name), &reference.error.wavenumbers, &imp)?;
        }
    }
    let meta = DiagMeta {
        surfaces: "sum",
        from,
        to,
        runs: spectra.iter().map(|s| (s.name.clone(), s.cycles.clone())).collect(),
    };
    fs::write(out.join("diag_meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn cmd_spinup(args: &SpinupArgs) -> std::result::Result<(), CliError> {
    let common = ExperimentArgs {
        preset: Some(args.preset.clone().unwrap_or_else(|| Preset::FreeRun.name().into())),
        filter: None,
        config: args.config.clone(),
        seed: args.seed,
        cycles: None,
        members: None,
        grid: args.grid,
        out: args.out.clone(),
    };
    let mut cfg = resolve_experiment(&common, |_, _| {})?;
    if let Some(d) = args.days {
        if !(d >= 0.0) {
            return Err(usage(format!("--days must be non-negative, got {d}")));
        }
        cfg.init.spinup_days = d;
    }
    let model = SqgModel::new(cfg.model.clone()).map_err(usage)?;
    let field = spin_up_nature(&cfg, &model).map_err(runtime)?;
    fs::create_dir_all(&args.out).map_err(runtime)?;
    let path = args.out.join(format!("nature_{}x{}_{}.bin", cfg.grid, cfg.grid, cfg.seed));
    let meta = FieldMeta {
        nx: cfg.model.nx,
        ny: cfg.model.ny,
        l: cfg.model.l,
        h: cfg.model.h,
        time: cfg.init.spinup_days * crate::sqg::SECONDS_PER_DAY,
        seed: cfg.seed,
    };
    write_field(&path, &field, &meta).map_err(runtime)?;
    let rms = (field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64).sqrt();
    println!("{}: theta RMS {rms:.3} K after {} days", path.display(), cfg.init.spinup_days);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("ensf-da").chain(args.iter().copied())).unwrap().command
    }

    fn common(cmd: &Command) -> &ExperimentArgs {
        match cmd {
            Command::Run(a) => &a.common,
            Command::Sweep(a) => &a.common,
            _ => panic!("no experiment flags"),
        }
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1000:3000:500").unwrap(), vec![1000.0, 1500.0, 2000.0, 2500.0, 3000.0]);
        assert_eq!(parse_range("0.1:0.9:0.2").unwrap().len(), 5);
        assert_eq!(parse_range("0.3").unwrap(), vec![0.3]);
        for bad in ["", "1:2", "3:1:1", "1:2:0", "a:b:c", "1:2:3:4"] {
            assert!(parse_range(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn rtps_flag_follows_the_selected_filter() {
        let cmd = parse(&["run", "--preset", "EXP_L1", "--filter", "letkf", "--loc-km", "2000", "--rtps", "0.3"]);
        let Command::Run(a) = &cmd else { unreachable!() };
        let cfg = resolve_experiment(common(&cmd), |f, t| apply_filter_flags(f, t, a.loc_km, a.rtps)).unwrap();
        assert_eq!(cfg.filter, FilterKind::Letkf);
        assert_eq!((cfg.letkf.loc_km, cfg.letkf.rtps), (2000.0, 0.3));
        assert_eq!(cfg.ensf.rtps, 1.0);

        let cmd = parse(&["run", "--preset", "EXP_L1", "--rtps", "0.5"]);
        let Command::Run(a) = &cmd else { unreachable!() };
        let cfg = resolve_experiment(common(&cmd), |f, t| apply_filter_flags(f, t, a.loc_km, a.rtps)).unwrap();
        assert_eq!(cfg.filter, FilterKind::Ensf);
        assert_eq!(cfg.ensf.rtps, 0.5);
    }

    #[test]
    fn flags_override_config_file_which_overrides_preset() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("exp.toml");
        fs::write(&file, "seed = 5\ncycles = 40\n[letkf]\nrtps = 0.7\nloc_km = 1500.0\n").unwrap();
        let f = file.to_str().unwrap();
        let cmd = parse(&["run", "--preset", "EXP_NL1", "--filter", "letkf", "--config", f, "--seed", "9"]);
        let cfg = resolve_experiment(common(&cmd), |_, _| {}).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.cycles, 40);
        assert_eq!(cfg.letkf.rtps, 0.7);
        let Command::Run(a) = parse(&["run", "--preset", "EXP_NL1", "--filter", "letkf", "--config", f, "--rtps", "0.2"])
        else {
            unreachable!()
        };
        let cfg = resolve_experiment(&a.common, |k, t| apply_filter_flags(k, t, a.loc_km, a.rtps)).unwrap();
        assert_eq!(cfg.letkf.rtps, 0.2);
        assert_eq!(cfg.letkf.loc_km, 1500.0);
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(main_with_args(["ensf-da", "run", "--bogus"]), EXIT_USAGE);
        assert_eq!(main_with_args(["ensf-da"]), EXIT_USAGE);
        assert_eq!(main_with_args(["ensf-da", "run", "--preset", "EXP_X"]), EXIT_USAGE);
        assert_eq!(main_with_args(["ensf-da", "run", "--preset", "EXP_L1", "--config", "/nonexistent.toml"]), EXIT_USAGE);
        assert_eq!(main_with_args(["ensf-da", "run", "--preset", "EXP_L1", "--filter", "ensf", "--loc-km", "10"]), EXIT_USAGE);
        assert_eq!(main_with_args(["ensf-da", "run", "--preset", "EXP_L1", "--members", "1"]), EXIT_USAGE);
    }

    #[test]
    fn runtime_failures_exit_with_three() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nothing_here");
        let out = dir.path().join("d");
        assert_eq!(
            main_with_args(["ensf-da", "diag", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]),
            EXIT_RUNTIME
        );
    }
}
