//! Cycled twin experiments: a nature run observed every window, an ensemble
//! forecast of the same model, and an analysis by the selected filter.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, FilterKind, Preset};
use crate::ensemble::{decompose, Ensemble};
use crate::ensf::{ensf_analysis, LikelihoodModel};
use crate::error::{Error, Result};
use crate::letkf::letkf_analysis;
use crate::obs::{apply_shocks, make_network, observe_with_noise_scale, ObsKind, ObservationBatch};
use crate::rng::{substream, Stream};
use crate::sqg::{write_field, FieldMeta, SqgModel, SqgState, SECONDS_PER_DAY};

/// Version of the run-directory layout written by [`RunDirectory`].
pub const SCHEMA_VERSION: u32 = 1;

pub const RECORDS_FILE: &str = "records.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FIELDS_DIR: &str = "fields";

/// Diagnostics of one assimilation cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub prior_rmse: f64,
    pub analysis_rmse: f64,
    pub mean_spread: f64,
    pub wall_ms: f64,
}

impl CycleRecord {
    /// Equality ignoring wall time.
    pub fn same_diagnostics(&self, other: &Self) -> bool {
        self.cycle == other.cycle
            && self.prior_rmse.to_bits() == other.prior_rmse.to_bits()
            && self.analysis_rmse.to_bits() == other.analysis_rmse.to_bits()
            && self.mean_spread.to_bits() == other.mean_spread.to_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

/// Self-describing summary stored next to the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub run_name: String,
    pub preset: Preset,
    pub filter: FilterKind,
    pub seed: u64,
    pub config_hash: String,
    pub status: RunStatus,
    pub cycles_completed: usize,
    #[serde(default)]
    pub failed_cycle: Option<usize>,
    #[serde(default)]
    pub failure: Option<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            run_name: config.run_name(),
            preset: config.preset,
            filter: config.filter,
            seed: config.seed,
            config_hash: config.content_hash()?,
            status: RunStatus::Running,
            cycles_completed: 0,
            failed_cycle: None,
            failure: None,
            config: config.clone(),
        })
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Complete,
    Failed { cycle: usize, message: String },
}

/// Receives the products of a run as they appear.
pub trait RunSink {
    fn start(&mut self, _config: &ExperimentConfig) -> Result<()> {
        Ok(())
    }

    fn record(&mut self, record: &CycleRecord) -> Result<()>;

    /// Called at the dump cycles selected by `output.*`.
    fn fields(&mut self, _cycle: usize, _truth: &[f64], _analysis: &Ensemble, _time: f64) -> Result<()> {
        Ok(())
    }

    fn finish(&mut self, _outcome: &Outcome) -> Result<()> {
        Ok(())
    }
}

/// Keeps records in memory and drops fields.
impl RunSink for Vec<CycleRecord> {
    fn record(&mut self, record: &CycleRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Run directory `<out>/<preset>_<filter>_<seed>/` holding the records CSV,
/// the manifest and optional field dumps. Records are flushed every cycle so
/// an aborted run leaves everything up to the failure on disk.
pub struct RunDirectory {
    root: PathBuf,
    writer: Option<csv::Writer<File>>,
    manifest: Option<Manifest>,
}

impl RunDirectory {
    pub fn new(out: &Path, config: &ExperimentConfig) -> Self {
        Self {
            root: out.join(config.run_name()),
            writer: None,
            manifest: None,
        }
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    fn write_manifest(&self) -> Result<()> {
        if let Some(m) = &self.manifest {
            fs::write(self.root.join(MANIFEST_FILE), serde_json::to_string_pretty(m)?)?;
        }
        Ok(())
    }
}

impl RunSink for RunDirectory {
    fn start(&mut self, config: &ExperimentConfig) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        let stale = self.root.join(FIELDS_DIR);
        if stale.exists() {
            fs::remove_dir_all(&stale)?;
        }
        self.writer = Some(csv::Writer::from_path(self.root.join(RECORDS_FILE))?);
        self.manifest = Some(Manifest::new(config)?);
        self.write_manifest()
    }

    fn record(&mut self, record: &CycleRecord) -> Result<()> {
        let w = self.writer.as_mut().ok_or_else(|| Error::Schema("run directory not started".into()))?;
        w.serialize(record)?;
        w.flush()?;
        if let Some(m) = &mut self.manifest {
            m.cycles_completed = record.cycle;
        }
        Ok(())
    }

    fn fields(&mut self, cycle: usize, truth: &[f64], analysis: &Ensemble, time: f64) -> Result<()> {
        let m = self.manifest.as_ref().ok_or_else(|| Error::Schema("run directory not started".into()))?;
        let cfg = &m.config;
        let meta = FieldMeta {
            nx: cfg.model.nx,
            ny: cfg.model.ny,
            l: cfg.model.l,
            h: cfg.model.h,
            time,
            seed: cfg.seed,
        };
        let dir = self.root.join(FIELDS_DIR);
        fs::create_dir_all(&dir)?;
        write_field(&dir.join(truth_file(cycle)), truth, &meta)?;
        write_field(&dir.join(mean_file(cycle)), &analysis.mean(), &meta)?;
        if cfg.output.dump_members {
            for (k, member) in analysis.members().enumerate() {
                write_field(&dir.join(member_file(cycle, k)), member, &meta)?;
            }
        }
        Ok(())
    }

    fn finish(&mut self, outcome: &Outcome) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.flush()?;
        }
        if let Some(m) = &mut self.manifest {
            match outcome {
                Outcome::Complete => m.status = RunStatus::Complete,
                Outcome::Failed { cycle, message } => {
                    m.status = RunStatus::Failed;
                    m.failed_cycle = Some(*cycle);
                    m.failure = Some(message.clone());
                }
            }
        }
        self.write_manifest()
    }
}

pub fn truth_file(cycle: usize) -> String {
    format!("truth_{cycle:04}.bin")
}

pub fn mean_file(cycle: usize) -> String {
    format!("mean_{cycle:04}.bin")
}

pub fn member_file(cycle: usize, member: usize) -> String {
    format!("member_{cycle:04}_{member:02}.bin")
}

/// Writes a complete run directory at `dir` in one go.
pub fn persist(dir: &Path, manifest: &Manifest, records: &[CycleRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(RECORDS_FILE))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

/// Reads the manifest and records of a run directory.
pub fn load(dir: &Path) -> Result<(Manifest, Vec<CycleRecord>)> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(SCHEMA_VERSION as u64) {
        return Err(Error::Schema(format!(
            "{}: schema_version {version:?}, expected {SCHEMA_VERSION}",
            dir.display()
        )));
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| Error::Schema(e.to_string()))?;
    let mut reader = csv::Reader::from_path(dir.join(RECORDS_FILE))?;
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["cycle", "prior_rmse", "analysis_rmse", "mean_spread", "wall_ms"] {
        return Err(Error::Schema(format!("{}: unexpected records header {header:?}", dir.display())));
    }
    let records = reader.deserialize().collect::<std::result::Result<Vec<CycleRecord>, _>>()?;
    Ok((manifest, records))
}

/// Spun-up nature field at cycle 0.
pub fn spin_up_nature(config: &ExperimentConfig, model: &SqgModel) -> Result<Vec<f64>> {
    let mut rng = substream(config.seed, Stream::NatureSpinUp, 0);
    model.grid(&model.spin_up(&mut rng, config.init.spinup_days * SECONDS_PER_DAY)?)
}

/// Truth plus independent band-limited perturbations, one per member.
pub fn initial_ensemble(config: &ExperimentConfig, model: &SqgModel, truth_grid: &[f64]) -> Result<Vec<SqgState>> {
    (0..config.members)
        .map(|k| {
            let mut rng = substream(config.seed, Stream::InitialEnsemble, k as u64);
            let mut grid = model.band_limited_noise(&mut rng, config.init.max_wavenumber, config.init.spread_k)?;
            for (g, t) in grid.iter_mut().zip(truth_grid) {
                *g += t;
            }
            model.state_from_grid(&grid, 0.0)
        })
        .collect()
}

/// Runs a cycled experiment, streaming records (and dumps) into `sink`.
///
/// On a model blow-up or filter failure the sink is finished with the
/// failing cycle and the error comes back as [`Error::Cycle`].
pub fn run_experiment(config: &ExperimentConfig, sink: &mut dyn RunSink) -> Result<Vec<CycleRecord>> {
    config.validate()?;
    sink.start(config)?;
    let mut records = Vec::with_capacity(config.cycles);
    let mut cycle = 0;
    let outcome = cycle_all(config, sink, &mut records, &mut cycle);
    match outcome {
        Ok(()) => {
            sink.finish(&Outcome::Complete)?;
            Ok(records)
        }
        Err(e) => {
            let failed = Outcome::Failed {
                cycle,
                message: e.to_string(),
            };
            if let Err(sink_err) = sink.finish(&failed) {
                log::error!("could not persist failure of cycle {cycle}: {sink_err}");
            }
            Err(Error::Cycle {
                cycle,
                source: Box::new(e),
            })
        }
    }
}

fn cycle_all(
    config: &ExperimentConfig,
    sink: &mut dyn RunSink,
    records: &mut Vec<CycleRecord>,
    cycle: &mut usize,
) -> Result<()> {
    let model = SqgModel::new(config.model.clone())?;
    let steps = config.window_steps();
    let shocks = config.shock_process()?;
    // the nature state is always rebuilt from the grid it is observed on, the
    // same way members are rebuilt from analysis grids
    let nature = spin_up_nature(config, &model)?;
    let mut truth = model.state_from_grid(&nature, 0.0)?;
    let mut members = initial_ensemble(config, &model, &nature)?;

    for k in 1..=config.cycles {
        *cycle = k;
        let started = Instant::now();

        model.advance_in_place(&mut truth, steps)?;
        let mut truth_grid = model.grid(&truth)?;
        if !shocks.is_empty() {
            let mut rng = substream(config.seed, Stream::Shocks, k as u64);
            truth_grid = apply_shocks(&truth_grid, &shocks, &mut rng).0;
        }
        truth = model.state_from_grid(&truth_grid, truth.time)?;

        // members take the same grid round trip as the nature state
        let grids = members
            .par_iter_mut()
            .map(|m| {
                model.advance_in_place(m, steps)?;
                let g = model.grid(m)?;
                *m = model.state_from_grid(&g, m.time)?;
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        // errors are measured on the model states, i.e. on resolved scales
        let prior_rmse = model.rms_difference(&spectral_mean(&members), &truth.theta_spec)?;

        if config.filter != FilterKind::None {
            let forecast = Ensemble::from_members(grids)?;
            let obs = observations(config, &truth_grid, k)?;
            let mut rng = substream(config.seed, Stream::Filter, k as u64);
            let analysis = analyze(config, config.filter, &forecast, obs, &mut rng)?;
            if !analysis.is_finite() {
                return Err(Error::Numerical("analysis contains non-finite values".into()));
            }
            members = analysis
                .members()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|g| model.state_from_grid(g, truth.time))
                .collect::<Result<Vec<_>>>()?;
        }
        let analysis_rmse = model.rms_difference(&spectral_mean(&members), &truth.theta_spec)?;
        let analysis = Ensemble::from_members(members.par_iter().map(|m| model.grid(m)).collect::<Result<Vec<_>>>()?)?;
        let mean_spread = if analysis.size() > 1 {
            decompose(&analysis)?.mean_spread()
        } else {
            0.0
        };

        let record = CycleRecord {
            cycle: k,
            prior_rmse,
            analysis_rmse,
            mean_spread,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        sink.record(&record)?;
        if dump_due(config, k) {
            sink.fields(k, &truth_grid, &analysis, truth.time)?;
        }
        if k % 25 == 0 || k == config.cycles {
            log::info!(
                "{} cycle {k}/{}: prior {prior_rmse:.3} analysis {analysis_rmse:.3} spread {mean_spread:.3}",
                config.run_name(),
                config.cycles
            );
        }
        records.push(record);
    }
    Ok(())
}

/// Ensemble mean of spectral states, as the first member plus the mean
/// departure from it (identical members give their exact value).
fn spectral_mean(states: &[SqgState]) -> Vec<Complex64> {
    let first = &states[0].theta_spec;
    let mut acc = vec![Complex64::new(0.0, 0.0); first.len()];
    for s in &states[1..] {
        for ((a, x), f) in acc.iter_mut().zip(&s.theta_spec).zip(first) {
            *a += x - f;
        }
    }
    let m = states.len() as f64;
    first.iter().zip(acc).map(|(f, a)| f + a / m).collect()
}

fn dump_due(config: &ExperimentConfig, cycle: usize) -> bool {
    let out = &config.output;
    out.dump_every > 0 && cycle >= out.dump_from && (cycle - out.dump_from) % out.dump_every == 0
}

/// Observations of the truth for cycle `k`, from the cycle's own streams.
fn observations(config: &ExperimentConfig, truth: &[f64], k: usize) -> Result<ObservationBatch> {
    let mut net_rng = substream(config.seed, Stream::ObsNetwork, k as u64);
    let net = make_network(
        config.obs.kind,
        config.obs.coverage,
        truth.len(),
        Some(config.obs.error_var),
        &mut net_rng,
    )?;
    let mut noise_rng = substream(config.seed, Stream::ObsNoise, k as u64);
    observe_with_noise_scale(truth, &net, config.obs.noise_scale, &mut noise_rng)
}

fn analyze<R: Rng + ?Sized>(
    config: &ExperimentConfig,
    filter: FilterKind,
    forecast: &Ensemble,
    obs: ObservationBatch,
    rng: &mut R,
) -> Result<Ensemble> {
    match filter {
        FilterKind::Ensf => ensf_analysis(forecast, &LikelihoodModel::new(obs)?, &config.ensf_config()?, rng),
        FilterKind::Letkf => letkf_analysis(
            forecast,
            &obs,
            &config.localization()?,
            &config.domain(),
            config.letkf.rtps,
        ),
        FilterKind::Insert => direct_insertion(forecast, &obs),
        FilterKind::None => Ok(forecast.clone()),
    }
}

/// Overwrites the observed components of every member with the observed
/// values. Only defined for identity observations.
pub fn direct_insertion(forecast: &Ensemble, obs: &ObservationBatch) -> Result<Ensemble> {
    if obs.kind != ObsKind::Linear {
        return Err(Error::Config("direct insertion needs linear observations".into()));
    }
    let mut out = forecast.clone();
    for member in out.members_mut() {
        for (&i, &y) in obs.indices.iter().zip(&obs.values) {
            member[i] = y;
        }
    }
    Ok(out)
}

/// Mean of `analysis_rmse` over cycles `from..=to` (1-based, inclusive).
pub fn mean_analysis_rmse(records: &[CycleRecord], from: usize, to: usize) -> Option<f64> {
    let picked = records
        .iter()
        .filter(|r| r.cycle >= from && r.cycle <= to)
        .map(|r| r.analysis_rmse)
        .collect::<Vec<_>>();
    (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
}
