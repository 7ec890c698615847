//! Experiment configuration: presets, TOML overlays and validation.
//!
//! A configuration is resolved from a preset, then a config file, then
//! command-line flags, each layer a TOML table deep-merged over the previous.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::diffusion::{DiffusionSchedule, DEFAULT_EPS, DEFAULT_STEPS};
use crate::ensf::{BatchPairing, EnsfConfig};
use crate::error::{Error, Result};
use crate::letkf::{LocalizationConfig, PeriodicDomain, VerticalCoupling};
use crate::obs::{ObsKind, ShockProcess, ARCTAN_ERROR_VAR, LINEAR_ERROR_VAR};
use crate::sqg::{SqgParams, DEFAULT_SPINUP_DAYS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "EXP_L1")]
    ExpL1,
    #[serde(rename = "EXP_L2")]
    ExpL2,
    #[serde(rename = "EXP_NL1")]
    ExpNl1,
    #[serde(rename = "EXP_NL2")]
    ExpNl2,
    #[serde(rename = "FREE_RUN")]
    FreeRun,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::ExpL1, Preset::ExpL2, Preset::ExpNl1, Preset::ExpNl2, Preset::FreeRun];

    pub fn name(self) -> &'static str {
        match self {
            Preset::ExpL1 => "EXP_L1",
            Preset::ExpL2 => "EXP_L2",
            Preset::ExpNl1 => "EXP_NL1",
            Preset::ExpNl2 => "EXP_NL2",
            Preset::FreeRun => "FREE_RUN",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ensf,
    Letkf,
    /// No assimilation.
    None,
    /// Direct insertion: observed components are overwritten with the
    /// observations (plumbing checks).
    Insert,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Ensf => "ensf",
            FilterKind::Letkf => "letkf",
            FilterKind::None => "none",
            FilterKind::Insert => "insert",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ensf" => Ok(FilterKind::Ensf),
            "letkf" => Ok(FilterKind::Letkf),
            "none" => Ok(FilterKind::None),
            "insert" => Ok(FilterKind::Insert),
            other => Err(Error::Config(format!("unknown filter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSettings {
    pub steps: usize,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsfSettings {
    /// Mini-batch size; absent means the whole ensemble.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub pairing: BatchPairing,
    pub rtps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LetkfSettings {
    /// Localization cutoff radius (km).
    pub loc_km: f64,
    pub rtps: f64,
    pub vertical_coupling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsSettings {
    pub kind: ObsKind,
    pub coverage: f64,
    pub error_var: f64,
    /// Multiplies the observation-error standard deviation; 0 gives perfect
    /// observations.
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockSettings {
    pub pairs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSettings {
    pub spinup_days: f64,
    /// RMS (K) of the initial ensemble perturbations.
    pub spread_k: f64,
    /// Highest total wavenumber carried by the initial perturbations.
    pub max_wavenumber: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    /// Field dump interval in cycles; 0 disables dumps.
    pub dump_every: usize,
    /// First cycle eligible for dumps.
    pub dump_from: usize,
    /// Also dump every ensemble member at dump cycles.
    pub dump_members: bool,
}

/// Fully resolved OSSE configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub filter: FilterKind,
    pub seed: u64,
    pub grid: usize,
    pub members: usize,
    pub cycles: usize,
    pub window_hours: f64,
    pub model: SqgParams,
    pub diffusion: DiffusionSettings,
    pub ensf: EnsfSettings,
    pub letkf: LetkfSettings,
    pub obs: ObsSettings,
    pub shocks: ShockSettings,
    pub init: InitSettings,
    pub output: OutputSettings,
}

pub const DEFAULT_MEMBERS: usize = 20;
pub const DEFAULT_CYCLES: usize = 300;
pub const DEFAULT_WINDOW_HOURS: f64 = 12.0;
pub const DEFAULT_GRID: usize = 64;

/// Shock processes of the composite model-error experiment.
pub const FOUR_SHOCKS: [(f64, f64); 4] = [(0.20, 0.20), (0.15, 0.30), (0.10, 0.40), (0.05, 0.50)];
pub const SINGLE_SHOCK: [(f64, f64); 1] = [(0.10, 0.30)];

/// Preset defaults on the given grid.
pub fn preset_on_grid(preset: Preset, grid: usize) -> ExperimentConfig {
    let (kind, coverage, shocks): (ObsKind, f64, Vec<(f64, f64)>) = match preset {
        Preset::ExpL1 | Preset::FreeRun => (ObsKind::Linear, 1.0, vec![]),
        Preset::ExpL2 => (ObsKind::Linear, 1.0, FOUR_SHOCKS.to_vec()),
        Preset::ExpNl1 => (ObsKind::Arctan, 1.0, vec![]),
        Preset::ExpNl2 => (ObsKind::Arctan, 0.5, SINGLE_SHOCK.to_vec()),
    };
    let error_var = match kind {
        ObsKind::Linear => LINEAR_ERROR_VAR,
        ObsKind::Arctan => ARCTAN_ERROR_VAR,
    };
    let free = preset == Preset::FreeRun;
    ExperimentConfig {
        preset,
        filter: if free { FilterKind::None } else { FilterKind::Ensf },
        seed: 0,
        grid,
        members: if free { 1 } else { DEFAULT_MEMBERS },
        cycles: DEFAULT_CYCLES,
        window_hours: DEFAULT_WINDOW_HOURS,
        model: SqgParams::for_grid(grid),
        diffusion: DiffusionSettings {
            steps: DEFAULT_STEPS,
            eps: DEFAULT_EPS,
        },
        ensf: EnsfSettings {
            batch_size: None,
            pairing: BatchPairing::Random,
            rtps: 1.0,
        },
        letkf: LetkfSettings {
            loc_km: 2000.0,
            rtps: 0.3,
            vertical_coupling: true,
        },
        obs: ObsSettings {
            kind,
            coverage,
            error_var,
            noise_scale: 1.0,
        },
        shocks: ShockSettings { pairs: shocks },
        init: InitSettings {
            spinup_days: DEFAULT_SPINUP_DAYS,
            spread_k: 1.0,
            max_wavenumber: 8,
        },
        output: OutputSettings {
            dump_every: 0,
            dump_from: 1,
            dump_members: false,
        },
    }
}

pub fn preset(preset: Preset) -> ExperimentConfig {
    preset_on_grid(preset, DEFAULT_GRID)
}

/// Recursively merges `overlay` into `base`. Objects merge key by key; any
/// other value replaces the base value.
pub fn deep_merge(base: &mut serde_json::Value, overlay: &serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn last_value<'a>(layers: &'a [Table], key: &str) -> Option<&'a Value> {
    layers.iter().rev().find_map(|l| l.get(key))
}

/// Resolves preset defaults overlaid by `layers` (lowest precedence first).
/// The preset comes from `preset` or, failing that, a `preset` key in the
/// layers. A `grid` override rebuilds the model defaults for that grid
/// before `model.*` keys apply.
pub fn resolve(preset: Option<Preset>, layers: &[Table]) -> Result<ExperimentConfig> {
    let preset = match preset {
        Some(p) => p,
        None => match last_value(layers, "preset") {
            Some(Value::String(s)) => Preset::parse(s)?,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => return Err(Error::Config("no preset given (flag --preset or `preset` key)".into())),
        },
    };
    let grid = match last_value(layers, "grid") {
        Some(Value::Integer(g)) if *g > 0 => *g as usize,
        Some(other) => return Err(Error::Config(format!("grid must be a positive integer, got {other}"))),
        None => DEFAULT_GRID,
    };
    // merged as JSON: TOML serialization does not round-trip every f64
    let mut merged = serde_json::to_value(preset_on_grid(preset, grid))?;
    for layer in layers {
        deep_merge(&mut merged, &serde_json::to_value(layer)?);
    }
    merged["preset"] = serde_json::Value::String(preset.name().into());
    let cfg: ExperimentConfig =
        serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a TOML config file body into an overlay table.
pub fn parse_overlay(text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| Error::Config(format!("config file: {}", e.message())))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate()?;
        if self.model.nx != self.grid || self.model.ny != self.grid {
            return bad(format!(
                "model grid {}x{} disagrees with grid = {}",
                self.model.nx, self.model.ny, self.grid
            ));
        }
        if self.cycles == 0 {
            return bad("cycles must be at least 1".into());
        }
        if self.members == 0 || (self.filter != FilterKind::None && self.members < 2) {
            return bad(format!("{} filtering needs at least 2 members, got {}", self.filter.name(), self.members));
        }
        let steps = self.window_seconds() / self.model.dt;
        if !(self.window_hours > 0.0) || (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return bad(format!(
                "window of {} h is not a whole number of {} s model steps",
                self.window_hours, self.model.dt
            ));
        }
        DiffusionSchedule::new(self.diffusion.steps, self.diffusion.eps)?;
        if let Some(j) = self.ensf.batch_size {
            if j == 0 || j > self.members {
                return bad(format!("ensf.batch_size must lie in [1, {}], got {j}", self.members));
            }
        }
        for (name, a) in [("ensf.rtps", self.ensf.rtps), ("letkf.rtps", self.letkf.rtps)] {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("{name} must lie in [0, 1], got {a}"));
            }
        }
        LocalizationConfig::new(self.letkf.loc_km, None)?;
        if !(self.obs.coverage > 0.0 && self.obs.coverage <= 1.0) {
            return bad(format!("obs.coverage must lie in (0, 1], got {}", self.obs.coverage));
        }
        if !(self.obs.error_var > 0.0) || !(self.obs.noise_scale >= 0.0) {
            return bad("obs.error_var must be positive and obs.noise_scale non-negative".into());
        }
        ShockProcess::new(self.shocks.pairs.clone())?;
        if !(self.init.spinup_days >= 0.0) || !(self.init.spread_k >= 0.0) || self.init.max_wavenumber == 0 {
            return bad("init.spinup_days and init.spread_k must be non-negative, init.max_wavenumber positive".into());
        }
        Ok(())
    }

    pub fn window_seconds(&self) -> f64 {
        self.window_hours * 3600.0
    }

    pub fn window_steps(&self) -> usize {
        (self.window_seconds() / self.model.dt).round() as usize
    }

    /// Run directory name `<preset>_<filter>_<seed>`.
    pub fn run_name(&self) -> String {
        format!("{}_{}_{}", self.preset.name(), self.filter.name(), self.seed)
    }

    pub fn ensf_config(&self) -> Result<EnsfConfig> {
        Ok(EnsfConfig {
            schedule: DiffusionSchedule::new(self.diffusion.steps, self.diffusion.eps)?,
            batch_size: self.ensf.batch_size,
            pairing: self.ensf.pairing,
            rtps: self.ensf.rtps,
        })
    }

    pub fn domain(&self) -> PeriodicDomain {
        PeriodicDomain::square(self.grid, 2, self.model.l / 1e3)
    }

    pub fn localization(&self) -> Result<LocalizationConfig> {
        let vertical = self.letkf.vertical_coupling.then(|| VerticalCoupling {
            rossby_radius_km: self.model.deformation_radius() / 1e3,
            separation_km: self.model.h / 1e3,
            depth_km: self.model.h / 1e3,
        });
        LocalizationConfig::new(self.letkf.loc_km, vertical)
    }

    pub fn shock_process(&self) -> Result<ShockProcess> {
        ShockProcess::new(self.shocks.pairs.clone())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}
