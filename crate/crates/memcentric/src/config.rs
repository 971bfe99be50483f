//! Experiment configuration: strict TOML with defaults, environment
//! overrides (`MEMCENTRIC_SECTION__KEY=value`), and cross-field validation.
//! Unknown keys are errors; the seed is mandatory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::attack::AttackSpec;
use crate::disturbance::DisturbanceProfile;
use crate::dram::{DramGeometry, TimingParams};
use crate::metrics::OutputFormat;
use crate::mitigation::MitigationConfig;
use crate::pnm::{EnergyModel, KernelDescriptor, UnitSpec};
use crate::pud::{NoiseModel, TrngCalibration};
use crate::smd::SmdConfig;

pub const ENV_PREFIX: &str = "MEMCENTRIC_";

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub geometry: DramGeometry,
    #[serde(default)]
    pub timing: TimingParams,
    #[serde(default = "DisturbanceProfile::disabled")]
    pub disturbance: DisturbanceProfile,
    #[serde(default)]
    pub mitigation: MitigationConfig,
    #[serde(default)]
    pub smd: SmdConfig,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub workload: Option<WorkloadSpec>,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub pud: Option<PudJob>,
    #[serde(default)]
    pub trng: Option<TrngJob>,
    #[serde(default)]
    pub pnm: Option<PnmJob>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    /// Path to a command trace (relative paths resolve against the config
    /// file's directory).
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticSpec {
    /// Accesses spread uniformly round-robin over banks: per slot one
    /// ACT/WR/RD/PRE sequence per bank.
    Uniform {
        banks: usize,
        slots: u64,
        #[serde(default)]
        maintenance: MaintenanceMode,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaintenanceMode {
    /// No maintenance at all (golden runs).
    #[default]
    None,
    /// SMD region locks; conflicting ACTs retry, others overlap.
    SmdOverlap,
    /// Maintenance stalls the whole rank.
    BlockingRank,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PudJob {
    pub netlist: PathBuf,
    pub operands: PathBuf,
    #[serde(default)]
    pub subarray: usize,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrngJob {
    pub n_rows: usize,
    pub n_bits: u64,
    #[serde(default)]
    pub calibration: TrngCalibration,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnmJob {
    pub units: Vec<UnitSpec>,
    pub kernels: Vec<KernelDescriptor>,
    #[serde(default)]
    pub energy: EnergyModel,
    #[serde(default)]
    pub scaling: Option<ScalingJob>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingJob {
    /// Unit and kernel names from the lists above.
    pub unit: String,
    pub kernel: String,
    pub max_units: usize,
    #[serde(default)]
    pub host_fed: bool,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Subcommand each point runs (`simulate`, `attack`, `pud`, `trng`, `pnm`).
    pub run: String,
    pub axes: Vec<SweepAxis>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted config path, e.g. `mitigation.p` or `seed`.
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            path: None,
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("environment override {key}: {msg}")]
    EnvOverride { key: String, msg: String },
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut config = Self::parse(&text, &path.display().to_string())?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            ConfigError::Parse {
                path: origin.to_string(),
                message: e.to_string(),
            }
        })?;
        let mut value = toml::Value::Table(table);
        apply_env_overrides(&mut value, std::env::vars())?;
        let config: ExperimentConfig =
            value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
                path: origin.to_string(),
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(w) = &mut self.workload {
            if let Some(t) = &mut w.trace {
                fix(t);
            }
        }
        if let Some(p) = &mut self.pud {
            fix(&mut p.netlist);
            fix(&mut p.operands);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Invalid(m));
        self.geometry
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.timing
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.disturbance
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.mitigation
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.noise
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(w) = &self.workload {
            match (&w.trace, &w.synthetic) {
                (Some(_), Some(_)) => {
                    return err("workload: exactly one of trace/synthetic (both set)".into())
                }
                (None, None) => {
                    return err("workload: exactly one of trace/synthetic (neither set)".into())
                }
                _ => {}
            }
        }
        if let Some(a) = &self.attack {
            a.validate(self.geometry.rows_per_subarray)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(p) = &self.pnm {
            crate::pnm::validate_units(&p.units)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            crate::pnm::validate_kernels(&p.kernels)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if let Some(s) = &p.scaling {
                if !p.units.iter().any(|u| u.name == s.unit) {
                    return err(format!("scaling.unit `{}` not in units", s.unit));
                }
                if !p.kernels.iter().any(|k| k.name == s.kernel) {
                    return err(format!("scaling.kernel `{}` not in kernels", s.kernel));
                }
            }
        }
        if let Some(t) = &self.trng {
            if !crate::pud::SIMUL_ACT_COUNTS.contains(&t.n_rows) {
                return err(format!(
                    "trng.n_rows {} not one of {:?}",
                    t.n_rows,
                    crate::pud::SIMUL_ACT_COUNTS
                ));
            }
            if t.n_bits == 0 {
                return err("trng.n_bits ≥ 1".into());
            }
        }
        if let Some(s) = &self.sweep {
            if s.axes.is_empty() {
                return err("sweep.axes must be nonempty".into());
            }
            for axis in &s.axes {
                if axis.values.is_empty() {
                    return err(format!("sweep axis `{}` has no values", axis.key));
                }
            }
        }
        Ok(())
    }

    /// Applies one dotted-path override (sweeps reuse the env mechanism).
    pub fn with_override(
        base_text: &str,
        overrides: &[(String, toml::Value)],
    ) -> Result<Self, ConfigError> {
        let table: toml::Table =
            base_text
                .parse()
                .map_err(|e: toml::de::Error| ConfigError::Parse {
                    path: "<sweep base>".into(),
                    message: e.to_string(),
                })?;
        let mut value = toml::Value::Table(table);
        for (key, v) in overrides {
            set_path(&mut value, key, v.clone()).map_err(|msg| ConfigError::EnvOverride {
                key: key.clone(),
                msg,
            })?;
        }
        let config: ExperimentConfig =
            value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
                path: "<sweep point>".into(),
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }
}

/// `MEMCENTRIC_MITIGATION__KIND=para` sets `mitigation.kind = "para"`.
/// Values parse as TOML scalars, falling back to strings.
fn apply_env_overrides(
    value: &mut toml::Value,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<(), ConfigError> {
    let mut overrides: Vec<(String, String)> = vars
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|rest| (rest.to_ascii_lowercase().replace("__", "."), v))
        })
        .collect();
    overrides.sort();
    for (path, raw) in overrides {
        let parsed = parse_scalar(&raw);
        set_path(value, &path, parsed).map_err(|msg| ConfigError::EnvOverride {
            key: format!("{ENV_PREFIX}{}", path.to_ascii_uppercase().replace('.', "__")),
            msg,
        })?;
    }
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    match raw {
        "true" => toml::Value::Boolean(true),
        "false" => toml::Value::Boolean(false),
        _ => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Value, path: &str, new: toml::Value) -> Result<(), String> {
    let mut current = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let table = current
            .as_table_mut()
            .ok_or_else(|| format!("`{}` is not a table", segments[..i].join(".")))?;
        if i == segments.len() - 1 {
            table.insert(seg.to_string(), new);
            return Ok(());
        }
        current = table
            .entry(seg.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    Err("empty path".into())
}
