//! Run configuration: built-in profiles, a TOML file, environment, and
//! `--set key=value` flags, merged in that order of increasing precedence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use snlse_core::{ReferenceKind, SchemeKind};

use crate::LabError;

/// Environment variable that overrides `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "SNLSE_LAB_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Converge,
    Longterm,
    EpsScaling,
    Decomposition,
    Selftest,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Converge => "converge",
            Experiment::Longterm => "longterm",
            Experiment::EpsScaling => "eps-scaling",
            Experiment::Decomposition => "decomposition",
            Experiment::Selftest => "selftest",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Reduced horizons and path counts that finish on a workstation.
    Desk,
    /// Full-scale parameters.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Number of Fourier modes `K`, a power of two.
    pub modes: usize,
    pub dealias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// `λ_k = 1/(1 + |k|^s)`.
    pub exponent: f64,
    /// Explicit `[k, λ_k]` pairs; replaces the power law when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(i64, f64)>>,
    /// Noise amplitude `α` (ignored when `epsilon` is set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Nonlinearity coefficient `μ` (ignored when `epsilon` is set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// `μ = ε²`, `α = ε^{q−1}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub tau: f64,
    pub tau_list: Vec<f64>,
    pub tau_ref: f64,
    /// Final time `T`.
    pub horizon: f64,
    /// Long-time checkpoints every this many coarse steps.
    pub checkpoint_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSection {
    /// Number of Monte Carlo paths `M`.
    pub paths: usize,
    pub sigma: f64,
    pub p: u32,
    pub allow_diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDataSection {
    /// `smooth-rational` (2/(2 − cos x)), `single-mode` or `file`.
    pub kind: String,
    pub scale: f64,
    /// Mode and complex amplitude for `single-mode`.
    pub mode: i64,
    pub amplitude: [f64; 2],
    /// Coefficient file for `file`: one `k re im` triple per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    pub emit_svg: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsScalingSection {
    pub epsilons: Vec<f64>,
    /// `fixed_T` or `scaled_T_eps`.
    pub horizon_mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSection {
    pub tau: f64,
    pub mu: f64,
    pub substeps: usize,
    /// Number of random two-mode states.
    pub states: usize,
    /// Largest `|k|` used by the random states.
    pub max_mode: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub profile: Profile,
    pub master_seed: u64,
    pub workers: usize,
    pub schemes: Vec<String>,
    /// `auto`, `fine-snrli1` or `exact-linear`.
    pub reference: String,
    pub grid: GridSection,
    pub noise: NoiseSection,
    pub time: TimeSection,
    pub stats: StatsSection,
    pub initial_data: InitialDataSection,
    pub output: OutputSection,
    pub eps_scaling: EpsScalingSection,
    pub decomposition: DecompositionSection,
}

impl RunConfig {
    /// Built-in defaults for an experiment and profile.
    pub fn defaults(experiment: Experiment, profile: Profile) -> Self {
        let full = profile == Profile::Full;
        let mut cfg = RunConfig {
            experiment,
            profile,
            master_seed: 0,
            workers: 1,
            schemes: vec!["snrli1".into()],
            reference: "auto".into(),
            grid: GridSection { modes: 64, dealias: false },
            noise: NoiseSection {
                exponent: 8.0,
                table: None,
                amplitude: None,
                mu: None,
                epsilon: None,
                q: None,
            },
            time: TimeSection {
                tau: 0.01,
                tau_list: Vec::new(),
                tau_ref: 1e-4,
                horizon: 1.0,
                checkpoint_stride: 1,
            },
            stats: StatsSection {
                paths: 20,
                sigma: 1.0,
                p: 1,
                allow_diverged: false,
            },
            initial_data: InitialDataSection {
                kind: "smooth-rational".into(),
                scale: 1.0,
                mode: 1,
                amplitude: [1.0, 0.0],
                file: None,
            },
            output: OutputSection {
                dir: "out".into(),
                emit_svg: false,
            },
            eps_scaling: EpsScalingSection {
                epsilons: vec![0.1, 0.2],
                horizon_mode: "fixed_T".into(),
            },
            decomposition: DecompositionSection {
                tau: 0.05,
                mu: 1.0,
                substeps: 512,
                states: 20,
                max_mode: 2,
            },
        };
        match experiment {
            Experiment::Converge => {
                cfg.noise.amplitude = Some(1.0);
                cfg.noise.mu = Some(0.0);
                cfg.time.tau_list = (4..=8).map(|j| 2f64.powi(-j)).collect();
                cfg.time.tau = cfg.time.tau_list[0];
                cfg.time.tau_ref = 2f64.powi(-8);
                cfg.stats.paths = if full { 1000 } else { 200 };
            }
            Experiment::Longterm => {
                cfg.schemes = vec!["snrli1".into(), "sli1".into()];
                cfg.grid.modes = 256;
                cfg.noise.epsilon = Some(0.1);
                cfg.noise.q = Some(3.5);
                cfg.time.horizon = if full { 100.0 } else { 20.0 };
                cfg.time.tau_ref = if full { 1e-5 } else { 1e-4 };
                cfg.time.checkpoint_stride = 50;
                cfg.stats.paths = if full { 100 } else { 20 };
            }
            Experiment::EpsScaling => {
                cfg.grid.modes = if full { 256 } else { 64 };
                cfg.noise.q = Some(6.0);
                cfg.time.horizon = 5.0;
                cfg.time.tau_ref = if full { 1e-5 } else { 1e-4 };
                cfg.stats.paths = if full { 100 } else { 50 };
            }
            Experiment::Decomposition => {
                cfg.grid.modes = 8;
                cfg.noise.amplitude = Some(0.0);
            }
            Experiment::Selftest => {
                cfg.grid.modes = 32;
            }
        }
        cfg
    }

    pub fn scheme_kinds(&self) -> Result<Vec<SchemeKind>, LabError> {
        if self.schemes.is_empty() {
            return Err(LabError::Config("schemes: at least one scheme is required".into()));
        }
        self.schemes
            .iter()
            .map(|s| s.parse().map_err(|e| LabError::Config(format!("schemes: {e}"))))
            .collect()
    }

    /// `(μ, α)` after resolving `ε`, `q` against explicit values.
    pub fn coefficients(&self) -> Result<(f64, f64), LabError> {
        match (self.noise.epsilon, self.noise.q) {
            (Some(eps), Some(q)) => Ok((eps * eps, eps.powf(q - 1.0))),
            (Some(_), None) => Err(LabError::Config("noise.q: required when noise.epsilon is set".into())),
            (None, _) => Ok((self.noise.mu.unwrap_or(1.0), self.noise.amplitude.unwrap_or(0.0))),
        }
    }

    /// The reference driver kind, resolving `auto` by the value of `μ`.
    pub fn reference_kind(&self) -> Result<ReferenceKind, LabError> {
        let (mu, _) = self.coefficients()?;
        match self.reference.as_str() {
            "auto" if mu == 0.0 => Ok(ReferenceKind::ExactLinear),
            "auto" | "fine-snrli1" => Ok(ReferenceKind::FineSnrli1),
            "exact-linear" if mu == 0.0 => Ok(ReferenceKind::ExactLinear),
            "exact-linear" => Err(LabError::Config(format!(
                "reference: exact-linear requires mu = 0, got {mu}"
            ))),
            other => Err(LabError::Config(format!(
                "reference: unknown value `{other}` (expected auto, fine-snrli1 or exact-linear)"
            ))),
        }
    }

    /// Steps at which the experiment runs its schemes.
    pub fn step_sizes(&self) -> Vec<f64> {
        match self.experiment {
            Experiment::Converge => self.time.tau_list.clone(),
            _ => vec![self.time.tau],
        }
    }

    /// Checks every numeric field before any computation starts.
    pub fn validate(&self) -> Result<(), LabError> {
        let err = |key: &str, msg: String| Err(LabError::Config(format!("{key}: {msg}")));
        let k = self.grid.modes;
        if k < 8 || !k.is_power_of_two() {
            return err("grid.modes", format!("must be a power of two >= 8, got {k}"));
        }
        if self.workers == 0 {
            return err("workers", "must be >= 1".into());
        }
        if self.stats.paths == 0 {
            return err("stats.paths", "must be >= 1".into());
        }
        if self.stats.p == 0 {
            return err("stats.p", "must be >= 1".into());
        }
        if !(self.stats.sigma >= 0.0 && self.stats.sigma.is_finite()) {
            return err("stats.sigma", format!("must be finite and >= 0, got {}", self.stats.sigma));
        }
        if !(self.noise.exponent > 0.0 && self.noise.exponent.is_finite()) {
            return err("noise.exponent", format!("must be > 0, got {}", self.noise.exponent));
        }
        if let Some(eps) = self.noise.epsilon {
            if !(eps > 0.0 && eps <= 1.0) {
                return err("noise.epsilon", format!("must lie in (0, 1], got {eps}"));
            }
            if self.noise.amplitude.is_some() || self.noise.mu.is_some() {
                return err(
                    "noise.epsilon",
                    "cannot be combined with noise.amplitude or noise.mu".into(),
                );
            }
        }
        if let Some(a) = self.noise.amplitude {
            if !(a >= 0.0 && a.is_finite()) {
                return err("noise.amplitude", format!("must be finite and >= 0, got {a}"));
            }
        }
        self.scheme_kinds()?;
        self.reference_kind()?;
        match self.initial_data.kind.as_str() {
            "smooth-rational" | "single-mode" => {}
            "file" if self.initial_data.file.is_some() => {}
            "file" => return err("initial_data.file", "required when initial_data.kind = \"file\"".into()),
            other => {
                return err(
                    "initial_data.kind",
                    format!("unknown kind `{other}` (expected smooth-rational, single-mode or file)"),
                )
            }
        }

        let t = &self.time;
        for (key, value) in [("time.tau_ref", t.tau_ref), ("time.horizon", t.horizon)] {
            if !(value > 0.0 && value.is_finite()) {
                return err(key, format!("must be > 0, got {value}"));
            }
        }
        if matches!(self.experiment, Experiment::Converge | Experiment::Longterm | Experiment::EpsScaling) {
            let steps = self.step_sizes();
            if steps.is_empty() {
                return err("time.tau_list", "must not be empty".into());
            }
            let key = if self.experiment == Experiment::Converge { "time.tau_list" } else { "time.tau" };
            for &tau in &steps {
                if !(tau > 0.0 && tau.is_finite()) {
                    return err(key, format!("steps must be > 0, got {tau}"));
                }
                if whole(tau, t.tau_ref).is_none() {
                    return err(
                        "time.tau_ref",
                        format!("step {tau} is not a whole multiple of the reference step {}", t.tau_ref),
                    );
                }
                if whole(t.horizon, tau).is_none() {
                    return err("time.horizon", format!("{} is not a whole number of steps {tau}", t.horizon));
                }
            }
            if t.checkpoint_stride == 0 {
                return err("time.checkpoint_stride", "must be >= 1".into());
            }
        }
        if matches!(self.experiment, Experiment::Longterm | Experiment::EpsScaling) && self.noise.q.is_none() {
            return err("noise.q", format!("required by the {} experiment", self.experiment));
        }
        if self.experiment == Experiment::Longterm && self.noise.epsilon.is_none() {
            return err("noise.epsilon", "required by the longterm experiment".into());
        }
        if self.experiment == Experiment::EpsScaling {
            if self.eps_scaling.epsilons.is_empty() {
                return err("eps_scaling.epsilons", "must not be empty".into());
            }
            if let Some(&bad) = self.eps_scaling.epsilons.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
                return err("eps_scaling.epsilons", format!("values must lie in (0, 1], got {bad}"));
            }
            if self.noise.q.is_some_and(|q| q <= 2.0) {
                return err("noise.q", "must exceed 2 for the eps-scaling experiment".into());
            }
            self.eps_scaling
                .horizon_mode
                .parse::<snlse_core::HorizonMode>()
                .map_err(|e| LabError::Config(format!("eps_scaling.horizon_mode: {e}")))?;
        }
        if self.experiment == Experiment::Decomposition {
            let d = &self.decomposition;
            if k > snlse_core::analysis::R_TERM_MAX_MODES {
                return err(
                    "grid.modes",
                    format!("the decomposition check needs K <= {}", snlse_core::analysis::R_TERM_MAX_MODES),
                );
            }
            if !(d.tau > 0.0 && d.tau.is_finite()) {
                return err("decomposition.tau", format!("must be > 0, got {}", d.tau));
            }
            if d.substeps < 2 || !d.substeps.is_multiple_of(2) {
                return err("decomposition.substeps", format!("must be even and >= 2, got {}", d.substeps));
            }
            if d.states == 0 {
                return err("decomposition.states", "must be >= 1".into());
            }
            if d.max_mode < 1 || 2 * d.max_mode >= k as i64 {
                return err("decomposition.max_mode", format!("must lie in [1, K/2), got {}", d.max_mode));
            }
        }
        Ok(())
    }
}

fn whole(a: f64, b: f64) -> Option<u64> {
    let ratio = a / b;
    let r = ratio.round();
    (r >= 1.0 && (ratio - r).abs() <= 1e-9 * r).then_some(r as u64)
}

/// Where a resolved value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

/// Inputs to [`load_config`] besides the experiment name.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub file: Option<PathBuf>,
    /// `dotted.key=value` overrides.
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    /// Value of the output-directory environment variable, if honoured.
    pub env_out: Option<String>,
}

impl ConfigSources {
    /// Reads the output-directory environment variable.
    pub fn with_env(mut self) -> Self {
        self.env_out = std::env::var(OUTPUT_DIR_ENV).ok().filter(|s| !s.is_empty());
        self
    }
}

/// A validated configuration with the provenance of every value.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// The merged table the configuration was read from.
    pub resolved: Table,
    /// Source of every leaf key, by dotted path.
    pub provenance: BTreeMap<String, Source>,
    /// Keys given both in the file and by a flag: `(file, flag)` values.
    pub conflicts: BTreeMap<String, (Value, Value)>,
    pub file: Option<PathBuf>,
}

fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<(), LabError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| LabError::Config(format!("empty key in `{key}`")))?;
    let mut cursor = table;
    for part in parts {
        let entry = cursor.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cursor = match entry {
            Value::Table(t) => t,
            _ => return Err(LabError::Config(format!("{key}: `{part}` is not a section"))),
        };
    }
    cursor.insert(leaf.to_string(), value);
    Ok(())
}

fn get_dotted<'a>(table: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.').peekable();
    let mut cursor = table;
    while let Some(part) = parts.next() {
        let value = cursor.get(part)?;
        if parts.peek().is_none() {
            return Some(value);
        }
        cursor = value.as_table()?;
    }
    None
}

fn merge(base: &mut Table, layer: &Table, source: Source, prefix: &str, provenance: &mut BTreeMap<String, Source>) {
    for (key, value) in layer {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(key), value) {
            (Some(Value::Table(b)), Value::Table(l)) => merge(b, l, source, &path, provenance),
            _ => {
                base.insert(key.clone(), value.clone());
                mark(value, source, &path, provenance);
            }
        }
    }
}

fn mark(value: &Value, source: Source, path: &str, provenance: &mut BTreeMap<String, Source>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                mark(v, source, &format!("{path}.{k}"), provenance);
            }
        }
        _ => {
            provenance.insert(path.to_string(), source);
        }
    }
}

fn read_file(path: &Path) -> Result<Table, LabError> {
    let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.parse::<Table>()
        .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
}

/// Resolves, merges and validates the configuration for `experiment`.
pub fn load_config(experiment: Experiment, sources: &ConfigSources) -> Result<LoadedConfig, LabError> {
    let file_table = match &sources.file {
        Some(path) => read_file(path)?,
        None => Table::new(),
    };

    let mut flag_table = Table::new();
    for item in &sources.overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| LabError::Config(format!("--set expects key=value, got `{item}`")))?;
        set_dotted(&mut flag_table, key.trim(), parse_value(raw))?;
    }
    set_dotted(&mut flag_table, "experiment", Value::String(experiment.name().into()))?;
    if let Some(seed) = sources.seed {
        let seed = i64::try_from(seed).map_err(|_| LabError::Config("master_seed: must be below 2^63".into()))?;
        set_dotted(&mut flag_table, "master_seed", Value::Integer(seed))?;
    }
    if let Some(w) = sources.workers {
        set_dotted(&mut flag_table, "workers", Value::Integer(w as i64))?;
    }
    if let Some(out) = &sources.out {
        set_dotted(&mut flag_table, "output.dir", Value::String(out.display().to_string()))?;
    }

    let profile_value = get_dotted(&flag_table, "profile").or_else(|| get_dotted(&file_table, "profile"));
    let profile: Profile = match profile_value {
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|_| LabError::Config(format!("profile: unknown value {v} (expected \"desk\" or \"full\")")))?,
        None => Profile::Desk,
    };

    let defaults = Table::try_from(RunConfig::defaults(experiment, profile))
        .map_err(|e| LabError::Config(format!("serialising defaults: {e}")))?;
    let mut provenance = BTreeMap::new();
    let mut resolved = Table::new();
    merge(&mut resolved, &defaults, Source::Default, "", &mut provenance);
    merge(&mut resolved, &file_table, Source::File, "", &mut provenance);
    if let Some(dir) = &sources.env_out {
        let mut env_table = Table::new();
        set_dotted(&mut env_table, "output.dir", Value::String(dir.clone()))?;
        merge(&mut resolved, &env_table, Source::Env, "", &mut provenance);
    }
    merge(&mut resolved, &flag_table, Source::Flag, "", &mut provenance);

    let mut conflicts = BTreeMap::new();
    for (key, source) in &provenance {
        if *source == Source::Flag {
            if let (Some(f), Some(v)) = (get_dotted(&file_table, key), get_dotted(&flag_table, key)) {
                conflicts.insert(key.clone(), (f.clone(), v.clone()));
            }
        }
    }

    let config: RunConfig = resolved
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| LabError::Config(e.message().trim().to_string()))?;
    config.validate()?;
    Ok(LoadedConfig {
        config,
        resolved,
        provenance,
        conflicts,
        file: sources.file.clone(),
    })
}
