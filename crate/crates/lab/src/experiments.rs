//! Dispatch from a validated configuration to the analysis routines, and
//! emission of the resulting tables and plots.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snlse_core::{
    epsilon_scaling_study, local_error_decomposition_check, longterm_error_curve, order_fit, strong_error, Complex64,
    ErrorConfig, HorizonMode, LongtermSetup, QWienerSpec, ReferenceDriver, ReferenceKind, SchemeKind, SchemeParams,
    SobolevIndex, SpectralGrid, SpectralState,
};

use crate::config::{Experiment, LoadedConfig, RunConfig};
use crate::manifest::RunManifest;
use crate::output::{self, PlotSeries, PlotSpec};
use crate::{selftest, LabError};

/// Files written by a run and free-form remarks for the manifest.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub outputs: Vec<PathBuf>,
    pub notes: Vec<String>,
}

pub fn grid(cfg: &RunConfig) -> Result<SpectralGrid, LabError> {
    Ok(SpectralGrid::with_dealias(cfg.grid.modes, cfg.grid.dealias)?)
}

/// The noise covariance with amplitude `amplitude`.
pub fn noise_spec(cfg: &RunConfig, amplitude: f64) -> Result<QWienerSpec, LabError> {
    Ok(match &cfg.noise.table {
        Some(entries) => QWienerSpec::table(entries.clone(), amplitude)?,
        None => QWienerSpec::power_decay(cfg.noise.exponent, amplitude)?,
    })
}

pub fn initial_state(cfg: &RunConfig, grid: &SpectralGrid) -> Result<SpectralState, LabError> {
    let d = &cfg.initial_data;
    let scale = d.scale;
    match d.kind.as_str() {
        "smooth-rational" => Ok(grid.sample(|x| Complex64::new(scale * 2.0 / (2.0 - x.cos()), 0.0))?),
        "single-mode" => {
            let c = Complex64::new(d.amplitude[0], d.amplitude[1]) * scale;
            Ok(SpectralState::single_mode(grid, c, d.mode)?)
        }
        "file" => {
            let path = Path::new(d.file.as_deref().unwrap_or_default());
            let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.modes()];
            for (n, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let bad = || LabError::Config(format!("{}:{}: expected `k re im`", path.display(), n + 1));
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 3 {
                    return Err(bad());
                }
                let k: i64 = fields[0].parse().map_err(|_| bad())?;
                let re: f64 = fields[1].parse().map_err(|_| bad())?;
                let im: f64 = fields[2].parse().map_err(|_| bad())?;
                let slot = grid.slot(k).ok_or_else(|| {
                    LabError::Config(format!("{}:{}: mode {k} is not on a grid of {} modes", path.display(), n + 1, grid.modes()))
                })?;
                coeffs[slot] = Complex64::new(re, im) * scale;
            }
            Ok(SpectralState::new(grid.clone(), coeffs, 0.0)?)
        }
        other => Err(LabError::Config(format!("initial_data.kind: unknown kind `{other}`"))),
    }
}

pub fn error_config(cfg: &RunConfig) -> Result<ErrorConfig, LabError> {
    Ok(ErrorConfig {
        sigma: SobolevIndex::new(cfg.stats.sigma)?,
        p_moment: cfg.stats.p,
        num_paths: cfg.stats.paths,
        epsilon: cfg.noise.epsilon.unwrap_or(1.0),
        q_exponent: cfg.noise.q.unwrap_or(3.5),
        master_seed: cfg.master_seed,
        workers: cfg.workers,
        allow_diverged: cfg.stats.allow_diverged,
        ..ErrorConfig::default()
    })
}

fn csv_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(name)
}

fn run_converge(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, LabError> {
    let grid = grid(cfg)?;
    let initial = initial_state(cfg, &grid)?;
    let (mu, alpha) = cfg.coefficients()?;
    let noise = noise_spec(cfg, alpha)?;
    let reference = reference_driver(cfg)?;
    let config = error_config(cfg)?;
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    let mut notes = Vec::new();
    for kind in cfg.scheme_kinds()? {
        let params = SchemeParams::new(kind, mu, cfg.time.tau_list[0], noise.clone())?;
        let records = strong_error(&params, &reference, &config, &cfg.time.tau_list, cfg.time.horizon, &initial)?;
        if let Ok(fit) = order_fit(&records) {
            notes.push(format!("{kind}: fitted order {:.4} (r^2 = {:.6})", fit.slope, fit.r_squared));
        }
        plot.push(PlotSeries {
            name: kind.name().into(),
            points: records.iter().map(|r| (r.tau, r.error_value)).collect(),
        });
        rows.extend(output::converge_rows(&records, cfg.stats.sigma, cfg.stats.p));
    }
    let path = csv_path(out_dir, "converge.csv");
    output::write_table(&path, &output::CONVERGE_HEADER, &rows)?;
    let mut outputs = vec![path];
    if cfg.output.emit_svg {
        let spec = PlotSpec {
            title: "strong error",
            x_label: "tau",
            y_label: "error",
            log_x: true,
            log_y: true,
        };
        outputs.push(output::write_svg(&out_dir.join("converge.svg"), &spec, &plot)?);
    }
    Ok(RunOutcome { outputs, notes })
}

fn longterm_setup(cfg: &RunConfig, horizon: f64) -> Result<LongtermSetup, LabError> {
    let grid = grid(cfg)?;
    Ok(LongtermSetup {
        initial: initial_state(cfg, &grid)?,
        noise: noise_spec(cfg, 1.0)?,
        tau_ref: cfg.time.tau_ref,
        horizon,
    })
}

fn run_longterm(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, LabError> {
    let setup = longterm_setup(cfg, cfg.time.horizon)?;
    let config = error_config(cfg)?;
    let schemes = cfg.scheme_kinds()?;
    let series = longterm_error_curve(&schemes, &setup, &config, cfg.time.tau, cfg.time.checkpoint_stride)?;
    let mut outcome = RunOutcome::default();
    let mut plot = Vec::new();
    for s in &series {
        let path = csv_path(out_dir, &format!("longterm_{}.csv", s.scheme.name()));
        output::write_table(&path, &output::LONGTERM_HEADER, &output::longterm_rows(s))?;
        outcome.outputs.push(path);
        plot.push(PlotSeries {
            name: s.scheme.name().into(),
            points: s.records.iter().map(|r| (r.time, r.error_sq)).collect(),
        });
    }
    if let Some(d) = series.first().map(|s| s.diverged_paths).filter(|&d| d > 0) {
        outcome.notes.push(format!("{d} diverged path(s) excluded"));
    }
    if cfg.output.emit_svg {
        let spec = PlotSpec {
            title: "long-time squared error",
            x_label: "t",
            y_label: "error^2",
            log_x: false,
            log_y: true,
        };
        outcome.outputs.push(output::write_svg(&out_dir.join("longterm.svg"), &spec, &plot)?);
    }
    Ok(outcome)
}

fn run_eps_scaling(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, LabError> {
    let setup = longterm_setup(cfg, cfg.time.horizon)?;
    let config = error_config(cfg)?;
    let mode: HorizonMode = cfg.eps_scaling.horizon_mode.parse()?;
    let q = config.q_exponent;
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    let mut notes = Vec::new();
    for kind in cfg.scheme_kinds()? {
        let study = epsilon_scaling_study(kind, &setup, &config, &cfg.eps_scaling.epsilons, cfg.time.tau, mode)?;
        if let Some(e) = study.fitted_exponent {
            notes.push(format!("{kind}: fitted exponent {e:.4}"));
        }
        plot.push(PlotSeries {
            name: kind.name().into(),
            points: study.rows.iter().map(|r| (r.epsilon, r.record.error_value)).collect(),
        });
        rows.extend(output::eps_rows(kind.name(), q, &study));
    }
    let path = csv_path(out_dir, "eps_scaling.csv");
    output::write_table(&path, &output::EPS_HEADER, &rows)?;
    let mut outputs = vec![path];
    if cfg.output.emit_svg {
        let spec = PlotSpec {
            title: "error against epsilon",
            x_label: "epsilon",
            y_label: "error",
            log_x: true,
            log_y: true,
        };
        outputs.push(output::write_svg(&out_dir.join("eps_scaling.svg"), &spec, &plot)?);
    }
    Ok(RunOutcome { outputs, notes })
}

/// Random two-mode state `a·e^{il₁x} + b·e^{il₂x}` with `|l| ≤ max_mode`.
pub fn random_two_mode(grid: &SpectralGrid, rng: &mut impl Rng, max_mode: i64) -> Result<SpectralState, LabError> {
    let l1 = rng.gen_range(-max_mode..=max_mode);
    let mut l2 = rng.gen_range(-max_mode..=max_mode);
    while l2 == l1 {
        l2 = rng.gen_range(-max_mode..=max_mode);
    }
    let mut amplitude = || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let a = SpectralState::single_mode(grid, amplitude(), l1)?;
    let b = SpectralState::single_mode(grid, amplitude(), l2)?;
    Ok(a.add(&b)?)
}

pub const DECOMPOSITION_HEADER: [&str; 7] = ["state", "t_n", "tau", "substeps", "residual", "residual_4x", "h1_norm_cubed"];

fn run_decomposition(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, LabError> {
    let grid = grid(cfg)?;
    let d = &cfg.decomposition;
    let params = SchemeParams::new(SchemeKind::Snrli1, d.mu, d.tau, QWienerSpec::silent())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    let mut rows = Vec::with_capacity(d.states);
    let mut worst: f64 = 0.0;
    for state in 0..d.states {
        let v = random_two_mode(&grid, &mut rng, d.max_mode)?;
        let t_n = rng.gen_range(0.0..10.0);
        let residual = local_error_decomposition_check(&v, t_n, &params, d.substeps)?;
        let refined = local_error_decomposition_check(&v, t_n, &params, 4 * d.substeps)?;
        let norm3 = v.sobolev_norm(SobolevIndex::H1).powi(3);
        worst = worst.max(residual / norm3);
        rows.push(vec![
            state.to_string(),
            output::fmt_real(t_n),
            output::fmt_real(d.tau),
            d.substeps.to_string(),
            output::fmt_real(residual),
            output::fmt_real(refined),
            output::fmt_real(norm3),
        ]);
    }
    let path = csv_path(out_dir, "decomposition.csv");
    output::write_table(&path, &DECOMPOSITION_HEADER, &rows)?;
    Ok(RunOutcome {
        outputs: vec![path],
        notes: vec![format!("largest residual / ||v||_1^3 = {worst:.3e}")],
    })
}

fn run_selftest(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, LabError> {
    let results = selftest::run_all(cfg.master_seed);
    let table = selftest::render(&results);
    print!("{table}");
    let path = out_dir.join("selftest.txt");
    std::fs::write(&path, &table).map_err(|source| LabError::Io { path: path.clone(), source })?;
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(LabError::SelftestFailed(failed));
    }
    Ok(RunOutcome {
        outputs: vec![path],
        notes: vec![format!("{} checks passed", results.len())],
    })
}

/// Runs the configured experiment, writing outputs into `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, LabError> {
    match cfg.experiment {
        Experiment::Converge => run_converge(cfg, out_dir),
        Experiment::Longterm => run_longterm(cfg, out_dir),
        Experiment::EpsScaling => run_eps_scaling(cfg, out_dir),
        Experiment::Decomposition => run_decomposition(cfg, out_dir),
        Experiment::Selftest => run_selftest(cfg, out_dir),
    }
}

/// Full run: creates the output directory, writes the manifest before and
/// after, and returns the outcome.
pub fn execute(loaded: &LoadedConfig) -> Result<RunOutcome, LabError> {
    let out_dir = PathBuf::from(&loaded.config.output.dir);
    std::fs::create_dir_all(&out_dir).map_err(|source| LabError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let mut manifest = RunManifest::begin(&out_dir, loaded)?;
    match run_experiment(&loaded.config, &out_dir) {
        Ok(outcome) => {
            manifest.finish(&outcome.outputs, &outcome.notes)?;
            Ok(outcome)
        }
        Err(e) => {
            manifest.fail(&e)?;
            Err(e)
        }
    }
}

/// Reference used by the converge experiment.
pub fn reference_driver(cfg: &RunConfig) -> Result<ReferenceDriver, LabError> {
    Ok(match cfg.reference_kind()? {
        ReferenceKind::ExactLinear => ReferenceDriver::exact_linear(cfg.time.tau_ref),
        ReferenceKind::FineSnrli1 => ReferenceDriver::fine_snrli1(cfg.time.tau_ref),
    })
}
