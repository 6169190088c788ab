//! Monte Carlo strong errors on coupled Brownian paths, observed-order
//! fits, long-time error curves, and frequency-level diagnostics of the
//! non-resonant step.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec::map_paths;
use crate::integrators::{guard, snrli1_twisted_step, SchemeKind, SchemeParams, StepKernel, Trajectory};
use crate::noise::{BrownianPath, QWienerSpec};
use crate::phi::phi1_imag;
use crate::spectral::{SobolevIndex, SpectralState};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Largest grid on which the O(K³) remainder is evaluated.
pub const R_TERM_MAX_MODES: usize = 32;

/// Statistical settings shared by every Monte Carlo study.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorConfig {
    /// Sobolev index of the error norm.
    pub sigma: SobolevIndex,
    /// Moment exponent `p` of `L^{2p}(Ω, H^σ)`.
    pub p_moment: u32,
    pub num_paths: usize,
    /// Small parameter of the long-time scaling: `μ = ε²`, `α = ε^{q−1}`.
    pub epsilon: f64,
    pub q_exponent: f64,
    /// Data regularity descriptor, for reporting only.
    pub gamma: f64,
    /// Noise regularity descriptor, for reporting only.
    pub nu: f64,
    pub master_seed: u64,
    pub workers: usize,
    /// Drop diverged paths (and count them) instead of failing the study.
    pub allow_diverged: bool,
}

impl Default for ErrorConfig {
    fn default() -> Self {
        ErrorConfig {
            sigma: SobolevIndex::H1,
            p_moment: 1,
            num_paths: 100,
            epsilon: 0.1,
            q_exponent: 3.5,
            gamma: 1.0,
            nu: 3.0,
            master_seed: 0,
            workers: 1,
            allow_diverged: false,
        }
    }
}

impl ErrorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_paths == 0 {
            return Err(Error::config("number of paths must be >= 1"));
        }
        if self.p_moment == 0 {
            return Err(Error::config("moment exponent p must be >= 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::config(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if !self.q_exponent.is_finite() {
            return Err(Error::config("q must be finite"));
        }
        Ok(())
    }

    /// `min(½, (ν−1)/2, γ)`.
    pub fn predicted_rate(&self) -> f64 {
        0.5_f64.min((self.nu - 1.0) / 2.0).min(self.gamma)
    }

    /// `μ = ε²`.
    pub fn scaled_mu(&self) -> f64 {
        self.epsilon * self.epsilon
    }

    /// `α = ε^{q−1}`.
    pub fn scaled_alpha(&self) -> f64 {
        self.epsilon.powf(self.q_exponent - 1.0)
    }

    /// Scheme parameters of the rescaled equation for this `ε` and `q`.
    pub fn scaled_params(&self, kind: SchemeKind, tau: f64, noise: &QWienerSpec) -> Result<SchemeParams> {
        SchemeParams::new(kind, self.scaled_mu(), tau, noise.with_amplitude(self.scaled_alpha())?)
    }
}

/// One Monte Carlo error estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub tau: f64,
    pub time: f64,
    /// `(M⁻¹ Σ ‖e‖_σ^{2p})^{1/(2p)}`.
    pub error_value: f64,
    /// `error_value²`.
    pub error_sq: f64,
    /// Jackknife standard error of `error_value`.
    pub std_error: f64,
    /// Jackknife standard error of `error_sq`.
    pub std_error_sq: f64,
    pub scheme_kind: SchemeKind,
    pub num_paths_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// SNRLI1 at the fine step on the same Brownian path.
    FineSnrli1,
    /// Exact linear flow (μ = 0) with the convolution sampled on the path.
    ExactLinear,
}

/// How the reference solution is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceDriver {
    pub kind: ReferenceKind,
    pub tau_ref: f64,
}

impl ReferenceDriver {
    pub fn fine_snrli1(tau_ref: f64) -> Self {
        ReferenceDriver { kind: ReferenceKind::FineSnrli1, tau_ref }
    }

    pub fn exact_linear(tau_ref: f64) -> Self {
        ReferenceDriver { kind: ReferenceKind::ExactLinear, tau_ref }
    }
}

/// Result of a log-log least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)` pairs.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<OrderFit> {
    if points.len() < 2 {
        return Err(Error::input("a fit needs at least two points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::input("fit abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(OrderFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Observed order: slope of `log(error)` against `log(τ)`.
pub fn order_fit(records: &[ErrorRecord]) -> Result<OrderFit> {
    if records.len() < 3 {
        return Err(Error::input(format!("order fit needs >= 3 records, got {}", records.len())));
    }
    let mut taus: Vec<f64> = records.iter().map(|r| r.tau).collect();
    taus.sort_by(f64::total_cmp);
    if taus.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::input("order fit needs distinct step sizes"));
    }
    if let Some(r) = records.iter().find(|r| !(r.error_value > 0.0) || !(r.tau > 0.0)) {
        return Err(Error::input(format!(
            "order fit needs positive errors and steps (tau {}, error {})",
            r.tau, r.error_value
        )));
    }
    let points: Vec<(f64, f64)> = records.iter().map(|r| (r.tau.ln(), r.error_value.ln())).collect();
    linear_fit(&points)
}

/// Integer ratio `a / b` if `a` is a whole multiple of `b`.
fn whole_ratio(a: f64, b: f64) -> Option<usize> {
    let ratio = a / b;
    let rounded = ratio.round();
    if rounded >= 1.0 && (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        Some(rounded as usize)
    } else {
        None
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Mean, `(mean)^{1/(2p)}` and jackknife standard errors of both the
/// estimate and its square, from per-path squared norms.
fn reduce(squared_norms: &[f64], p: u32) -> (f64, f64, f64, f64) {
    let m = squared_norms.len();
    let moments: Vec<f64> = squared_norms.iter().map(|s| s.powi(p as i32)).collect();
    let total: f64 = moments.iter().sum();
    let root = |mean: f64| mean.max(0.0).powf(1.0 / (2.0 * p as f64));
    let error = root(total / m as f64);
    if m < 2 {
        return (error, error * error, 0.0, 0.0);
    }
    let leave_out: Vec<f64> = moments.iter().map(|x| root((total - x) / (m - 1) as f64)).collect();
    let jackknife = |values: &[f64]| {
        let mean = values.iter().sum::<f64>() / m as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        ((m - 1) as f64 / m as f64 * ss).sqrt()
    };
    let squared: Vec<f64> = leave_out.iter().map(|e| e * e).collect();
    (error, error * error, jackknife(&leave_out), jackknife(&squared))
}

enum ReferenceStepper {
    Scheme(StepKernel),
    Exact(StepKernel),
}

/// A single coupled reference-versus-schemes experiment, shared by all
/// paths.
struct CoupledPlan {
    initial: SpectralState,
    noise: QWienerSpec,
    reference: ReferenceStepper,
    tau_ref: f64,
    /// Kernels under test and their coarsening factors.
    schemes: Vec<(StepKernel, usize)>,
    num_fine: usize,
    /// Checkpoint spacing in fine steps; a multiple of every coarsening.
    checkpoint_every: usize,
    sigma: SobolevIndex,
}

/// Per-path squared error norms, `[scheme][checkpoint]`.
struct PathErrors {
    squared: Vec<Vec<f64>>,
}

impl CoupledPlan {
    fn checkpoint_times(&self) -> Vec<f64> {
        let mut times = vec![0.0];
        let mut i = self.checkpoint_every;
        while i < self.num_fine {
            times.push(i as f64 * self.tau_ref);
            i += self.checkpoint_every;
        }
        times.push(self.num_fine as f64 * self.tau_ref);
        times
    }

    fn error_sq(&self, reference: &[Complex64], state: &[Complex64]) -> f64 {
        self.initial
            .grid()
            .wavenumbers()
            .iter()
            .zip(reference.iter().zip(state))
            .map(|(&k, (a, b))| self.sigma.weight(k) * (a - b).norm_sqr())
            .sum()
    }

    fn run_path(&self, master_seed: u64, path_index: u64) -> Result<PathErrors> {
        let grid = self.initial.grid();
        let modes = grid.modes();
        let zero = Complex64::new(0.0, 0.0);
        let noisy = self.noise.amplitude() != 0.0;
        let path = BrownianPath::sample(&self.noise, grid, master_seed, path_index, self.tau_ref, self.num_fine)?;

        let mut reference = self.initial.coeffs().to_vec();
        let mut scratch = vec![zero; modes];
        let mut states: Vec<Vec<Complex64>> = vec![reference.clone(); self.schemes.len()];
        let mut accumulated: Vec<Vec<Complex64>> = vec![vec![zero; modes]; self.schemes.len()];
        let mut beta = vec![zero; modes];
        let mut increment = vec![zero; modes];
        let mut squared = vec![vec![0.0]; self.schemes.len()];

        for i in 0..self.num_fine {
            if noisy {
                path.fill_fine_pair(i, &mut beta, &mut increment);
            }
            match &self.reference {
                ReferenceStepper::Scheme(kernel) => kernel.step_into(&reference, &increment, &mut scratch),
                ReferenceStepper::Exact(kernel) => {
                    let conv = if noisy { path.convolution_from_beta(i, 1, &beta) } else { vec![zero; modes] };
                    kernel.exact_linear_into(&reference, &conv, (i + 1) as f64 * self.tau_ref, &mut scratch);
                }
            }
            guard(&scratch, grid, path_index, i + 1)?;
            std::mem::swap(&mut reference, &mut scratch);

            for (s, (kernel, r)) in self.schemes.iter().enumerate() {
                let acc = &mut accumulated[s];
                if i % r == 0 {
                    acc.copy_from_slice(&increment);
                } else {
                    acc.iter_mut().zip(&increment).for_each(|(a, b)| *a += b);
                }
                if (i + 1) % r == 0 {
                    kernel.step_into(&states[s], acc, &mut scratch);
                    guard(&scratch, grid, path_index, (i + 1) / r)?;
                    std::mem::swap(&mut states[s], &mut scratch);
                }
            }

            let done = i + 1;
            if done % self.checkpoint_every == 0 || done == self.num_fine {
                for (s, state) in states.iter().enumerate() {
                    squared[s].push(self.error_sq(&reference, state));
                }
            }
        }
        Ok(PathErrors { squared })
    }

    /// Runs all paths and reduces in path-index order. Returns one record
    /// series per scheme plus the number of excluded paths.
    fn run(&self, config: &ErrorConfig) -> Result<(Vec<Vec<ErrorRecord>>, usize)> {
        let outcomes = map_paths(config.num_paths, config.workers.max(1), |m| {
            self.run_path(config.master_seed, m as u64)
        });
        let mut kept = Vec::with_capacity(outcomes.len());
        let mut diverged = 0;
        for outcome in outcomes {
            match outcome {
                Ok(p) => kept.push(p),
                Err(Error::Divergence { .. }) if config.allow_diverged => diverged += 1,
                Err(e) => return Err(e),
            }
        }
        if kept.is_empty() {
            return Err(Error::Divergence {
                path: 0,
                step: 0,
                reason: format!("all {} paths diverged", config.num_paths),
            });
        }
        let times = self.checkpoint_times();
        let series = self
            .schemes
            .iter()
            .enumerate()
            .map(|(s, (kernel, _))| {
                times
                    .iter()
                    .enumerate()
                    .map(|(c, &time)| {
                        let column: Vec<f64> = kept.iter().map(|p| p.squared[s][c]).collect();
                        let (error_value, error_sq, std_error, std_error_sq) = reduce(&column, config.p_moment);
                        ErrorRecord {
                            tau: kernel.tau(),
                            time,
                            error_value,
                            error_sq,
                            std_error,
                            std_error_sq,
                            scheme_kind: kernel.kind(),
                            num_paths_used: kept.len(),
                        }
                    })
                    .collect()
            })
            .collect();
        Ok((series, diverged))
    }
}

fn build_plan(
    initial: &SpectralState,
    scheme_params: Vec<SchemeParams>,
    reference: &ReferenceDriver,
    horizon: f64,
    checkpoint_every_coarse: Option<usize>,
    config: &ErrorConfig,
) -> Result<CoupledPlan> {
    config.validate()?;
    if !initial.is_finite() {
        return Err(Error::input("initial state has non-finite coefficients"));
    }
    let first = scheme_params.first().ok_or_else(|| Error::input("no scheme to compare"))?;
    if scheme_params.iter().any(|p| p.kind == SchemeKind::ExactLinear) {
        return Err(Error::config("exact-linear is only available as the reference"));
    }
    if !(reference.tau_ref > 0.0 && reference.tau_ref.is_finite()) {
        return Err(Error::config(format!("reference step must be > 0, got {}", reference.tau_ref)));
    }
    let num_fine = whole_ratio(horizon, reference.tau_ref).ok_or_else(|| {
        Error::input(format!(
            "horizon {horizon} is not a whole number of reference steps {}",
            reference.tau_ref
        ))
    })?;
    let mut schemes = Vec::with_capacity(scheme_params.len());
    let mut common = 1usize;
    for p in &scheme_params {
        let r = whole_ratio(p.tau, reference.tau_ref).ok_or_else(|| {
            Error::input(format!("step {} is not a multiple of the reference step {}", p.tau, reference.tau_ref))
        })?;
        if num_fine % r != 0 {
            return Err(Error::input(format!("horizon {horizon} is not a whole number of steps {}", p.tau)));
        }
        common = common / gcd(common, r) * r;
        schemes.push((StepKernel::new(initial.grid(), p), r));
    }
    let checkpoint_every = match checkpoint_every_coarse {
        Some(stride) => {
            if stride == 0 {
                return Err(Error::input("checkpoint stride must be >= 1"));
            }
            let every = stride * schemes[0].1;
            if every % common != 0 {
                return Err(Error::input("checkpoint stride does not align with every scheme's steps"));
            }
            every
        }
        None => common,
    };
    let reference_params = |kind| SchemeParams::new(kind, first.mu, reference.tau_ref, first.noise.clone());
    let reference_stepper = match reference.kind {
        ReferenceKind::FineSnrli1 => {
            ReferenceStepper::Scheme(StepKernel::new(initial.grid(), &reference_params(SchemeKind::Snrli1)?))
        }
        ReferenceKind::ExactLinear => {
            ReferenceStepper::Exact(StepKernel::new(initial.grid(), &reference_params(SchemeKind::ExactLinear)?))
        }
    };
    Ok(CoupledPlan {
        initial: initial.clone().with_time(0.0),
        noise: first.noise.clone(),
        reference: reference_stepper,
        tau_ref: reference.tau_ref,
        schemes,
        num_fine,
        checkpoint_every,
        sigma: config.sigma,
    })
}

/// Strong error of `scheme` at each step in `tau_list` against the coupled
/// reference: the maximum over checkpoints of the `L^{2p}(Ω, H^σ)` norm.
pub fn strong_error(
    scheme: &SchemeParams,
    reference: &ReferenceDriver,
    config: &ErrorConfig,
    tau_list: &[f64],
    horizon: f64,
    initial: &SpectralState,
) -> Result<Vec<ErrorRecord>> {
    if tau_list.is_empty() {
        return Err(Error::input("empty step list"));
    }
    let params = tau_list.iter().map(|&t| scheme.with_tau(t)).collect::<Result<Vec<_>>>()?;
    let plan = build_plan(initial, params, reference, horizon, None, config)?;
    let (series, _) = plan.run(config)?;
    Ok(series
        .into_iter()
        .map(|records| {
            records
                .into_iter()
                .max_by(|a, b| a.error_value.total_cmp(&b.error_value))
                .expect("at least one checkpoint")
        })
        .collect())
}

/// Data shared by the long-time studies of the rescaled equation.
#[derive(Debug, Clone)]
pub struct LongtermSetup {
    pub initial: SpectralState,
    /// Spatial covariance; its amplitude is replaced by `ε^{q−1}`.
    pub noise: QWienerSpec,
    pub tau_ref: f64,
    pub horizon: f64,
}

/// One scheme's error time series.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub scheme: SchemeKind,
    pub records: Vec<ErrorRecord>,
    pub diverged_paths: usize,
}

/// Squared `L²(Ω, H^σ)` (generally `L^{2p}`) error against the fine-step
/// reference at every `checkpoint_stride`-th step, for each scheme.
pub fn longterm_error_curve(
    schemes: &[SchemeKind],
    setup: &LongtermSetup,
    config: &ErrorConfig,
    tau: f64,
    checkpoint_stride: usize,
) -> Result<Vec<ErrorSeries>> {
    if schemes.is_empty() {
        return Err(Error::input("no scheme to compare"));
    }
    let params = schemes
        .iter()
        .map(|&k| config.scaled_params(k, tau, &setup.noise))
        .collect::<Result<Vec<_>>>()?;
    let reference = ReferenceDriver::fine_snrli1(setup.tau_ref);
    let plan = build_plan(&setup.initial, params, &reference, setup.horizon, Some(checkpoint_stride), config)?;
    let (series, diverged) = plan.run(config)?;
    Ok(schemes
        .iter()
        .zip(series)
        .map(|(&scheme, records)| ErrorSeries {
            scheme,
            records,
            diverged_paths: diverged,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonMode {
    /// The same horizon `T` for every `ε`.
    FixedT,
    /// `T_ε = T/ε²`.
    ScaledTEps,
}

impl std::str::FromStr for HorizonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_T" | "fixed-t" | "fixed" => Ok(HorizonMode::FixedT),
            "scaled_T_eps" | "scaled-t-eps" | "scaled" => Ok(HorizonMode::ScaledTEps),
            other => Err(Error::config(format!(
                "unknown horizon mode `{other}` (expected fixed_T or scaled_T_eps)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub horizon: f64,
    pub record: ErrorRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonScaling {
    pub rows: Vec<EpsilonRow>,
    /// Slope of `log(error)` against `log(ε)`; `None` with fewer than two
    /// distinct `ε`.
    pub fitted_exponent: Option<f64>,
}

/// `L^{2p}(Ω, H^σ)` error at the horizon for each `ε`, and the fitted
/// exponent of error against `ε`.
pub fn epsilon_scaling_study(
    scheme: SchemeKind,
    setup: &LongtermSetup,
    config: &ErrorConfig,
    epsilons: &[f64],
    tau: f64,
    horizon_mode: HorizonMode,
) -> Result<EpsilonScaling> {
    if epsilons.is_empty() {
        return Err(Error::input("empty epsilon list"));
    }
    if !(config.q_exponent > 2.0) {
        return Err(Error::config(format!("epsilon scaling needs q > 2, got {}", config.q_exponent)));
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let cfg = ErrorConfig { epsilon, ..config.clone() };
        cfg.validate()?;
        let horizon = match horizon_mode {
            HorizonMode::FixedT => setup.horizon,
            HorizonMode::ScaledTEps => setup.horizon / (epsilon * epsilon),
        };
        let params = vec![cfg.scaled_params(scheme, tau, &setup.noise)?];
        let reference = ReferenceDriver::fine_snrli1(setup.tau_ref);
        let steps = whole_ratio(horizon, tau)
            .ok_or_else(|| Error::input(format!("horizon {horizon} is not a whole number of steps {tau}")))?;
        let plan = build_plan(&setup.initial, params, &reference, horizon, Some(steps), &cfg)?;
        let (mut series, _) = plan.run(&cfg)?;
        let record = series.remove(0).pop().expect("final checkpoint");
        rows.push(EpsilonRow { epsilon, horizon, record });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.record.error_value > 0.0)
        .map(|r| (r.epsilon.ln(), r.record.error_value.ln()))
        .collect();
    let fitted_exponent = linear_fit(&points).ok().map(|f| f.slope);
    Ok(EpsilonScaling { rows, fitted_exponent })
}

/// Remainder of the non-resonant step over `[t_n, t_n + τ]`:
///
/// `𝓡_l = −iμ Σ_{−l₁+l₂+l₃=l, Ω≠0} e^{it_nΩ} conj(v_{l₁}) v_{l₂} v_{l₃}
///        [τφ₁(2iτl₁²) − τφ₁(iτΩ)]`, `Ω = l² + l₁² − l₂² − l₃²`,
///
/// so that one step equals `v − iμ∫₀^τ I_s(v) ds + 𝓡`, with
/// `I_s(v) = S(−t_n−s)(|S(t_n+s)v|² S(t_n+s)v)`.
pub fn compute_r_term(v: &SpectralState, t_n: f64, tau: f64, mu: f64) -> Result<SpectralState> {
    let grid = v.grid();
    if grid.modes() > R_TERM_MAX_MODES {
        return Err(Error::Cost(format!(
            "remainder evaluation is O(K³); K = {} exceeds {R_TERM_MAX_MODES}",
            grid.modes()
        )));
    }
    let ks = grid.wavenumbers();
    let mut out = vec![Complex64::new(0.0, 0.0); grid.modes()];
    if tau == 0.0 || mu == 0.0 {
        return Ok(SpectralState::from_parts(grid.clone(), out, v.time()));
    }
    let c = v.coeffs();
    for (j1, &l1) in ks.iter().enumerate() {
        if c[j1] == Complex64::new(0.0, 0.0) {
            continue;
        }
        let first = tau * phi1_imag(2.0 * tau * (l1 * l1) as f64);
        for (j2, &l2) in ks.iter().enumerate() {
            let pair = c[j1].conj() * c[j2];
            if pair == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (j3, &l3) in ks.iter().enumerate() {
                let l = -l1 + l2 + l3;
                let Some(slot) = grid.slot(l) else { continue };
                let omega = l * l + l1 * l1 - l2 * l2 - l3 * l3;
                if omega == 0 {
                    continue;
                }
                let omega = omega as f64;
                let second = tau * phi1_imag(tau * omega);
                out[slot] += Complex64::cis(t_n * omega) * pair * c[j3] * (first - second);
            }
        }
    }
    let scale = -I * mu;
    out.iter_mut().for_each(|x| *x *= scale);
    Ok(SpectralState::from_parts(grid.clone(), out, v.time()))
}

/// `I_s(w) = S(−t)(|S(t)w|² S(t)w)` at absolute time `t`.
fn twisted_cubic(w: &SpectralState, t: f64) -> SpectralState {
    let u = w.free_group_apply(t);
    u.cubic_product(&u, &u.conjugate()).expect("same grid").free_group_apply(-t)
}

/// Composite Simpson weights on `m` (even) equal intervals of width `h`.
fn simpson_weight(j: usize, m: usize, h: f64) -> f64 {
    let w = if j == 0 || j == m {
        1.0
    } else if j % 2 == 1 {
        4.0
    } else {
        2.0
    };
    w * h / 3.0
}

/// `‖Eⁿ − (𝒲ⁿ + 𝓡)‖₁` for one deterministic step from `v` at `t_n`.
///
/// `Eⁿ` is the step minus a Richardson-extrapolated solution of the twisted
/// equation built from `substeps` and `2·substeps` SNRLI1 sub-steps;
/// `𝒲ⁿ = iμ∫₀^τ [I_s(v(t_n+s)) − I_s(v)] ds` uses Simpson's rule on the
/// same nodes. Products are evaluated without aliasing.
pub fn local_error_decomposition_check(
    v: &SpectralState,
    t_n: f64,
    params: &SchemeParams,
    substeps: usize,
) -> Result<f64> {
    if params.alpha() != 0.0 {
        return Err(Error::config("the decomposition check is deterministic; set the noise amplitude to 0"));
    }
    if v.grid().modes() > R_TERM_MAX_MODES {
        return Err(Error::Cost(format!(
            "decomposition check is O(K³); K = {} exceeds {R_TERM_MAX_MODES}",
            v.grid().modes()
        )));
    }
    if substeps < 2 || !substeps.is_multiple_of(2) {
        return Err(Error::input(format!("substeps must be even and >= 2, got {substeps}")));
    }
    let grid = v.grid().dealiased(true);
    let v = SpectralState::new(grid.clone(), v.coeffs().to_vec(), t_n)?;
    let zero = SpectralState::zeros(&grid);
    let (mu, tau) = (params.mu, params.tau);
    let step = SchemeParams::new(SchemeKind::Snrli1, mu, tau, QWienerSpec::silent())?;

    let march = |m: usize| -> Result<Vec<SpectralState>> {
        let sub = step.with_tau(tau / m as f64)?;
        let mut nodes = Vec::with_capacity(m + 1);
        let mut w = v.clone();
        nodes.push(w.clone());
        for j in 0..m {
            w = snrli1_twisted_step(&w, t_n + j as f64 * sub.tau, &zero, &sub)?;
            nodes.push(w.clone());
        }
        Ok(nodes)
    };
    let coarse = march(substeps)?;
    let fine = march(2 * substeps)?;
    let richardson: Vec<SpectralState> = (0..=substeps)
        .map(|j| fine[2 * j].scale(Complex64::new(2.0, 0.0)).sub(&coarse[j]))
        .collect::<Result<_>>()?;

    let numerical = snrli1_twisted_step(&v, t_n, &zero, &step)?;
    let local_error = numerical.sub(&richardson[substeps])?;

    let h = tau / substeps as f64;
    let mut integral = SpectralState::zeros(&grid);
    for (j, node) in richardson.iter().enumerate() {
        let t = t_n + j as f64 * h;
        let diff = twisted_cubic(node, t).sub(&twisted_cubic(&v, t))?;
        integral = integral.add(&diff.scale(Complex64::new(simpson_weight(j, substeps, h), 0.0)))?;
    }
    let fluctuation = integral.scale(I * mu);
    let remainder = compute_r_term(&v, t_n, tau, mu)?;
    let residual = local_error.sub(&fluctuation)?.sub(&remainder)?;
    Ok(residual.sobolev_norm(SobolevIndex::H1))
}

/// `(‖P_{N₀}v‖₁, ‖(I − P_{N₀})v‖₁)` with `N₀ = 2⌊1/τ₀⌋`.
pub fn rco_frequency_split(v: &SpectralState, tau0: f64) -> Result<(f64, f64)> {
    if !(tau0 > 0.0 && tau0 < 1.0) {
        return Err(Error::input(format!("cut-off tau0 must lie in (0, 1), got {tau0}")));
    }
    let n0 = 2 * (1.0 / tau0).floor() as usize;
    if n0 > v.grid().modes() {
        return Err(Error::input(format!(
            "cut-off mode N0 = {n0} exceeds the grid size {}",
            v.grid().modes()
        )));
    }
    let low = v.project_low_modes(n0)?;
    let high = v.sub(&low)?;
    Ok((low.sobolev_norm(SobolevIndex::H1), high.sobolev_norm(SobolevIndex::H1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    /// `M⁻¹ Σ_m ‖w_m(t)‖_σ^{2p}`.
    pub moment: Vec<f64>,
    /// `M⁻¹ Σ_m sup_{s≤t} ‖w_m(s)‖_σ^{2p}`; non-decreasing.
    pub sup_moment: Vec<f64>,
    /// Set when the sup-moment grows by more than the allowed factor.
    pub warning: Option<String>,
}

/// Empirical moments along a batch of trajectories with shared checkpoints.
pub fn moment_monitor(
    trajectories: &[Trajectory],
    sigma: SobolevIndex,
    p: u32,
    growth_factor: f64,
) -> Result<MomentSeries> {
    let first = trajectories.first().ok_or_else(|| Error::input("no trajectories"))?;
    let times = first.times();
    if trajectories.iter().any(|t| t.snapshots().len() != times.len() || t.times() != times) {
        return Err(Error::input("trajectories do not share checkpoint times"));
    }
    let m = trajectories.len() as f64;
    let mut sup = vec![0.0f64; trajectories.len()];
    let mut moment = Vec::with_capacity(times.len());
    let mut sup_moment = Vec::with_capacity(times.len());
    for c in 0..times.len() {
        let mut plain = 0.0;
        for (i, traj) in trajectories.iter().enumerate() {
            let value = traj.snapshots()[c].1.sobolev_norm_sq(sigma).powi(p as i32);
            plain += value;
            sup[i] = sup[i].max(value);
        }
        moment.push(plain / m);
        sup_moment.push(sup.iter().sum::<f64>() / m);
    }
    let start = sup_moment[0];
    let end = *sup_moment.last().expect("non-empty");
    let warning = if end > growth_factor * start.max(f64::MIN_POSITIVE) {
        Some(format!(
            "moment grew from {start:.3e} to {end:.3e}, more than a factor {growth_factor}"
        ))
    } else {
        None
    };
    Ok(MomentSeries {
        times,
        moment,
        sup_moment,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectralGrid;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn record(tau: f64, error: f64) -> ErrorRecord {
        ErrorRecord {
            tau,
            time: 1.0,
            error_value: error,
            error_sq: error * error,
            std_error: 0.0,
            std_error_sq: 0.0,
            scheme_kind: SchemeKind::Snrli1,
            num_paths_used: 1,
        }
    }

    #[test]
    fn order_fit_recovers_exact_power_laws() {
        for (order, constant) in [(0.5, 3.0), (1.0, 0.2), (2.0, 7.5)] {
            let records: Vec<_> = (4..9).map(|j| {
                let tau = 2f64.powi(-j);
                record(tau, constant * tau.powf(order))
            }).collect();
            let fit = order_fit(&records).unwrap();
            assert!((fit.slope - order).abs() < 1e-12, "{fit:?}");
            assert!((fit.intercept - f64::ln(constant)).abs() < 1e-11);
            assert!((fit.r_squared - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn order_fit_tolerates_jitter() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let records: Vec<_> = (4..9).map(|j| {
                let tau = 2f64.powi(-j);
                let jitter = 1.0 + rng.gen_range(-0.05..0.05);
                record(tau, 0.3 * tau.sqrt() * jitter)
            }).collect();
            let fit = order_fit(&records).unwrap();
            assert!((fit.slope - 0.5).abs() < 0.05, "{fit:?}");
        }
    }

    #[test]
    fn order_fit_preconditions() {
        assert!(order_fit(&[record(0.1, 1.0), record(0.05, 0.5)]).is_err());
        assert!(order_fit(&[record(0.1, 1.0), record(0.05, 0.0), record(0.02, 0.1)]).is_err());
        assert!(order_fit(&[record(0.1, 1.0), record(0.1, 0.5), record(0.02, 0.1)]).is_err());
    }

    #[test]
    fn jackknife_examples() {
        let (e, e2, se, se2) = reduce(&[4.0], 1);
        assert_eq!((e, e2, se, se2), (2.0, 4.0, 0.0, 0.0));
        // Identical paths: zero spread.
        let (e, _, se, _) = reduce(&[9.0; 5], 1);
        assert!((e - 3.0).abs() < 1e-15 && se < 1e-15);
        // For p = 1 the error_sq jackknife is the ordinary standard error of
        // the mean of the squared norms.
        let xs = [1.0, 2.0, 4.0, 8.0];
        let (_, e2, _, se2) = reduce(&xs, 1);
        let mean = xs.iter().sum::<f64>() / 4.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        assert!((e2 - mean).abs() < 1e-14);
        assert!((se2 - (var / 4.0).sqrt()).abs() < 1e-14);
    }

    fn small_grid_state(grid: &SpectralGrid, rng: &mut impl Rng, max_mode: i64) -> SpectralState {
        SpectralState::from_modes(grid, |k| {
            if k.abs() <= max_mode {
                c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            } else {
                c(0.0, 0.0)
            }
        })
        .unwrap()
    }

    #[test]
    fn self_comparison_is_exactly_zero() {
        let grid = SpectralGrid::new(16).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let u0 = small_grid_state(&grid, &mut rng, 3).scale(c(0.3, 0.0));
        let params = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.01, QWienerSpec::power_decay(8.0, 0.5).unwrap()).unwrap();
        let config = ErrorConfig { num_paths: 4, ..ErrorConfig::default() };
        let records = strong_error(&params, &ReferenceDriver::fine_snrli1(0.01), &config, &[0.01], 0.2, &u0).unwrap();
        assert_eq!(records[0].error_value, 0.0);
        assert_eq!(records[0].std_error, 0.0);
    }

    #[test]
    fn coupled_runner_matches_independent_integration() {
        let grid = SpectralGrid::new(16).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        let u0 = small_grid_state(&grid, &mut rng, 3).scale(c(0.3, 0.0));
        let spec = QWienerSpec::power_decay(4.0, 0.7).unwrap();
        let params = SchemeParams::new(SchemeKind::Sli1, 1.0, 0.04, spec.clone()).unwrap();
        let config = ErrorConfig { num_paths: 3, master_seed: 11, sigma: SobolevIndex::L2, ..ErrorConfig::default() };
        let records = strong_error(&params, &ReferenceDriver::fine_snrli1(0.01), &config, &[0.04], 0.4, &u0).unwrap();

        let mut sq = Vec::new();
        for m in 0..3 {
            let path = BrownianPath::sample(&spec, &grid, 11, m, 0.01, 40).unwrap();
            let reference = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.01, spec.clone()).unwrap();
            let r = crate::integrators::integrate(&u0, &path, &reference, 40, 1, 4).unwrap();
            let s = crate::integrators::integrate(&u0, &path, &params, 10, 4, 1).unwrap();
            let per_checkpoint: Vec<f64> = (0..=10)
                .map(|n| r.snapshots()[n].1.sub(&s.snapshots()[n].1).unwrap().sobolev_norm_sq(SobolevIndex::L2))
                .collect();
            sq.push(per_checkpoint);
        }
        let best = (0..=10)
            .map(|n| (sq.iter().map(|p| p[n]).sum::<f64>() / 3.0).sqrt())
            .fold(0.0, f64::max);
        assert!((records[0].error_value - best).abs() <= 1e-15 * best.max(1.0), "{} vs {best}", records[0].error_value);
    }

    #[test]
    fn strong_error_rejects_incommensurate_steps() {
        let grid = SpectralGrid::new(8).unwrap();
        let u0 = SpectralState::zeros(&grid);
        let params = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.01, QWienerSpec::silent()).unwrap();
        let config = ErrorConfig { num_paths: 1, ..ErrorConfig::default() };
        let r = ReferenceDriver::fine_snrli1(0.003);
        assert!(matches!(strong_error(&params, &r, &config, &[0.01], 0.3, &u0), Err(Error::InvalidInput(_))));
        let r = ReferenceDriver::fine_snrli1(0.01);
        assert!(strong_error(&params, &r, &config, &[0.04], 0.1, &u0).is_err());
    }

    #[test]
    fn h1_error_dominates_l2_error() {
        let grid = SpectralGrid::new(16).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let u0 = small_grid_state(&grid, &mut rng, 4).scale(c(0.5, 0.0));
        let params = SchemeParams::new(SchemeKind::Sli1, 1.0, 0.05, QWienerSpec::power_decay(8.0, 0.3).unwrap()).unwrap();
        let reference = ReferenceDriver::fine_snrli1(0.01);
        let l2 = ErrorConfig { num_paths: 4, sigma: SobolevIndex::L2, ..ErrorConfig::default() };
        let h1 = ErrorConfig { sigma: SobolevIndex::H1, ..l2.clone() };
        let a = strong_error(&params, &reference, &l2, &[0.05], 0.5, &u0).unwrap();
        let b = strong_error(&params, &reference, &h1, &[0.05], 0.5, &u0).unwrap();
        assert!(b[0].error_value >= a[0].error_value && a[0].error_value > 0.0);
    }

    #[test]
    fn longterm_starts_at_zero_and_is_worker_independent() {
        let grid = SpectralGrid::new(16).unwrap();
        let u0 = grid.sample(|x| c(2.0 / (2.0 - x.cos()), 0.0)).unwrap();
        let setup = LongtermSetup {
            initial: u0,
            noise: QWienerSpec::power_decay(8.0, 1.0).unwrap(),
            tau_ref: 0.01,
            horizon: 1.0,
        };
        let config = ErrorConfig { num_paths: 5, master_seed: 3, ..ErrorConfig::default() };
        let schemes = [SchemeKind::Snrli1, SchemeKind::Sli1];
        let one = longterm_error_curve(&schemes, &setup, &config, 0.05, 2).unwrap();
        let many = longterm_error_curve(&schemes, &setup, &ErrorConfig { workers: 3, ..config }, 0.05, 2).unwrap();
        assert_eq!(one, many);
        for series in &one {
            assert_eq!(series.records[0].error_sq, 0.0);
            assert_eq!(series.records.len(), 11);
            assert!((series.records.last().unwrap().time - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn epsilon_study_is_deterministic_for_repeated_values() {
        let grid = SpectralGrid::new(16).unwrap();
        let u0 = grid.sample(|x| c(2.0 / (2.0 - x.cos()), 0.0)).unwrap();
        let setup = LongtermSetup {
            initial: u0,
            noise: QWienerSpec::power_decay(8.0, 1.0).unwrap(),
            tau_ref: 0.01,
            horizon: 0.5,
        };
        let config = ErrorConfig { num_paths: 3, q_exponent: 6.0, ..ErrorConfig::default() };
        let study = epsilon_scaling_study(SchemeKind::Snrli1, &setup, &config, &[0.2, 0.2], 0.05, HorizonMode::FixedT).unwrap();
        assert_eq!(study.rows[0].record, study.rows[1].record);
        assert!(study.fitted_exponent.is_none());
        let bad = ErrorConfig { q_exponent: 2.0, ..config };
        assert!(epsilon_scaling_study(SchemeKind::Snrli1, &setup, &bad, &[0.1], 0.05, HorizonMode::FixedT).is_err());
    }

    #[test]
    fn r_term_examples() {
        let grid = SpectralGrid::new(8).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let v = small_grid_state(&grid, &mut rng, 3);
        assert_eq!(compute_r_term(&v, 0.3, 0.0, 1.0).unwrap(), SpectralState::zeros(&grid));
        let single = SpectralState::single_mode(&grid, c(0.8, -0.4), 2).unwrap();
        assert_eq!(compute_r_term(&single, 0.3, 0.1, 1.0).unwrap(), SpectralState::zeros(&grid));
        let big = SpectralState::zeros(&SpectralGrid::new(64).unwrap());
        assert!(matches!(compute_r_term(&big, 0.0, 0.1, 1.0), Err(Error::Cost(_))));
    }

    /// `Φ(v) − v + iμ∫₀^τ I_s(v) ds`, the integral by composite Simpson.
    fn r_term_by_quadrature(v: &SpectralState, t_n: f64, tau: f64, mu: f64, intervals: usize) -> SpectralState {
        let grid = v.grid().dealiased(true);
        let v = SpectralState::new(grid.clone(), v.coeffs().to_vec(), 0.0).unwrap();
        let h = tau / intervals as f64;
        let mut integral = SpectralState::zeros(&grid);
        for j in 0..=intervals {
            let w = simpson_weight(j, intervals, h);
            integral = integral.add(&twisted_cubic(&v, t_n + j as f64 * h).scale(c(w, 0.0))).unwrap();
        }
        let params = SchemeParams::new(SchemeKind::Snrli1, mu, tau, QWienerSpec::silent()).unwrap();
        let step = snrli1_twisted_step(&v, t_n, &SpectralState::zeros(&grid), &params).unwrap();
        step.sub(&v).unwrap().add(&integral.scale(I * mu)).unwrap()
    }

    #[test]
    fn r_term_matches_quadrature_of_the_definition() {
        let grid = SpectralGrid::new(8).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(8);
        for _ in 0..5 {
            // Both non-resonant outputs 2l₂ − l₁ and 2l₁ − l₂ stay on the grid.
            let (l1, l2) = loop {
                let a: i64 = rng.gen_range(-2..=2);
                let b: i64 = rng.gen_range(-2..=2);
                if a != b && grid.slot(2 * b - a).is_some() && grid.slot(2 * a - b).is_some() {
                    break (a, b);
                }
            };
            let v = SpectralState::single_mode(&grid, c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)), l1)
                .unwrap()
                .add(&SpectralState::single_mode(&grid, c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)), l2).unwrap())
                .unwrap();
            let t_n = rng.gen_range(0.0..5.0);
            let got = compute_r_term(&v, t_n, 0.1, 1.3).unwrap();
            let want = r_term_by_quadrature(&v, t_n, 0.1, 1.3, 2000);
            let diff = got.coeffs().iter().zip(want.coeffs()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            let scale = want.coeffs().iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(diff <= 1e-8 * scale, "{diff} vs {scale}");
        }
    }

    #[test]
    fn decomposition_residual_examples() {
        let grid = SpectralGrid::new(8).unwrap();
        let params = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.05, QWienerSpec::silent()).unwrap();
        assert_eq!(local_error_decomposition_check(&SpectralState::zeros(&grid), 0.0, &params, 16).unwrap(), 0.0);
        let single = SpectralState::single_mode(&grid, c(0.7, 0.1), 1).unwrap();
        assert!(local_error_decomposition_check(&single, 0.4, &params, 256).unwrap() < 1e-9);
        let noisy = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.05, QWienerSpec::power_decay(8.0, 1.0).unwrap()).unwrap();
        assert!(local_error_decomposition_check(&single, 0.0, &noisy, 16).is_err());
        assert!(local_error_decomposition_check(&single, 0.0, &params, 15).is_err());
    }

    #[test]
    fn decomposition_residual_follows_the_substep_error() {
        let grid = SpectralGrid::new(8).unwrap();
        let params = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.05, QWienerSpec::silent()).unwrap();
        let v = SpectralState::single_mode(&grid, c(0.7, 0.1), 1)
            .unwrap()
            .add(&SpectralState::single_mode(&grid, c(-0.3, 0.5), -2).unwrap())
            .unwrap();
        let coarse = local_error_decomposition_check(&v, 0.4, &params, 64).unwrap();
        let fine = local_error_decomposition_check(&v, 0.4, &params, 256).unwrap();
        assert!(fine <= 1e-8 * v.sobolev_norm(SobolevIndex::H1).powi(3));
        assert!((8.0..=32.0).contains(&(coarse / fine)), "{coarse} / {fine}");
    }

    #[test]
    fn frequency_split_examples() {
        let grid = SpectralGrid::new(32).unwrap();
        let v = SpectralState::from_modes(&grid, |k| c((1.0 + k.abs() as f64).powi(-3), 0.0)).unwrap();
        // N0 = 32 = K keeps every mode.
        let (low, high) = rco_frequency_split(&v, 1.0 / 16.0).unwrap();
        assert_eq!(high, 0.0);
        assert!((low - v.sobolev_norm(SobolevIndex::H1)).abs() < 1e-15);
        assert!(rco_frequency_split(&v, 0.01).is_err());
        assert!(rco_frequency_split(&v, 1.0).is_err());
        let band = v.project_low_modes(8).unwrap();
        assert_eq!(rco_frequency_split(&band, 0.25).unwrap().1, 0.0);
    }

    #[test]
    fn moment_monitor_is_constant_without_dynamics() {
        let grid = SpectralGrid::new(16).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let u0 = small_grid_state(&grid, &mut rng, 5);
        let spec = QWienerSpec::power_decay(8.0, 0.0).unwrap();
        let params = SchemeParams::new(SchemeKind::Snrli1, 0.0, 0.1, spec.clone()).unwrap();
        let trajectories: Vec<_> = (0..3)
            .map(|m| {
                let path = BrownianPath::sample(&spec, &grid, 0, m, 0.1, 50).unwrap();
                crate::integrators::integrate(&u0, &path, &params, 50, 1, 5).unwrap()
            })
            .collect();
        let series = moment_monitor(&trajectories, SobolevIndex::H1, 2, 2.0).unwrap();
        let first = series.moment[0];
        assert!(series.moment.iter().all(|m| (m - first).abs() <= 1e-11 * first));
        assert!(series.sup_moment.windows(2).all(|w| w[1] >= w[0]));
        assert!(series.warning.is_none());
    }
}
