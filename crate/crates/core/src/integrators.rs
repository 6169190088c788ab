//! One-step maps for `i du = −∂²ₓu dt + μ|u|²u dt + α dW` and the
//! trajectory driver.
//!
//! * SNRLI1 (non-resonant, first order):
//!   `uⁿ⁺¹ = S(τ)[uⁿ − iτμ (uⁿ)² φ₁(−2iτ∂²ₓ)ūⁿ − iαΔWⁿ]
//!          − 2iμτ ĝ₀(uⁿ) S(τ)uⁿ + iμτ S(τ)h(uⁿ)`
//! * SLI1 (baseline low-regularity): the bracketed part alone.
//! * Exact linear flow (μ = 0) with the stochastic convolution sampled
//!   exactly on the same Brownian path.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::noise::{BrownianPath, QWienerSpec};
use crate::phi::phi1_imag;
use crate::spectral::{free_phase, SobolevIndex, SpectralGrid, SpectralState};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `‖u‖₁` above which a path is declared divergent.
pub const DIVERGENCE_H1_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeKind {
    Snrli1,
    Sli1,
    ExactLinear,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Snrli1 => "snrli1",
            SchemeKind::Sli1 => "sli1",
            SchemeKind::ExactLinear => "exact-linear",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snrli1" | "snri1" => Ok(SchemeKind::Snrli1),
            "sli1" => Ok(SchemeKind::Sli1),
            "exact-linear" | "exact_linear" => Ok(SchemeKind::ExactLinear),
            other => Err(Error::config(format!(
                "unknown scheme `{other}` (expected snrli1, sli1 or exact-linear)"
            ))),
        }
    }
}

/// Equation coefficients, step size and scheme selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeParams {
    pub kind: SchemeKind,
    pub mu: f64,
    pub tau: f64,
    pub noise: QWienerSpec,
}

impl SchemeParams {
    pub fn new(kind: SchemeKind, mu: f64, tau: f64, noise: QWienerSpec) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::config(format!("step size must be > 0, got {tau}")));
        }
        if !mu.is_finite() {
            return Err(Error::config("nonlinearity coefficient must be finite"));
        }
        if kind == SchemeKind::ExactLinear && mu != 0.0 {
            return Err(Error::config(format!(
                "the exact linear flow requires mu = 0, got {mu}"
            )));
        }
        Ok(SchemeParams { kind, mu, tau, noise })
    }

    pub fn alpha(&self) -> f64 {
        self.noise.amplitude()
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        SchemeParams::new(self.kind, self.mu, tau, self.noise.clone())
    }

    pub fn with_kind(&self, kind: SchemeKind) -> Result<Self> {
        SchemeParams::new(kind, self.mu, self.tau, self.noise.clone())
    }
}

/// `g(u) = u · (I − φ₁(−2iτ∂²ₓ)) ū`.
pub fn g_term(u: &SpectralState, tau: f64) -> SpectralState {
    let conj = u.conjugate();
    let filtered = conj.sub(&conj.phi1_operator_apply(Complex64::new(0.0, -2.0 * tau))).expect("same grid");
    u.pointwise_product(&filtered).expect("same grid")
}

/// `ĥ(u)_k = (1 − φ₁(2ik²τ)) |û_k|² û_k`.
pub fn h_term(u: &SpectralState, tau: f64) -> SpectralState {
    let coeffs = u
        .grid()
        .wavenumbers()
        .iter()
        .zip(u.coeffs())
        .map(|(&k, &c)| (1.0 - phi1_imag(2.0 * tau * (k * k) as f64)) * c.norm_sqr() * c)
        .collect();
    SpectralState::from_parts(u.grid().clone(), coeffs, u.time())
}

/// Per-(grid, τ, μ, α) multipliers shared by every step of a run.
#[derive(Debug, Clone)]
pub struct StepKernel {
    grid: SpectralGrid,
    kind: SchemeKind,
    mu: f64,
    tau: f64,
    alpha: f64,
    /// `e^{−ik²τ}`.
    phase: Vec<Complex64>,
    /// `φ₁(2iτk²)`.
    phi: Vec<Complex64>,
}

impl StepKernel {
    pub fn new(grid: &SpectralGrid, params: &SchemeParams) -> Self {
        let phase = grid
            .wavenumbers()
            .iter()
            .map(|&k| free_phase(k, params.tau))
            .collect();
        let phi = grid
            .wavenumbers()
            .iter()
            .map(|&k| phi1_imag(2.0 * params.tau * (k * k) as f64))
            .collect();
        StepKernel {
            grid: grid.clone(),
            kind: params.kind,
            mu: params.mu,
            tau: params.tau,
            alpha: params.alpha(),
            phase,
            phi,
        }
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `(uⁿ)² · φ₁(−2iτ∂²ₓ) ūⁿ`.
    fn cubic_term(&self, u: &[Complex64]) -> Vec<Complex64> {
        let filtered_conj: Vec<Complex64> = (0..u.len())
            .map(|j| self.phi[j] * u[self.grid.mirror_slot(j)].conj())
            .collect();
        self.grid.product_sq_times(u, &filtered_conj)
    }

    /// `(ĝ(u))₀ = Σ_k (1 − φ₁(2iτk²)) |u_k|²`, the zero mode of `g(u)`.
    fn g_zero_mode(&self, u: &[Complex64]) -> Complex64 {
        u.iter()
            .zip(&self.phi)
            .map(|(c, p)| (1.0 - p) * c.norm_sqr())
            .sum()
    }

    /// Physical-variable step for SNRLI1 or SLI1, written into `out`.
    pub(crate) fn step_into(&self, u: &[Complex64], dw: &[Complex64], out: &mut [Complex64]) {
        let a = -I * self.tau * self.mu;
        let b = -I * self.alpha;
        let nonlinear = if self.mu != 0.0 {
            self.cubic_term(u)
        } else {
            vec![Complex64::new(0.0, 0.0); u.len()]
        };
        match self.kind {
            SchemeKind::Sli1 | SchemeKind::ExactLinear => {
                for j in 0..u.len() {
                    let bracket = u[j] + a * nonlinear[j] + b * dw[j];
                    out[j] = self.phase[j] * bracket;
                }
            }
            SchemeKind::Snrli1 => {
                let g0 = if self.mu != 0.0 { self.g_zero_mode(u) } else { Complex64::new(0.0, 0.0) };
                let zero_mode_coeff = -2.0 * I * self.mu * self.tau * g0;
                let h_coeff = I * self.mu * self.tau;
                for j in 0..u.len() {
                    let bracket = u[j] + a * nonlinear[j] + b * dw[j];
                    let su = self.phase[j] * u[j];
                    let h = (1.0 - self.phi[j]) * u[j].norm_sqr() * u[j];
                    out[j] = self.phase[j] * bracket + zero_mode_coeff * su + h_coeff * (self.phase[j] * h);
                }
            }
        }
    }

    /// Exact linear step given the convolution sample `J = ∫ S(−s)dW` over
    /// `[t_n, t_n + τ]`: `u_k ↦ e^{−ik²τ}u_k − iα e^{−ik²t_{n+1}} J_k`.
    pub(crate) fn exact_linear_into(&self, u: &[Complex64], conv: &[Complex64], t_next: f64, out: &mut [Complex64]) {
        let b = -I * self.alpha;
        for (j, &k) in self.grid.wavenumbers().iter().enumerate() {
            let to_physical = free_phase(k, t_next);
            out[j] = self.phase[j] * u[j] + b * (to_physical * conv[j]);
        }
    }
}

fn check_same_grid(u: &SpectralState, dw: &SpectralState) -> Result<()> {
    if u.grid() != dw.grid() {
        return Err(Error::input(format!(
            "state grid {:?} does not match increment grid {:?}",
            u.grid(),
            dw.grid()
        )));
    }
    Ok(())
}

fn physical_step(u: &SpectralState, dw: &SpectralState, params: &SchemeParams, kind: SchemeKind) -> Result<SpectralState> {
    check_same_grid(u, dw)?;
    let params = params.with_kind(kind)?;
    let kernel = StepKernel::new(u.grid(), &params);
    let mut out = vec![Complex64::new(0.0, 0.0); u.coeffs().len()];
    kernel.step_into(u.coeffs(), dw.coeffs(), &mut out);
    Ok(SpectralState::from_parts(u.grid().clone(), out, u.time() + params.tau))
}

/// One SNRLI1 step in the physical variable.
pub fn snrli1_step(u: &SpectralState, dw: &SpectralState, params: &SchemeParams) -> Result<SpectralState> {
    physical_step(u, dw, params, SchemeKind::Snrli1)
}

/// One SLI1 step: `S(τ)[uⁿ − iμτ(uⁿ)²(φ₁(−2iτ∂²ₓ)ūⁿ) − iαΔWⁿ]`.
pub fn sli1_step(u: &SpectralState, dw: &SpectralState, params: &SchemeParams) -> Result<SpectralState> {
    if params.kind == SchemeKind::ExactLinear {
        return Err(Error::config("sli1_step called with exact-linear parameters"));
    }
    physical_step(u, dw, params, SchemeKind::Sli1)
}

/// SNRLI1 in the twisted variable `v = S(−t)u`:
///
/// `vⁿ⁺¹ = vⁿ − iτμ[S(−t_n)((S(t_n)vⁿ)² φ₁(−2iτ∂²ₓ) S(−t_n)v̄ⁿ) + 2ĝ₀(vⁿ)vⁿ − h(vⁿ)]
///         − iα S(−t_n)ΔWⁿ`
pub fn snrli1_twisted_step(v: &SpectralState, t_n: f64, dw: &SpectralState, params: &SchemeParams) -> Result<SpectralState> {
    check_same_grid(v, dw)?;
    let tau = params.tau;
    let mu = params.mu;
    let grid = v.grid();

    let u = v.free_group_apply(t_n);
    let conj_back = v.conjugate().free_group_apply(-t_n);
    let filtered = conj_back.phi1_operator_apply(Complex64::new(0.0, -2.0 * tau));
    let cubic = SpectralState::from_parts(grid.clone(), grid.product_sq_times(u.coeffs(), filtered.coeffs()), 0.0)
        .free_group_apply(-t_n);

    let g0 = g_term(v, tau).coeff(0);
    let h = h_term(v, tau);
    let noise = dw.free_group_apply(-t_n);

    let a = -I * tau * mu;
    let b = -I * params.alpha();
    let coeffs = (0..v.coeffs().len())
        .map(|j| {
            let bracket = cubic.coeffs()[j] + 2.0 * g0 * v.coeffs()[j] - h.coeffs()[j];
            v.coeffs()[j] + a * bracket + b * noise.coeffs()[j]
        })
        .collect();
    Ok(SpectralState::from_parts(grid.clone(), coeffs, t_n + tau))
}

/// Exact step of the linear equation (μ = 0) over coarse step `n` of
/// `path` at coarsening `r`, pathwise coupled to the same `β_k`.
pub fn exact_linear_step(
    u: &SpectralState,
    path: &BrownianPath,
    n: usize,
    r: usize,
    params: &SchemeParams,
) -> Result<SpectralState> {
    if params.mu != 0.0 {
        return Err(Error::config(format!("exact linear step requires mu = 0, got {}", params.mu)));
    }
    if u.grid() != path.grid() {
        return Err(Error::input("state and path live on different grids"));
    }
    let conv = path.exact_convolution_sample(n, r)?;
    let params = params.with_kind(SchemeKind::ExactLinear)?;
    let kernel = StepKernel::new(u.grid(), &params);
    let t_next = (n + 1) as f64 * params.tau;
    let mut out = vec![Complex64::new(0.0, 0.0); u.coeffs().len()];
    kernel.exact_linear_into(u.coeffs(), conv.coeffs(), t_next, &mut out);
    Ok(SpectralState::from_parts(u.grid().clone(), out, u.time() + params.tau))
}

/// Snapshots `u^{n}` at every `stride`-th step plus the final step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: SchemeParams,
    pub master_seed: u64,
    pub path_index: u64,
    pub coarsening: usize,
    pub stride: usize,
    snapshots: Vec<(usize, SpectralState)>,
}

impl Trajectory {
    /// `(step index, state)` pairs in increasing step order.
    pub fn snapshots(&self) -> &[(usize, SpectralState)] {
        &self.snapshots
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|(_, s)| s.time()).collect()
    }

    pub fn initial(&self) -> &SpectralState {
        &self.snapshots[0].1
    }

    pub fn last(&self) -> &SpectralState {
        &self.snapshots.last().expect("trajectory always holds the initial state").1
    }
}

/// Checks the divergence guard for the state after step `step`.
pub(crate) fn guard(coeffs: &[Complex64], grid: &SpectralGrid, path: u64, step: usize) -> Result<()> {
    let mut h1 = 0.0;
    for (c, &k) in coeffs.iter().zip(grid.wavenumbers()) {
        if !c.re.is_finite() || !c.im.is_finite() {
            return Err(Error::Divergence {
                path,
                step,
                reason: "non-finite coefficient".into(),
            });
        }
        h1 += SobolevIndex::H1.weight(k) * c.norm_sqr();
    }
    if h1.sqrt() > DIVERGENCE_H1_BOUND {
        return Err(Error::Divergence {
            path,
            step,
            reason: format!("H1 norm {:.3e} exceeds {DIVERGENCE_H1_BOUND:e}", h1.sqrt()),
        });
    }
    Ok(())
}

/// Runs `num_steps` steps of the selected scheme with `τ = r·τ_fine`,
/// drawing `ΔWⁿ` from `path`.
pub fn integrate(
    initial: &SpectralState,
    path: &BrownianPath,
    params: &SchemeParams,
    num_steps: usize,
    r: usize,
    stride: usize,
) -> Result<Trajectory> {
    if stride == 0 {
        return Err(Error::input("snapshot stride must be >= 1"));
    }
    if r == 0 {
        return Err(Error::input("coarsening factor must be >= 1"));
    }
    if initial.grid() != path.grid() {
        return Err(Error::input("initial state and path live on different grids"));
    }
    let expected_tau = r as f64 * path.fine_step();
    if (params.tau - expected_tau).abs() > 1e-12 * expected_tau {
        return Err(Error::input(format!(
            "step {} is not {r} x fine step {}",
            params.tau,
            path.fine_step()
        )));
    }
    if r.checked_mul(num_steps).is_none_or(|need| need > path.num_fine_steps()) {
        return Err(Error::input(format!(
            "path of {} fine steps is exhausted by {num_steps} steps at coarsening {r}",
            path.num_fine_steps()
        )));
    }

    let grid = initial.grid().clone();
    let kernel = StepKernel::new(&grid, params);
    let mut snapshots = vec![(0, initial.clone().with_time(0.0))];
    let mut u = initial.coeffs().to_vec();
    let mut next = vec![Complex64::new(0.0, 0.0); u.len()];
    for n in 0..num_steps {
        match params.kind {
            SchemeKind::ExactLinear => {
                let conv = path.exact_convolution_sample(n, r)?;
                kernel.exact_linear_into(&u, conv.coeffs(), (n + 1) as f64 * params.tau, &mut next);
            }
            _ => {
                let dw = path.wiener_increment(n, r)?;
                kernel.step_into(&u, dw.coeffs(), &mut next);
            }
        }
        guard(&next, &grid, path.path_index(), n + 1)?;
        std::mem::swap(&mut u, &mut next);
        let step = n + 1;
        if step % stride == 0 || step == num_steps {
            let t = step as f64 * params.tau;
            snapshots.push((step, SpectralState::from_parts(grid.clone(), u.clone(), t)));
        }
    }
    Ok(Trajectory {
        params: params.clone(),
        master_seed: path.master_seed(),
        path_index: path.path_index(),
        coarsening: r,
        stride,
        snapshots,
    })
}
