//! Complex Q-Wiener noise in Fourier space.
//!
//! `W(x,t) = Σ_k √λ_k β_k(t) e^{ikx}/√(2π)` with complex Brownian motions
//! `β_k` whose real and imaginary parts are independent `N(0, t/2)`.
//!
//! Every Gaussian is a pure function of `(master_seed, path_index, k, step)`:
//! a ChaCha8 stream keyed by the seed, selected by the path index, and
//! positioned by the step and the mode's zig-zag slot. Paths can therefore
//! be generated in any order, on any number of workers, and a mode's
//! increments do not depend on how many modes the grid retains.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::phi::phi1_imag;
use crate::spectral::{SobolevIndex, SpectralGrid, SpectralState};

/// Words reserved per step in a stream; bounds the zig-zag slot range to 2²².
const STEP_WORD_SHIFT: u32 = 24;
const WORDS_PER_SLOT: u128 = 4;

const DOMAIN_INCREMENTS: u64 = 0x5eed_0001;
const DOMAIN_CONVOLUTION: u64 = 0x5eed_0002;

/// Eigenvalues `λ_k` of the covariance operator `Q`.
#[derive(Debug, Clone, PartialEq)]
pub enum Eigenvalues {
    /// `λ_k = 1/(1 + |k|^s)`.
    PowerDecay { exponent: f64 },
    /// Explicit `(k, λ_k)` pairs; unlisted modes get `λ_k = 0`.
    Table(Vec<(i64, f64)>),
}

/// Covariance eigenvalues plus the noise amplitude `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct QWienerSpec {
    eigenvalues: Eigenvalues,
    amplitude: f64,
}

impl QWienerSpec {
    pub fn power_decay(exponent: f64, amplitude: f64) -> Result<Self> {
        if !exponent.is_finite() || exponent <= 0.0 {
            return Err(Error::config(format!("eigenvalue decay exponent must be > 0, got {exponent}")));
        }
        QWienerSpec::build(Eigenvalues::PowerDecay { exponent }, amplitude)
    }

    pub fn table(entries: Vec<(i64, f64)>, amplitude: f64) -> Result<Self> {
        if let Some((k, l)) = entries.iter().find(|(_, l)| !l.is_finite() || *l < 0.0) {
            return Err(Error::config(format!("eigenvalue for mode {k} must be finite and >= 0, got {l}")));
        }
        QWienerSpec::build(Eigenvalues::Table(entries), amplitude)
    }

    /// `λ_k ≡ 0`.
    pub fn silent() -> Self {
        QWienerSpec {
            eigenvalues: Eigenvalues::Table(Vec::new()),
            amplitude: 0.0,
        }
    }

    fn build(eigenvalues: Eigenvalues, amplitude: f64) -> Result<Self> {
        if !amplitude.is_finite() || amplitude < 0.0 {
            return Err(Error::config(format!("noise amplitude must be finite and >= 0, got {amplitude}")));
        }
        Ok(QWienerSpec { eigenvalues, amplitude })
    }

    pub fn eigenvalues(&self) -> &Eigenvalues {
        &self.eigenvalues
    }

    /// The amplitude `α` multiplying `dW`.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self> {
        QWienerSpec::build(self.eigenvalues.clone(), amplitude)
    }

    pub fn lambda(&self, k: i64) -> f64 {
        match &self.eigenvalues {
            Eigenvalues::PowerDecay { exponent } => 1.0 / (1.0 + (k.unsigned_abs() as f64).powf(*exponent)),
            Eigenvalues::Table(entries) => entries
                .iter()
                .rev()
                .find(|(m, _)| *m == k)
                .map(|(_, l)| *l)
                .unwrap_or(0.0),
        }
    }

    /// `Σ_k (1+|k|)^{2σ} λ_k / (2π)` over the grid's retained modes: the
    /// squared Hilbert–Schmidt norm of `Q^{1/2}` into `H^σ`.
    pub fn hs_norm_sq(&self, grid: &SpectralGrid, sigma: SobolevIndex) -> f64 {
        grid.wavenumbers()
            .iter()
            .map(|&k| sigma.weight(k) * self.lambda(k))
            .sum::<f64>()
            / TAU
    }

    /// `√λ_k / √(2π)` per storage slot.
    fn slot_scales(&self, grid: &SpectralGrid) -> Vec<f64> {
        grid.wavenumbers()
            .iter()
            .map(|&k| (self.lambda(k) / TAU).sqrt())
            .collect()
    }
}

/// Zig-zag position of mode `k`: 0, −1, 1, −2, 2, … ↦ 0, 1, 2, 3, 4, …
#[inline]
fn zigzag_slot(k: i64) -> u64 {
    if k >= 0 {
        2 * k as u64
    } else {
        (-2 * k - 1) as u64
    }
}

fn stream_seed(master_seed: u64, domain: u64, extra: u64) -> [u8; 32] {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&domain.to_le_bytes());
    seed[16..24].copy_from_slice(&extra.to_le_bytes());
    seed
}

/// Counter-positioned source of standard complex Gaussians.
#[derive(Clone)]
struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    fn new(seed: [u8; 32], stream: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        GaussianStream { rng }
    }

    /// Fills `out[j]` with a standard complex Gaussian (`E|z|² = 1`) for
    /// every slot of the grid, positioned by `step` and the mode.
    fn fill(&mut self, step: u64, slots: &[(usize, u64)], out: &mut [Complex64]) {
        let base = (step as u128) << STEP_WORD_SHIFT;
        // Slots are visited in increasing zig-zag order so the stream is read
        // sequentially; `slots` is sorted that way at construction.
        let mut expected: u64 = u64::MAX;
        for &(j, z) in slots {
            if expected != z {
                self.rng.set_word_pos(base + WORDS_PER_SLOT * z as u128);
            }
            let a = self.rng.next_u64();
            let b = self.rng.next_u64();
            // u1 ∈ (0, 1], u2 ∈ [0, 1).
            let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
            let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            let radius = (-u1.ln()).sqrt();
            out[j] = Complex64::from_polar(radius, TAU * u2);
            expected = z + 1;
        }
    }
}

/// One realisation of the Brownian motions `β_k` on a fine time grid.
///
/// Increments are produced on demand from the counter-based generator, so a
/// path of 10⁵ fine steps costs no memory.
#[derive(Clone)]
pub struct BrownianPath {
    grid: SpectralGrid,
    master_seed: u64,
    path_index: u64,
    fine_step: f64,
    num_fine_steps: usize,
    /// `√λ_k/√(2π)` per slot.
    scales: Vec<f64>,
    /// (slot, zig-zag position) sorted by position, only for `λ_k > 0`.
    active: Vec<(usize, u64)>,
    increments: GaussianStream,
}

impl std::fmt::Debug for BrownianPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BrownianPath")
            .field("master_seed", &self.master_seed)
            .field("path_index", &self.path_index)
            .field("fine_step", &self.fine_step)
            .field("num_fine_steps", &self.num_fine_steps)
            .finish()
    }
}

impl BrownianPath {
    /// Sample path `path_index` of the family keyed by `master_seed`.
    pub fn sample(
        spec: &QWienerSpec,
        grid: &SpectralGrid,
        master_seed: u64,
        path_index: u64,
        fine_step: f64,
        num_fine_steps: usize,
    ) -> Result<Self> {
        if !fine_step.is_finite() || fine_step <= 0.0 {
            return Err(Error::input(format!("fine step must be > 0, got {fine_step}")));
        }
        if num_fine_steps == 0 {
            return Err(Error::input("a path needs at least one fine step"));
        }
        let scales = spec.slot_scales(grid);
        let mut active: Vec<(usize, u64)> = grid
            .wavenumbers()
            .iter()
            .enumerate()
            .filter(|(j, _)| scales[*j] > 0.0)
            .map(|(j, &k)| (j, zigzag_slot(k)))
            .collect();
        active.sort_by_key(|&(_, z)| z);
        Ok(BrownianPath {
            grid: grid.clone(),
            master_seed,
            path_index,
            fine_step,
            num_fine_steps,
            scales,
            active,
            increments: GaussianStream::new(stream_seed(master_seed, DOMAIN_INCREMENTS, 0), path_index),
        })
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn fine_step(&self) -> f64 {
        self.fine_step
    }

    pub fn num_fine_steps(&self) -> usize {
        self.num_fine_steps
    }

    fn check_fine(&self, step: usize) -> Result<()> {
        if step >= self.num_fine_steps {
            return Err(Error::input(format!(
                "fine step {step} out of range (path has {})",
                self.num_fine_steps
            )));
        }
        Ok(())
    }

    fn check_coarse(&self, n: usize, r: usize) -> Result<()> {
        if r == 0 {
            return Err(Error::input("coarsening factor must be >= 1"));
        }
        match r.checked_mul(n + 1) {
            Some(end) if end <= self.num_fine_steps => Ok(()),
            _ => Err(Error::input(format!(
                "coarse step {n} at coarsening {r} exceeds the path's {} fine steps",
                self.num_fine_steps
            ))),
        }
    }

    /// Raw `Δβ_k` over fine step `step`, per slot (zero where `λ_k = 0`).
    pub fn fine_beta(&self, step: usize) -> Result<Vec<Complex64>> {
        self.check_fine(step)?;
        let mut out = vec![Complex64::new(0.0, 0.0); self.grid.modes()];
        self.fill_fine_beta(step, &mut out);
        Ok(out)
    }

    fn fill_fine_beta(&self, step: usize, out: &mut [Complex64]) {
        let mut stream = self.increments.clone();
        stream.fill(step as u64, &self.active, out);
        let sd = self.fine_step.sqrt();
        for &(j, _) in &self.active {
            out[j] *= sd;
        }
    }

    /// Fine-step `ΔW` coefficients `√λ_k Δβ_k / √(2π)` written into `out`.
    pub(crate) fn fill_fine_increment(&self, step: usize, out: &mut [Complex64]) {
        out.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        self.fill_fine_beta(step, out);
        for &(j, _) in &self.active {
            out[j] *= self.scales[j];
        }
    }

    /// Raw `Δβ_k` and scaled `ΔW_k` of one fine step, both fully overwritten.
    pub(crate) fn fill_fine_pair(&self, step: usize, beta: &mut [Complex64], increment: &mut [Complex64]) {
        beta.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        self.fill_fine_beta(step, beta);
        increment.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for &(j, _) in &self.active {
            increment[j] = beta[j] * self.scales[j];
        }
    }

    /// `Σ` of the `r` fine `Δβ_k` of coarse step `n`, summed in time order.
    pub fn coarse_beta(&self, n: usize, r: usize) -> Result<Vec<Complex64>> {
        self.check_coarse(n, r)?;
        let mut acc = self.fine_beta(n * r)?;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.grid.modes()];
        for step in n * r + 1..(n + 1) * r {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            self.fill_fine_beta(step, &mut buf);
            acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
        }
        Ok(acc)
    }

    /// `ΔWⁿ = W(t_n + τ) − W(t_n)` with `τ = r·τ_fine`: the sum, in time
    /// order, of the `r` fine increments `√λ_k Δβ_k/√(2π)`.
    pub fn wiener_increment(&self, n: usize, r: usize) -> Result<SpectralState> {
        self.check_coarse(n, r)?;
        let modes = self.grid.modes();
        let mut acc = vec![Complex64::new(0.0, 0.0); modes];
        self.fill_fine_increment(n * r, &mut acc);
        let mut buf = vec![Complex64::new(0.0, 0.0); modes];
        for step in n * r + 1..(n + 1) * r {
            self.fill_fine_increment(step, &mut buf);
            acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
        }
        Ok(SpectralState::from_parts(self.grid.clone(), acc, 0.0))
    }

    /// Sample of `∫_{t_n}^{t_n+τ} S(−s) dW(s)`, `τ = r·τ_fine`, jointly
    /// Gaussian with this path's `ΔWⁿ`.
    ///
    /// Per mode, `I_k = ∫ e^{ik²s} dβ_k(s)` has `E|I_k|² = τ` and
    /// `E[I_k conj(Δβ_k)] = τ e^{ik²t_n} φ₁(ik²τ)`; `I_k` is the conditional
    /// mean given the coarse `Δβ_k` plus an independent residual drawn from a
    /// second counter stream keyed by `(master_seed, r, path_index)`.
    pub fn exact_convolution_sample(&self, n: usize, r: usize) -> Result<SpectralState> {
        let beta = self.coarse_beta(n, r)?;
        let coeffs = self.convolution_from_beta(n, r, &beta);
        Ok(SpectralState::from_parts(self.grid.clone(), coeffs, 0.0))
    }

    pub(crate) fn convolution_from_beta(&self, n: usize, r: usize, beta: &[Complex64]) -> Vec<Complex64> {
        let tau = r as f64 * self.fine_step;
        let t_n = n as f64 * tau;
        let mut residual = vec![Complex64::new(0.0, 0.0); self.grid.modes()];
        let mut stream = GaussianStream::new(
            stream_seed(self.master_seed, DOMAIN_CONVOLUTION, r as u64),
            self.path_index,
        );
        stream.fill(n as u64, &self.active, &mut residual);
        let mut out = vec![Complex64::new(0.0, 0.0); self.grid.modes()];
        for &(j, _) in &self.active {
            let k = self.grid.wavenumbers()[j];
            let k2 = (k * k) as f64;
            // Covariance divided by the variance τ.
            let gain = Complex64::cis(k2 * t_n) * phi1_imag(k2 * tau);
            let resid_var = (tau * (1.0 - gain.norm_sqr())).max(0.0);
            let sample = gain * beta[j] + residual[j] * resid_var.sqrt();
            out[j] = sample * self.scales[j];
        }
        out
    }
}

/// `∫_{t_n}^{t_n+τ} e^{ik²s} ds = τ e^{ik²t_n} φ₁(ik²τ)`.
pub fn convolution_covariance(k: i64, t_n: f64, tau: f64) -> Complex64 {
    let k2 = (k * k) as f64;
    Complex64::cis(k2 * t_n) * phi1_imag(k2 * tau) * tau
}

#[allow(dead_code)]
fn _assert_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<BrownianPath>();
    check::<QWienerSpec>();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(k: usize) -> SpectralGrid {
        SpectralGrid::new(k).unwrap()
    }

    #[test]
    fn silent_noise_gives_zero_increment() {
        let g = grid(16);
        let path = BrownianPath::sample(&QWienerSpec::silent(), &g, 1, 0, 0.1, 8).unwrap();
        for n in 0..8 {
            assert_eq!(path.wiener_increment(n, 1).unwrap(), SpectralState::zeros(&g));
        }
    }

    #[test]
    fn same_seed_and_index_is_bitwise_identical() {
        let g = grid(32);
        let spec = QWienerSpec::power_decay(8.0, 1.0).unwrap();
        let a = BrownianPath::sample(&spec, &g, 99, 7, 0.01, 64).unwrap();
        let b = BrownianPath::sample(&spec, &g, 99, 7, 0.01, 64).unwrap();
        for n in [0, 5, 63] {
            assert_eq!(a.fine_beta(n).unwrap(), b.fine_beta(n).unwrap());
        }
        let c = BrownianPath::sample(&spec, &g, 99, 8, 0.01, 64).unwrap();
        assert_ne!(a.fine_beta(0).unwrap(), c.fine_beta(0).unwrap());
    }

    #[test]
    fn increments_do_not_depend_on_grid_size() {
        let spec = QWienerSpec::power_decay(2.0, 1.0).unwrap();
        let small = BrownianPath::sample(&spec, &grid(8), 5, 3, 0.5, 4).unwrap();
        let large = BrownianPath::sample(&spec, &grid(64), 5, 3, 0.5, 4).unwrap();
        let bs = small.fine_beta(2).unwrap();
        let bl = large.fine_beta(2).unwrap();
        for &k in grid(8).wavenumbers() {
            let js = grid(8).slot(k).unwrap();
            let jl = grid(64).slot(k).unwrap();
            assert_eq!(bs[js], bl[jl], "k={k}");
        }
    }

    #[test]
    fn single_increment_scaling() {
        let g = grid(8);
        let spec = QWienerSpec::power_decay(8.0, 1.0).unwrap();
        let path = BrownianPath::sample(&spec, &g, 2, 0, 0.25, 4).unwrap();
        let beta = path.fine_beta(1).unwrap();
        let dw = path.wiener_increment(1, 1).unwrap();
        for (j, &k) in g.wavenumbers().iter().enumerate() {
            let want = beta[j] * (spec.lambda(k) / TAU).sqrt();
            assert_eq!(dw.coeffs()[j], want);
        }
    }

    #[test]
    fn coarse_increment_is_bitwise_sum_of_fine_ones() {
        let g = grid(16);
        let spec = QWienerSpec::power_decay(8.0, 1.0).unwrap();
        let path = BrownianPath::sample(&spec, &g, 17, 4, 1e-3, 64).unwrap();
        for r in [2usize, 4, 8, 16] {
            for n in 0..64 / r {
                let coarse = path.wiener_increment(n, r).unwrap();
                let mut acc = path.wiener_increment(n * r, 1).unwrap();
                for s in 1..r {
                    acc = acc.add(&path.wiener_increment(n * r + s, 1).unwrap()).unwrap();
                }
                assert_eq!(coarse, acc, "r={r} n={n}");
            }
        }
    }

    #[test]
    fn out_of_range_steps_are_rejected() {
        let g = grid(8);
        let spec = QWienerSpec::power_decay(8.0, 1.0).unwrap();
        let path = BrownianPath::sample(&spec, &g, 0, 0, 0.1, 10).unwrap();
        assert!(path.wiener_increment(4, 2).is_ok());
        assert!(path.wiener_increment(5, 2).is_err());
        assert!(path.wiener_increment(0, 0).is_err());
        assert!(BrownianPath::sample(&spec, &g, 0, 0, 0.0, 10).is_err());
        assert!(BrownianPath::sample(&spec, &g, 0, 0, 0.1, 0).is_err());
    }

    #[test]
    fn zero_mode_convolution_equals_increment() {
        let g = grid(8);
        let spec = QWienerSpec::power_decay(8.0, 1.0).unwrap();
        let path = BrownianPath::sample(&spec, &g, 1, 2, 0.01, 40).unwrap();
        for (n, r) in [(0, 1), (3, 4), (1, 20)] {
            let conv = path.exact_convolution_sample(n, r).unwrap();
            let beta = path.coarse_beta(n, r).unwrap();
            let j0 = g.slot(0).unwrap();
            assert_eq!(conv.coeffs()[j0], beta[j0] * (1.0 / TAU).sqrt());
        }
    }

    #[test]
    fn covariance_formula_matches_riemann_sum() {
        for (k, t_n, tau) in [(5i64, 0.3, 1e-4), (3, 1.7, 0.1), (0, 2.0, 0.5)] {
            let nodes = 200_000;
            let h = tau / nodes as f64;
            let riemann: Complex64 = (0..nodes)
                .map(|j| Complex64::cis(((k * k) as f64) * (t_n + (j as f64 + 0.5) * h)) * h)
                .sum();
            let formula = convolution_covariance(k, t_n, tau);
            assert!((riemann - formula).norm() < 1e-9 * tau, "k={k}");
        }
        // Correlation with the aligned increment tends to one as τ → 0.
        let corr = convolution_covariance(5, 0.3, 1e-4).norm() / 1e-4;
        assert!((1.0 - corr).abs() < 1e-6);
    }

    #[test]
    fn hs_norm_matches_direct_sum() {
        let g = grid(16);
        let spec = QWienerSpec::power_decay(8.0, 1.0).unwrap();
        let direct: f64 = (-8i64..8)
            .map(|k| (1.0 + k.abs() as f64).powi(2) / (1.0 + (k as f64).powi(8)))
            .sum::<f64>()
            / (2.0 * std::f64::consts::PI);
        assert!((spec.hs_norm_sq(&g, SobolevIndex::H1) - direct).abs() < 1e-15);
    }

    #[test]
    fn table_eigenvalues() {
        let spec = QWienerSpec::table(vec![(0, 1.0), (3, 0.25)], 2.0).unwrap();
        assert_eq!(spec.lambda(3), 0.25);
        assert_eq!(spec.lambda(-3), 0.0);
        assert!(QWienerSpec::table(vec![(1, -1.0)], 1.0).is_err());
        assert!(QWienerSpec::power_decay(8.0, -1.0).is_err());
    }
}
