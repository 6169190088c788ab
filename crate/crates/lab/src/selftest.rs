//! Quick invariant checks across the library, printed as a table.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snlse_core::{
    compute_r_term, local_error_decomposition_check, order_fit, sli1_step, snrli1_step, snrli1_twisted_step,
    strong_error, BrownianPath, Complex64, ErrorConfig, ErrorRecord, QWienerSpec, ReferenceDriver, SchemeKind,
    SchemeParams, SobolevIndex, SpectralGrid, SpectralState,
};

use crate::experiments::random_two_mode;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_state(grid: &SpectralGrid, rng: &mut impl Rng) -> SpectralState {
    SpectralState::from_modes(grid, |k| {
        let w = (1.0 + k.abs() as f64).powi(-2);
        Complex64::new(rng.gen_range(-1.0..1.0) * w, rng.gen_range(-1.0..1.0) * w)
    })
    .expect("finite")
}

type Check = fn(&mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error>;

fn group_laws(rng: &mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error> {
    let grid = SpectralGrid::new(64)?;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let u = random_state(&grid, rng);
        let (t, s) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let n = u.sobolev_norm(SobolevIndex::H1);
        worst = worst.max((u.free_group_apply(t).sobolev_norm(SobolevIndex::H1) - n).abs() / n);
        let diff = u.free_group_apply(s).free_group_apply(t).sub(&u.free_group_apply(s + t))?;
        worst = worst.max(diff.sobolev_norm(SobolevIndex::L2) / u.sobolev_norm(SobolevIndex::L2));
    }
    Ok((worst <= 1e-12, format!("max relative deviation {worst:.2e}")))
}

fn transform_round_trip(rng: &mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error> {
    let grid = SpectralGrid::new(128)?;
    let u = random_state(&grid, rng);
    let back = grid.forward_transform(&u.inverse_transform())?;
    let err = back.max_abs_diff(&u);
    Ok((err < 1e-14, format!("max deviation {err:.2e}")))
}

fn single_mode(rng: &mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error> {
    let grid = SpectralGrid::new(32)?;
    let zero = SpectralState::zeros(&grid);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let l = rng.gen_range(-15..=15);
        let (tau, mu) = (rng.gen_range(1e-4..0.5), rng.gen_range(-2.0..2.0));
        let params = SchemeParams::new(SchemeKind::Snrli1, mu, tau, QWienerSpec::silent())?;
        let got = snrli1_step(&SpectralState::single_mode(&grid, c, l)?, &zero, &params)?;
        let want = Complex64::cis(-((l * l) as f64) * tau) * (1.0 - Complex64::new(0.0, tau * mu * c.norm_sqr())) * c;
        worst = worst.max((got.coeff(l) - want).norm());
    }
    Ok((worst <= 1e-12, format!("max deviation {worst:.2e}")))
}

fn conjugation(rng: &mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error> {
    let grid = SpectralGrid::new(32)?;
    let params = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.02, QWienerSpec::power_decay(8.0, 0.5)?)?;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let v = random_state(&grid, rng);
        let dw = random_state(&grid, rng).scale(Complex64::new(0.1, 0.0));
        let t_n = rng.gen_range(0.0..20.0);
        let twisted = snrli1_twisted_step(&v, t_n, &dw, &params)?.free_group_apply(t_n + params.tau);
        let physical = snrli1_step(&v.free_group_apply(t_n), &dw, &params)?;
        worst = worst.max(twisted.max_abs_diff(&physical));
    }
    Ok((worst <= 1e-12, format!("max deviation {worst:.2e}")))
}

fn noise_additivity(rng: &mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error> {
    let grid = SpectralGrid::new(32)?;
    let params = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.05, QWienerSpec::power_decay(8.0, 1.0)?)?;
    let (u1, u2) = (random_state(&grid, rng), random_state(&grid, rng));
    let (a, b) = (random_state(&grid, rng), random_state(&grid, rng));
    let da = snrli1_step(&u1, &a, &params)?.sub(&snrli1_step(&u2, &a, &params)?)?;
    let db = snrli1_step(&u1, &b, &params)?.sub(&snrli1_step(&u2, &b, &params)?)?;
    let dev = da.max_abs_diff(&db);
    let sli = sli1_step(&u1, &a, &params)?.sub(&sli1_step(&u2, &a, &params)?)?;
    let sli_dev = sli.max_abs_diff(&sli1_step(&u1, &b, &params)?.sub(&sli1_step(&u2, &b, &params)?)?);
    Ok((dev < 1e-14 && sli_dev < 1e-14, format!("max deviation {:.2e}", dev.max(sli_dev))))
}

fn increment_variance(rng: &mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error> {
    let grid = SpectralGrid::new(32)?;
    let spec = QWienerSpec::power_decay(8.0, 1.0)?;
    let (tau, count) = (0.01, 20_000);
    let path = BrownianPath::sample(&spec, &grid, rng.gen(), 0, tau, count)?;
    let mut samples = Vec::with_capacity(count);
    for n in 0..count {
        samples.push(path.wiener_increment(n, 1)?.sobolev_norm_sq(SobolevIndex::H1));
    }
    let mean = samples.iter().sum::<f64>() / count as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (count - 1) as f64;
    let se = (var / count as f64).sqrt();
    let target = tau * spec.hs_norm_sq(&grid, SobolevIndex::H1);
    let z = (mean - target) / se;
    Ok((z.abs() < 4.0, format!("mean {mean:.4e} vs {target:.4e} ({z:+.2} s.e.)")))
}

fn coarse_sums(rng: &mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error> {
    let grid = SpectralGrid::new(16)?;
    let spec = QWienerSpec::power_decay(8.0, 1.0)?;
    let path = BrownianPath::sample(&spec, &grid, rng.gen(), 3, 0.001, 64)?;
    let mut ok = true;
    for r in [2, 4, 8] {
        for n in 0..64 / r {
            let mut acc = path.wiener_increment(n * r, 1)?;
            for j in 1..r {
                acc = acc.add(&path.wiener_increment(n * r + j, 1)?)?;
            }
            ok &= acc == path.wiener_increment(n, r)?;
        }
    }
    Ok((ok, "bitwise".into()))
}

fn order_fit_check(_: &mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error> {
    let records: Vec<ErrorRecord> = (4..=8)
        .map(|j| {
            let tau = 2f64.powi(-j);
            let e = 0.7 * tau.sqrt();
            ErrorRecord {
                tau,
                time: 1.0,
                error_value: e,
                error_sq: e * e,
                std_error: 0.0,
                std_error_sq: 0.0,
                scheme_kind: SchemeKind::Snrli1,
                num_paths_used: 1,
            }
        })
        .collect();
    let slope = order_fit(&records)?.slope;
    Ok(((slope - 0.5).abs() < 1e-12, format!("slope {slope:.15}")))
}

fn r_term(rng: &mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error> {
    let grid = SpectralGrid::with_dealias(8, true)?;
    let zero = SpectralState::zeros(&grid);
    let (tau, mu, intervals) = (0.1, 1.0, 2000);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let v = random_two_mode(&grid, rng, 1).map_err(|e| snlse_core::Error::InvalidInput(e.to_string()))?;
        let t_n = rng.gen_range(0.0..5.0);
        let params = SchemeParams::new(SchemeKind::Snrli1, mu, tau, QWienerSpec::silent())?;
        let h = tau / intervals as f64;
        let mut integral = SpectralState::zeros(&grid);
        for j in 0..=intervals {
            let w = if j == 0 || j == intervals { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 } * h / 3.0;
            let t = t_n + j as f64 * h;
            let u = v.free_group_apply(t);
            let cubic = u.cubic_product(&u, &u.conjugate())?.free_group_apply(-t);
            integral = integral.add(&cubic.scale(Complex64::new(w, 0.0)))?;
        }
        let step = snrli1_twisted_step(&v, t_n, &zero, &params)?;
        let want = step.sub(&v)?.add(&integral.scale(Complex64::new(0.0, mu)))?;
        let got = compute_r_term(&v, t_n, tau, mu)?;
        worst = worst.max(got.sub(&want)?.sobolev_norm(SobolevIndex::L2) / want.sobolev_norm(SobolevIndex::L2));
    }
    Ok((worst <= 1e-8, format!("max relative deviation {worst:.2e}")))
}

fn decomposition(rng: &mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error> {
    let grid = SpectralGrid::new(8)?;
    let params = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.05, QWienerSpec::silent())?;
    let v = random_two_mode(&grid, rng, 2).map_err(|e| snlse_core::Error::InvalidInput(e.to_string()))?;
    let coarse = local_error_decomposition_check(&v, 0.3, &params, 64)?;
    let fine = local_error_decomposition_check(&v, 0.3, &params, 256)?;
    let ratio = coarse / fine;
    let bound = 1e-8 * v.sobolev_norm(SobolevIndex::H1).powi(3);
    Ok((fine <= bound && (8.0..=32.0).contains(&ratio), format!("residual {fine:.2e}, ratio {ratio:.2}")))
}

fn self_comparison(rng: &mut ChaCha8Rng) -> Result<(bool, String), snlse_core::Error> {
    let grid = SpectralGrid::new(16)?;
    let u0 = random_state(&grid, rng);
    let params = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.01, QWienerSpec::power_decay(8.0, 0.5)?)?;
    let config = ErrorConfig { num_paths: 3, master_seed: rng.gen(), ..ErrorConfig::default() };
    let records = strong_error(&params, &ReferenceDriver::fine_snrli1(0.01), &config, &[0.01], 0.1, &u0)?;
    Ok((records[0].error_value == 0.0, format!("error {:e}", records[0].error_value)))
}

const CHECKS: [(&str, Check); 11] = [
    ("spectral: group isometry and group law", group_laws),
    ("spectral: transform round trip", transform_round_trip),
    ("integrators: single-mode closed form", single_mode),
    ("integrators: twisted/physical conjugation", conjugation),
    ("integrators: noise additivity", noise_additivity),
    ("noise: increment second moment", increment_variance),
    ("noise: coarse increments are fine sums", coarse_sums),
    ("analysis: order fit on a power law", order_fit_check),
    ("analysis: remainder against quadrature", r_term),
    ("analysis: local error decomposition", decomposition),
    ("analysis: self-comparison is zero", self_comparison),
];

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CHECKS
        .iter()
        .map(|(name, check)| match check(&mut rng) {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

pub fn render(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{:<width$}  {status}  {}", r.name, r.detail);
    }
    let passed = results.iter().filter(|r| r.passed).count();
    let _ = writeln!(out, "{passed}/{} checks passed", results.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let results = run_all(0);
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "{}", render(&results));
    }
}
