//! The first exponential-integrator kernel `φ₁(z) = (eᶻ − 1)/z`.

use num_complex::Complex64;

/// Below this modulus the truncated Taylor series is used.
pub const PHI1_SERIES_THRESHOLD: f64 = 1e-4;

/// Number of Taylor terms kept on the small-argument branch.
const SERIES_TERMS: usize = 8;

/// `eᶻ − 1` without cancellation for small `|z|`.
///
/// Uses `eˣ⁺ⁱʸ − 1 = expm1(x)·cos y − 2 sin²(y/2) + i·eˣ sin y`.
pub fn expm1_complex(z: Complex64) -> Complex64 {
    let (sin_y, cos_y) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    let re = z.re.exp_m1() * cos_y - 2.0 * half * half;
    let im = z.re.exp() * sin_y;
    Complex64::new(re, im)
}

/// `φ₁(z) = (eᶻ − 1)/z` with `φ₁(0) = 1`.
pub fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < PHI1_SERIES_THRESHOLD {
        // Horner on Σ_{j<8} zʲ/(j+1)!
        let mut acc = Complex64::new(0.0, 0.0);
        for j in (0..SERIES_TERMS).rev() {
            let inv_fact = 1.0 / factorial(j + 1);
            acc = acc * z + inv_fact;
        }
        acc
    } else {
        expm1_complex(z) / z
    }
}

/// `φ₁(i·θ)` for real θ, the only shape the integrators need.
#[inline]
pub fn phi1_imag(theta: f64) -> Complex64 {
    phi1(Complex64::new(0.0, theta))
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, j| acc * j as f64)
}
