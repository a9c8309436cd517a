//! Independent reference values for the integration tests. Nothing here
//! calls into the scattering module.
#![allow(dead_code)]

use num_complex::Complex64;
use std::f64::consts::PI;

type M2 = [[Complex64; 2]; 2];

fn mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn inv(a: &M2) -> M2 {
    let d = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]]
}

/// Plane waves `e^{±iqx}` and their derivatives at `x`.
fn waves(q: f64, x: f64) -> M2 {
    let e = Complex64::from_polar(1.0, q * x);
    let iq = Complex64::new(0.0, q);
    [[e, e.inv()], [iq * e, -iq * e.inv()]]
}

/// Transfer matrix of `V = -v0` on `|x| < a` by matching plane waves at
/// `x = ±a`, rows `(A_R, B_R)` from `(A_L, B_L)`.
pub fn square_well_transfer(v0: f64, a: f64, k: f64) -> M2 {
    let q = (k * k + v0).sqrt();
    let inner = mul(&waves(q, a), &inv(&waves(q, -a)));
    mul(&mul(&inv(&waves(k, a)), &inner), &waves(k, -a))
}

/// `[[t, r₋], [r₊, t]]` from the matched transfer matrix, row-major.
pub fn square_well_s(v0: f64, a: f64, k: f64) -> [Complex64; 4] {
    let m = square_well_transfer(v0, a, k);
    let t = m[1][1].inv();
    [t, m[0][1] * t, -m[1][0] * t, t]
}

/// Textbook transmission probability of the square well.
pub fn transmission_probability(v0: f64, a: f64, k: f64) -> f64 {
    let q = (k * k + v0).sqrt();
    let s = (2.0 * q * a).sin();
    1.0 / (1.0 + v0 * v0 * s * s / (4.0 * k * k * q * q))
}

/// Bound states of the square well: roots in `(0, z₀)` of the even and odd
/// matching conditions `z sin z = w cos z` and `-z cos z = w sin z` with
/// `w = √(z₀² − z²)`, `z₀ = a√V₀`, counted by sign changes.
pub fn bound_state_count(v0: f64, a: f64) -> usize {
    let z0 = a * v0.sqrt();
    let even = |z: f64| z * z.sin() - (z0 * z0 - z * z).max(0.0).sqrt() * z.cos();
    let odd = |z: f64| z * z.cos() + (z0 * z0 - z * z).max(0.0).sqrt() * z.sin();
    let n = 200_000;
    let mut count = 0;
    for f in [&even as &dyn Fn(f64) -> f64, &odd] {
        let mut prev = f(z0 * 1e-9);
        for i in 1..=n {
            let z = z0 * (1e-9 + (1.0 - 2e-9) * i as f64 / n as f64);
            let cur = f(z);
            if prev.signum() != cur.signum() && cur != 0.0 {
                count += 1;
            }
            prev = cur;
        }
    }
    count
}

/// Depth at which the square well of half-width `a` acquires its
/// `(m+1)`-th bound state: `z₀ = mπ/2`.
pub fn threshold_depth(a: f64, m: u32) -> f64 {
    (m as f64 * PI / (2.0 * a)).powi(2)
}

/// `(1/2π) ∫ μ/(1+x²) dx`.
pub fn lorentzian_index(mu: f64) -> f64 {
    mu / 2.0
}
