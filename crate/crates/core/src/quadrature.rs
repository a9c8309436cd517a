//! Gauss–Legendre rules and line integrals over the real axis.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// Nodes and weights on `[a, b]`, nodes ascending.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(n).expect("quadrature order must be positive");
    let rule = GaussLegendre::new(n);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut pairs: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect();
    pairs.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    pairs
}

/// Composite rule: `panels` equal panels of an `order`-point rule on `[a, b]`.
pub fn composite_gauss_legendre(order: usize, panels: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let width = (b - a) / panels as f64;
    let base = gauss_legendre(order, -1.0, 1.0);
    let mut out = Vec::with_capacity(order * panels);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let mid = lo + 0.5 * width;
        out.extend(base.iter().map(|&(x, w)| (mid + 0.5 * width * x, 0.5 * width * w)));
    }
    out
}

pub const LINE_ORDER: usize = 16;

/// `∫ f(x) dx` over `x = tan u`, `u ∈ [-u_max, u_max]`, with a composite rule
/// of `panels` panels. `u_max < π/2` truncates the tails.
pub fn line_integral_at_level(f: &dyn Fn(f64) -> f64, u_max: f64, panels: usize) -> f64 {
    composite_gauss_legendre(LINE_ORDER, panels, -u_max, u_max)
        .into_iter()
        .map(|(u, w)| {
            let c = u.cos();
            w * f(u.tan()) / (c * c)
        })
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub struct LineIntegral {
    pub value: f64,
    /// Change between the last two panel levels.
    pub refinement_change: f64,
    pub panels: usize,
}

/// Panel-doubling line integral, stops when two successive levels agree to
/// `tol` or `max_panels` is reached.
pub fn line_integral(f: &dyn Fn(f64) -> f64, u_max: f64, tol: f64, max_panels: usize) -> LineIntegral {
    let mut panels = 4;
    let mut prev = line_integral_at_level(f, u_max, panels);
    loop {
        let next_panels = panels * 2;
        let next = line_integral_at_level(f, u_max, next_panels);
        let change = (next - prev).abs();
        if change <= tol || next_panels >= max_panels {
            return LineIntegral {
                value: next,
                refinement_change: change,
                panels: next_panels,
            };
        }
        panels = next_panels;
        prev = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn weights_sum_to_length() {
        for n in [2, 8, 16] {
            let s: f64 = gauss_legendre(n, 1.0, 2.0).iter().map(|p| p.1).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_for_polynomials() {
        let r: f64 = gauss_legendre(4, 0.0, 1.0).iter().map(|&(x, w)| w * x.powi(7)).sum();
        assert!((r - 0.125).abs() < 1e-14);
    }

    #[test]
    fn lorentzian_line_integral() {
        let f = |x: f64| 1.0 / (1.0 + x * x);
        let r = line_integral(&f, PI / 2.0, 1e-13, 1 << 10);
        assert!((r.value - PI).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn gaussian_line_integral() {
        let f = |x: f64| (-x * x).exp();
        let r = line_integral(&f, PI / 2.0 - 1e-9, 1e-12, 1 << 12);
        assert!((r.value - PI.sqrt()).abs() < 1e-10, "{}", r.value);
    }
}
