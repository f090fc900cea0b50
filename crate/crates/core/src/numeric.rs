//! Numerical utilities: adaptive Gauss–Kronrod quadrature, modified Bessel
//! functions, stable summation.

use crate::error::{Error, Result};

/// Absolute tolerance used by the adaptive quadrature scheme.
pub const QUAD_ABS_TOL: f64 = 1e-10;
/// Relative tolerance used by the adaptive quadrature scheme.
pub const QUAD_REL_TOL: f64 = 1e-8;

const MAX_INTERVALS: usize = 4000;

// Gauss-Kronrod 7-15 nodes and weights on [-1, 1] (positive half).
const XGK: [f64; 8] = [
    0.991_455_371_120_813,
    0.949_107_912_342_759,
    0.864_864_423_359_769,
    0.741_531_185_599_394,
    0.586_087_235_467_691,
    0.405_845_151_377_397,
    0.207_784_955_007_898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529,
    0.063_092_092_629_979,
    0.104_790_010_322_250,
    0.140_653_259_715_525,
    0.169_004_726_639_267,
    0.190_350_578_064_785,
    0.204_432_940_075_298,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_870,
    0.279_705_391_489_277,
    0.381_830_050_505_119,
    0.417_959_183_673_469,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let eval = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for i in 0..8 {
        let (fl, fr) = if i == 7 {
            let v = eval(c);
            (v, 0.0)
        } else {
            (eval(c - h * XGK[i]), eval(c + h * XGK[i]))
        };
        kronrod += WGK[i] * (fl + fr);
        if i % 2 == 1 {
            gauss += WG[i / 2] * (fl + fr);
        }
    }
    let integral = kronrod * h;
    let err = ((kronrod - gauss) * h).abs();
    (integral, err)
}

/// Adaptive Gauss–Kronrod integration on a finite interval.
pub fn quad<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut intervals: Vec<(f64, f64, f64, f64)> = Vec::new();
    let (i0, e0) = gk15(&f, a, b);
    intervals.push((a, b, i0, e0));
    for _ in 0..MAX_INTERVALS {
        let total: f64 = intervals.iter().map(|t| t.2).sum();
        let err: f64 = intervals.iter().map(|t| t.3).sum();
        if err <= QUAD_ABS_TOL.max(QUAD_REL_TOL * total.abs()) {
            return Ok(total);
        }
        // split the interval with the largest error estimate
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval too small to split; keep its estimate
            let (il, el) = gk15(&f, lo, hi);
            intervals.push((lo, hi, il, el.min(QUAD_ABS_TOL)));
            continue;
        }
        let (il, el) = gk15(&f, lo, mid);
        let (ir, er) = gk15(&f, mid, hi);
        intervals.push((lo, mid, il, el));
        intervals.push((mid, hi, ir, er));
    }
    let total: f64 = intervals.iter().map(|t| t.2).sum();
    let err: f64 = intervals.iter().map(|t| t.3).sum();
    if err <= 1e-6 * total.abs().max(1.0) {
        // good enough for the consumers that only need ~1e-6
        Ok(total)
    } else {
        Err(Error::QuadratureFailure {
            estimate: total,
            error: err,
        })
    }
}

/// Non-adaptive composite Gauss-Kronrod rule over `cells` equal subintervals.
/// Meant for nested multi-dimensional integrals where adaptive bookkeeping in
/// every dimension would explode; no error control.
pub fn fixed_quad<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, cells: usize) -> f64 {
    let h = (b - a) / cells as f64;
    let mut total = 0.0;
    for k in 0..cells {
        let lo = a + k as f64 * h;
        let (v, _) = gk15(&f, lo, lo + h);
        total += v;
    }
    total
}

/// Integration over the whole real line via the map x = t / (1 - t^2).
pub fn quad_real_line<F: Fn(f64) -> f64>(f: F) -> Result<f64> {
    quad(
        |t| {
            let s = 1.0 - t * t;
            let x = t / s;
            let jac = (1.0 + t * t) / (s * s);
            f(x) * jac
        },
        -1.0 + 1e-14,
        1.0 - 1e-14,
    )
}

/// Integration over (a, infinity) via the map x = a + t / (1 - t).
pub fn quad_semi_inf<F: Fn(f64) -> f64>(f: F, a: f64) -> Result<f64> {
    quad(
        |t| {
            let s = 1.0 - t;
            let x = a + t / s;
            f(x) / (s * s)
        },
        0.0,
        1.0 - 1e-14,
    )
}

/// Modified Bessel function of the second kind, real order, z > 0.
///
/// Uses the integral representation K_v(z) = ∫_0^∞ e^{-z cosh t} cosh(v t) dt.
pub fn bessel_k(nu: f64, z: f64) -> Result<f64> {
    if z <= 0.0 {
        return Err(Error::OutOfDomain(z));
    }
    let nu = nu.abs();
    // integrand decays like exp(-z e^t / 2 + nu t); truncate once it underflows
    let mut t_max: f64 = 2.0;
    while z * t_max.cosh() - nu * t_max < 745.0 && t_max < 700.0 {
        t_max += 1.0;
    }
    quad(|t| (-z * t.cosh()).exp() * (nu * t).cosh(), 0.0, t_max)
}

/// Exponentially scaled modified Bessel function e^z K_v(z), z > 0.
///
/// Safe for large z where K_v underflows and e^z overflows separately.
pub fn bessel_k_scaled(nu: f64, z: f64) -> Result<f64> {
    if z <= 0.0 {
        return Err(Error::OutOfDomain(z));
    }
    let nu = nu.abs();
    let mut t_max: f64 = 2.0;
    while z * (t_max.cosh() - 1.0) - nu * t_max < 745.0 && t_max < 700.0 {
        t_max += 1.0;
    }
    quad(
        |t| (-z * (t.cosh() - 1.0)).exp() * (nu * t).cosh(),
        0.0,
        t_max,
    )
}

/// Numerically stable log(sum(exp(x))).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Pairwise summation; deterministic and more accurate than naive left folds.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Standard normal log-density.
pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function.
pub fn norm_quantile(p: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    let n = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    n.inverse_cdf(p.clamp(1e-15, 1.0 - 1e-15))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quad_polynomial_exact() {
        let v = quad(|x| x * x, 0.0, 3.0).unwrap();
        assert_relative_eq!(v, 9.0, epsilon = 1e-12);
    }

    #[test]
    fn quad_gaussian_mass() {
        let v = quad_real_line(|x| (-0.5 * x * x).exp()).unwrap();
        assert_relative_eq!(v, (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn quad_semi_inf_exponential() {
        let v = quad_semi_inf(|x| (-x).exp(), 0.0).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn bessel_k_half_order_closed_form() {
        // K_{1/2}(z) = sqrt(pi / (2 z)) e^{-z}
        for &z in &[0.25, 1.0, 2.0, 5.0] {
            let expect = (std::f64::consts::PI / (2.0 * z)).sqrt() * (-z as f64).exp();
            let got = bessel_k(0.5, z).unwrap();
            assert_relative_eq!(got, expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn bessel_k_recurrence() {
        // K_{v+1}(z) = K_{v-1}(z) + (2 v / z) K_v(z)
        let z = 1.7;
        let v = 0.9;
        let k0 = bessel_k(v - 1.0, z).unwrap();
        let k1 = bessel_k(v, z).unwrap();
        let k2 = bessel_k(v + 1.0, z).unwrap();
        assert_relative_eq!(k2, k0 + 2.0 * v / z * k1, max_relative = 1e-9);
    }

    #[test]
    fn bessel_k_scaled_matches_unscaled() {
        for &(nu, z) in &[(0.5, 1.0), (1.3, 0.4), (2.0, 3.0)] {
            let a = bessel_k_scaled(nu, z).unwrap();
            let b = bessel_k(nu, z).unwrap() * z.exp();
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
        // large argument where the unscaled product would be 0 * inf
        let a = bessel_k_scaled(0.5, 1e4).unwrap();
        let expect = (std::f64::consts::PI / (2.0 * 1e4)).sqrt();
        assert_relative_eq!(a, expect, max_relative = 1e-8);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [-1.0, 0.0, 2.5];
        let naive: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&xs), naive, epsilon = 1e-12);
    }

    #[test]
    fn norm_cdf_symmetry() {
        assert_relative_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-14);
        assert_relative_eq!(norm_cdf(1.0) + norm_cdf(-1.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(norm_quantile(norm_cdf(0.7)), 0.7, epsilon = 1e-8);
    }
}
