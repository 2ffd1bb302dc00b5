//! Univariate distribution functions: normal, Student t, central and
//! noncentral F, and the chi quantile used by the lattice integrator.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Relative size below which a noncentral-F series term is dropped.
const SERIES_EPS: f64 = 1e-14;
const SERIES_MAX_TERMS: usize = 100_000;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Student t CDF; `df = f64::INFINITY` gives the standard normal.
pub fn student_t_cdf(x: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return normal_cdf(x);
    }
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let x2 = x * x;
    // P(|T| > |x|) = I_{df/(df+x²)}(df/2, 1/2); use the complementary
    // form near zero where that argument approaches one.
    let two_sided_tail = if x2 < df {
        1.0 - beta_reg(0.5, 0.5 * df, x2 / (df + x2))
    } else {
        beta_reg(0.5 * df, 0.5, df / (df + x2))
    };
    if x > 0.0 {
        1.0 - 0.5 * two_sided_tail
    } else {
        0.5 * two_sided_tail
    }
}

pub fn student_t_sf(x: f64, df: f64) -> f64 {
    student_t_cdf(-x, df)
}

pub fn student_t_pdf(x: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    }
    let ln = ln_gamma(0.5 * (df + 1.0))
        - ln_gamma(0.5 * df)
        - 0.5 * (df * PI).ln()
        - 0.5 * (df + 1.0) * (x * x / df).ln_1p();
    ln.exp()
}

/// Quantile of Student's t with `|cdf(x) - p| < 1e-12`.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability {p} outside (0, 1)");
    assert!(df > 0.0, "degrees of freedom must be positive");
    if p == 0.5 {
        return 0.0;
    }
    if df.is_infinite() {
        return normal_quantile(p);
    }
    let z = normal_quantile(p);
    let (mut lo, mut hi) = (z.min(0.0) - 1.0, z.max(0.0) + 1.0);
    while student_t_cdf(lo, df) > p {
        lo *= 2.0;
    }
    while student_t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    monotone_root(
        |x| student_t_cdf(x, df) - p,
        |x| student_t_pdf(x, df),
        lo,
        hi,
        z.clamp(lo, hi),
        1e-13,
    )
}

/// Central F CDF through the incomplete-beta identity.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let y = d1 * x / (d1 * x + d2);
    beta_reg(0.5 * d1, 0.5 * d2, y)
}

/// Quantile of the central F(d1, d2) distribution.
///
/// Solved in the beta variable `y = d1 x / (d1 x + d2)` on (0, 1): bisection
/// first, then safeguarded Newton with the beta density.
pub fn central_f_quantile(p: f64, d1: usize, d2: usize) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability {p} outside (0, 1)");
    assert!(d1 >= 1 && d2 >= 1, "degrees of freedom must be positive");
    let (a, b) = (0.5 * d1 as f64, 0.5 * d2 as f64);
    let lnb = ln_beta(a, b);
    let pdf = |y: f64| {
        if y <= 0.0 || y >= 1.0 {
            return 0.0;
        }
        ((a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln() - lnb).exp()
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y = monotone_root(
        |y| beta_reg(a, b, y) - p,
        pdf,
        lo,
        hi,
        0.5 * (lo + hi),
        1e-13,
    );
    let x = d2 as f64 * y / (d1 as f64 * (1.0 - y));
    // polish on the F scale so the round trip through `f_cdf` is tight
    let (d1f, d2f) = (d1 as f64, d2 as f64);
    let fpdf = |x: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        let yy = d1f * x / (d1f * x + d2f);
        pdf(yy) * d1f * d2f / (d1f * x + d2f).powi(2)
    };
    let (lo_x, hi_x) = (x * (1.0 - 1e-6), x * (1.0 + 1e-6) + 1e-300);
    if f_cdf(lo_x, d1f, d2f) <= p && f_cdf(hi_x, d1f, d2f) >= p {
        monotone_root(|t| f_cdf(t, d1f, d2f) - p, fpdf, lo_x, hi_x, x, 1e-13)
    } else {
        x
    }
}

/// CDF of the noncentral F(d1, d2) with noncentrality `tau`.
///
/// Poisson(τ/2) mixture of incomplete-beta terms summed outward from the
/// Poisson mode. Forward terms stop once the remaining Poisson mass times the
/// current (decreasing) beta term is below the threshold; backward terms stop
/// once the geometric bound on the remaining lower-tail mass is.
pub fn noncentral_f_cdf(x: f64, d1: usize, d2: usize, tau: f64) -> Result<f64> {
    if d1 == 0 || d2 == 0 {
        return Err(Error::Invalid("F degrees of freedom must be >= 1".into()));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Invalid(format!("noncentrality {tau} must be finite and >= 0")));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let (a, b) = (0.5 * d1 as f64, 0.5 * d2 as f64);
    let y = d1 as f64 * x / (d1 as f64 * x + d2 as f64);
    if tau == 0.0 {
        return Ok(beta_reg(a, b, y));
    }
    let lambda = 0.5 * tau;
    let mode = lambda.floor() as usize;
    let log_w = |j: usize| -lambda + j as f64 * lambda.ln() - ln_gamma(j as f64 + 1.0);

    let mut total = 0.0;
    let mut mass = 0.0;
    let mut terms = 0usize;

    let mut j = mode;
    loop {
        let w = log_w(j).exp();
        let ib = beta_reg(a + j as f64, b, y);
        total += w * ib;
        mass += w;
        terms += 1;
        if ib * (1.0 - mass).max(0.0) < SERIES_EPS || (w * ib < SERIES_EPS * 1e-2 && j > mode) {
            break;
        }
        if terms > SERIES_MAX_TERMS {
            return Err(Error::NonConvergence(format!(
                "noncentral F series exceeded {SERIES_MAX_TERMS} terms (tau = {tau})"
            )));
        }
        j += 1;
    }

    let mut j = mode;
    while j > 0 {
        j -= 1;
        let w = log_w(j).exp();
        total += w * beta_reg(a + j as f64, b, y);
        terms += 1;
        let r = j as f64 / lambda;
        if r < 1.0 && w * r / (1.0 - r) < SERIES_EPS {
            break;
        }
        if terms > SERIES_MAX_TERMS {
            return Err(Error::NonConvergence(format!(
                "noncentral F series exceeded {SERIES_MAX_TERMS} terms (tau = {tau})"
            )));
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Inverse of the regularized lower incomplete gamma function `P(a, x) = p`.
pub fn gamma_p_inverse(a: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let gln = ln_gamma(a);
    let a1 = a - 1.0;
    let (lna1, afac) = if a > 1.0 {
        (a1.ln(), (a1 * (a1.ln() - 1.0) - gln).exp())
    } else {
        (0.0, 0.0)
    };
    // Wilson-Hilferty (a > 1) or small-a power-law starting point
    let mut x = if a > 1.0 {
        let pp = if p < 0.5 { p } else { 1.0 - p };
        let t = (-2.0 * pp.ln()).sqrt();
        let mut z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t;
        if p < 0.5 {
            z = -z;
        }
        (a * (1.0 - 1.0 / (9.0 * a) - z / (3.0 * a.sqrt())).powi(3)).max(1e-3)
    } else {
        let t = 1.0 - a * (0.253 + a * 0.12);
        if p < t {
            (p / t).powf(1.0 / a)
        } else {
            1.0 - (1.0 - (p - t) / (1.0 - t)).ln()
        }
    };
    for _ in 0..32 {
        if x <= 0.0 {
            return 0.0;
        }
        let err = gamma_lr(a, x) - p;
        let t = if a > 1.0 {
            afac * (-(x - a1) + a1 * (x.ln() - lna1)).exp()
        } else {
            (-x + a1 * x.ln() - gln).exp()
        };
        if t == 0.0 {
            break;
        }
        let u = err / t;
        let step = u / (1.0 - 0.5 * (u * (a1 / x - 1.0)).min(1.0));
        x -= step;
        if x <= 0.0 {
            x = 0.5 * (x + step);
        }
        if step.abs() < 1e-12 * x {
            break;
        }
    }
    x
}

/// Quantile of `sqrt(χ²_ν / ν)`.
pub fn scaled_chi_quantile(p: f64, df: f64) -> f64 {
    (2.0 * gamma_p_inverse(0.5 * df, p) / df).sqrt()
}

/// Safeguarded Newton for an increasing function with a sign change on
/// `[lo, hi]`.
fn monotone_root<F, D>(f: F, fprime: D, mut lo: f64, mut hi: f64, x0: f64, tol: f64) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut x = x0;
    for _ in 0..200 {
        let fx = f(x);
        if fx.abs() < tol {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = fprime(x);
        let newton = if d > 0.0 { x - fx / d } else { f64::NAN };
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * x.abs().max(1e-300) {
            return x;
        }
    }
    x
}
