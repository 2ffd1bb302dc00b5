//! Rectangle probabilities `P(X_k > a_k for all k)` for multivariate t (and
//! normal) vectors with correlation shape `Φ`.
//!
//! Uses the separation-of-variables transform: Cholesky of the reordered `Φ`,
//! sequential conditional inversion of the normal coordinates, and one extra
//! coordinate for the chi scale variable when `df` is finite. The resulting
//! unit-cube integral is evaluated with randomly shifted, tent-periodized
//! Richtmyer lattices; the spread of the shifted replicates gives the error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dist::{normal_cdf, normal_quantile, scaled_chi_quantile, student_t_sf};
use super::linalg::{cholesky, Mat};
use super::rng::RngStream;
use crate::error::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// How the location vector enters the t vector `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MvtKind {
    /// `X = (Z + η) / S`: the noncentral multivariate t.
    #[default]
    Noncentral,
    /// `X = η + Z / S`: a central multivariate t moved to location `η`.
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmcOptions {
    /// Target for the reported error (three replicate standard errors).
    pub abs_tol: f64,
    pub replicates: usize,
    pub initial_points: usize,
    /// Cap on the total number of integrand evaluations.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for QmcOptions {
    fn default() -> Self {
        Self {
            abs_tol: 5e-4,
            replicates: 8,
            initial_points: 256,
            max_points: 1 << 24,
            seed: 0x5eed_c0de,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectangleProbability {
    pub probability: f64,
    /// Three times the replicate standard error (zero for closed forms).
    pub error: f64,
    pub points: usize,
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// `P(X_k > lower_k ∀k)` where `X` is a `df`-t vector with correlation
/// `shape` and location `location`. `df = f64::INFINITY` gives the
/// multivariate normal (both kinds then coincide).
pub fn mvt_rectangle(
    lower: &[f64],
    location: &[f64],
    shape: &Mat,
    df: f64,
    kind: MvtKind,
    opts: &QmcOptions,
) -> Result<RectangleProbability> {
    let k = lower.len();
    if k == 0 || location.len() != k || shape.nrows() != k || shape.ncols() != k {
        return Err(Error::Invalid("rectangle dimensions disagree".into()));
    }
    if k > PRIMES.len() {
        return Err(Error::Invalid(format!("at most {} dimensions", PRIMES.len())));
    }
    if !(df > 0.0) {
        return Err(Error::Invalid(format!("degrees of freedom {df} must be positive")));
    }
    if (0..k).any(|i| (shape[(i, i)] - 1.0).abs() > 1e-10) {
        return Err(Error::Invalid("shape must have unit diagonal".into()));
    }
    if lower.iter().chain(location).any(|v| v.is_nan()) || location.iter().any(|v| v.is_infinite()) {
        return Err(Error::Invalid("limits and location must be numbers".into()));
    }

    // Upper limit for the flipped normal coordinate, u(s) = intercept + slope * s.
    let limits: Vec<(f64, f64)> = lower
        .iter()
        .zip(location)
        .map(|(&a, &eta)| {
            if a == f64::NEG_INFINITY {
                (f64::INFINITY, 0.0)
            } else if a == f64::INFINITY {
                (f64::NEG_INFINITY, 0.0)
            } else {
                match kind {
                    MvtKind::Shifted => (0.0, eta - a),
                    MvtKind::Noncentral => (eta, -a),
                }
            }
        })
        .collect();

    if k == 1 {
        return Ok(RectangleProbability {
            probability: univariate(limits[0], df, kind, lower[0], location[0]),
            error: 0.0,
            points: 0,
        });
    }

    // most restrictive limits first
    let mut order: Vec<usize> = (0..k).collect();
    let at_one = |i: usize| normal_cdf(limits[i].0 + limits[i].1);
    order.sort_by(|&i, &j| at_one(i).total_cmp(&at_one(j)));
    let perm_shape = Mat::from_fn(k, k, |i, j| shape[(order[i], order[j])]);
    let l = cholesky(&perm_shape)?;
    let limits: Vec<(f64, f64)> = order.iter().map(|&i| limits[i]).collect();

    let finite = df.is_finite();
    let dim = k - 1 + usize::from(finite);
    let integrand = Integrand {
        l: &l,
        limits: &limits,
        df,
        finite,
    };
    lattice_integrate(dim, opts, |w, y| integrand.eval(w, y), k)
}

struct Integrand<'a> {
    l: &'a Mat,
    limits: &'a [(f64, f64)],
    df: f64,
    finite: bool,
}

impl Integrand<'_> {
    fn eval(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let k = self.limits.len();
        let (s, zw) = if self.finite {
            (scaled_chi_quantile(w[0], self.df), &w[1..])
        } else {
            (1.0, w)
        };
        let mut f = 1.0;
        for i in 0..k {
            let (c, slope) = self.limits[i];
            let u = if slope == 0.0 { c } else { c + slope * s };
            let mut mu = 0.0;
            for j in 0..i {
                mu += self.l[(i, j)] * y[j];
            }
            let e = normal_cdf((u - mu) / self.l[(i, i)]);
            f *= e;
            if f == 0.0 {
                return 0.0;
            }
            if i + 1 < k {
                let p = (zw[i] * e).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                y[i] = normal_quantile(p);
            }
        }
        f
    }
}

fn lattice_integrate<F>(dim: usize, opts: &QmcOptions, f: F, scratch: usize) -> Result<RectangleProbability>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let reps = opts.replicates.max(2);
    let alpha: Vec<f64> = PRIMES[..dim].iter().map(|&p| (p as f64).sqrt().fract()).collect();
    let mut rng = RngStream::new(opts.seed, 0).rng();
    let shifts: Vec<Vec<f64>> = (0..reps)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();

    let mut sums = vec![0.0; reps];
    let mut done = 0usize;
    let mut target = opts.initial_points.max(16);
    let mut w = vec![0.0; dim];
    let mut y = vec![0.0; scratch];
    loop {
        for (r, shift) in shifts.iter().enumerate() {
            let mut acc = 0.0;
            for i in (done + 1)..=target {
                for d in 0..dim {
                    let x = (i as f64 * alpha[d] + shift[d]).fract();
                    w[d] = 1.0 - (2.0 * x - 1.0).abs();
                }
                acc += f(&w, &mut y);
            }
            sums[r] += acc;
        }
        done = target;
        let means: Vec<f64> = sums.iter().map(|s| s / done as f64).collect();
        let est = means.iter().sum::<f64>() / reps as f64;
        let var = means.iter().map(|m| (m - est).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let error = 3.0 * (var / reps as f64).sqrt();
        let points = done * reps;
        if error < opts.abs_tol {
            return Ok(RectangleProbability {
                probability: est.clamp(0.0, 1.0),
                error,
                points,
            });
        }
        if 2 * points > opts.max_points {
            return Err(Error::AccuracyNotReached {
                estimate: est.clamp(0.0, 1.0),
                error,
                points,
            });
        }
        target *= 2;
    }
}

fn univariate(limit: (f64, f64), df: f64, kind: MvtKind, a: f64, eta: f64) -> f64 {
    let (c, slope) = limit;
    if slope == 0.0 || df.is_infinite() {
        return normal_cdf(c + slope);
    }
    match kind {
        MvtKind::Shifted => student_t_sf(a - eta, df),
        MvtKind::Noncentral => {
            // E_S[Φ(η - a S)] over the scaled chi density
            let ln_norm = std::f64::consts::LN_2 + 0.5 * df * (0.5 * df).ln() - ln_gamma(0.5 * df);
            let density = |s: f64| {
                if s <= 0.0 {
                    return if df == 1.0 { (2.0 / std::f64::consts::PI).sqrt() } else { 0.0 };
                }
                (ln_norm + (df - 1.0) * s.ln() - 0.5 * df * s * s).exp()
            };
            let g = |s: f64| density(s) * normal_cdf(c + slope * s);
            let smax = 1.0 + 12.0 * (1.0 / (2.0 * df).sqrt()).max(1.0);
            adaptive_simpson(&g, 0.0, smax, 1e-12, 40).clamp(0.0, 1.0)
        }
    }
}

fn adaptive_simpson<G: Fn(f64) -> f64>(g: &G, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn rec<G: Fn(f64) -> f64>(g: &G, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (g(lm), g(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(g, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(g, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    // split first so a narrow peak cannot be missed by the coarse estimate
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fm, fb) = (g(lo), g(0.5 * (lo + hi)), g(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            rec(g, lo, hi, fa, fm, fb, whole, tol / pieces as f64, depth)
        })
        .sum()
}
