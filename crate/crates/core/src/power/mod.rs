//! Closed-form distribution of the treatment-effect estimators and analytic
//! power for the omnibus / homogeneity / custom F tests and the
//! intersection-union test, plus sample-size solvers.

pub mod grid;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstat::dist::{central_f_quantile, noncentral_f_cdf, student_t_quantile};
use crate::matstat::linalg::{cholesky, min_eigenvalue, rows_serde, solve_spd, symmetrize, Mat};
use crate::matstat::mvt::{mvt_rectangle, MvtKind, QmcOptions};
use crate::types::{DesignSpec, TestSpec, VarianceComponents, PD_TOL};

pub use grid::{power_grid, AxisKind, GridAxis, GridCell, PowerGrid};

/// Asymptotic covariance `Ω` of `√n (β̂ − β)` and the implied Wald-statistic
/// correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectDistribution {
    #[serde(with = "rows_serde")]
    omega: Mat,
    omega_diag: Vec<f64>,
    #[serde(with = "rows_serde")]
    wald_corr: Mat,
}

impl EffectDistribution {
    pub fn from_omega(omega: Mat) -> Result<Self> {
        let omega = symmetrize(&omega);
        if min_eigenvalue(&omega) <= 0.0 {
            return Err(Error::NotPositiveDefinite("effect covariance".into()));
        }
        let omega_diag: Vec<f64> = omega.diagonal().iter().copied().collect();
        let k = omega.nrows();
        let wald_corr = Mat::from_fn(k, k, |i, j| {
            if i == j {
                1.0
            } else {
                omega[(i, j)] / (omega_diag[i] * omega_diag[j]).sqrt()
            }
        });
        Ok(Self {
            omega,
            omega_diag,
            wald_corr,
        })
    }

    pub fn k(&self) -> usize {
        self.omega.nrows()
    }

    pub fn omega(&self) -> &Mat {
        &self.omega
    }

    pub fn omega_diag(&self) -> &[f64] {
        &self.omega_diag
    }

    pub fn wald_corr(&self) -> &Mat {
        &self.wald_corr
    }
}

/// `Ω = (Σe + m Σφ) / (m σz²)` for clusters of common size `m`.
pub fn omega_equal(vc: &VarianceComponents, m: f64, sigma_z2: f64) -> Result<EffectDistribution> {
    if !(m >= 1.0) || !(sigma_z2 > 0.0) {
        return Err(Error::Invalid(format!("need m >= 1 and sigma_z2 > 0, got {m}, {sigma_z2}")));
    }
    EffectDistribution::from_omega(cluster_covariance(vc, m) / (m * sigma_z2))
}

fn cluster_covariance(vc: &VarianceComponents, m: f64) -> Mat {
    vc.sigma_e() + vc.sigma_phi() * m
}

/// Second-order efficiency correction for variable cluster sizes,
/// `Θ = [I − CV² m̄ Σφ A⁻¹ Σe A⁻¹]⁻¹` with `A = Σe + m̄ Σφ`.
pub fn correction_matrix(vc: &VarianceComponents, m_bar: f64, cv: f64) -> Result<Mat> {
    if !(cv >= 0.0) || !(m_bar >= 1.0) {
        return Err(Error::Invalid(format!("need cv >= 0 and m_bar >= 1, got {cv}, {m_bar}")));
    }
    let k = vc.k();
    if cv == 0.0 {
        return Ok(Mat::identity(k, k));
    }
    let a = cluster_covariance(vc, m_bar);
    let ainv_e = solve_spd(&a, vc.sigma_e())?;
    // A⁻¹ Σe A⁻¹ = (A⁻¹ Σe) A⁻¹, symmetric PD
    let p = symmetrize(&solve_spd(&a, &ainv_e.transpose())?.transpose());
    let m = vc.sigma_phi() * &p * m_bar;
    // eigenvalues of Σφ P equal those of Rᵀ Σφ R with P = R Rᵀ: real, >= 0
    let r = cholesky(&p)?;
    let sym = symmetrize(&(r.transpose() * vc.sigma_phi() * &r * m_bar));
    let lambda_max = sym.symmetric_eigenvalues().max();
    if 1.0 - cv * cv * lambda_max <= PD_TOL {
        return Err(Error::DegenerateCorrection { cv });
    }
    let bracket = Mat::identity(k, k) - m * (cv * cv);
    bracket
        .try_inverse()
        .ok_or(Error::DegenerateCorrection { cv })
}

/// Scalar version of [`correction_matrix`] for a single endpoint with ICC
/// `rho0`.
pub fn correction_factor(rho0: f64, m_bar: f64, cv: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho0) || !(m_bar >= 1.0) || !(cv >= 0.0) {
        return Err(Error::Invalid("correction factor inputs out of range".into()));
    }
    let de = 1.0 + (m_bar - 1.0) * rho0;
    let bracket = 1.0 - cv * cv * m_bar * rho0 * (1.0 - rho0) / (de * de);
    if bracket <= PD_TOL {
        return Err(Error::DegenerateCorrection { cv });
    }
    Ok(1.0 / bracket)
}

/// Effect covariance with the variable-cluster-size correction applied.
pub fn omega_unequal(
    vc: &VarianceComponents,
    m_bar: f64,
    cv: f64,
    sigma_z2: f64,
) -> Result<EffectDistribution> {
    let base = omega_equal(vc, m_bar, sigma_z2)?;
    if cv == 0.0 {
        return Ok(base);
    }
    let theta = correction_matrix(vc, m_bar, cv)?;
    EffectDistribution::from_omega(base.omega() * theta).map_err(|_| Error::DegenerateCorrection { cv })
}

/// `omega_unequal` at the design's mean size and CV.
pub fn effect_distribution(vc: &VarianceComponents, design: &DesignSpec) -> Result<EffectDistribution> {
    omega_unequal(vc, design.m_bar, design.cv, design.sigma_z2())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub power: f64,
    pub n: usize,
    /// `τ` for the F tests.
    pub noncentrality: Option<f64>,
    /// `(S, ν)` for the F tests, `(ν)` for the intersection-union test.
    pub df: Vec<usize>,
    pub critical_values: Vec<f64>,
    /// Numerical-integration error bound when the power is not closed form.
    pub mc_error: Option<f64>,
}

/// Power of the `S`-degree-of-freedom F test of `H0: L β = 0` against the
/// alternative `L β = δ`.
pub fn glh_power(
    dist: &EffectDistribution,
    contrast: &Mat,
    delta: &[f64],
    n: usize,
    alpha: f64,
) -> Result<PowerResult> {
    let k = dist.k();
    let s = contrast.nrows();
    if contrast.ncols() != k || delta.len() != s || s == 0 {
        return Err(Error::Invalid("contrast / delta dimensions disagree".into()));
    }
    check_alpha(alpha)?;
    if n <= s + k {
        return Err(Error::InsufficientDf { n, needed: s + k });
    }
    let nu = n - s - k;
    let lol = symmetrize(&(contrast * dist.omega() * contrast.transpose()));
    let d = Mat::from_column_slice(s, 1, delta);
    let tau = n as f64 * (d.transpose() * solve_spd(&lol, &d)?)[(0, 0)];
    let crit = central_f_quantile(1.0 - alpha, s, nu);
    let power = if tau == 0.0 {
        alpha
    } else {
        (1.0 - noncentral_f_cdf(crit, s, nu, tau)?).clamp(0.0, 1.0)
    };
    Ok(PowerResult {
        power,
        n,
        noncentrality: Some(tau),
        df: vec![s, nu],
        critical_values: vec![crit],
        mc_error: None,
    })
}

/// Numerical settings for the intersection-union power.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IuOptions {
    pub kind: MvtKind,
    pub qmc: QmcOptions,
}

/// Power of the one-sided intersection-union test that rejects when every
/// Wald statistic exceeds the `t_{1−α}(n − 2K)` critical value.
pub fn iu_power(
    dist: &EffectDistribution,
    beta: &[f64],
    n: usize,
    alpha: f64,
    opts: &IuOptions,
) -> Result<PowerResult> {
    let k = dist.k();
    if beta.len() != k {
        return Err(Error::Invalid(format!("beta has {} entries, expected {k}", beta.len())));
    }
    check_alpha(alpha)?;
    if n <= 2 * k {
        return Err(Error::InsufficientDf { n, needed: 2 * k });
    }
    let nu = n - 2 * k;
    let c = student_t_quantile(1.0 - alpha, nu as f64);
    let root_n = (n as f64).sqrt();
    let eta: Vec<f64> = beta
        .iter()
        .zip(dist.omega_diag())
        .map(|(b, w)| root_n * b / w.sqrt())
        .collect();
    let rect = mvt_rectangle(&vec![c; k], &eta, dist.wald_corr(), nu as f64, opts.kind, &opts.qmc)?;
    Ok(PowerResult {
        power: rect.probability.clamp(0.0, 1.0),
        n,
        noncentrality: None,
        df: vec![nu],
        critical_values: vec![c; k],
        mc_error: Some(rect.error),
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("alpha = {alpha} must lie in (0, 1)")))
    }
}

/// Power of `test` for the design `design` (its `n`, `m_bar`, `cv`, `z_bar`,
/// `alpha`) when the treatment effects are `beta`.
pub fn design_power(
    vc: &VarianceComponents,
    design: &DesignSpec,
    beta: &[f64],
    test: &TestSpec,
    opts: &IuOptions,
) -> Result<PowerResult> {
    design.validate()?;
    if beta.len() != vc.k() {
        return Err(Error::Invalid(format!("beta has {} entries, expected {}", beta.len(), vc.k())));
    }
    let dist = effect_distribution(vc, design)?;
    power_from_distribution(&dist, design.n, design.alpha, beta, test, opts)
}

fn power_from_distribution(
    dist: &EffectDistribution,
    n: usize,
    alpha: f64,
    beta: &[f64],
    test: &TestSpec,
    opts: &IuOptions,
) -> Result<PowerResult> {
    match test.contrast(beta.len())? {
        Some(l) => {
            let delta = test.delta(beta)?.expect("GLH test has a delta");
            glh_power(dist, &l, &delta, n, alpha)
        }
        None => iu_power(dist, beta, n, alpha, opts),
    }
}

/// Smallest `n` the test's degrees of freedom allow.
pub fn df_floor(test: &TestSpec, k: usize) -> Result<usize> {
    Ok(match test.contrast(k)? {
        Some(l) => l.nrows() + k + 1,
        None => 2 * k + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Increment between candidate designs; 2 keeps arms balanced.
    pub step: usize,
    /// Largest design considered before giving up.
    pub ceiling: usize,
    pub iu: IuOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            step: 2,
            ceiling: 10_000,
            iu: IuOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// The solved design quantity (number of clusters or mean cluster size).
    pub value: usize,
    pub power: PowerResult,
    /// Power one step below `value`, when that design is feasible.
    pub power_below: Option<f64>,
}

/// Smallest number of clusters (a multiple of `opts.step` when the step is
/// 2) reaching `target` power. `design.n` is ignored.
pub fn solve_clusters(
    vc: &VarianceComponents,
    design: &DesignSpec,
    beta: &[f64],
    test: &TestSpec,
    target: f64,
    opts: &SolveOptions,
) -> Result<Solution> {
    design.validate_without_n()?;
    check_target(target, design.alpha)?;
    if beta.len() != vc.k() {
        return Err(Error::Invalid(format!("beta has {} entries, expected {}", beta.len(), vc.k())));
    }
    let step = opts.step.max(1);
    let floor = df_floor(test, vc.k())?.max(2);
    let start = floor.div_ceil(step) * step;
    let dist = effect_distribution(vc, design)?;
    let eval = |n: usize| power_from_distribution(&dist, n, design.alpha, beta, test, &opts.iu);
    smallest_passing(start, step, opts.ceiling, target, "number of clusters", eval)
}

/// Smallest integer mean cluster size reaching `target` power at the
/// design's `n`. `design.m_bar` is ignored.
pub fn solve_cluster_size(
    vc: &VarianceComponents,
    design: &DesignSpec,
    beta: &[f64],
    test: &TestSpec,
    target: f64,
    ceiling: usize,
    iu: &IuOptions,
) -> Result<Solution> {
    let probe = DesignSpec { m_bar: 1.0, ..*design };
    probe.validate()?;
    check_target(target, design.alpha)?;
    if beta.len() != vc.k() {
        return Err(Error::Invalid(format!("beta has {} entries, expected {}", beta.len(), vc.k())));
    }
    // As m̄ grows Ω tends to Σφ/σz² (and Θ to I), which caps the power.
    if min_eigenvalue(vc.sigma_phi()) > PD_TOL {
        let limit = EffectDistribution::from_omega(vc.sigma_phi() / design.sigma_z2())?;
        let p = power_from_distribution(&limit, design.n, design.alpha, beta, test, iu)?;
        if p.power < target {
            return Err(Error::Unattainable(format!(
                "power tends to {:.4} as the cluster size grows, below the target {target}",
                p.power
            )));
        }
    }
    let eval = |m: usize| {
        let d = DesignSpec { m_bar: m as f64, ..*design };
        design_power(vc, &d, beta, test, iu)
    };
    smallest_passing(1, 1, ceiling, target, "cluster size", eval)
}

fn check_target(target: f64, alpha: f64) -> Result<()> {
    if target > alpha && target < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("target power {target} must lie in (alpha, 1)")))
    }
}

/// Galloping search followed by bisection over `start + j·step`. Every
/// evaluated point is kept so that a violation of monotonicity among them
/// is reported rather than silently producing a wrong answer.
fn smallest_passing(
    start: usize,
    step: usize,
    ceiling: usize,
    target: f64,
    what: &str,
    mut eval: impl FnMut(usize) -> Result<PowerResult>,
) -> Result<Solution> {
    if start > ceiling {
        return Err(Error::Unattainable(format!("{what} floor {start} exceeds ceiling {ceiling}")));
    }
    let top = start + (ceiling - start) / step * step;
    let mut seen: Vec<(usize, PowerResult)> = Vec::new();
    let mut probe = |x: usize, seen: &mut Vec<(usize, PowerResult)>| -> Result<bool> {
        let r = eval(x)?;
        let pass = r.power >= target;
        seen.push((x, r));
        Ok(pass)
    };

    let (mut lo, mut hi);
    if probe(start, &mut seen)? {
        lo = None;
        hi = start;
    } else {
        let mut prev = start;
        let mut gap = step;
        loop {
            if prev == top {
                let best = seen.iter().map(|(_, r)| r.power).fold(0.0, f64::max);
                return Err(Error::Unattainable(format!(
                    "{what} would exceed {ceiling} (power {best:.4} < {target})"
                )));
            }
            let x = (prev + gap).min(top);
            if probe(x, &mut seen)? {
                lo = Some(prev);
                hi = x;
                break;
            }
            prev = x;
            gap *= 2;
        }
    }
    while let Some(l) = lo {
        if hi - l <= step {
            break;
        }
        let mid = l + (hi - l) / step / 2 * step;
        if probe(mid, &mut seen)? {
            hi = mid;
        } else {
            lo = Some(mid);
        }
    }

    seen.sort_by_key(|(x, _)| *x);
    for w in seen.windows(2) {
        let (a, b) = (&w[0].1, &w[1].1);
        let slack = a.mc_error.unwrap_or(0.0) + b.mc_error.unwrap_or(0.0) + 1e-12;
        if b.power + slack < a.power {
            return Err(Error::NonMonotone { at: w[1].0 });
        }
    }
    let power = seen.iter().find(|(x, _)| *x == hi).map(|(_, r)| r.clone()).expect("solution was evaluated");
    let power_below = lo.and_then(|l| seen.iter().find(|(x, _)| *x == l)).map(|(_, r)| r.power);
    if power_below.is_some_and(|p| p >= target) {
        return Err(Error::NonMonotone { at: hi });
    }
    Ok(Solution {
        value: hi,
        power,
        power_below,
    })
}
