//! Maximum-likelihood fitting of the multivariate random-intercept model by
//! EM over the cluster effects, with observed-information standard errors
//! and the Wald tests used in analysis.
//!
//! Everything runs on per-cluster sufficient statistics: size `m_i`, arm,
//! mean vector `ȳ_i` and within-cluster scatter `W_i`. With
//! `A_i = Σe + m_i Σφ`, the marginal covariance of cluster `i` factors as
//! `det V_i = det(Σe)^(m_i − 1) det(A_i)` and
//! `rᵀ V_i⁻¹ r = tr(Σe⁻¹ W_i) + m_i r̄ᵀ A_i⁻¹ r̄`, so `V_i` is never formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstat::dist::{central_f_quantile, student_t_quantile};
use crate::matstat::linalg::{cholesky, cholesky_solve, project_psd, rows_serde, solve_spd, symmetrize, Mat, Vector};
use crate::sim::dataset::TrialDataset;
use crate::types::TestSpec;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
struct ClusterStats {
    m: f64,
    /// Centred arm indicator `z_i − z̄`.
    d: f64,
    ybar: Vector,
    w: Mat,
}

/// Per-cluster sufficient statistics of a dataset.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    k: usize,
    n_subjects: f64,
    z_bar: f64,
    clusters: Vec<ClusterStats>,
}

impl SufficientStats {
    pub fn from_dataset(data: &TrialDataset) -> Result<Self> {
        let k = data.k();
        let n = data.n_clusters();
        let treated = data.clusters().iter().filter(|c| c.arm == 1).count();
        if treated == 0 || treated == n {
            return Err(Error::DegenerateData("both arms must contain clusters".into()));
        }
        let z_bar = treated as f64 / n as f64;
        let clusters = data
            .clusters()
            .iter()
            .map(|c| {
                let m = c.size(k);
                let mut ybar = Vector::zeros(k);
                for j in 0..m {
                    for (a, v) in c.subject(k, j).iter().enumerate() {
                        ybar[a] += v;
                    }
                }
                ybar /= m as f64;
                let mut w = Mat::zeros(k, k);
                for j in 0..m {
                    let s = c.subject(k, j);
                    for a in 0..k {
                        let da = s[a] - ybar[a];
                        for b in 0..=a {
                            w[(a, b)] += da * (s[b] - ybar[b]);
                        }
                    }
                }
                for a in 0..k {
                    for b in 0..a {
                        w[(b, a)] = w[(a, b)];
                    }
                }
                ClusterStats {
                    m: m as f64,
                    d: f64::from(c.arm) - z_bar,
                    ybar,
                    w,
                }
            })
            .collect::<Vec<_>>();
        Ok(Self {
            k,
            n_subjects: data.n_subjects() as f64,
            z_bar,
            clusters,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Observed treated fraction used to centre the arm indicator.
    pub fn z_bar(&self) -> f64 {
        self.z_bar
    }
}

/// Model parameters: `theta` holds the centred intercepts `γ̃` then `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub theta: Vec<f64>,
    #[serde(with = "rows_serde")]
    pub sigma_phi: Mat,
    #[serde(with = "rows_serde")]
    pub sigma_e: Mat,
}

impl Params {
    fn check(&self, k: usize) -> Result<()> {
        if self.theta.len() != 2 * k || self.sigma_phi.shape() != (k, k) || self.sigma_e.shape() != (k, k) {
            return Err(Error::Invalid("parameter dimensions disagree with the data".into()));
        }
        Ok(())
    }

    fn mean(&self, c: &ClusterStats) -> Vector {
        let k = self.sigma_e.nrows();
        Vector::from_fn(k, |a, _| self.theta[a] + c.d * self.theta[k + a])
    }
}

/// Gaussian log-likelihood of the data under `params` (including the
/// `2π` constant).
pub fn loglik(params: &Params, data: &TrialDataset) -> Result<f64> {
    let stats = SufficientStats::from_dataset(data)?;
    loglik_stats(params, &stats)
}

pub fn loglik_stats(params: &Params, stats: &SufficientStats) -> Result<f64> {
    params.check(stats.k)?;
    let le = cholesky(&params.sigma_e)?;
    let logdet_e = 2.0 * le.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let e_inv = cholesky_solve(&le, &Mat::identity(stats.k, stats.k));
    let mut total = 0.0;
    for c in &stats.clusters {
        let a = &params.sigma_e + &params.sigma_phi * c.m;
        let la = cholesky(&a)?;
        let logdet_a = 2.0 * la.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let r = &c.ybar - params.mean(c);
        let ar = cholesky_solve(&la, &Mat::from_column_slice(stats.k, 1, r.as_slice()));
        total += (c.m - 1.0) * logdet_e + logdet_a + e_inv.component_mul(&c.w).sum() + c.m * r.dot(&ar.column(0));
    }
    Ok(-0.5 * (total + stats.n_subjects * stats.k as f64 * LN_2PI))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Stop when the relative change in log-likelihood falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
        }
    }
}

/// Which parameter blocks entered the observed information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InformationBlocks {
    All,
    /// `Σφ` held at its estimate (it sits at or near the PSD boundary).
    SigmaPhiFixed,
    FixedEffectsOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    pub theta: Vec<f64>,
    #[serde(with = "rows_serde")]
    pub cov_theta: Mat,
    pub sigma_phi: Option<Vec<Vec<f64>>>,
    pub sigma_e: Option<Vec<Vec<f64>>>,
    pub blocks: InformationBlocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub k: usize,
    pub n_clusters: usize,
    pub z_bar: f64,
    /// `γ̃` then `β`.
    pub theta_hat: Vec<f64>,
    #[serde(with = "rows_serde")]
    pub sigma_phi_hat: Mat,
    #[serde(with = "rows_serde")]
    pub sigma_e_hat: Mat,
    pub beta_hat: Vec<f64>,
    pub se_beta: Vec<f64>,
    /// Estimated covariance of `β̂`.
    #[serde(with = "rows_serde")]
    pub cov_beta: Mat,
    /// `ζ_k = β̂_k / SE(β̂_k)`.
    pub wald: Vec<f64>,
    pub standard_errors: StandardErrors,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest drop of the log-likelihood between iterations (0 when the
    /// sequence never decreases).
    pub max_loglik_decrease: f64,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn params(&self) -> Params {
        Params {
            theta: self.theta_hat.clone(),
            sigma_phi: self.sigma_phi_hat.clone(),
            sigma_e: self.sigma_e_hat.clone(),
        }
    }
}

/// Starting values: `Σe` from the pooled within-cluster covariance, `Σφ`
/// from the between-cluster covariance of cluster means (around their arm
/// means) minus `Σe / m̄`, floored to PSD; `θ` by GLS at those values.
pub fn initial_params(stats: &SufficientStats) -> Result<Params> {
    let k = stats.k;
    let n = stats.n_clusters() as f64;
    let mut within = Mat::zeros(k, k);
    for c in &stats.clusters {
        within += &c.w;
    }
    let mut arm_mean = [Vector::zeros(k), Vector::zeros(k)];
    let mut arm_n = [0.0; 2];
    for c in &stats.clusters {
        let g = usize::from(c.d > 0.0);
        arm_mean[g] += &c.ybar;
        arm_n[g] += 1.0;
    }
    arm_mean[0] /= arm_n[0];
    arm_mean[1] /= arm_n[1];
    let mut between = Mat::zeros(k, k);
    for c in &stats.clusters {
        let r = &c.ybar - &arm_mean[usize::from(c.d > 0.0)];
        between += &r * r.transpose();
    }
    between /= (n - 2.0).max(1.0);
    let scale = between.diagonal().max().max(within.diagonal().max()).max(1e-300);

    let within_df = stats.n_subjects - n;
    let sigma_e = if within_df > 0.0 {
        project_psd(&(within / within_df), 1e-8 * scale)
    } else {
        project_psd(&(&between * 0.5), 1e-8 * scale)
    };
    let m_bar = stats.n_subjects / n;
    let sigma_phi = project_psd(&(&between - &sigma_e / m_bar), 1e-8);
    let mut p = Params {
        theta: vec![0.0; 2 * k],
        sigma_phi,
        sigma_e,
    };
    p.theta = gls(&p, stats)?;
    Ok(p)
}

/// `θ` maximizing the likelihood at fixed variance components.
fn gls(p: &Params, stats: &SufficientStats) -> Result<Vec<f64>> {
    let k = stats.k;
    let mut lhs = Mat::zeros(2 * k, 2 * k);
    let mut rhs = Mat::zeros(2 * k, 1);
    for c in &stats.clusters {
        let a = &p.sigma_e + &p.sigma_phi * c.m;
        let ai = cholesky_solve(&cholesky(&a)?, &Mat::identity(k, k)) * c.m;
        let aiy = &ai * &c.ybar;
        for r in 0..k {
            for s in 0..k {
                let v = ai[(r, s)];
                lhs[(r, s)] += v;
                lhs[(r, k + s)] += c.d * v;
                lhs[(k + r, s)] += c.d * v;
                lhs[(k + r, k + s)] += c.d * c.d * v;
            }
            rhs[(r, 0)] += aiy[r];
            rhs[(k + r, 0)] += c.d * aiy[r];
        }
    }
    Ok(solve_spd(&symmetrize(&lhs), &rhs)?.column(0).iter().copied().collect())
}

/// GLS estimate of `θ` (`γ̃` then `β`) at known variance components.
pub fn gls_fit(data: &TrialDataset, sigma_phi: &Mat, sigma_e: &Mat) -> Result<Vec<f64>> {
    let stats = SufficientStats::from_dataset(data)?;
    let p = Params {
        theta: vec![0.0; 2 * stats.k],
        sigma_phi: sigma_phi.clone(),
        sigma_e: sigma_e.clone(),
    };
    p.check(stats.k)?;
    gls(&p, &stats)
}

/// One EM cycle. Returns the log-likelihood at `p` (before the update) and
/// the updated parameters.
fn em_step(p: &Params, stats: &SufficientStats) -> Result<(f64, Params)> {
    let k = stats.k;
    let le = cholesky(&p.sigma_e)?;
    let logdet_e = 2.0 * le.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let e_inv = cholesky_solve(&le, &Mat::identity(k, k));
    let mut total = 0.0;
    let mut phi_acc = Mat::zeros(k, k);
    let mut e_acc = Mat::zeros(k, k);
    for c in &stats.clusters {
        let a = &p.sigma_e + &p.sigma_phi * c.m;
        let la = cholesky(&a)?;
        let logdet_a = 2.0 * la.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let r = &c.ybar - p.mean(c);
        let rm = Mat::from_column_slice(k, 1, r.as_slice());
        let ai_r = cholesky_solve(&la, &rm);
        let ai_phi = cholesky_solve(&la, &p.sigma_phi);
        total += (c.m - 1.0) * logdet_e + logdet_a + e_inv.component_mul(&c.w).sum() + c.m * (rm.transpose() * &ai_r)[(0, 0)];

        // E[φ | y] and cov[φ | y]
        let mu = &p.sigma_phi * ai_r * c.m;
        let cov = symmetrize(&(&p.sigma_phi - &p.sigma_phi * ai_phi * c.m));
        phi_acc += &mu * mu.transpose() + &cov;
        let dev = &rm - &mu;
        e_acc += &c.w + (&dev * dev.transpose() + cov) * c.m;
    }
    let ll = -0.5 * (total + stats.n_subjects * k as f64 * LN_2PI);
    let mut next = Params {
        theta: p.theta.clone(),
        sigma_phi: symmetrize(&(phi_acc / stats.n_clusters() as f64)),
        sigma_e: symmetrize(&(e_acc / stats.n_subjects)),
    };
    next.theta = gls(&next, stats)?;
    Ok((ll, next))
}

/// Fit by EM from `init` (or the default start), then compute standard
/// errors and Wald statistics. A fit that hits `max_iter` is returned with
/// `converged = false`.
pub fn em_fit(data: &TrialDataset, opts: &EmOptions, init: Option<Params>) -> Result<FitResult> {
    let stats = SufficientStats::from_dataset(data)?;
    let mut warnings = Vec::new();
    if stats.n_subjects as usize == stats.n_clusters() {
        warnings.push("every cluster has one subject: Σφ and Σe are not separately identified".into());
    }
    let mut p = match init {
        Some(p) => {
            p.check(stats.k)?;
            p
        }
        None => initial_params(&stats)?,
    };
    let mut prev: Option<f64> = None;
    let mut max_drop = 0.0_f64;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let (ll, next) = em_step(&p, &stats)?;
        if let Some(l0) = prev {
            max_drop = max_drop.max(l0 - ll);
            if (ll - l0).abs() <= opts.tol * l0.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        prev = Some(ll);
        p = next;
        iterations += 1;
    }
    let ll = loglik_stats(&p, &stats)?;
    if let Some(l0) = prev {
        max_drop = max_drop.max(l0 - ll);
    }
    if !converged {
        warnings.push(format!("EM stopped after {} iterations", opts.max_iter));
    }

    let se = standard_errors_stats(&p, &stats)?;
    let k = stats.k;
    let beta_hat = p.theta[k..].to_vec();
    let se_beta = se.theta[k..].to_vec();
    let cov_beta = se.cov_theta.view((k, k), (k, k)).into_owned();
    let wald = beta_hat.iter().zip(&se_beta).map(|(b, s)| b / s).collect();
    Ok(FitResult {
        k,
        n_clusters: stats.n_clusters(),
        z_bar: stats.z_bar,
        theta_hat: p.theta.clone(),
        sigma_phi_hat: p.sigma_phi,
        sigma_e_hat: p.sigma_e,
        beta_hat,
        se_beta,
        cov_beta,
        wald,
        standard_errors: se,
        loglik: ll,
        iterations,
        converged,
        max_loglik_decrease: max_drop.max(0.0),
        warnings,
    })
}

/// Log-likelihood trace of an EM run (value before each update, then the
/// final value); mostly useful for checking the ascent property.
pub fn em_trace(data: &TrialDataset, opts: &EmOptions) -> Result<Vec<f64>> {
    let stats = SufficientStats::from_dataset(data)?;
    let mut p = initial_params(&stats)?;
    let mut trace = Vec::new();
    for _ in 0..opts.max_iter {
        let (ll, next) = em_step(&p, &stats)?;
        let done = trace.last().is_some_and(|&l0: &f64| (ll - l0).abs() <= opts.tol * l0.abs().max(1.0));
        trace.push(ll);
        if done {
            return Ok(trace);
        }
        p = next;
    }
    trace.push(loglik_stats(&p, &stats)?);
    Ok(trace)
}

// ---- standard errors ----------------------------------------------------

fn n_vech(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Log-Cholesky coordinates: lower factor row by row, diagonal on log scale.
fn log_cholesky(a: &Mat) -> Result<Vec<f64>> {
    let l = cholesky(a)?;
    let k = a.nrows();
    let mut v = Vec::with_capacity(n_vech(k));
    for i in 0..k {
        for j in 0..=i {
            v.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
        }
    }
    Ok(v)
}

fn from_log_cholesky(v: &[f64], k: usize) -> Mat {
    let mut l = Mat::zeros(k, k);
    let mut it = v.iter();
    for i in 0..k {
        for j in 0..=i {
            let x = *it.next().expect("vech length");
            l[(i, j)] = if i == j { x.exp() } else { x };
        }
    }
    &l * l.transpose()
}

fn vech(a: &Mat) -> Vec<f64> {
    let k = a.nrows();
    (0..k).flat_map(|i| (0..=i).map(move |j| (i, j))).map(|ij| a[ij]).collect()
}

fn unvech_rows(v: &[f64], k: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; k]; k];
    let mut it = v.iter();
    for i in 0..k {
        for j in 0..=i {
            let x = *it.next().expect("vech length");
            out[i][j] = x;
            out[j][i] = x;
        }
    }
    out
}

/// Observed-information standard errors at `fit`'s estimates.
pub fn standard_errors(fit: &FitResult, data: &TrialDataset) -> Result<StandardErrors> {
    let stats = SufficientStats::from_dataset(data)?;
    standard_errors_stats(&fit.params(), &stats)
}

/// Central-difference Hessian of the log-likelihood in
/// `(θ, logchol Σφ, logchol Σe)`, inverted and mapped back to the
/// covariance entries by the delta method. When the full information is
/// not positive definite (a boundary `Σφ`), the offending blocks are held
/// fixed and the remaining ones are used.
fn standard_errors_stats(p: &Params, stats: &SufficientStats) -> Result<StandardErrors> {
    let k = stats.k;
    let nv = n_vech(k);
    let phi = log_cholesky(&p.sigma_phi).ok();
    let e = log_cholesky(&p.sigma_e)?;

    let attempts: Vec<InformationBlocks> = if phi.is_some() {
        vec![InformationBlocks::All, InformationBlocks::SigmaPhiFixed, InformationBlocks::FixedEffectsOnly]
    } else {
        vec![InformationBlocks::SigmaPhiFixed, InformationBlocks::FixedEffectsOnly]
    };
    for blocks in attempts {
        let mut x = p.theta.clone();
        let (with_phi, with_e) = match blocks {
            InformationBlocks::All => (true, true),
            InformationBlocks::SigmaPhiFixed => (false, true),
            InformationBlocks::FixedEffectsOnly => (false, false),
        };
        if with_phi {
            x.extend(phi.as_ref().expect("phi factor exists"));
        }
        if with_e {
            x.extend(&e);
        }
        let unpack = |x: &[f64]| -> Params {
            let mut q = Params {
                theta: x[..2 * k].to_vec(),
                sigma_phi: p.sigma_phi.clone(),
                sigma_e: p.sigma_e.clone(),
            };
            let mut at = 2 * k;
            if with_phi {
                q.sigma_phi = from_log_cholesky(&x[at..at + nv], k);
                at += nv;
            }
            if with_e {
                q.sigma_e = from_log_cholesky(&x[at..at + nv], k);
            }
            q
        };
        let f = |x: &[f64]| loglik_stats(&unpack(x), stats);
        let h = hessian(&f, &x)?;
        let info = symmetrize(&(-h));
        let Ok(lower) = cholesky(&info) else { continue };
        let cov = cholesky_solve(&lower, &Mat::identity(x.len(), x.len()));
        if cov.diagonal().iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            continue;
        }
        let cov = symmetrize(&cov);
        let theta_se: Vec<f64> = (0..2 * k).map(|i| cov[(i, i)].sqrt()).collect();

        let mut at = 2 * k;
        let mut delta = |on: bool, factor: &[f64]| -> Option<Vec<Vec<f64>>> {
            if !on {
                return None;
            }
            let jac = vech_jacobian(factor, k);
            let block = cov.view((at, at), (nv, nv)).into_owned();
            at += nv;
            let c = &jac * block * jac.transpose();
            Some(unvech_rows(&c.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect::<Vec<_>>(), k))
        };
        let se_phi = delta(with_phi, phi.as_deref().unwrap_or(&[]));
        let se_e = delta(with_e, &e);
        return Ok(StandardErrors {
            theta: theta_se,
            cov_theta: cov.view((0, 0), (2 * k, 2 * k)).into_owned(),
            sigma_phi: se_phi,
            sigma_e: se_e,
            blocks,
        });
    }
    Err(Error::SingularInformation)
}

fn step(x: f64) -> f64 {
    1e-4 * x.abs().max(1.0)
}

fn hessian(f: &impl Fn(&[f64]) -> Result<f64>, x: &[f64]) -> Result<Mat> {
    let p = x.len();
    let f0 = f(x)?;
    let mut h = Mat::zeros(p, p);
    let mut y = x.to_vec();
    for i in 0..p {
        let hi = step(x[i]);
        y[i] = x[i] + hi;
        let fp = f(&y)?;
        y[i] = x[i] - hi;
        let fm = f(&y)?;
        y[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = step(x[j]);
            let mut g = |si: f64, sj: f64| -> Result<f64> {
                y[i] = x[i] + si * hi;
                y[j] = x[j] + sj * hj;
                let v = f(&y);
                y[i] = x[i];
                y[j] = x[j];
                v
            };
            let v = (g(1.0, 1.0)? - g(1.0, -1.0)? - g(-1.0, 1.0)? + g(-1.0, -1.0)?) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Jacobian of `vech(Σ)` with respect to its log-Cholesky coordinates.
fn vech_jacobian(factor: &[f64], k: usize) -> Mat {
    let nv = factor.len();
    let mut jac = Mat::zeros(nv, nv);
    let mut y = factor.to_vec();
    for c in 0..nv {
        let h = step(factor[c]);
        y[c] = factor[c] + h;
        let up = vech(&from_log_cholesky(&y, k));
        y[c] = factor[c] - h;
        let down = vech(&from_log_cholesky(&y, k));
        y[c] = factor[c];
        for r in 0..nv {
            jac[(r, c)] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    jac
}

// ---- tests on fitted models -----------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    /// `ζ_k` for the intersection-union test, `[F*]` for the F tests.
    pub statistic: Vec<f64>,
    pub critical_value: f64,
    pub df: Vec<usize>,
    /// Per-endpoint decisions (intersection-union only).
    pub per_endpoint: Option<Vec<bool>>,
    pub reject: bool,
}

/// Rejects when every `ζ_k` exceeds `t_{1−α}(n − 2K)`.
pub fn wald_iu_decision(fit: &FitResult, alpha: f64) -> Result<TestDecision> {
    let (n, k) = (fit.n_clusters, fit.k);
    if n <= 2 * k {
        return Err(Error::InsufficientDf { n, needed: 2 * k });
    }
    let nu = n - 2 * k;
    let c = student_t_quantile(1.0 - alpha, nu as f64);
    let per: Vec<bool> = fit.wald.iter().map(|z| *z > c).collect();
    Ok(TestDecision {
        statistic: fit.wald.clone(),
        critical_value: c,
        df: vec![nu],
        reject: per.iter().all(|r| *r),
        per_endpoint: Some(per),
    })
}

/// `F* = n (Lβ̂)ᵀ (L Ω̂ Lᵀ)⁻¹ (Lβ̂) / S` with `Ω̂ = n cov(β̂)`, against
/// `F_{1−α}(S, n − S − K)`.
pub fn wald_glh_decision(fit: &FitResult, test: &TestSpec, alpha: f64) -> Result<TestDecision> {
    let (n, k) = (fit.n_clusters, fit.k);
    let l = test
        .contrast(k)?
        .ok_or_else(|| Error::Invalid("the intersection-union test has no contrast".into()))?;
    let s = l.nrows();
    if n <= s + k {
        return Err(Error::InsufficientDf { n, needed: s + k });
    }
    let lb = &l * Mat::from_column_slice(k, 1, &fit.beta_hat);
    let omega = &fit.cov_beta * n as f64;
    let middle = symmetrize(&(&l * omega * l.transpose()));
    let f_stat = n as f64 * (lb.transpose() * solve_spd(&middle, &lb)?)[(0, 0)] / s as f64;
    let nu = n - s - k;
    let crit = central_f_quantile(1.0 - alpha, s, nu);
    Ok(TestDecision {
        statistic: vec![f_stat],
        critical_value: crit,
        df: vec![s, nu],
        per_endpoint: None,
        reject: f_stat > crit,
    })
}

/// Decision for any test kind.
pub fn wald_decision(fit: &FitResult, test: &TestSpec, alpha: f64) -> Result<TestDecision> {
    if test.is_glh() {
        wald_glh_decision(fit, test, alpha)
    } else {
        wald_iu_decision(fit, alpha)
    }
}

#[cfg(test)]
mod tests;
