//! Brute-force oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use crt_power::matstat::linalg::Mat;
use crt_power::matstat::rng::RngStream;
use crt_power::power::{correction_factor, correction_matrix, omega_equal};
use crt_power::types::{icc_to_components, IccSet, VarianceComponents};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

pub fn random_pd<R: Rng>(k: usize, rng: &mut R, ridge: f64) -> Mat {
    let a = Mat::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + Mat::identity(k, k) * ridge
}

pub fn random_correlation<R: Rng>(k: usize, rng: &mut R, ridge: f64) -> Mat {
    let a = random_pd(k, rng, ridge);
    let d = a.diagonal().map(|v| 1.0 / v.sqrt());
    Mat::from_diagonal(&d) * &a * Mat::from_diagonal(&d)
}

pub fn random_components<R: Rng>(rng: &mut R) -> (VarianceComponents, usize) {
    let k = rng.random_range(1..=4);
    let phi = random_pd(k, rng, 0.01) * rng.random_range(0.01..0.3);
    let e = random_pd(k, rng, 0.1);
    (VarianceComponents::new(phi, e).unwrap(), k)
}

/// `I_m ⊗ Σe + J_m ⊗ Σφ`, subjects outermost.
pub fn dense_v(vc: &VarianceComponents, m: usize) -> Mat {
    let k = vc.k();
    Mat::from_fn(m * k, m * k, |r, s| {
        let (a, b) = (r % k, s % k);
        vc.sigma_phi()[(a, b)] + if r / k == s / k { vc.sigma_e()[(a, b)] } else { 0.0 }
    })
}

/// Worst relative gap between the closed-form effect covariance and
/// `n (Σ Wᵀ V⁻¹ W)⁻¹` built from dense matrices.
pub fn omega_vs_dense_gls(seed: u64, cases: usize) -> f64 {
    let mut rng = RngStream::new(seed, 0).rng();
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (vc, k) = random_components(&mut rng);
        let m = rng.random_range(1..=50);
        let n = rng.random_range(2..=6);
        let treated = rng.random_range(1..n);
        let vinv = dense_v(&vc, m).try_inverse().unwrap();
        let mut info = Mat::zeros(2 * k, 2 * k);
        for i in 0..n {
            let z = if i < treated { 1.0 } else { 0.0 };
            let w = Mat::from_fn(m * k, 2 * k, |r, c| {
                let a = r % k;
                if c == a {
                    1.0
                } else if c == k + a {
                    z
                } else {
                    0.0
                }
            });
            info += w.transpose() * &vinv * &w;
        }
        let cov = info.try_inverse().unwrap();
        let dense = cov.view((k, k), (k, k)) * n as f64;
        let z_bar = treated as f64 / n as f64;
        let closed = omega_equal(&vc, m as f64, z_bar * (1.0 - z_bar)).unwrap();
        let scale = closed.omega().abs().max();
        worst = worst.max((dense - closed.omega()).abs().max() / scale);
    }
    worst
}

/// Worst relative gap between the block form of `V⁻¹` and dense inversion.
pub fn structured_inverse_vs_dense(seed: u64, cases: usize) -> f64 {
    let mut rng = RngStream::new(seed, 0).rng();
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (vc, k) = random_components(&mut rng);
        let m = rng.random_range(1..=50);
        let dense = dense_v(&vc, m).try_inverse().unwrap();
        let e_inv = vc.sigma_e().clone().try_inverse().unwrap();
        let a_inv = (vc.sigma_e() + vc.sigma_phi() * m as f64).try_inverse().unwrap();
        let between = (a_inv - &e_inv) / m as f64;
        let structured = Mat::from_fn(m * k, m * k, |r, s| {
            let (a, b) = (r % k, s % k);
            between[(a, b)] + if r / k == s / k { e_inv[(a, b)] } else { 0.0 }
        });
        worst = worst.max((structured - &dense).abs().max() / dense.abs().max());
    }
    worst
}

/// Worst relative gap between the single-endpoint correction factor and the
/// diagonal of the correction matrix when endpoints are uncorrelated.
pub fn scalar_correction_vs_diagonal(seed: u64, cases: usize) -> f64 {
    let mut rng = RngStream::new(seed, 0).rng();
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = rng.random_range(1..=4);
        let rho0: Vec<f64> = (0..k).map(|_| rng.random_range(0.001..0.3)).collect();
        let sigma_y2: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..5.0)).collect();
        let icc = IccSet::new(rho0.clone(), Mat::zeros(k, k), Mat::zeros(k, k), sigma_y2).unwrap();
        let m_bar = rng.random_range(2.0..100.0);
        let cv = rng.random_range(0.0..0.9);
        let theta = correction_matrix(&icc_to_components(&icc).unwrap(), m_bar, cv).unwrap();
        for j in 0..k {
            let scalar = correction_factor(rho0[j], m_bar, cv).unwrap();
            worst = worst.max((theta[(j, j)] - scalar).abs() / scalar);
        }
    }
    worst
}

/// Plain Monte Carlo estimate of `P((Z + η)/S > c ∀k)` and its standard
/// error; `df = ∞` drops the scale variable.
pub fn mc_rectangle(lower: &[f64], eta: &[f64], shape: &Mat, df: f64, draws: usize, seed: u64) -> (f64, f64) {
    let k = lower.len();
    let l = shape.clone().cholesky().unwrap().l();
    let chi = df.is_finite().then(|| ChiSquared::new(df).unwrap());
    let mut rng = RngStream::new(seed, 0).rng();
    let mut z = vec![0.0; k];
    let mut hits = 0usize;
    for _ in 0..draws {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let s = chi.map_or(1.0, |c| (c.sample(&mut rng) / df).sqrt());
        let inside = (0..k).all(|a| {
            let x: f64 = (0..=a).map(|b| l[(a, b)] * z[b]).sum();
            (x + eta[a]) / s > lower[a]
        });
        hits += usize::from(inside);
    }
    let p = hits as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}

/// Plain Monte Carlo estimate of the noncentral F CDF at `x`.
pub fn mc_noncentral_f_cdf(x: f64, d1: usize, d2: usize, tau: f64, draws: usize, seed: u64) -> (f64, f64) {
    let chi_rest = (d1 > 1).then(|| ChiSquared::new((d1 - 1) as f64).unwrap());
    let chi_den = ChiSquared::new(d2 as f64).unwrap();
    let mut rng = RngStream::new(seed, 0).rng();
    let mut below = 0usize;
    for _ in 0..draws {
        let z: f64 = StandardNormal.sample(&mut rng);
        let num = (z + tau.sqrt()).powi(2) + chi_rest.map_or(0.0, |c| c.sample(&mut rng));
        let f = (num / d1 as f64) / (chi_den.sample(&mut rng) / d2 as f64);
        below += usize::from(f <= x);
    }
    let p = below as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}
