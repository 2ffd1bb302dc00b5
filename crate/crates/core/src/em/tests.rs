use super::*;
use crate::matstat::linalg::invert_spd;
use crate::matstat::rng::RngStream;
use crate::sim::{allocate_arms, sample_cluster_sizes, simulate_trial, Cluster};
use crate::types::{EffectModel, VarianceComponents};
use approx::assert_abs_diff_eq;

fn simulated(vc: &VarianceComponents, beta: &[f64], n: usize, m_bar: f64, cv: f64, seed: u64) -> TrialDataset {
    let mut rng = RngStream::new(seed, 0).rng();
    let sizes = sample_cluster_sizes(m_bar, cv, n, &mut rng).unwrap();
    let arms = allocate_arms(n, 0.5, &mut rng).unwrap();
    let effect = EffectModel::new(vec![1.0; beta.len()], beta.to_vec()).unwrap();
    simulate_trial(&effect, vc, &sizes, &arms, &mut rng).unwrap()
}

fn kdpp_like() -> VarianceComponents {
    VarianceComponents::new(
        Mat::from_row_slice(2, 2, &[0.1, 0.03, 0.03, 0.2]),
        Mat::from_row_slice(2, 2, &[0.9, 0.3, 0.3, 1.8]),
    )
    .unwrap()
}

/// Dense evaluation: stack each cluster, build V = I⊗Σe + J⊗Σφ explicitly.
fn dense_loglik(p: &Params, data: &TrialDataset) -> f64 {
    let k = data.k();
    let n = data.n_clusters() as f64;
    let z_bar = data.arms().iter().map(|&a| f64::from(a)).sum::<f64>() / n;
    let mut total = 0.0;
    for c in data.clusters() {
        let m = c.size(k);
        let dim = m * k;
        let v = Mat::from_fn(dim, dim, |r, s| {
            let (j1, a) = (r / k, r % k);
            let (j2, b) = (s / k, s % k);
            p.sigma_phi[(a, b)] + if j1 == j2 { p.sigma_e[(a, b)] } else { 0.0 }
        });
        let d = f64::from(c.arm) - z_bar;
        let r = Mat::from_fn(dim, 1, |i, _| c.y[i] - p.theta[i % k] - d * p.theta[k + i % k]);
        let vinv = v.clone().try_inverse().unwrap();
        let logdet = v.determinant().ln();
        total += logdet + (r.transpose() * vinv * &r)[(0, 0)] + dim as f64 * LN_2PI;
    }
    -0.5 * total
}

#[test]
fn one_observation_is_normal_density() {
    let data = TrialDataset::new(
        1,
        vec![Cluster { id: 1, arm: 0, y: vec![0.7] }, Cluster { id: 2, arm: 1, y: vec![-0.2] }],
    )
    .unwrap();
    let p = Params {
        theta: vec![0.1, 0.4],
        sigma_phi: Mat::from_element(1, 1, 0.3),
        sigma_e: Mat::from_element(1, 1, 1.2),
    };
    let norm = |x: f64, mu: f64, var: f64| -0.5 * ((x - mu).powi(2) / var + var.ln() + LN_2PI);
    let expect = norm(0.7, 0.1 - 0.5 * 0.4, 1.5) + norm(-0.2, 0.1 + 0.5 * 0.4, 1.5);
    assert_abs_diff_eq!(loglik(&p, &data).unwrap(), expect, epsilon = 1e-12);
}

#[test]
fn structured_loglik_matches_dense() {
    let data = TrialDataset::new(
        2,
        vec![
            Cluster { id: 1, arm: 0, y: vec![0.3, 1.1, -0.4, 0.2, 0.9, 1.7] },
            Cluster { id: 2, arm: 1, y: vec![1.5, 0.8, 2.2, 1.9] },
            Cluster { id: 3, arm: 1, y: vec![0.1, -0.6] },
        ],
    )
    .unwrap();
    let p = Params {
        theta: vec![0.5, 0.6, 0.9, 0.4],
        sigma_phi: Mat::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.3]),
        sigma_e: Mat::from_row_slice(2, 2, &[1.0, 0.35, 0.35, 0.8]),
    };
    assert_abs_diff_eq!(loglik(&p, &data).unwrap(), dense_loglik(&p, &data), epsilon = 1e-10);
}

#[test]
fn subject_order_does_not_matter() {
    let data = simulated(&kdpp_like(), &[0.2, 0.4], 6, 5.0, 0.0, 9);
    let mut shuffled = data.clusters().to_vec();
    for c in &mut shuffled {
        let m = c.size(2);
        let rows: Vec<Vec<f64>> = (0..m).rev().map(|j| c.subject(2, j).to_vec()).collect();
        c.y = rows.concat();
    }
    let other = TrialDataset::new(2, shuffled).unwrap();
    let p = em_fit(&data, &EmOptions::default(), None).unwrap().params();
    assert_abs_diff_eq!(loglik(&p, &data).unwrap(), loglik(&p, &other).unwrap(), epsilon = 1e-9);
}

#[test]
fn loglik_never_decreases() {
    for (seed, cv) in [(1, 0.0), (2, 0.8), (3, 0.4)] {
        let data = simulated(&kdpp_like(), &[0.3, 0.0], 16, 20.0, cv, seed);
        let trace = em_trace(&data, &EmOptions::default()).unwrap();
        assert!(trace.len() > 2);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn large_sample_recovery() {
    let vc = VarianceComponents::new(Mat::identity(2, 2) * 0.1, Mat::identity(2, 2) * 0.9).unwrap();
    let data = simulated(&vc, &[0.0, 0.0], 500, 20.0, 0.0, 11);
    let fit = em_fit(&data, &EmOptions::default(), None).unwrap();
    assert!(fit.converged);
    for k in 0..2 {
        // Var(β̂_k) = 4 (0.9 + 20·0.1) / (20·500)
        let se = (4.0 * 2.9 / 10_000.0_f64).sqrt();
        assert!(fit.beta_hat[k].abs() < 4.0 * se);
    }
    assert!((&fit.sigma_phi_hat - vc.sigma_phi()).abs().max() < 0.02);
    assert!((&fit.sigma_e_hat - vc.sigma_e()).abs().max() < 0.02);
}

#[test]
fn equal_sizes_give_difference_of_means() {
    let data = simulated(&kdpp_like(), &[0.3, 0.7], 10, 8.0, 0.0, 5);
    let fit = em_fit(&data, &EmOptions::default(), None).unwrap();
    for k in 0..2 {
        let mut sums = [0.0; 2];
        let mut counts = [0.0; 2];
        for c in data.clusters() {
            let m = c.size(2);
            let mean = (0..m).map(|j| c.subject(2, j)[k]).sum::<f64>() / m as f64;
            sums[usize::from(c.arm)] += mean;
            counts[usize::from(c.arm)] += 1.0;
        }
        assert_abs_diff_eq!(fit.beta_hat[k], sums[1] / counts[1] - sums[0] / counts[0], epsilon = 1e-8);
    }
}

#[test]
fn location_and_scale_equivariance() {
    // well inside the parameter space, so EM converges linearly
    let vc = VarianceComponents::new(
        Mat::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.3]),
        Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]),
    )
    .unwrap();
    let data = simulated(&vc, &[0.3, 0.7], 30, 10.0, 0.5, 8);
    let moved: Vec<Cluster> = data
        .clusters()
        .iter()
        .map(|c| Cluster {
            y: c.y.chunks(2).flat_map(|s| [s[0] + 5.0, s[1] * 3.0]).collect(),
            ..c.clone()
        })
        .collect();
    let fit = em_fit(&TrialDataset::new(2, moved).unwrap(), &EmOptions { tol: 1e-12, ..Default::default() }, None).unwrap();
    let tight = em_fit(&data, &EmOptions { tol: 1e-12, ..Default::default() }, None).unwrap();
    assert!(tight.converged && fit.converged);
    assert_abs_diff_eq!(fit.theta_hat[0], tight.theta_hat[0] + 5.0, epsilon = 1e-6);
    assert_abs_diff_eq!(fit.beta_hat[0], tight.beta_hat[0], epsilon = 1e-6);
    assert_abs_diff_eq!(fit.beta_hat[1], 3.0 * tight.beta_hat[1], epsilon = 1e-6);
    let scale = [1.0, 3.0];
    for a in 0..2 {
        for b in 0..2 {
            let s = scale[a] * scale[b];
            assert_abs_diff_eq!(fit.sigma_e_hat[(a, b)], s * tight.sigma_e_hat[(a, b)], epsilon = 1e-5);
            assert_abs_diff_eq!(fit.sigma_phi_hat[(a, b)], s * tight.sigma_phi_hat[(a, b)], epsilon = 1e-5);
        }
    }
}

#[test]
fn standard_errors_match_plug_in_formula() {
    let data = simulated(&kdpp_like(), &[0.3, 0.7], 40, 15.0, 0.0, 21);
    let fit = em_fit(&data, &EmOptions::default(), None).unwrap();
    let omega = (&fit.sigma_e_hat + &fit.sigma_phi_hat * 15.0) / (15.0 * 0.25);
    for k in 0..2 {
        let plug = (omega[(k, k)] / 40.0).sqrt();
        assert!((fit.se_beta[k] / plug - 1.0).abs() < 0.02, "{} vs {plug}", fit.se_beta[k]);
    }
    let c = &fit.standard_errors.cov_theta;
    assert!((c - c.transpose()).abs().max() <= 1e-6 * c.abs().max());
    assert!(fit.standard_errors.sigma_e.is_some());
}

#[test]
fn hessian_of_quadratic() {
    let f = |x: &[f64]| Ok(-(2.0 * x[0] * x[0] + x[0] * x[1] + 3.0 * x[1] * x[1]));
    let h = hessian(&f, &[0.3, -1.2]).unwrap();
    let expect = Mat::from_row_slice(2, 2, &[-4.0, -1.0, -1.0, -6.0]);
    assert!((h - expect).abs().max() < 1e-6);
}

#[test]
fn log_cholesky_round_trip() {
    let a = Mat::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.0, 0.2, -0.1, 0.2, 0.5]);
    let back = from_log_cholesky(&log_cholesky(&a).unwrap(), 3);
    assert!((back - &a).abs().max() < 1e-14);
    let _ = invert_spd(&a).unwrap();
}

#[test]
fn single_endpoint_f_is_squared_wald() {
    let vc = VarianceComponents::new(Mat::from_element(1, 1, 0.05), Mat::from_element(1, 1, 0.95)).unwrap();
    let data = simulated(&vc, &[0.4], 12, 10.0, 0.0, 4);
    let fit = em_fit(&data, &EmOptions::default(), None).unwrap();
    let f = wald_glh_decision(&fit, &TestSpec::Omnibus, 0.05).unwrap();
    assert_abs_diff_eq!(f.statistic[0], fit.wald[0].powi(2), epsilon = 1e-9);
    assert_eq!(f.df, vec![1, 10]);
}

#[test]
fn zero_effect_never_rejects() {
    let mut fit = em_fit(&simulated(&kdpp_like(), &[0.0, 0.0], 12, 10.0, 0.0, 2), &EmOptions::default(), None).unwrap();
    fit.beta_hat = vec![0.0, 0.0];
    fit.wald = vec![0.0, 0.0];
    let d = wald_glh_decision(&fit, &TestSpec::Omnibus, 0.05).unwrap();
    assert_eq!(d.statistic[0], 0.0);
    assert!(!d.reject);
    assert!(!wald_iu_decision(&fit, 0.05).unwrap().reject);
}

#[test]
fn decisions_are_reproducible() {
    let a = em_fit(&simulated(&kdpp_like(), &[0.3, 0.7], 16, 10.0, 0.0, 6), &EmOptions::default(), None).unwrap();
    let b = em_fit(&simulated(&kdpp_like(), &[0.3, 0.7], 16, 10.0, 0.0, 6), &EmOptions::default(), None).unwrap();
    assert_eq!(a, b);
    assert_eq!(wald_iu_decision(&a, 0.05).unwrap(), wald_iu_decision(&b, 0.05).unwrap());
}

#[test]
fn missing_arm_is_degenerate() {
    let data = TrialDataset::new(1, vec![Cluster { id: 1, arm: 0, y: vec![1.0, 2.0] }, Cluster { id: 2, arm: 0, y: vec![0.0] }]).unwrap();
    assert!(matches!(em_fit(&data, &EmOptions::default(), None), Err(Error::DegenerateData(_))));
}

