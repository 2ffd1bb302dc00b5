#![allow(clippy::needless_range_loop)]

use crt_power::em::{em_fit, gls_fit, EmOptions};
use crt_power::matstat::linalg::Mat;
use crt_power::matstat::rng::RngStream;
use crt_power::power::omega_unequal;
use crt_power::sim::{
    allocate_arms, empirical_power, sample_cluster_sizes, simulate_trial, SimulationSpec, TrialDataset,
};
use crt_power::types::{DesignSpec, EffectModel, TestSpec, VarianceComponents};

fn vc2() -> VarianceComponents {
    VarianceComponents::new(
        Mat::from_row_slice(2, 2, &[0.1, 0.04, 0.04, 0.2]),
        Mat::from_row_slice(2, 2, &[0.9, 0.3, 0.3, 1.8]),
    )
    .unwrap()
}

fn cluster_means(d: &TrialDataset) -> Vec<Vec<f64>> {
    let k = d.k();
    d.clusters()
        .iter()
        .map(|c| {
            let m = c.size(k);
            (0..k).map(|a| (0..m).map(|j| c.subject(k, j)[a]).sum::<f64>() / m as f64).collect()
        })
        .collect()
}

#[test]
fn residual_covariance_without_clustering() {
    let vc = VarianceComponents::new(Mat::zeros(2, 2), Mat::identity(2, 2)).unwrap();
    let effect = EffectModel::from_beta(vec![0.0, 0.0]).unwrap();
    let mut rng = RngStream::new(1, 0).rng();
    let d = simulate_trial(&effect, &vc, &[50_000, 50_000], &[0, 1], &mut rng).unwrap();
    let n = d.n_subjects() as f64;
    let mut s = [[0.0; 2]; 2];
    for c in d.clusters() {
        for j in 0..c.size(2) {
            let y = c.subject(2, j);
            for a in 0..2 {
                for b in 0..2 {
                    s[a][b] += y[a] * y[b] / n;
                }
            }
        }
    }
    // SE of a sample variance is √(2/n), of a covariance √(1/n)
    assert!((s[0][0] - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
    assert!((s[1][1] - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
    assert!(s[0][1].abs() < 4.0 / n.sqrt());
}

#[test]
fn cluster_means_and_arm_difference() {
    let vc = vc2();
    let m = 10;
    let n = 4000;
    let mut rng = RngStream::new(2, 0).rng();
    let arms = allocate_arms(n, 0.5, &mut rng).unwrap();
    let effect = EffectModel::new(vec![1.0, -1.0], vec![0.3, 0.7]).unwrap();
    let d = simulate_trial(&effect, &vc, &vec![m; n], &arms, &mut rng).unwrap();
    let means = cluster_means(&d);
    let target = vc.sigma_phi() + vc.sigma_e() / m as f64;
    for a in 0..2 {
        let mut arm_sum = [0.0; 2];
        for (mu, &z) in means.iter().zip(&arms) {
            arm_sum[usize::from(z)] += mu[a];
        }
        let diff = (arm_sum[1] - arm_sum[0]) / (n as f64 / 2.0);
        let se = (4.0 * target[(a, a)] / n as f64).sqrt();
        assert!((diff - effect.beta[a]).abs() < 4.0 * se);
    }
    // covariance of cluster means around their arm means
    let mut arm_mean = vec![vec![0.0; 2]; 2];
    for (mu, &z) in means.iter().zip(&arms) {
        for a in 0..2 {
            arm_mean[usize::from(z)][a] += mu[a] / (n as f64 / 2.0);
        }
    }
    for a in 0..2 {
        for b in 0..2 {
            let cov: f64 = means
                .iter()
                .zip(&arms)
                .map(|(mu, &z)| (mu[a] - arm_mean[usize::from(z)][a]) * (mu[b] - arm_mean[usize::from(z)][b]))
                .sum::<f64>()
                / (n as f64 - 2.0);
            let se = ((target[(a, a)] * target[(b, b)] + target[(a, b)].powi(2)) / n as f64).sqrt();
            assert!((cov - target[(a, b)]).abs() < 4.0 * se, "{a}{b}: {cov} vs {}", target[(a, b)]);
        }
    }
}

#[test]
fn unequal_size_covariance_matches_simulation() {
    let vc = vc2();
    let (n, m_bar, cv) = (100usize, 30.0, 0.8);
    let reps = 5000;
    let effect = EffectModel::from_beta(vec![0.3, 0.7]).unwrap();
    let betas: Vec<Vec<f64>> = (0..reps as u64)
        .map(|r| {
            let mut rng = RngStream::new(77, r).rng();
            let sizes = sample_cluster_sizes(m_bar, cv, n, &mut rng).unwrap();
            let arms = allocate_arms(n, 0.5, &mut rng).unwrap();
            let d = simulate_trial(&effect, &vc, &sizes, &arms, &mut rng).unwrap();
            gls_fit(&d, vc.sigma_phi(), vc.sigma_e()).unwrap()[2..].to_vec()
        })
        .collect();
    let omega = omega_unequal(&vc, m_bar, cv, 0.25).unwrap();
    for a in 0..2 {
        let mean = betas.iter().map(|b| b[a]).sum::<f64>() / reps as f64;
        let var = betas.iter().map(|b| (b[a] - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
        let predicted = omega.omega()[(a, a)] / n as f64;
        let se = var * (2.0 / (reps as f64 - 1.0)).sqrt();
        assert!((var - predicted).abs() < 2.0 * se, "endpoint {a}: {var} vs {predicted} (se {se})");
    }
}

#[test]
fn report_does_not_depend_on_thread_count() {
    let spec = SimulationSpec {
        components: vc2(),
        effect: EffectModel::from_beta(vec![0.3, 0.7]).unwrap(),
        design: DesignSpec::new(12, 15.0, 0.5, 0.5, 0.05).unwrap(),
        test: TestSpec::Omnibus,
        em: EmOptions::default(),
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| empirical_power(&spec, 40, 9).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one.replicates, 40);
    assert!(one.rejections <= one.analysed);
    let single = empirical_power(&spec, 1, 9).unwrap();
    assert!(single.empirical_power == 0.0 || single.empirical_power == 1.0);
}

#[test]
fn standard_errors_shrink_with_clusters() {
    let vc = vc2();
    let effect = EffectModel::from_beta(vec![0.3, 0.7]).unwrap();
    let mut rng = RngStream::new(5, 0).rng();
    let arms = allocate_arms(320, 0.5, &mut rng).unwrap();
    let full = simulate_trial(&effect, &vc, &vec![10; 320], &arms, &mut rng).unwrap();
    let mut prev: Option<Vec<f64>> = None;
    for n in [20usize, 80, 320] {
        let sub = TrialDataset::new(2, full.clusters()[..n].to_vec()).unwrap();
        let fit = em_fit(&sub, &EmOptions::default(), None).unwrap();
        if let Some(p) = prev {
            for a in 0..2 {
                let ratio = p[a] / fit.se_beta[a];
                assert!((ratio - 2.0).abs() < 0.5, "n={n}: ratio {ratio}");
            }
        }
        prev = Some(fit.se_beta.clone());
    }
}
