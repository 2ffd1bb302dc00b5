//! Trial generation from the random-intercept model and Monte Carlo
//! estimation of empirical power / type I error via EM fits.

pub mod dataset;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{em_fit, wald_decision, EmOptions};
use crate::error::{Error, Result};
use crate::matstat::linalg::{psd_factor, Mat};
use crate::matstat::rng::RngStream;
use crate::types::{DesignSpec, EffectModel, TestSpec, VarianceComponents};

pub use dataset::{Cluster, TrialDataset};

/// Smallest simulated cluster size when sizes vary.
pub const MIN_CLUSTER_SIZE: usize = 2;

/// `n` cluster sizes: all `round(m̄)` when `cv = 0`, otherwise rounded
/// Gamma draws with mean `m̄` and coefficient of variation `cv`, clamped
/// below at [`MIN_CLUSTER_SIZE`].
pub fn sample_cluster_sizes<R: Rng + ?Sized>(m_bar: f64, cv: f64, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if !(m_bar >= 1.0) || !(cv >= 0.0) || !cv.is_finite() {
        return Err(Error::Invalid(format!("need m_bar >= 1 and cv >= 0, got {m_bar}, {cv}")));
    }
    if cv == 0.0 {
        return Ok(vec![m_bar.round() as usize; n]);
    }
    let shape = 1.0 / (cv * cv);
    let gamma = Gamma::new(shape, m_bar / shape).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok((0..n)
        .map(|_| (gamma.sample(rng).round() as usize).max(MIN_CLUSTER_SIZE))
        .collect())
}

/// Random permutation with exactly `n z̄` treated clusters.
pub fn allocate_arms<R: Rng + ?Sized>(n: usize, z_bar: f64, rng: &mut R) -> Result<Vec<u8>> {
    let treated = n as f64 * z_bar;
    if !(z_bar > 0.0 && z_bar < 1.0) || (treated - treated.round()).abs() > 1e-9 {
        return Err(Error::InfeasibleAllocation { n, z_bar });
    }
    let treated = treated.round() as usize;
    let mut arms: Vec<u8> = (0..n).map(|i| u8::from(i < treated)).collect();
    arms.shuffle(rng);
    Ok(arms)
}

/// Draw outcomes `y_ij = γ + β z_i + φ_i + e_ij`.
pub fn simulate_trial<R: Rng + ?Sized>(
    effect: &EffectModel,
    vc: &VarianceComponents,
    sizes: &[usize],
    arms: &[u8],
    rng: &mut R,
) -> Result<TrialDataset> {
    let k = vc.k();
    if effect.beta.len() != k || sizes.len() != arms.len() {
        return Err(Error::Invalid("effect, sizes and arms dimensions disagree".into()));
    }
    let f_phi = psd_factor(vc.sigma_phi());
    let f_e = psd_factor(vc.sigma_e());
    let mut z = vec![0.0; k];
    let mut draw = |f: &Mat, rng: &mut R, out: &mut [f64]| {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for (a, o) in out.iter_mut().enumerate() {
            *o = (0..k).map(|b| f[(a, b)] * z[b]).sum();
        }
    };
    let mut clusters = Vec::with_capacity(sizes.len());
    let mut phi = vec![0.0; k];
    let mut e = vec![0.0; k];
    for (i, (&m, &arm)) in sizes.iter().zip(arms).enumerate() {
        draw(&f_phi, rng, &mut phi);
        let mut y = Vec::with_capacity(m * k);
        for _ in 0..m {
            draw(&f_e, rng, &mut e);
            for a in 0..k {
                y.push(effect.gamma[a] + effect.beta[a] * f64::from(arm) + phi[a] + e[a]);
            }
        }
        clusters.push(Cluster { id: i as u64 + 1, arm, y });
    }
    TrialDataset::new(k, clusters)
}

/// Everything needed to simulate and analyse one trial design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub components: VarianceComponents,
    pub effect: EffectModel,
    pub design: DesignSpec,
    pub test: TestSpec,
    #[serde(default)]
    pub em: EmOptions,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if self.effect.beta.len() != self.components.k() {
            return Err(Error::Invalid("effect and variance components disagree on K".into()));
        }
        self.test.contrast(self.components.k())?;
        Ok(())
    }

    /// Simulated dataset for replicate `index` of `base_seed`.
    pub fn generate(&self, base_seed: u64, index: u64) -> Result<TrialDataset> {
        let mut rng = RngStream::new(base_seed, index).rng();
        let sizes = sample_cluster_sizes(self.design.m_bar, self.design.cv, self.design.n, &mut rng)?;
        let arms = allocate_arms(self.design.n, self.design.z_bar, &mut rng)?;
        simulate_trial(&self.effect, &self.components, &sizes, &arms, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: u64,
    pub converged: bool,
    /// `None` when the replicate was excluded.
    pub reject: Option<bool>,
    pub statistic: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub iterations: usize,
    pub loglik: Option<f64>,
    pub max_loglik_decrease: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub test: String,
    pub beta: Vec<f64>,
    pub base_seed: u64,
    pub replicates: usize,
    /// Replicates whose fit converged and entered the proportion.
    pub analysed: usize,
    pub non_converged: usize,
    pub failed: usize,
    pub rejections: usize,
    pub empirical_power: f64,
    pub mc_se: f64,
    /// Largest per-iteration log-likelihood decrease over all fits.
    pub max_loglik_decrease: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub outcomes: Vec<ReplicateOutcome>,
}

impl SimulationReport {
    pub fn write_outcomes_csv<W: Write>(&self, w: W) -> Result<()> {
        let k = self.beta.len();
        let stats = self.outcomes.iter().map(|o| o.statistic.len()).max().unwrap_or(0);
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["replicate", "converged", "reject", "iterations", "loglik"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=stats).map(|j| format!("stat{j}")));
        header.extend((1..=k).map(|j| format!("beta_hat{j}")));
        header.push("error".into());
        out.write_record(&header)?;
        for o in &self.outcomes {
            let mut row = vec![
                o.index.to_string(),
                o.converged.to_string(),
                o.reject.map(|r| u8::from(r).to_string()).unwrap_or_default(),
                o.iterations.to_string(),
                o.loglik.map(|v| v.to_string()).unwrap_or_default(),
            ];
            row.extend((0..stats).map(|j| o.statistic.get(j).map(|v| v.to_string()).unwrap_or_default()));
            row.extend((0..k).map(|j| o.beta_hat.get(j).map(|v| v.to_string()).unwrap_or_default()));
            row.push(o.error.clone().unwrap_or_default());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn run_replicate(spec: &SimulationSpec, base_seed: u64, index: u64) -> ReplicateOutcome {
    let mut outcome = ReplicateOutcome {
        index,
        converged: false,
        reject: None,
        statistic: vec![],
        beta_hat: vec![],
        iterations: 0,
        loglik: None,
        max_loglik_decrease: 0.0,
        error: None,
    };
    let result = spec.generate(base_seed, index).and_then(|data| em_fit(&data, &spec.em, None));
    match result {
        Ok(fit) => {
            outcome.converged = fit.converged;
            outcome.iterations = fit.iterations;
            outcome.loglik = Some(fit.loglik);
            outcome.max_loglik_decrease = fit.max_loglik_decrease;
            outcome.beta_hat = fit.beta_hat.clone();
            match wald_decision(&fit, &spec.test, spec.design.alpha) {
                Ok(d) => {
                    outcome.statistic = d.statistic;
                    if fit.converged {
                        outcome.reject = Some(d.reject);
                    }
                }
                Err(e) => outcome.error = Some(e.to_string()),
            }
        }
        Err(e) => outcome.error = Some(e.to_string()),
    }
    outcome
}

/// Simulate `reps` trials (replicate `r` uses stream `(base_seed, r)`), fit
/// each by EM and apply the design's test. Replicates whose fit did not
/// converge or failed are excluded from the proportion and counted.
pub fn empirical_power(spec: &SimulationSpec, reps: usize, base_seed: u64) -> Result<SimulationReport> {
    spec.validate()?;
    if reps == 0 {
        return Err(Error::Invalid("reps must be at least 1".into()));
    }
    allocate_arms(spec.design.n, spec.design.z_bar, &mut RngStream::new(base_seed, 0).rng())?;
    let outcomes: Vec<ReplicateOutcome> = (0..reps as u64)
        .into_par_iter()
        .map(|r| run_replicate(spec, base_seed, r))
        .collect();
    let analysed = outcomes.iter().filter(|o| o.reject.is_some()).count();
    let failed = outcomes.iter().filter(|o| o.loglik.is_none()).count();
    let non_converged = outcomes.iter().filter(|o| o.loglik.is_some() && !o.converged).count();
    let rejections = outcomes.iter().filter(|o| o.reject == Some(true)).count();
    let p = if analysed > 0 { rejections as f64 / analysed as f64 } else { f64::NAN };
    Ok(SimulationReport {
        test: spec.test.name().to_string(),
        beta: spec.effect.beta.clone(),
        base_seed,
        replicates: reps,
        analysed,
        non_converged,
        failed,
        rejections,
        empirical_power: p,
        mc_se: (p * (1.0 - p) / analysed as f64).sqrt(),
        max_loglik_decrease: outcomes.iter().map(|o| o.max_loglik_decrease).fold(0.0, f64::max),
        outcomes,
    })
}

/// [`empirical_power`] with the first effect set to zero (a point of the
/// composite null for the intersection-union test).
pub fn type_i_error(spec: &SimulationSpec, reps: usize, base_seed: u64) -> Result<SimulationReport> {
    let mut null = spec.clone();
    if let Some(b) = null.effect.beta.first_mut() {
        *b = 0.0;
    }
    empirical_power(&null, reps, base_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_sizes_without_variation() {
        let mut rng = RngStream::new(1, 0).rng();
        assert_eq!(sample_cluster_sizes(60.0, 0.0, 4, &mut rng).unwrap(), vec![60; 4]);
    }

    #[test]
    fn gamma_size_moments() {
        let mut rng = RngStream::new(2, 0).rng();
        let s = sample_cluster_sizes(60.0, 0.8, 100_000, &mut rng).unwrap();
        let n = s.len() as f64;
        let mean = s.iter().sum::<usize>() as f64 / n;
        let var = s.iter().map(|&m| (m as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // SE of the mean is 0.8·60/√n
        assert!((mean - 60.0).abs() < 4.0 * 48.0 / n.sqrt(), "{mean}");
        assert!((var.sqrt() / mean - 0.8).abs() < 0.02);
        assert!(*s.iter().min().unwrap() >= MIN_CLUSTER_SIZE);
    }

    #[test]
    fn balanced_allocation() {
        let a = allocate_arms(16, 0.5, &mut RngStream::new(3, 0).rng()).unwrap();
        let b = allocate_arms(16, 0.5, &mut RngStream::new(4, 0).rng()).unwrap();
        assert_eq!(a.iter().filter(|&&z| z == 1).count(), 8);
        assert_eq!(b.iter().filter(|&&z| z == 1).count(), 8);
        assert_ne!(a, b);
        assert!(matches!(
            allocate_arms(15, 0.5, &mut RngStream::new(3, 0).rng()),
            Err(Error::InfeasibleAllocation { .. })
        ));
    }
}
