//! Scenario files: one JSON document describing the model, effects, design,
//! test, and optional solver / simulation / numerics settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::EmOptions;
use crate::error::{Error, Result};
use crate::matstat::linalg::{from_rows, Mat};
use crate::matstat::mvt::{MvtKind, QmcOptions};
use crate::power::{design_power, solve_cluster_size, solve_clusters, IuOptions, PowerResult, Solution, SolveOptions};
use crate::sim::SimulationSpec;
use crate::types::{components_to_icc, icc_to_components, DesignSpec, EffectModel, IccSet, TestSpec, VarianceComponents};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ScalarOrVec {
    Scalar(f64),
    Vec(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ScalarOrMatrix {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRaw {
    k: Option<usize>,
    rho0: Option<ScalarOrVec>,
    rho1: Option<ScalarOrMatrix>,
    rho2: Option<ScalarOrMatrix>,
    sigma_y2: Option<Vec<f64>>,
    sigma_phi: Option<Vec<Vec<f64>>>,
    sigma_e: Option<Vec<Vec<f64>>>,
}

impl ModelRaw {
    fn resolve(self) -> Result<(IccSet, VarianceComponents)> {
        let icc_given = self.rho0.is_some() || self.rho1.is_some() || self.rho2.is_some() || self.sigma_y2.is_some();
        let vc_given = self.sigma_phi.is_some() || self.sigma_e.is_some();
        match (icc_given, vc_given) {
            (true, true) => Err(Error::Invalid(
                "model must use either the ICC or the variance-component parameterization, not both".into(),
            )),
            (false, false) => Err(Error::Invalid("model block is empty".into())),
            (false, true) => {
                let (Some(phi), Some(e)) = (self.sigma_phi, self.sigma_e) else {
                    return Err(Error::Invalid("model needs both sigma_phi and sigma_e".into()));
                };
                let vc = VarianceComponents::new(from_rows(&phi)?, from_rows(&e)?)?;
                if self.k.is_some_and(|k| k != vc.k()) {
                    return Err(Error::Invalid("k disagrees with the matrix size".into()));
                }
                Ok((components_to_icc(&vc), vc))
            }
            (true, false) => {
                let missing = |name: &str| Error::Invalid(format!("ICC model is missing {name}"));
                let sigma_y2 = self.sigma_y2.ok_or_else(|| missing("sigma_y2"))?;
                let k = sigma_y2.len();
                if self.k.is_some_and(|kk| kk != k) {
                    return Err(Error::Invalid("k disagrees with the length of sigma_y2".into()));
                }
                let rho0 = match self.rho0.ok_or_else(|| missing("rho0"))? {
                    ScalarOrVec::Scalar(v) => vec![v; k],
                    ScalarOrVec::Vec(v) => v,
                };
                let matrix = |m: Option<ScalarOrMatrix>, name: &str| -> Result<Mat> {
                    match m {
                        None if k == 1 => Ok(Mat::zeros(1, 1)),
                        None => Err(missing(name)),
                        Some(ScalarOrMatrix::Scalar(v)) => Ok(Mat::from_element(k, k, v)),
                        Some(ScalarOrMatrix::Matrix(rows)) => from_rows(&rows),
                    }
                };
                let icc = IccSet::new(rho0, matrix(self.rho1, "rho1")?, matrix(self.rho2, "rho2")?, sigma_y2)?;
                let vc = icc_to_components(&icc)?;
                Ok((icc, vc))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EffectRaw {
    beta: Option<Vec<f64>>,
    /// Effects in marginal standard-deviation units.
    standardized_beta: Option<ScalarOrVec>,
    gamma: Option<Vec<f64>>,
}

/// Design block; `n` or `m_bar` may be left out when that quantity is
/// solved for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignBlock {
    pub n: Option<usize>,
    pub m_bar: Option<f64>,
    #[serde(default)]
    pub cv: f64,
    #[serde(default = "half")]
    pub z_bar: f64,
    #[serde(default = "five_percent")]
    pub alpha: f64,
}

fn half() -> f64 {
    0.5
}

fn five_percent() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolveFor {
    #[default]
    N,
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default = "eighty_percent")]
    pub target_power: f64,
    #[serde(default)]
    pub solve_for: SolveFor,
    #[serde(default = "two")]
    pub step: usize,
    #[serde(default = "ten_thousand")]
    pub ceiling: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            target_power: 0.8,
            solve_for: SolveFor::N,
            step: 2,
            ceiling: 10_000,
        }
    }
}

fn eighty_percent() -> f64 {
    0.8
}

fn two() -> usize {
    2
}

fn ten_thousand() -> usize {
    10_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    #[serde(default = "thousand")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub em: EmOptions,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        Self {
            reps: 1000,
            seed: 0,
            em: EmOptions::default(),
        }
    }
}

fn thousand() -> usize {
    1000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NumericsBlock {
    #[serde(default)]
    pub mvt: MvtKind,
    #[serde(default)]
    pub qmc: Option<QmcOptions>,
}

impl NumericsBlock {
    pub fn iu_options(&self) -> IuOptions {
        IuOptions {
            kind: self.mvt,
            qmc: self.qmc.unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioRaw {
    model: ModelRaw,
    effect: EffectRaw,
    design: DesignBlock,
    #[serde(default = "default_test")]
    test: TestSpec,
    #[serde(default)]
    solver: SolverBlock,
    #[serde(default)]
    simulation: SimulationBlock,
    #[serde(default)]
    numerics: NumericsBlock,
}

fn default_test() -> TestSpec {
    TestSpec::Omnibus
}

/// A fully resolved scenario (both parameterizations are filled in).
///
/// Serializes back to the input schema, with the model in
/// variance-component form so that the round trip is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub icc: IccSet,
    pub components: VarianceComponents,
    pub effect: EffectModel,
    pub design: DesignBlock,
    pub test: TestSpec,
    pub solver: SolverBlock,
    pub simulation: SimulationBlock,
    pub numerics: NumericsBlock,
}

#[derive(Serialize)]
struct ScenarioOut<'a> {
    model: &'a VarianceComponents,
    effect: &'a EffectModel,
    design: &'a DesignBlock,
    test: &'a TestSpec,
    solver: &'a SolverBlock,
    simulation: &'a SimulationBlock,
    numerics: &'a NumericsBlock,
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ScenarioOut {
            model: &self.components,
            effect: &self.effect,
            design: &self.design,
            test: &self.test,
            solver: &self.solver,
            simulation: &self.simulation,
            numerics: &self.numerics,
        }
        .serialize(s)
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ScenarioRaw = serde_json::from_str(text)?;
        let (icc, components) = raw.model.resolve()?;
        let k = components.k();
        let beta = match (raw.effect.beta, raw.effect.standardized_beta) {
            (Some(b), None) => b,
            (None, Some(s)) => {
                let s = match s {
                    ScalarOrVec::Scalar(v) => vec![v; k],
                    ScalarOrVec::Vec(v) => v,
                };
                if s.len() != k {
                    return Err(Error::Invalid(format!("standardized_beta needs {k} entries")));
                }
                s.iter().zip(icc.sigma_y()).map(|(s, sd)| s * sd).collect()
            }
            _ => return Err(Error::Invalid("effect needs exactly one of beta or standardized_beta".into())),
        };
        if beta.len() != k {
            return Err(Error::Invalid(format!("beta has {} entries, model has {k} endpoints", beta.len())));
        }
        let effect = EffectModel::new(raw.effect.gamma.unwrap_or_else(|| vec![0.0; k]), beta)?;
        raw.test.contrast(k)?;
        raw.test.delta(&effect.beta)?;
        let s = Self {
            icc,
            components,
            effect,
            design: raw.design,
            test: raw.test,
            solver: raw.solver,
            simulation: raw.simulation,
            numerics: raw.numerics,
        };
        s.design_template().validate_without_n()?;
        Ok(s)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn design_template(&self) -> DesignSpec {
        DesignSpec {
            n: self.design.n.unwrap_or(0),
            m_bar: self.design.m_bar.unwrap_or(1.0),
            cv: self.design.cv,
            z_bar: self.design.z_bar,
            alpha: self.design.alpha,
        }
    }

    /// The complete design; fails when `n` or `m_bar` is missing.
    pub fn design(&self) -> Result<DesignSpec> {
        if self.design.n.is_none() || self.design.m_bar.is_none() {
            return Err(Error::Invalid("design needs both n and m_bar".into()));
        }
        let d = self.design_template();
        d.validate()?;
        Ok(d)
    }

    pub fn with_test(mut self, test: TestSpec) -> Result<Self> {
        test.contrast(self.components.k())?;
        test.delta(&self.effect.beta)?;
        self.test = test;
        Ok(self)
    }

    pub fn power(&self) -> Result<PowerResult> {
        design_power(&self.components, &self.design()?, &self.effect.beta, &self.test, &self.numerics.iu_options())
    }

    pub fn solve(&self, what: SolveFor) -> Result<Solution> {
        let iu = self.numerics.iu_options();
        let target = self.solver.target_power;
        match what {
            SolveFor::N => {
                if self.design.m_bar.is_none() {
                    return Err(Error::Invalid("solving for n needs m_bar".into()));
                }
                let opts = SolveOptions {
                    step: self.solver.step,
                    ceiling: self.solver.ceiling,
                    iu,
                };
                solve_clusters(&self.components, &self.design_template(), &self.effect.beta, &self.test, target, &opts)
            }
            SolveFor::M => {
                if self.design.n.is_none() {
                    return Err(Error::Invalid("solving for m_bar needs n".into()));
                }
                solve_cluster_size(
                    &self.components,
                    &self.design_template(),
                    &self.effect.beta,
                    &self.test,
                    target,
                    self.solver.ceiling,
                    &iu,
                )
            }
        }
    }

    pub fn simulation_spec(&self) -> Result<SimulationSpec> {
        let spec = SimulationSpec {
            components: self.components.clone(),
            effect: self.effect.clone(),
            design: self.design()?,
            test: self.test.clone(),
            em: self.simulation.em,
        };
        spec.validate()?;
        Ok(spec)
    }
}
