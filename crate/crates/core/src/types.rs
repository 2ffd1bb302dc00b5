//! Domain types for the multivariate linear mixed model design problem.
//!
//! Outcomes follow `y_ij = γ + β z_i + φ_i + e_ij` with cluster random
//! intercepts `φ_i ~ N(0, Σφ)` and residuals `e_ij ~ N(0, Σe)`. The same
//! covariance structure can be written as three families of intraclass
//! correlations plus marginal variances; [`icc_to_components`] and
//! [`components_to_icc`] convert between the two.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstat::linalg::{is_symmetric, min_eigenvalue, rows_serde, Mat};

/// Largest supported number of co-primary endpoints.
pub const MAX_ENDPOINTS: usize = 16;

/// Eigenvalue tolerance for definiteness checks.
pub const PD_TOL: f64 = 1e-10;

/// Endpoint-specific (`rho0`), inter-subject between-endpoint (`rho1`) and
/// intra-subject (`rho2`) correlations, with marginal variances.
///
/// Diagonals are implied: `rho1[k][k] = rho0[k]` and `rho2[k][k] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IccSetRaw")]
pub struct IccSet {
    k: usize,
    rho0: Vec<f64>,
    #[serde(with = "rows_serde")]
    rho1: Mat,
    #[serde(with = "rows_serde")]
    rho2: Mat,
    sigma_y2: Vec<f64>,
}

#[derive(Deserialize)]
struct IccSetRaw {
    k: Option<usize>,
    rho0: Vec<f64>,
    #[serde(with = "rows_serde")]
    rho1: Mat,
    #[serde(with = "rows_serde")]
    rho2: Mat,
    sigma_y2: Vec<f64>,
}

impl TryFrom<IccSetRaw> for IccSet {
    type Error = Error;

    fn try_from(raw: IccSetRaw) -> Result<Self> {
        if let Some(k) = raw.k {
            if k != raw.rho0.len() {
                return Err(Error::Invalid(format!(
                    "k = {k} but rho0 has {} entries",
                    raw.rho0.len()
                )));
            }
        }
        IccSet::new(raw.rho0, raw.rho1, raw.rho2, raw.sigma_y2)
    }
}

impl IccSet {
    /// Validates ranges and symmetry, fills the implied diagonals, and checks
    /// that the implied variance components are admissible.
    pub fn new(rho0: Vec<f64>, rho1: Mat, rho2: Mat, sigma_y2: Vec<f64>) -> Result<Self> {
        let icc = Self::unchecked(rho0, rho1, rho2, sigma_y2)?;
        icc_to_components(&icc)?;
        Ok(icc)
    }

    fn unchecked(rho0: Vec<f64>, mut rho1: Mat, mut rho2: Mat, sigma_y2: Vec<f64>) -> Result<Self> {
        let k = rho0.len();
        check_endpoint_count(k)?;
        for (name, m) in [("rho1", &rho1), ("rho2", &rho2)] {
            if m.nrows() != k || m.ncols() != k {
                return Err(Error::Invalid(format!("{name} must be {k}x{k}")));
            }
        }
        for i in 0..k {
            rho1[(i, i)] = rho0[i];
            rho2[(i, i)] = 1.0;
        }
        for (name, m) in [("rho1", &rho1), ("rho2", &rho2)] {
            if !is_symmetric(m, 1e-12) {
                return Err(Error::Invalid(format!("{name} must be symmetric")));
            }
            if m.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
                return Err(Error::Invalid(format!("{name} entries must lie in [-1, 1]")));
            }
        }
        if sigma_y2.len() != k {
            return Err(Error::Invalid(format!("sigma_y2 must have {k} entries")));
        }
        if rho0.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Invalid("rho0 entries must lie in [0, 1)".into()));
        }
        if sigma_y2.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Invalid("sigma_y2 entries must be positive".into()));
        }
        Ok(Self {
            k,
            rho0,
            rho1,
            rho2,
            sigma_y2,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }

    pub fn rho1(&self) -> &Mat {
        &self.rho1
    }

    pub fn rho2(&self) -> &Mat {
        &self.rho2
    }

    pub fn sigma_y2(&self) -> &[f64] {
        &self.sigma_y2
    }

    pub fn sigma_y(&self) -> Vec<f64> {
        self.sigma_y2.iter().map(|v| v.sqrt()).collect()
    }

    /// Same set with the endpoint-specific ICCs replaced.
    pub fn with_rho0(&self, rho0: Vec<f64>) -> Result<Self> {
        Self::new(rho0, self.rho1.clone(), self.rho2.clone(), self.sigma_y2.clone())
    }

    /// Same set with every off-diagonal `rho1` entry set to `value`.
    pub fn with_rho1(&self, value: f64) -> Result<Self> {
        let rho1 = Mat::from_fn(self.k, self.k, |_, _| value);
        Self::new(self.rho0.clone(), rho1, self.rho2.clone(), self.sigma_y2.clone())
    }

    /// Same set with every off-diagonal `rho2` entry set to `value`.
    pub fn with_rho2(&self, value: f64) -> Result<Self> {
        let rho2 = Mat::from_fn(self.k, self.k, |_, _| value);
        Self::new(self.rho0.clone(), self.rho1.clone(), rho2, self.sigma_y2.clone())
    }
}

fn check_endpoint_count(k: usize) -> Result<()> {
    if k == 0 || k > MAX_ENDPOINTS {
        return Err(Error::Invalid(format!(
            "endpoint count {k} outside 1..={MAX_ENDPOINTS}"
        )));
    }
    Ok(())
}

/// Between-cluster (`sigma_phi`) and residual (`sigma_e`) covariance
/// matrices. `sigma_e` must be positive definite; `sigma_phi` may sit on the
/// positive semidefinite boundary (a zero cluster variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentsRaw")]
pub struct VarianceComponents {
    #[serde(with = "rows_serde")]
    sigma_phi: Mat,
    #[serde(with = "rows_serde")]
    sigma_e: Mat,
}

#[derive(Deserialize)]
struct ComponentsRaw {
    #[serde(with = "rows_serde")]
    sigma_phi: Mat,
    #[serde(with = "rows_serde")]
    sigma_e: Mat,
}

impl TryFrom<ComponentsRaw> for VarianceComponents {
    type Error = Error;

    fn try_from(raw: ComponentsRaw) -> Result<Self> {
        VarianceComponents::new(raw.sigma_phi, raw.sigma_e)
    }
}

impl VarianceComponents {
    pub fn new(sigma_phi: Mat, sigma_e: Mat) -> Result<Self> {
        let k = sigma_phi.nrows();
        check_endpoint_count(k)?;
        if !sigma_phi.is_square() || sigma_e.shape() != sigma_phi.shape() {
            return Err(Error::Invalid("sigma_phi and sigma_e must both be KxK".into()));
        }
        if sigma_phi.iter().chain(sigma_e.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("variance components must be finite".into()));
        }
        if !is_symmetric(&sigma_phi, 1e-12) || !is_symmetric(&sigma_e, 1e-12) {
            return Err(Error::Invalid("variance components must be symmetric".into()));
        }
        let phi_min = min_eigenvalue(&sigma_phi);
        if phi_min < -PD_TOL {
            return Err(Error::NotPositiveDefinite(format!(
                "sigma_phi has eigenvalue {phi_min:.3e}"
            )));
        }
        let e_min = min_eigenvalue(&sigma_e);
        if e_min <= PD_TOL {
            return Err(Error::NotPositiveDefinite(format!(
                "sigma_e has eigenvalue {e_min:.3e}"
            )));
        }
        Ok(Self { sigma_phi, sigma_e })
    }

    pub fn k(&self) -> usize {
        self.sigma_phi.nrows()
    }

    pub fn sigma_phi(&self) -> &Mat {
        &self.sigma_phi
    }

    pub fn sigma_e(&self) -> &Mat {
        &self.sigma_e
    }

    /// Marginal variances `Σφ[k][k] + Σe[k][k]`.
    pub fn sigma_y2(&self) -> Vec<f64> {
        (0..self.k())
            .map(|i| self.sigma_phi[(i, i)] + self.sigma_e[(i, i)])
            .collect()
    }
}

/// Map an ICC set onto the variance-component matrices.
pub fn icc_to_components(icc: &IccSet) -> Result<VarianceComponents> {
    let k = icc.k;
    let sd = icc.sigma_y();
    let sigma_phi = Mat::from_fn(k, k, |i, j| {
        if i == j {
            icc.rho0[i] * icc.sigma_y2[i]
        } else {
            icc.rho1[(i, j)] * sd[i] * sd[j]
        }
    });
    let sigma_e = Mat::from_fn(k, k, |i, j| {
        if i == j {
            (1.0 - icc.rho0[i]) * icc.sigma_y2[i]
        } else {
            (icc.rho2[(i, j)] - icc.rho1[(i, j)]) * sd[i] * sd[j]
        }
    });
    VarianceComponents::new(sigma_phi, sigma_e)
}

/// Inverse of [`icc_to_components`].
pub fn components_to_icc(vc: &VarianceComponents) -> IccSet {
    let k = vc.k();
    let s2 = vc.sigma_y2();
    let sd: Vec<f64> = s2.iter().map(|v| v.sqrt()).collect();
    let rho0: Vec<f64> = (0..k).map(|i| vc.sigma_phi[(i, i)] / s2[i]).collect();
    let rho1 = Mat::from_fn(k, k, |i, j| vc.sigma_phi[(i, j)] / (sd[i] * sd[j]));
    let rho2 = Mat::from_fn(k, k, |i, j| {
        (vc.sigma_phi[(i, j)] + vc.sigma_e[(i, j)]) / (sd[i] * sd[j])
    });
    IccSet::unchecked(rho0, rho1, rho2, s2).expect("valid components give a valid ICC set")
}

/// Block-exchangeable ICC set: one value per ICC family.
pub fn bex_expand(rho0: f64, rho1: f64, rho2: f64, sigma_y2: &[f64]) -> Result<IccSet> {
    let k = sigma_y2.len();
    IccSet::new(
        vec![rho0; k],
        Mat::from_element(k, k, rho1),
        Mat::from_element(k, k, rho2),
        sigma_y2.to_vec(),
    )
}

/// `k` equally spaced values from `kappa` to `upper`, inclusive.
pub fn sequence_rho0(kappa: f64, upper: f64, k: usize) -> Vec<f64> {
    assert!(k >= 1, "need at least one endpoint");
    if k == 1 {
        return vec![kappa];
    }
    let step = (upper - kappa) / (k - 1) as f64;
    (0..k)
        .map(|i| if i + 1 == k { upper } else { kappa + step * i as f64 })
        .collect()
}

/// Cluster-level design quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    /// Number of clusters.
    pub n: usize,
    /// Mean cluster size.
    pub m_bar: f64,
    /// Coefficient of variation of cluster sizes.
    #[serde(default)]
    pub cv: f64,
    /// Fraction of clusters allocated to treatment.
    #[serde(default = "half")]
    pub z_bar: f64,
    /// Two-sided (GLH) or one-sided (intersection-union) level.
    #[serde(default = "five_percent")]
    pub alpha: f64,
}

fn half() -> f64 {
    0.5
}

fn five_percent() -> f64 {
    0.05
}

impl DesignSpec {
    pub fn new(n: usize, m_bar: f64, cv: f64, z_bar: f64, alpha: f64) -> Result<Self> {
        let d = Self {
            n,
            m_bar,
            cv,
            z_bar,
            alpha,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Invalid(format!("n = {} must be at least 2", self.n)));
        }
        self.validate_without_n()
    }

    /// Checks everything except `n`, for sample-size searches.
    pub fn validate_without_n(&self) -> Result<()> {
        if !(self.m_bar >= 1.0) || !self.m_bar.is_finite() {
            return Err(Error::Invalid(format!("m_bar = {} must be at least 1", self.m_bar)));
        }
        if !(self.cv >= 0.0) || !self.cv.is_finite() {
            return Err(Error::Invalid(format!("cv = {} must be non-negative", self.cv)));
        }
        if !(self.z_bar > 0.0 && self.z_bar < 1.0) {
            return Err(Error::Invalid(format!("z_bar = {} must lie in (0, 1)", self.z_bar)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        Ok(())
    }

    /// Variance of the Bernoulli allocation indicator, `z̄ (1 − z̄)`.
    pub fn sigma_z2(&self) -> f64 {
        self.z_bar * (1.0 - self.z_bar)
    }
}

/// Which hypothesis test the design targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSpec {
    /// `L = I_K`: any effect on any endpoint.
    Omnibus,
    /// Successive differences: equal effects on all endpoints.
    Homogeneity,
    /// User-supplied `S x K` contrast with optional alternative `δ`
    /// (defaults to `L β`).
    Custom {
        #[serde(with = "rows_serde")]
        contrast: Mat,
        #[serde(default)]
        delta: Option<Vec<f64>>,
    },
    /// One-sided intersection-union test: effects on every endpoint.
    #[serde(alias = "iu")]
    IntersectionUnion,
}

impl TestSpec {
    pub fn is_glh(&self) -> bool {
        !matches!(self, TestSpec::IntersectionUnion)
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestSpec::Omnibus => "omnibus",
            TestSpec::Homogeneity => "homogeneity",
            TestSpec::Custom { .. } => "custom",
            TestSpec::IntersectionUnion => "iu",
        }
    }

    /// Effective contrast matrix for the general-linear-hypothesis kinds.
    pub fn contrast(&self, k: usize) -> Result<Option<Mat>> {
        match self {
            TestSpec::Omnibus => Ok(Some(Mat::identity(k, k))),
            TestSpec::Homogeneity => {
                if k < 2 {
                    return Err(Error::Invalid("homogeneity test needs at least two endpoints".into()));
                }
                Ok(Some(successive_differences(k)))
            }
            TestSpec::Custom { contrast, .. } => {
                check_contrast(contrast, k)?;
                Ok(Some(contrast.clone()))
            }
            TestSpec::IntersectionUnion => Ok(None),
        }
    }

    /// Alternative `δ` for the GLH kinds given the effect vector.
    pub fn delta(&self, beta: &[f64]) -> Result<Option<Vec<f64>>> {
        let Some(l) = self.contrast(beta.len())? else {
            return Ok(None);
        };
        if let TestSpec::Custom { delta: Some(d), .. } = self {
            if d.len() != l.nrows() {
                return Err(Error::Invalid(format!(
                    "delta has {} entries, contrast has {} rows",
                    d.len(),
                    l.nrows()
                )));
            }
            return Ok(Some(d.clone()));
        }
        Ok(Some((0..l.nrows()).map(|s| (0..l.ncols()).map(|j| l[(s, j)] * beta[j]).sum()).collect()))
    }
}

/// `(e1 − e2, e2 − e3, …)ᵀ`, a `(K−1) x K` matrix.
pub fn successive_differences(k: usize) -> Mat {
    Mat::from_fn(k - 1, k, |s, j| {
        if j == s {
            1.0
        } else if j == s + 1 {
            -1.0
        } else {
            0.0
        }
    })
}

fn check_contrast(l: &Mat, k: usize) -> Result<()> {
    if l.ncols() != k || l.nrows() == 0 || l.nrows() > k {
        return Err(Error::Invalid(format!(
            "contrast must be S x {k} with 1 <= S <= {k}, got {}x{}",
            l.nrows(),
            l.ncols()
        )));
    }
    let gram = l * l.transpose();
    let scale = gram.diagonal().max().max(1e-300);
    if min_eigenvalue(&gram) <= 1e-12 * scale {
        return Err(Error::Invalid("contrast rows must be linearly independent".into()));
    }
    Ok(())
}

/// Control-arm means and treatment effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectModel {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl EffectModel {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(Error::Invalid("gamma and beta lengths differ".into()));
        }
        if gamma.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("effects must be finite".into()));
        }
        Ok(Self { gamma, beta })
    }

    /// Zero control means.
    pub fn from_beta(beta: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.0; beta.len()], beta)
    }

    /// Intercepts of the centred parameterization, `γ + β z̄`.
    pub fn centred_intercepts(&self, z_bar: f64) -> Vec<f64> {
        self.gamma.iter().zip(&self.beta).map(|(g, b)| g + b * z_bar).collect()
    }
}
