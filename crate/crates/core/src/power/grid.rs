//! Rectangular grids of power over ICC axes (contour plots).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{design_power, IuOptions};
use crate::error::{Error, Result};
use crate::matstat::linalg::Mat;
use crate::types::{icc_to_components, DesignSpec, IccSet, TestSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AxisKind {
    /// Endpoint-specific ICCs move together: `ρ0_k = value · ratios[k]`.
    /// Without ratios, the base set's proportions are kept.
    Rho0 {
        #[serde(default)]
        ratios: Option<Vec<f64>>,
    },
    /// Off-diagonal `ρ1 = value · ρ0` of the first endpoint.
    Rho1Ratio,
    /// Off-diagonal `ρ1 = value`.
    Rho1,
    /// Off-diagonal `ρ2 = value`.
    Rho2,
}

impl AxisKind {
    pub fn label(&self) -> &'static str {
        match self {
            AxisKind::Rho0 { .. } => "rho0",
            AxisKind::Rho1Ratio => "rho1_ratio",
            AxisKind::Rho1 => "rho1",
            AxisKind::Rho2 => "rho2",
        }
    }

    // ρ0 first, so that a ρ1 ratio refers to the cell's own ρ0
    fn order(&self) -> u8 {
        match self {
            AxisKind::Rho0 { .. } => 0,
            AxisKind::Rho1Ratio | AxisKind::Rho1 => 1,
            AxisKind::Rho2 => 2,
        }
    }

    fn apply(&self, cell: &mut CellIccs, base: &IccSet, value: f64) -> Result<()> {
        let k = base.k();
        match self {
            AxisKind::Rho0 { ratios } => {
                let ratios = match ratios {
                    Some(r) if r.len() == k => r.clone(),
                    Some(r) => {
                        return Err(Error::Invalid(format!(
                            "rho0 axis has {} ratios for {k} endpoints",
                            r.len()
                        )))
                    }
                    None if base.rho0()[0] > 0.0 => base.rho0().iter().map(|r| r / base.rho0()[0]).collect(),
                    None => vec![1.0; k],
                };
                cell.rho0 = ratios.iter().map(|r| r * value).collect();
            }
            AxisKind::Rho1Ratio => cell.rho1 = Mat::from_element(k, k, value * cell.rho0[0]),
            AxisKind::Rho1 => cell.rho1 = Mat::from_element(k, k, value),
            AxisKind::Rho2 => cell.rho2 = Mat::from_element(k, k, value),
        }
        Ok(())
    }
}

/// ICC values of one cell, validated only once every axis has been applied.
struct CellIccs {
    rho0: Vec<f64>,
    rho1: Mat,
    rho2: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    #[serde(flatten)]
    pub kind: AxisKind,
    pub values: Vec<f64>,
}

impl GridAxis {
    /// `count` equally spaced values from `lo` to `hi`.
    pub fn linspace(kind: AxisKind, lo: f64, hi: f64, count: usize) -> Self {
        let values = match count {
            0 => vec![],
            1 => vec![lo],
            _ => (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect(),
        };
        Self { kind, values }
    }
}

/// `name=lo:hi:count` or `name=v1,v2,...`; `name` is `rho0`, `rho1`,
/// `rho1_ratio` or `rho2`, and `rho0` may carry ratios as `rho0[1,2.4]`.
impl FromStr for GridAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("cannot parse axis '{s}'"));
        let (name, spec) = s.split_once('=').ok_or_else(bad)?;
        let name = name.trim();
        let kind = if let Some(rest) = name.strip_prefix("rho0[") {
            let inner = rest.strip_suffix(']').ok_or_else(bad)?;
            AxisKind::Rho0 {
                ratios: Some(parse_list(inner).ok_or_else(bad)?),
            }
        } else {
            match name {
                "rho0" => AxisKind::Rho0 { ratios: None },
                "rho1" => AxisKind::Rho1,
                "rho1_ratio" => AxisKind::Rho1Ratio,
                "rho2" => AxisKind::Rho2,
                _ => return Err(bad()),
            }
        };
        let parts: Vec<&str> = spec.split(':').collect();
        match parts.as_slice() {
            [lo, hi, count] => {
                let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
                let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
                let count: usize = count.trim().parse().map_err(|_| bad())?;
                if count == 0 {
                    return Err(bad());
                }
                Ok(Self::linspace(kind, lo, hi, count))
            }
            [list] => Ok(Self {
                kind,
                values: parse_list(list).ok_or_else(bad)?,
            }),
            _ => Err(bad()),
        }
    }
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    let v: Option<Vec<f64>> = s.split(',').map(|x| x.trim().parse().ok()).collect();
    v.filter(|v| !v.is_empty())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    /// One value per axis, in axis order.
    pub values: Vec<f64>,
    pub feasible: bool,
    pub power: Option<f64>,
    pub mc_error: Option<f64>,
    /// Why the cell was skipped.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub axes: Vec<String>,
    pub test: String,
    pub n: usize,
    pub cells: Vec<GridCell>,
}

impl PowerGrid {
    pub fn feasible_powers(&self) -> impl Iterator<Item = f64> + '_ {
        self.cells.iter().filter_map(|c| c.power)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = self.axes.clone();
        header.extend(["power", "mc_error", "feasible"].map(String::from));
        out.write_record(&header)?;
        for c in &self.cells {
            let mut row: Vec<String> = c.values.iter().map(|v| v.to_string()).collect();
            row.push(c.power.map(|p| p.to_string()).unwrap_or_default());
            row.push(c.mc_error.map(|p| p.to_string()).unwrap_or_default());
            row.push(c.feasible.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

impl fmt::Display for PowerGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|_| fmt::Error)?;
        f.write_str(&String::from_utf8_lossy(&buf))
    }
}

/// Evaluate power over the Cartesian product of `axes` (last axis varies
/// fastest). Cells whose ICCs are inconsistent, or whose power cannot be
/// computed, are kept and flagged instead of failing the whole grid.
pub fn power_grid(
    base: &IccSet,
    design: &DesignSpec,
    beta: &[f64],
    test: &TestSpec,
    axes: &[GridAxis],
    opts: &IuOptions,
) -> Result<PowerGrid> {
    design.validate()?;
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::Invalid("grid needs at least one non-empty axis".into()));
    }
    let mut labels: Vec<&str> = axes.iter().map(|a| a.kind.label()).collect();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) || (labels.contains(&"rho1") && labels.contains(&"rho1_ratio")) {
        return Err(Error::Invalid("each ICC family may appear on one axis only".into()));
    }

    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut v = vec![0.0; axes.len()];
            for (j, a) in axes.iter().enumerate().rev() {
                v[j] = a.values[idx % a.values.len()];
                idx /= a.values.len();
            }
            v
        })
        .collect();
    let mut order: Vec<usize> = (0..axes.len()).collect();
    order.sort_by_key(|&j| axes[j].kind.order());

    let cells = points
        .into_par_iter()
        .map(|values| {
            let outcome = (|| {
                let mut cell = CellIccs {
                    rho0: base.rho0().to_vec(),
                    rho1: base.rho1().clone(),
                    rho2: base.rho2().clone(),
                };
                for &j in &order {
                    axes[j].kind.apply(&mut cell, base, values[j])?;
                }
                let icc = IccSet::new(cell.rho0, cell.rho1, cell.rho2, base.sigma_y2().to_vec())?;
                let vc = icc_to_components(&icc)?;
                design_power(&vc, design, beta, test, opts)
            })();
            match outcome {
                Ok(p) => GridCell {
                    values,
                    feasible: true,
                    power: Some(p.power),
                    mc_error: p.mc_error,
                    note: None,
                },
                Err(e) => GridCell {
                    values,
                    feasible: false,
                    power: None,
                    mc_error: None,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(PowerGrid {
        axes: axes.iter().map(|a| a.kind.label().to_string()).collect(),
        test: test.name().to_string(),
        n: design.n,
        cells,
    })
}
