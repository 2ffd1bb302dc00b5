//! Subject-level trial data and its CSV form (`cluster_id,arm,y1..yK`).

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: u64,
    /// 1 for treatment, 0 for control.
    pub arm: u8,
    /// `m × K` outcomes, row-major.
    pub y: Vec<f64>,
}

impl Cluster {
    pub fn size(&self, k: usize) -> usize {
        self.y.len() / k
    }

    pub fn subject(&self, k: usize, j: usize) -> &[f64] {
        &self.y[j * k..(j + 1) * k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    k: usize,
    clusters: Vec<Cluster>,
}

impl TrialDataset {
    pub fn new(k: usize, clusters: Vec<Cluster>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Invalid("dataset needs at least one endpoint".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for c in &clusters {
            if c.arm > 1 {
                return Err(Error::Invalid(format!("cluster {} has arm {}", c.id, c.arm)));
            }
            if c.y.is_empty() || c.y.len() % k != 0 {
                return Err(Error::Invalid(format!("cluster {} has a ragged outcome block", c.id)));
            }
            if c.y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("cluster {} has a non-finite outcome", c.id)));
            }
            if !ids.insert(c.id) {
                return Err(Error::Invalid(format!("duplicate cluster id {}", c.id)));
            }
        }
        Ok(Self { k, clusters })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.clusters.iter().map(|c| c.size(self.k)).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.size(self.k)).collect()
    }

    pub fn arms(&self) -> Vec<u8> {
        self.clusters.iter().map(|c| c.arm).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["cluster_id".to_string(), "arm".to_string()];
        header.extend((1..=self.k).map(|j| format!("y{j}")));
        out.write_record(&header)?;
        for c in &self.clusters {
            for j in 0..c.size(self.k) {
                let mut row = vec![c.id.to_string(), c.arm.to_string()];
                row.extend(c.subject(self.k, j).iter().map(|v| v.to_string()));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV form. `K` is the number of `y*` columns; rows of one
    /// cluster need not be contiguous, and clusters keep first-seen order.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header = rdr.headers()?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let id_col = col("cluster_id").ok_or_else(|| Error::Invalid("missing cluster_id column".into()))?;
        let arm_col = col("arm").ok_or_else(|| Error::Invalid("missing arm column".into()))?;
        let mut y_cols = Vec::new();
        while let Some(c) = col(&format!("y{}", y_cols.len() + 1)) {
            y_cols.push(c);
        }
        let k = y_cols.len();
        if k == 0 {
            return Err(Error::Invalid("no outcome columns y1..yK".into()));
        }
        if header.iter().filter(|h| h.starts_with('y')).count() != k {
            return Err(Error::Invalid("outcome columns must be y1..yK without gaps".into()));
        }

        let mut index: HashMap<u64, usize> = HashMap::new();
        let mut clusters: Vec<Cluster> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = line + 2;
            let field = |c: usize| rec.get(c).ok_or_else(|| Error::Invalid(format!("row {row} is short")));
            let id: u64 = field(id_col)?
                .parse()
                .map_err(|_| Error::Invalid(format!("row {row}: bad cluster_id")))?;
            let arm: u8 = match field(arm_col)? {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::Invalid(format!("row {row}: arm '{other}' is not 0 or 1"))),
            };
            let mut y = Vec::with_capacity(k);
            for &c in &y_cols {
                let v: f64 = field(c)?
                    .parse()
                    .map_err(|_| Error::Invalid(format!("row {row}: bad outcome value")))?;
                y.push(v);
            }
            let slot = *index.entry(id).or_insert_with(|| {
                clusters.push(Cluster { id, arm, y: Vec::new() });
                clusters.len() - 1
            });
            if clusters[slot].arm != arm {
                return Err(Error::Invalid(format!("cluster {id} appears in both arms")));
            }
            clusters[slot].y.extend(y);
        }
        if clusters.is_empty() {
            return Err(Error::Invalid("dataset has no rows".into()));
        }
        Self::new(k, clusters)
    }
}
