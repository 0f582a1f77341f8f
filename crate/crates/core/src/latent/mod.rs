//! Latent-space analysis: k-means with elbow selection, embedding norms and
//! a principal-component projection, plus the CSV formats they exchange.

mod csv;
mod kmeans;
mod pca;

pub use csv::{
    clusters_csv, elbow_csv, parse_table, projection_csv, read_table, Table, CLUSTERS_HEADER, ELBOW_HEADER,
    PROJECTION_HEADER,
};
pub use kmeans::{
    elbow, elbow_with, inertia, kmeans, select_elbow, ElbowCurve, KMeansResult, DEFAULT_MAX_ITER, DEFAULT_RESTARTS,
    ELBOW_MIN_DEVIATION,
};
pub use pca::{principal_components, project2d, reduce, Pca, Projection, PCA_MAX_ITER, PCA_TOL};

use std::path::Path;

use crate::error::{Error, Result};

/// Latent vectors, one row per source image.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::InvalidArgument(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::shape("embeddings", "row", format!("row {i} has {} values, expected {dim}", r.len())));
            }
            if let Some(v) = r.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding row {i} holds {v}")));
            }
            values.extend_from_slice(r);
        }
        for id in &ids {
            if id.contains([',', '\n', '\r']) {
                return Err(Error::InvalidArgument(format!("id {id:?} contains a CSV delimiter")));
            }
        }
        Ok(EmbeddingSet { ids, dim, values })
    }

    /// Rows given as `f32` are stored as the `f64` nearest to their shortest
    /// decimal form, so the CSV text stays short and parses back exactly.
    pub fn from_f32(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|r| r.iter().map(|v| v.to_string().parse::<f64>().unwrap_or(f64::NAN)).collect())
            .collect();
        Self::new(ids, rows)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id");
        for j in 0..self.dim {
            s.push_str(&format!(",z{j}"));
        }
        s.push('\n');
        for (id, row) in self.ids.iter().zip(self.rows()) {
            s.push_str(id);
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }

    /// Parses the `id,z0,...` format; `source` names the file in errors.
    pub fn from_csv(text: &str, source: &str) -> Result<Self> {
        let table = parse_table(text, source)?;
        let dim = table.header.len().saturating_sub(1);
        for (j, h) in table.header.iter().enumerate() {
            let want = if j == 0 { "id".to_string() } else { format!("z{}", j - 1) };
            if *h != want {
                return Err(Error::Csv {
                    path: source.into(),
                    line: 1,
                    detail: format!("column {} is {h:?}, expected {want:?}", j + 1),
                });
            }
        }
        if dim == 0 {
            return Err(Error::Csv {
                path: source.into(),
                line: 1,
                detail: "no latent columns".into(),
            });
        }
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for rec in &table.records {
            ids.push(rec.fields[0].clone());
            rows.push(rec.floats(1.., source)?);
        }
        Self::new(ids, rows).map_err(|e| Error::Csv {
            path: source.into(),
            line: 1,
            detail: e.to_string(),
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

/// Euclidean norm of every row, paired with its id.
pub fn norms(e: &EmbeddingSet) -> Vec<(String, f64)> {
    e.ids.iter().cloned().zip(e.rows().map(norm)).collect()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
