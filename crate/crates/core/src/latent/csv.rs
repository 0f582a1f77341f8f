use std::ops::RangeFrom;
use std::path::Path;

use super::{norm, EmbeddingSet, ElbowCurve, KMeansResult, Projection};
use crate::error::{Error, Result};

pub const CLUSTERS_HEADER: &str = "id,cluster";
pub const ELBOW_HEADER: &str = "k,inertia";
pub const PROJECTION_HEADER: &str = "id,px,py,norm";

/// A comma-separated file with a header row. Every record has as many
/// fields as the header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub records: Vec<Record>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    /// 1-based line in the source text.
    pub line: usize,
    pub fields: Vec<String>,
}

impl Record {
    pub fn floats(&self, cols: RangeFrom<usize>, source: &str) -> Result<Vec<f64>> {
        self.fields[cols]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Csv {
                    path: source.into(),
                    line: self.line,
                    detail: format!("{f:?} is not a number"),
                })
            })
            .collect()
    }
}

pub fn parse_table(text: &str, source: &str) -> Result<Table> {
    let err = |line, detail: String| Error::Csv {
        path: source.into(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let header: Vec<String> = head.split(',').map(|s| s.trim().to_string()).collect();
    let mut records = Vec::new();
    for (i, l) in lines {
        let fields: Vec<String> = l.split(',').map(|s| s.trim().to_string()).collect();
        if fields.len() != header.len() {
            return Err(err(i + 1, format!("{} fields, header has {}", fields.len(), header.len())));
        }
        records.push(Record { line: i + 1, fields });
    }
    Ok(Table { header, records })
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(&text, &path.display().to_string())
}

pub fn clusters_csv(e: &EmbeddingSet, r: &KMeansResult) -> String {
    let mut s = format!("{CLUSTERS_HEADER}\n");
    for (id, c) in e.ids().iter().zip(&r.assignments) {
        s.push_str(&format!("{id},{c}\n"));
    }
    s
}

pub fn elbow_csv(curve: &ElbowCurve) -> String {
    let mut s = format!("{ELBOW_HEADER}\n");
    for (k, v) in &curve.points {
        s.push_str(&format!("{k},{v}\n"));
    }
    s
}

/// Projection scores with the norm of the original (unprojected) row.
pub fn projection_csv(e: &EmbeddingSet, p: &Projection) -> String {
    let mut s = format!("{PROJECTION_HEADER}\n");
    for (i, id) in e.ids().iter().enumerate() {
        let [x, y] = p.coords[i];
        s.push_str(&format!("{id},{x},{y},{}\n", norm(e.row(i))));
    }
    s
}
