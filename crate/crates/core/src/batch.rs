//! Seeded collections of vector draws with provenance.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    Stationary,
    Forward,
    BirkhoffSum,
    WSeries,
    External,
}

impl BatchKind {
    fn as_str(self) -> &'static str {
        match self {
            BatchKind::Stationary => "stationary",
            BatchKind::Forward => "forward",
            BatchKind::BirkhoffSum => "birkhoff_sum",
            BatchKind::WSeries => "w_series",
            BatchKind::External => "external",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "stationary" => BatchKind::Stationary,
            "forward" => BatchKind::Forward,
            "birkhoff_sum" => BatchKind::BirkhoffSum,
            "w_series" => BatchKind::WSeries,
            "external" => BatchKind::External,
            _ => return None,
        })
    }
}

/// Where a batch came from: seed, truncation and realised series depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub kind: BatchKind,
    pub seed: u64,
    /// Fixed truncation `N`, when used.
    pub truncation: Option<usize>,
    /// Adaptive tolerance, when used.
    pub tolerance: Option<f64>,
    /// Largest realised series depth (equals `truncation` when fixed).
    pub max_depth: usize,
    pub mean_depth: f64,
    /// Number of recursion steps for forward paths and Birkhoff sums.
    pub steps: Option<usize>,
}

impl BatchMeta {
    pub fn external() -> Self {
        BatchMeta {
            kind: BatchKind::External,
            seed: 0,
            truncation: None,
            tolerance: None,
            max_depth: 0,
            mean_depth: 0.0,
            steps: None,
        }
    }
}

/// `count` draws of a vector in R^dim stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    values: Vec<f64>,
    pub meta: BatchMeta,
}

impl SampleBatch {
    pub fn new(dim: usize, values: Vec<f64>, meta: BatchMeta) -> Self {
        assert!(dim > 0 && values.len().is_multiple_of(dim), "values must hold whole rows");
        SampleBatch { dim, values, meta }
    }

    /// Batch of scalar draws (dim = 1) from an external source.
    pub fn from_scalars(values: Vec<f64>) -> Self {
        SampleBatch::new(1, values, BatchMeta::external())
    }

    /// Batch of external vector draws.
    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Self {
        SampleBatch::new(dim, rows.iter().flatten().copied().collect(), BatchMeta::external())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Euclidean norms of the draws.
    pub fn norms(&self) -> Vec<f64> {
        self.iter().map(crate::linalg::norm).collect()
    }

    /// Projections `<v, x>` of the draws.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.iter().map(|x| crate::linalg::dot(x, v)).collect()
    }

    /// Same batch with every draw multiplied by `c`.
    pub fn scaled(&self, c: f64) -> SampleBatch {
        SampleBatch {
            dim: self.dim,
            values: self.values.iter().map(|x| x * c).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Write as CSV: `#` comment lines carry the metadata, then a header
    /// `x0,...,x{d-1}` and one row per draw.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let m = &self.meta;
        writeln!(w, "# kind={}", m.kind.as_str())?;
        writeln!(w, "# seed={}", m.seed)?;
        if let Some(n) = m.truncation {
            writeln!(w, "# truncation={n}")?;
        }
        if let Some(t) = m.tolerance {
            writeln!(w, "# tolerance={t:e}")?;
        }
        writeln!(w, "# max_depth={}", m.max_depth)?;
        writeln!(w, "# mean_depth={}", m.mean_depth)?;
        if let Some(s) = m.steps {
            writeln!(w, "# steps={s}")?;
        }
        writeln!(w, "# count={}", self.len())?;
        let header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::new();
        for row in self.iter() {
            line.clear();
            for (i, x) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                write!(line, "{x:e}").expect("writing to a String cannot fail");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> io::Result<SampleBatch> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut meta = BatchMeta::external();
        let mut dim = None;
        let mut values = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                if let Some((k, v)) = c.trim().split_once('=') {
                    let v = v.trim();
                    match k.trim() {
                        "kind" => meta.kind = BatchKind::parse(v).ok_or_else(|| bad(format!("unknown kind {v}")))?,
                        "seed" => meta.seed = v.parse().map_err(|e| bad(format!("seed: {e}")))?,
                        "truncation" => meta.truncation = Some(v.parse().map_err(|e| bad(format!("truncation: {e}")))?),
                        "tolerance" => meta.tolerance = Some(v.parse().map_err(|e| bad(format!("tolerance: {e}")))?),
                        "max_depth" => meta.max_depth = v.parse().map_err(|e| bad(format!("max_depth: {e}")))?,
                        "mean_depth" => meta.mean_depth = v.parse().map_err(|e| bad(format!("mean_depth: {e}")))?,
                        "steps" => meta.steps = Some(v.parse().map_err(|e| bad(format!("steps: {e}")))?),
                        _ => {}
                    }
                }
                continue;
            }
            if dim.is_none() {
                dim = Some(line.split(',').count());
                continue;
            }
            let before = values.len();
            for f in line.split(',') {
                values.push(f.trim().parse::<f64>().map_err(|e| bad(format!("value {f}: {e}")))?);
            }
            if values.len() - before != dim.unwrap_or(0) {
                return Err(bad("ragged row".into()));
            }
        }
        let dim = dim.ok_or_else(|| bad("missing header".into()))?;
        Ok(SampleBatch::new(dim, values, meta))
    }
}
