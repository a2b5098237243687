//! Finite index sets in ℝⁿ and the ℓᵖ metrics on them.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric induced by an ℓᵖ norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "p", rename_all = "lowercase")]
pub enum MetricKind {
    L2,
    Linf,
    Lp(f64),
}

impl MetricKind {
    /// `Lp(p)` for finite `p ≥ 1`; `p = 2` normalises to `L2`.
    pub fn lp(p: f64) -> Result<Self> {
        if !p.is_finite() {
            return Err(Error::InvalidParameter(
                "Lp(∞) is not representable, use Linf".into(),
            ));
        }
        if p < 1.0 {
            return Err(Error::InvalidParameter(format!("Lp needs p >= 1, got {p}")));
        }
        Ok(if p == 2.0 { MetricKind::L2 } else { MetricKind::Lp(p) })
    }

    /// Norm of a difference vector given as an iterator of components.
    pub(crate) fn norm_iter(self, it: impl Iterator<Item = f64>) -> f64 {
        match self {
            MetricKind::L2 => it.map(|x| x * x).sum::<f64>().sqrt(),
            MetricKind::Linf => it.fold(0.0, |m, x| m.max(x.abs())),
            MetricKind::Lp(p) if p == 2.0 => it.map(|x| x * x).sum::<f64>().sqrt(),
            MetricKind::Lp(p) if p == 1.0 => it.map(f64::abs).sum(),
            MetricKind::Lp(p) => it.map(|x| x.abs().powf(p)).sum::<f64>().powf(p.recip()),
        }
    }

    pub fn norm(self, v: &[f64]) -> f64 {
        self.norm_iter(v.iter().copied())
    }

    pub(crate) fn dist_unchecked(self, a: &[f64], b: &[f64]) -> f64 {
        self.norm_iter(a.iter().zip(b).map(|(x, y)| x - y))
    }
}

/// ‖a − b‖ under `metric`.
pub fn distance(a: &[f64], b: &[f64], metric: MetricKind) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(metric.dist_unchecked(a, b))
}

/// A finite index set `T ⊂ ℝⁿ`, stored row-major.
///
/// Point order is part of the identity: partitions refer to points by index
/// and transforms refer to coordinates by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
    label: Option<String>,
}

impl PointSet {
    pub fn new(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if points.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut data = Vec::with_capacity(dim * points.len());
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                }
                .context(format!("point {i}")));
            }
            if let Some(c) = p.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteCoordinate { point: i, coord: c });
            }
            data.extend_from_slice(p);
        }
        Ok(Self {
            dim,
            data,
            label: None,
        })
    }

    /// Build from points, inferring the dimension from the first one.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map(Vec::len).ok_or(Error::EmptySet)?;
        Self::new(dim, points)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    /// Apply `f` to every point, keeping order, dimension and label.
    pub fn map_points(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self.data.chunks_exact(self.dim).zip(data.chunks_exact_mut(self.dim)) {
            f(src, dst);
        }
        Self {
            dim: self.dim,
            data,
            label: self.label.clone(),
        }
    }

    /// Multiply every coordinate by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        self.map_points(|src, dst| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = c * s;
            }
        })
    }

    pub fn distance(&self, i: usize, j: usize, metric: MetricKind) -> f64 {
        metric.dist_unchecked(self.point(i), self.point(j))
    }

    /// Remove repeated points, keeping the first occurrence. Returns the
    /// number removed.
    pub fn dedup(&mut self) -> usize {
        let mut seen = HashSet::new();
        let mut data = Vec::with_capacity(self.data.len());
        let mut removed = 0;
        for p in self.data.chunks_exact(self.dim) {
            // -0.0 and 0.0 are the same point
            let key: Vec<u64> = p.iter().map(|x| (x + 0.0).to_bits()).collect();
            if seen.insert(key) {
                data.extend_from_slice(p);
            } else {
                removed += 1;
            }
        }
        self.data = data;
        removed
    }

    fn check_indices(&self, subset: &[usize]) -> Result<()> {
        if subset.is_empty() {
            return Err(Error::EmptySubset);
        }
        let len = self.len();
        match subset.iter().find(|&&i| i >= len) {
            Some(&index) => Err(Error::IndexOutOfRange { index, len }),
            None => Ok(()),
        }
    }

    /// Diameter of the points named by `subset`.
    pub fn diameter(&self, subset: &[usize], metric: MetricKind) -> Result<f64> {
        self.check_indices(subset)?;
        Ok(self.diameter_unchecked(subset, metric))
    }

    pub(crate) fn diameter_unchecked(&self, subset: &[usize], metric: MetricKind) -> f64 {
        let mut best = 0.0f64;
        for (a, &i) in subset.iter().enumerate() {
            for &j in &subset[a + 1..] {
                best = best.max(self.distance(i, j, metric));
            }
        }
        best
    }

    /// Diameter of the whole set.
    pub fn full_diameter(&self, metric: MetricKind) -> f64 {
        let all: Vec<usize> = (0..self.len()).collect();
        self.diameter_unchecked(&all, metric)
    }

    /// Load a CSV point file: one point per row, an optional single header
    /// row starting with `#`. Ragged rows are rejected and repeated points
    /// are dropped with a warning.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut points = Vec::new();
        let mut dim = None;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(row as u64 + 1, |p| p.line());
            if rec.get(0).is_some_and(|f| f.starts_with('#')) {
                if row == 0 {
                    continue;
                }
                return Err(Error::Csv {
                    line,
                    msg: "header row is only allowed on the first line".into(),
                });
            }
            if rec.len() == 1 && rec.get(0) == Some("") {
                continue;
            }
            let coords = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Csv {
                        line,
                        msg: format!("bad number {f:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            match dim {
                None => dim = Some(coords.len()),
                Some(d) if d != coords.len() => {
                    return Err(Error::Csv {
                        line,
                        msg: format!("ragged row: expected {d} columns, found {}", coords.len()),
                    })
                }
                _ => {}
            }
            points.push(coords);
        }
        let mut set = Self::from_points(points)?;
        let removed = set.dedup();
        if removed > 0 {
            log::warn!("dropped {removed} duplicate point(s) while loading");
        }
        Ok(set)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Ok(Self::from_csv_reader(file)?.with_label(path.display().to_string()))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        let mut first = header;
        first[0] = format!("#{}", first[0]);
        w.write_record(&first).map_err(csv_write_err)?;
        for p in self.iter() {
            w.write_record(p.iter().map(|x| x.to_string())).map_err(csv_write_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_write_err(e: csv::Error) -> Error {
    Error::Csv {
        line: 0,
        msg: e.to_string(),
    }
}
