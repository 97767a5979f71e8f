use crate::error::{check_len, Error, Result};

/// Weighted points in `R^d`, optionally carrying a cluster label per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    labels: Option<Vec<usize>>,
    num_clusters: usize,
}

impl Dataset {
    /// Uniformly weighted dataset from row-major `points` of width `dim`.
    pub fn from_flat(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("dataset dimension must be positive".into()));
        }
        if points.is_empty() || points.len() % dim != 0 {
            return Err(Error::Argument(format!(
                "{} values do not form rows of width {dim}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite value in row {}", i / dim)));
        }
        let n = points.len() / dim;
        Ok(Self {
            dim,
            points,
            weights: vec![1.0 / n as f64; n],
            labels: None,
            num_clusters: 1,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            check_len(row.len(), dim, "dataset row")?;
            flat.extend_from_slice(row);
        }
        Self::from_flat(flat, dim)
    }

    /// Replace the weights; they are normalized to sum to one.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_len(weights.len(), self.len(), "dataset weights")?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Argument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Argument("weights sum to zero".into()));
        }
        self.weights = weights.into_iter().map(|w| w / total).collect();
        Ok(self)
    }

    /// Attach cluster labels in `[0, num_clusters)`.
    pub fn with_labels(mut self, labels: Vec<usize>, num_clusters: usize) -> Result<Self> {
        check_len(labels.len(), self.len(), "dataset labels")?;
        if num_clusters == 0 {
            return Err(Error::Argument("cluster count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_clusters) {
            return Err(Error::Argument(format!(
                "label {bad} out of range for {num_clusters} clusters"
            )));
        }
        self.labels = Some(labels);
        self.num_clusters = num_clusters;
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self.num_clusters = 1;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    /// Points listed in `indices`, weights renormalized, labels kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Argument("empty subset".into()));
        }
        let mut points = Vec::with_capacity(indices.len() * self.dim);
        let mut weights = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Argument(format!("index {i} out of range")));
            }
            points.extend_from_slice(self.point(i));
            weights.push(self.weights[i]);
        }
        let mut out = Self::from_flat(points, self.dim)?;
        if weights.iter().sum::<f64>() > 0.0 {
            out = out.with_weights(weights)?;
        }
        if let Some(labels) = &self.labels {
            out = out.with_labels(indices.iter().map(|&i| labels[i]).collect(), self.num_clusters)?;
        }
        Ok(out)
    }

    /// Indices of the points labelled `k`.
    pub fn members(&self, k: usize) -> Result<Vec<usize>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Argument("dataset has no cluster labels".into()))?;
        Ok(labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == k).then_some(i))
            .collect())
    }

    /// The shard of cluster `k`: only its own points, labels dropped.
    pub fn cluster_shard(&self, k: usize) -> Result<Self> {
        let members = self.members(k)?;
        if members.is_empty() {
            return Err(Error::Argument(format!("cluster {k} is empty")));
        }
        Ok(self.subset(&members)?.without_labels())
    }
}
