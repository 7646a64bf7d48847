//! Circumplex structure of value embeddings.
//!
//! Embeddings are projected to the plane with PCA, ordered by angle around
//! their centroid, and compared with the circumplex order by the minimum
//! Kendall inversion count over all cyclic rotations of the observed sequence
//! (the circular inversion distance). The circular inversion score normalizes
//! that count by the number of pairs.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::domain::{canonical_order, ValueDimension};

/// Dimensions left out of the circumplex check by default.
pub const DEFAULT_EXCLUSIONS: [ValueDimension; 2] = [ValueDimension::Power, ValueDimension::Security];

const CENTROID_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("need at least 3 labelled vectors, got {0}")]
    TooFewPoints(usize),
    #[error("embedding width must be at least 2, got {0}")]
    TooNarrow(usize),
    #[error("row {0} has a different width")]
    RaggedRows(usize),
    #[error("row {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("label {0} appears more than once")]
    DuplicateLabel(ValueDimension),
    #[error("labels and vectors differ in count")]
    ShapeMismatch,
    #[error("all vectors are identical")]
    DegenerateData,
    #[error("point {0} coincides with the centroid")]
    CentroidCoincidence(ValueDimension),
    #[error("sequences do not share the same label set")]
    LabelMismatch,
    #[error("only {0} dimensions remain after exclusion")]
    TooFewRemaining(usize),
    #[error("malformed embedding file at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    labels: Vec<ValueDimension>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(labels: Vec<ValueDimension>, vectors: Vec<Vec<f64>>) -> Result<Self, TopologyError> {
        if labels.len() != vectors.len() {
            return Err(TopologyError::ShapeMismatch);
        }
        if labels.len() < 3 {
            return Err(TopologyError::TooFewPoints(labels.len()));
        }
        let width = vectors[0].len();
        if width < 2 {
            return Err(TopologyError::TooNarrow(width));
        }
        let mut seen = HashSet::new();
        for (i, (label, row)) in labels.iter().zip(&vectors).enumerate() {
            if !seen.insert(*label) {
                return Err(TopologyError::DuplicateLabel(*label));
            }
            if row.len() != width {
                return Err(TopologyError::RaggedRows(i));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(TopologyError::NonFinite(i));
            }
        }
        Ok(EmbeddingSet { labels, vectors })
    }

    pub fn labels(&self) -> &[ValueDimension] {
        &self.labels
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn width(&self) -> usize {
        self.vectors[0].len()
    }

    /// One line per label: the label followed by its tab-separated values.
    /// Values use the shortest round-trip decimal form, so parsing the
    /// output reproduces the matrix bit for bit.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (label, row) in self.labels.iter().zip(&self.vectors) {
            out.push_str(label.name());
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, TopologyError> {
        let mut labels = Vec::new();
        let mut vectors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let parse_err = |reason: String| TopologyError::Parse { line: i + 1, reason };
            let label: ValueDimension = fields
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|e: crate::domain::DomainError| parse_err(e.to_string()))?;
            let row = fields
                .map(|f| f.trim().parse::<f64>().map_err(|e| parse_err(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            labels.push(label);
            vectors.push(row);
        }
        EmbeddingSet::new(labels, vectors)
    }
}

pub fn filter_dimensions(e: &EmbeddingSet, excluded: &[ValueDimension]) -> Result<EmbeddingSet, TopologyError> {
    let (labels, vectors): (Vec<_>, Vec<_>) = e
        .labels
        .iter()
        .zip(&e.vectors)
        .filter(|(l, _)| !excluded.contains(l))
        .map(|(l, v)| (*l, v.clone()))
        .unzip();
    if labels.len() < 3 {
        return Err(TopologyError::TooFewRemaining(labels.len()));
    }
    EmbeddingSet::new(labels, vectors)
}

/// Projection onto the top two principal axes of the (population) covariance.
/// Each axis is signed so that its largest-magnitude coordinate is positive.
pub fn pca2d(e: &EmbeddingSet) -> Result<Vec<[f64; 2]>, TopologyError> {
    let n = e.vectors.len();
    let d = e.width();
    let mut x = DMatrix::from_fn(n, d, |i, j| e.vectors[i][j]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let total: f64 = x.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(TopologyError::DegenerateData);
    }
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut axes: Vec<usize> = (0..d).collect();
    axes.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut coords = vec![[0.0; 2]; n];
    for (c, &axis) in axes.iter().take(2).enumerate() {
        let proj = &x * eig.eigenvectors.column(axis);
        let mut pivot = 0;
        for i in 1..n {
            if proj[i].abs() > proj[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if proj[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[i][c] = sign * proj[i];
        }
    }
    Ok(coords)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircularSequence {
    order: Vec<ValueDimension>,
}

impl CircularSequence {
    pub fn new(order: Vec<ValueDimension>) -> Result<Self, TopologyError> {
        let mut seen = HashSet::new();
        for l in &order {
            if !seen.insert(*l) {
                return Err(TopologyError::DuplicateLabel(*l));
            }
        }
        Ok(CircularSequence { order })
    }

    /// The circumplex order restricted to the given labels.
    pub fn circumplex(labels: &[ValueDimension]) -> Self {
        let order = canonical_order().into_iter().filter(|d| labels.contains(d)).collect();
        CircularSequence { order }
    }

    pub fn order(&self) -> &[ValueDimension] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Shift left by `k` steps.
    pub fn rotate(&self, k: usize) -> Self {
        let mut order = self.order.clone();
        if !order.is_empty() {
            let k = k % order.len();
            order.rotate_left(k);
        }
        CircularSequence { order }
    }

    pub fn reversed(&self) -> Self {
        let mut order = self.order.clone();
        order.reverse();
        CircularSequence { order }
    }
}

/// Labels sorted by ascending angle in [−π, π) around the centroid; equal
/// angles fall back to circumplex order.
pub fn angular_order(labels: &[ValueDimension], points: &[[f64; 2]]) -> Result<CircularSequence, TopologyError> {
    if labels.len() != points.len() {
        return Err(TopologyError::ShapeMismatch);
    }
    let angles = angles(labels, points)?;
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&a, &b| {
        angles[a]
            .total_cmp(&angles[b])
            .then(labels[a].index().cmp(&labels[b].index()))
    });
    CircularSequence::new(idx.into_iter().map(|i| labels[i]).collect())
}

fn angles(labels: &[ValueDimension], points: &[[f64; 2]]) -> Result<Vec<f64>, TopologyError> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    points
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            if dx.hypot(dy) < CENTROID_TOLERANCE {
                return Err(TopologyError::CentroidCoincidence(*l));
            }
            let a = dy.atan2(dx);
            Ok(if a >= std::f64::consts::PI {
                -std::f64::consts::PI
            } else {
                a
            })
        })
        .collect()
}

/// Inversions in a sequence of distinct ranks, by merge counting.
pub fn count_inversions(seq: &[usize]) -> usize {
    fn sort_count(v: &mut [usize], buf: &mut Vec<usize>) -> usize {
        let n = v.len();
        if n < 2 {
            return 0;
        }
        let mid = n / 2;
        let mut count = sort_count(&mut v[..mid], buf) + sort_count(&mut v[mid..], buf);
        buf.clear();
        let (mut i, mut j) = (0, mid);
        while i < mid && j < n {
            if v[i] <= v[j] {
                buf.push(v[i]);
                i += 1;
            } else {
                buf.push(v[j]);
                count += mid - i;
                j += 1;
            }
        }
        buf.extend_from_slice(&v[i..mid]);
        buf.extend_from_slice(&v[j..n]);
        v.copy_from_slice(buf);
        count
    }
    let mut v = seq.to_vec();
    sort_count(&mut v, &mut Vec::with_capacity(seq.len()))
}

fn ranks_against(obs: &CircularSequence, gt: &CircularSequence) -> Result<Vec<usize>, TopologyError> {
    if obs.len() != gt.len() || obs.len() < 3 {
        return Err(TopologyError::LabelMismatch);
    }
    obs.order
        .iter()
        .map(|l| gt.order.iter().position(|g| g == l).ok_or(TopologyError::LabelMismatch))
        .collect()
}

/// Minimum inversion count between any cyclic rotation of `obs` and `gt`.
pub fn circular_inversion_distance(obs: &CircularSequence, gt: &CircularSequence) -> Result<usize, TopologyError> {
    let mut ranks = ranks_against(obs, gt)?;
    let mut best = usize::MAX;
    for _ in 0..ranks.len() {
        best = best.min(count_inversions(&ranks));
        ranks.rotate_left(1);
    }
    Ok(best)
}

pub fn cis(obs: &CircularSequence, gt: &CircularSequence) -> Result<f64, TopologyError> {
    let d = circular_inversion_distance(obs, gt)?;
    let n = obs.len();
    Ok(1.0 - d as f64 / (n * (n - 1) / 2) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub label: ValueDimension,
    pub x: f64,
    pub y: f64,
    pub angle: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CisSummary {
    pub n: usize,
    pub d_circ: usize,
    pub cis: f64,
    pub observed: CircularSequence,
    /// CIS against the circumplex traversed in the opposite direction.
    pub reversed_cis: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyAnalysis {
    pub rows: Vec<PlotRow>,
    pub summary: CisSummary,
}

/// Full pipeline: exclusion, PCA, angular order and CIS against the
/// circumplex. The reversed-direction score is computed only on request.
pub fn analyze(
    e: &EmbeddingSet,
    excluded: &[ValueDimension],
    reversed_diagnostic: bool,
) -> Result<TopologyAnalysis, TopologyError> {
    let kept = filter_dimensions(e, excluded)?;
    let coords = pca2d(&kept)?;
    let observed = angular_order(kept.labels(), &coords)?;
    let angle_list = angles(kept.labels(), &coords)?;
    let gt = CircularSequence::circumplex(kept.labels());
    let d_circ = circular_inversion_distance(&observed, &gt)?;
    let score = cis(&observed, &gt)?;
    let reversed_cis = if reversed_diagnostic {
        Some(cis(&observed, &gt.reversed())?)
    } else {
        None
    };
    let rows = kept
        .labels()
        .iter()
        .zip(&coords)
        .zip(angle_list)
        .map(|((label, c), angle)| PlotRow {
            label: *label,
            x: c[0],
            y: c[1],
            angle,
            rank: observed.order().iter().position(|l| l == label).unwrap_or(0),
        })
        .collect();
    Ok(TopologyAnalysis {
        rows,
        summary: CisSummary {
            n: kept.labels().len(),
            d_circ,
            cis: score,
            observed,
            reversed_cis,
        },
    })
}
