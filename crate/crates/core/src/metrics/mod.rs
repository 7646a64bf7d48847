//! Quantitative evaluation metrics: accuracy, squared error, exact 1-D
//! Wasserstein distance, type-token ratio, the seven-statistic linguistic
//! suite, relative variance deviation (Var%) and the per-dimension
//! rigidity/polarization panel.
//!
//! Variances are population variances (divide by n) throughout.

mod linguistic;
mod wasserstein;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainKind, NUM_VALUES};

pub use linguistic::{document_stats, linguistic_suite, DocumentStats, LINGUISTIC_KEYS};
pub use wasserstein::wasserstein1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("ground-truth variance is zero")]
    DegenerateGroundTruth,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

pub fn accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64, MetricsError> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(pred.len(), truth.len())?;
    check_finite(pred)?;
    check_finite(truth)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(sum / pred.len() as f64)
}

/// Distinct tokens over total tokens.
pub fn ttr<S: AsRef<str>>(tokens: &[S]) -> Result<f64, MetricsError> {
    if tokens.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let distinct: HashSet<&str> = tokens.iter().map(AsRef::as_ref).collect();
    Ok(distinct.len() as f64 / tokens.len() as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn population_variance(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / xs.len() as f64
}

/// (σ²_sim − σ²_gt) / σ²_gt × 100. Negative means variance collapse.
pub fn var_pct(sim: &[f64], gt: &[f64]) -> Result<f64, MetricsError> {
    for xs in [sim, gt] {
        if xs.len() < 2 {
            return Err(MetricsError::TooFewSamples {
                needed: 2,
                got: xs.len(),
            });
        }
        check_finite(xs)?;
    }
    let var_gt = population_variance(gt);
    if var_gt == 0.0 {
        return Err(MetricsError::DegenerateGroundTruth);
    }
    let var_sim = population_variance(sim);
    Ok((var_sim - var_gt) / var_gt * 100.0)
}

/// Unweighted mean of per-domain Var% values.
pub fn aggregate_var_pct(per_domain: &[f64]) -> Result<f64, MetricsError> {
    if per_domain.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    check_finite(per_domain)?;
    Ok(mean(per_domain))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    /// σ_sim / σ_gt × 100.
    pub std_rel_pct: f64,
    /// |mean(sim)| − |mean(gt)|; positive means drift toward the extremes.
    pub mean_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelStats {
    pub per_dimension: Vec<PanelRow>,
    pub avg_std_rel_pct: f64,
    pub avg_mean_abs_diff: f64,
}

/// Rigidity (standard deviation ratio) and polarization (absolute mean shift)
/// per value dimension, plus their unweighted averages.
pub fn panel_stats<S: AsRef<[f64]>>(sim: &[S], gt: &[S]) -> Result<PanelStats, MetricsError> {
    if sim.len() != NUM_VALUES || gt.len() != NUM_VALUES {
        return Err(MetricsError::LengthMismatch {
            left: sim.len(),
            right: gt.len(),
        });
    }
    let mut rows = Vec::with_capacity(NUM_VALUES);
    for (s, g) in sim.iter().zip(gt) {
        let (s, g) = (s.as_ref(), g.as_ref());
        for xs in [s, g] {
            if xs.len() < 2 {
                return Err(MetricsError::TooFewSamples {
                    needed: 2,
                    got: xs.len(),
                });
            }
            check_finite(xs)?;
        }
        let sd_gt = population_variance(g).sqrt();
        if sd_gt == 0.0 {
            return Err(MetricsError::DegenerateGroundTruth);
        }
        rows.push(PanelRow {
            std_rel_pct: population_variance(s).sqrt() / sd_gt * 100.0,
            mean_abs_diff: mean(s).abs() - mean(g).abs(),
        });
    }
    let n = rows.len() as f64;
    Ok(PanelStats {
        avg_std_rel_pct: rows.iter().map(|r| r.std_rel_pct).sum::<f64>() / n,
        avg_mean_abs_diff: rows.iter().map(|r| r.mean_abs_diff).sum::<f64>() / n,
        per_dimension: rows,
    })
}

/// Named metric values for one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub domain: DomainKind,
    pub sample_count: usize,
    pub values: BTreeMap<String, f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(domain: DomainKind, sample_count: usize) -> Self {
        MetricReport {
            domain,
            sample_count,
            values: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, value: f64) {
        self.values.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn merge(&mut self, prefix: &str, other: &MetricReport) {
        for (k, v) in &other.values {
            self.values.insert(format!("{prefix}{k}"), *v);
        }
        for (k, v) in &other.metadata {
            self.metadata.insert(k.clone(), v.clone());
        }
    }

    /// Flat `key=value` lines, sorted by key within each section.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "domain={}", self.domain);
        let _ = writeln!(out, "sample_count={}", self.sample_count);
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "meta.{k}={v}");
        }
        for (k, v) in &self.values {
            let _ = writeln!(out, "metric.{k}={v}");
        }
        out
    }
}

fn check_lengths(left: usize, right: usize) -> Result<(), MetricsError> {
    if left != right {
        return Err(MetricsError::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

fn check_finite(xs: &[f64]) -> Result<(), MetricsError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(MetricsError::NonFinite(i)),
        None => Ok(()),
    }
}
