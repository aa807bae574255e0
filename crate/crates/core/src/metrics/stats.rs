//! Summary statistics over per-shape records.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::ShapeMetrics;
use crate::error::{Error, Result};

/// Sample Pearson correlation. Zero variance in either input is an error,
/// never a silent 0.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} xs, {} ys", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate("correlation needs at least two pairs".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::Degenerate("correlation undefined for zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// two-sided
    pub p: f64,
    pub df: f64,
}

/// Two-sided paired t-test on per-shape differences.
pub fn paired_t_test(deltas: &[f64]) -> Result<TTest> {
    if deltas.len() < 2 {
        return Err(Error::Degenerate("t-test needs at least two differences".into()));
    }
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::Degenerate("t-test undefined for zero-variance differences".into()));
    }
    let df = n - 1.0;
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Degenerate(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, p, df })
}

/// Mean and sample standard deviation of one metric for one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: String,
    pub metric: String,
    pub mean: f64,
    /// zero for a single shape
    pub std: f64,
    pub n: usize,
}

/// Groups `(variant, metrics)` records by variant, in first-seen order.
pub fn aggregate(records: &[(String, ShapeMetrics)]) -> Vec<AggregateRow> {
    let mut variants: Vec<&str> = Vec::new();
    for (v, _) in records {
        if !variants.contains(&v.as_str()) {
            variants.push(v);
        }
    }
    let mut rows = Vec::new();
    for variant in variants {
        let group: Vec<&ShapeMetrics> = records.iter().filter(|(v, _)| v == variant).map(|(_, m)| m).collect();
        let n = group.len();
        let names = group[0].scalars().map(|(name, _)| name);
        for (k, name) in names.iter().enumerate() {
            let vals: Vec<f64> = group.iter().map(|m| m.scalars()[k].1).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            rows.push(AggregateRow {
                variant: variant.to_string(),
                metric: name.to_string(),
                mean,
                std,
                n,
            });
        }
    }
    rows
}

/// One cell of the reconstruction-by-segmentation correlation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub reconstruction: String,
    pub segmentation: String,
    /// `None` when either metric has no spread
    pub r: Option<f64>,
}

pub const RECONSTRUCTION_METRICS: [&str; 4] = ["cd_l1", "cd_l2", "nc", "f1"];
pub const SEGMENTATION_METRICS: [&str; 3] = ["miou", "accuracy", "consistency"];

/// Pearson r between every reconstruction and segmentation metric across shapes.
pub fn correlations(records: &[ShapeMetrics]) -> Vec<CorrelationEntry> {
    let column = |name: &str| -> Vec<f64> {
        records
            .iter()
            .map(|m| m.scalars().into_iter().find(|(n, _)| *n == name).map_or(f64::NAN, |(_, v)| v))
            .collect()
    };
    let mut out = Vec::new();
    for rec in RECONSTRUCTION_METRICS {
        for seg in SEGMENTATION_METRICS {
            out.push(CorrelationEntry {
                reconstruction: rec.into(),
                segmentation: seg.into(),
                r: pearson(&column(rec), &column(seg)).ok(),
            });
        }
    }
    out
}
