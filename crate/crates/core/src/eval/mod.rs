//! Retrieval evaluation: per-query metrics, quantile-sampled PR curves,
//! validation-based threshold selection and benchmark files.

pub mod metrics;
pub mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mesh::PartId;
use crate::retrieve::Scored;

pub use metrics::{average_precision, f1_score, r_precision, recall_at_k};
pub use synth::{generate_synthetic_benchmark, Archetype, Jitter, SynthSpec, SyntheticBenchmark};

pub const DEFAULT_THRESHOLDS: usize = 200;
pub const RECALL_KS: [usize; 4] = [5, 10, 20, 100];

/// One benchmark query: an arbitrary member of a ground-truth group and the
/// rest of that group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkQuery {
    pub query_part: PartId,
    pub positives: Vec<PartId>,
}

impl BenchmarkQuery {
    pub fn validate(&self, n_parts: usize) -> Result<()> {
        if self.positives.is_empty() {
            return Err(Error::Data(format!(
                "query {} has no positives",
                self.query_part
            )));
        }
        if self.positives.contains(&self.query_part) {
            return Err(Error::Data(format!(
                "query {} lists itself as a positive",
                self.query_part
            )));
        }
        if let Some(p) = std::iter::once(&self.query_part)
            .chain(&self.positives)
            .find(|&&p| p as usize >= n_parts)
        {
            return Err(Error::Data(format!(
                "part {p} out of range (mesh has {n_parts} parts)"
            )));
        }
        Ok(())
    }

    pub fn positive_set(&self) -> BTreeSet<PartId> {
        self.positives.iter().copied().collect()
    }
}

/// One benchmark file entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkMesh {
    pub mesh: String,
    pub queries: Vec<BenchmarkQuery>,
}

pub fn parse_benchmark(json: &str) -> Result<Vec<BenchmarkMesh>> {
    Ok(serde_json::from_str(json)?)
}

/// A ranking produced for one query, with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub mesh: String,
    pub query_part: PartId,
    /// Every other part, ascending by distance.
    pub ranking: Vec<Scored>,
    pub positives: BTreeSet<PartId>,
}

impl QueryResult {
    pub fn ids(&self) -> Vec<PartId> {
        self.ranking.iter().map(|s| s.part_id).collect()
    }

    /// Selection at `lambda` with the query excluded.
    pub fn selected(&self, lambda: f64) -> BTreeSet<PartId> {
        self.ranking
            .iter()
            .filter(|s| s.distance <= lambda && s.part_id != self.query_part)
            .map(|s| s.part_id)
            .collect()
    }

    fn counts(&self) -> Counts {
        let mut distances = Vec::with_capacity(self.ranking.len());
        let mut tp_prefix = Vec::with_capacity(self.ranking.len() + 1);
        tp_prefix.push(0);
        let mut tp = 0;
        for s in self.ranking.iter().filter(|s| s.part_id != self.query_part) {
            distances.push(s.distance);
            if self.positives.contains(&s.part_id) {
                tp += 1;
            }
            tp_prefix.push(tp);
        }
        Counts {
            distances,
            tp_prefix,
            positives: self.positives.len(),
        }
    }
}

struct Counts {
    distances: Vec<f64>,
    tp_prefix: Vec<usize>,
    positives: usize,
}

impl Counts {
    /// (true positives, selected) at threshold `t`.
    fn at(&self, t: f64) -> (usize, usize) {
        let s = self.distances.partition_point(|&d| d <= t);
        (self.tp_prefix[s], s)
    }
}

fn check_sorted(q: &QueryResult) -> Result<()> {
    if q.positives.is_empty() {
        return Err(Error::Request(format!(
            "query {} has no positives",
            q.query_part
        )));
    }
    if q.ranking.windows(2).any(|w| !(w[0].distance <= w[1].distance)) {
        return Err(Error::Request(format!(
            "ranking for query {} is not sorted by distance",
            q.query_part
        )));
    }
    Ok(())
}

/// Nearest-rank quantiles of `values` at levels k/(n-1), k = 0..n.
pub fn quantile_thresholds(values: &[f64], n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|d| !d.is_nan()).collect();
    if v.is_empty() || n == 0 {
        return Vec::new();
    }
    v.sort_by(f64::total_cmp);
    if n == 1 {
        return vec![v[v.len() - 1]];
    }
    let last = (v.len() - 1) as f64;
    (0..n)
        .map(|k| {
            let idx = (k as f64 * last / (n - 1) as f64).round() as usize;
            v[idx.min(v.len() - 1)]
        })
        .collect()
}

fn pooled_distances(queries: &[QueryResult]) -> Vec<f64> {
    queries
        .iter()
        .flat_map(|q| {
            q.ranking
                .iter()
                .filter(move |s| s.part_id != q.query_part)
                .map(|s| s.distance)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrAveraging {
    /// Per-threshold mean of per-query precision and recall.
    #[default]
    Macro,
    /// Precision and recall from decisions pooled over all queries.
    Micro,
}

impl std::str::FromStr for PrAveraging {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(PrAveraging::Macro),
            "micro" => Ok(PrAveraging::Micro),
            other => Err(Error::Config(format!("unknown averaging `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Trapezoid area under (recall, precision) pairs sorted by recall (then by
/// descending precision, the order a growing threshold produces), extended
/// to recall 0 with the first precision and to (1, 0) if recall 1 is never
/// reached.
pub fn pr_auc(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    if pts.is_empty() {
        return 0.0;
    }
    if pts[0].0 > 0.0 {
        pts.insert(0, (0.0, pts[0].1));
    }
    if pts[pts.len() - 1].0 < 1.0 {
        pts.push((1.0, 0.0));
    }
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

pub fn pr_curve_quantile(
    queries: &[QueryResult],
    n_thresholds: usize,
    averaging: PrAveraging,
) -> Result<PrCurve> {
    if queries.is_empty() {
        return Err(Error::Request("no queries".into()));
    }
    for q in queries {
        check_sorted(q)?;
    }
    let counts: Vec<Counts> = queries.iter().map(QueryResult::counts).collect();
    let thresholds = quantile_thresholds(&pooled_distances(queries), n_thresholds);
    let n = counts.len() as f64;
    let points: Vec<PrPoint> = thresholds
        .iter()
        .map(|&t| {
            let (recall, precision) = match averaging {
                PrAveraging::Macro => {
                    let (mut r, mut p) = (0.0, 0.0);
                    for c in &counts {
                        let (tp, s) = c.at(t);
                        r += tp as f64 / c.positives as f64;
                        p += if s == 0 { 1.0 } else { tp as f64 / s as f64 };
                    }
                    (r / n, p / n)
                }
                PrAveraging::Micro => {
                    let (mut tp, mut s, mut pos) = (0, 0, 0);
                    for c in &counts {
                        let (a, b) = c.at(t);
                        tp += a;
                        s += b;
                        pos += c.positives;
                    }
                    let p = if s == 0 { 1.0 } else { tp as f64 / s as f64 };
                    (tp as f64 / pos as f64, p)
                }
            };
            PrPoint {
                threshold: t,
                recall,
                precision,
            }
        })
        .collect();
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    let auc = if pairs.is_empty() {
        // No distances at all: nothing can be retrieved.
        pr_auc(&[(0.0, 1.0)])
    } else {
        pr_auc(&pairs)
    };
    Ok(PrCurve { points, auc })
}

/// Macro F1 with the selection taken at distance ≤ `lambda`.
pub fn f1_at_lambda(queries: &[QueryResult], lambda: f64) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    queries
        .iter()
        .map(|q| f1_score(&q.selected(lambda), &q.positives))
        .sum::<f64>()
        / queries.len() as f64
}

/// Threshold maximising macro F1 over the quantile grid of validation
/// distances; ties go to the smallest threshold.
pub fn select_lambda_f1(validation: &[QueryResult], n_thresholds: usize) -> Result<(f64, f64)> {
    if validation.is_empty() {
        return Err(Error::Request("validation set is empty".into()));
    }
    let mut grid = quantile_thresholds(&pooled_distances(validation), n_thresholds);
    grid.dedup();
    if grid.is_empty() {
        grid.push(0.0);
    }
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &t in &grid {
        let f = f1_at_lambda(validation, t);
        if f > best.1 {
            best = (t, f);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub mesh: String,
    pub query_part: PartId,
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "R-Prec")]
    pub r_prec: f64,
    #[serde(rename = "R@5")]
    pub r5: f64,
    #[serde(rename = "R@10")]
    pub r10: f64,
    #[serde(rename = "R@20")]
    pub r20: f64,
    #[serde(rename = "R@100")]
    pub r100: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
}

/// Macro means, named after the usual results-table columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    #[serde(rename = "AUC PR")]
    pub auc_pr: f64,
    #[serde(rename = "R-Prec")]
    pub r_prec: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "R@5")]
    pub r5: f64,
    #[serde(rename = "R@10")]
    pub r10: f64,
    #[serde(rename = "R@20")]
    pub r20: f64,
    #[serde(rename = "R@100")]
    pub r100: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: MacroMetrics,
    pub lambda: f64,
    pub validation_f1: f64,
    pub query_count: usize,
    pub validation_query_count: usize,
    pub averaging: PrAveraging,
    pub curve: PrCurve,
    pub per_query: Vec<QueryMetrics>,
}

pub fn query_metrics(q: &QueryResult, lambda: f64) -> Result<QueryMetrics> {
    let ids = q.ids();
    let pos = &q.positives;
    Ok(QueryMetrics {
        mesh: q.mesh.clone(),
        query_part: q.query_part,
        ap: average_precision(&ids, pos)?,
        r_prec: r_precision(&ids, pos)?,
        r5: recall_at_k(&ids, pos, RECALL_KS[0])?,
        r10: recall_at_k(&ids, pos, RECALL_KS[1])?,
        r20: recall_at_k(&ids, pos, RECALL_KS[2])?,
        r100: recall_at_k(&ids, pos, RECALL_KS[3])?,
        f1: f1_score(&q.selected(lambda), pos),
    })
}

/// Selects λ on `validation`, then reports macro metrics on `test`.
pub fn evaluate(
    test: &[QueryResult],
    validation: &[QueryResult],
    n_thresholds: usize,
    averaging: PrAveraging,
    exec: Exec,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Request("test split has no queries".into()));
    }
    let (lambda, validation_f1) = select_lambda_f1(validation, n_thresholds)?;
    let per_query = exec.try_map(test, |q| query_metrics(q, lambda))?;
    let curve = pr_curve_quantile(test, n_thresholds, averaging)?;
    let n = per_query.len() as f64;
    let mean = |f: fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    let metrics = MacroMetrics {
        auc_pr: curve.auc,
        r_prec: mean(|m| m.r_prec),
        map: mean(|m| m.ap),
        r5: mean(|m| m.r5),
        r10: mean(|m| m.r10),
        r20: mean(|m| m.r20),
        r100: mean(|m| m.r100),
        f1: mean(|m| m.f1),
    };
    Ok(MetricsReport {
        metrics,
        lambda,
        validation_f1,
        query_count: test.len(),
        validation_query_count: validation.len(),
        averaging,
        curve,
        per_query,
    })
}
