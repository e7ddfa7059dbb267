//! Per-query ranking metrics over binary relevance.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::mesh::PartId;

fn check(positives: &BTreeSet<PartId>) -> Result<()> {
    if positives.is_empty() {
        Err(Error::Request("positive set is empty".into()))
    } else {
        Ok(())
    }
}

/// Mean of precision@rank over the positives; positives that never appear in
/// the ranking contribute zero.
pub fn average_precision(ranking: &[PartId], positives: &BTreeSet<PartId>) -> Result<f64> {
    check(positives)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, p) in ranking.iter().enumerate() {
        if positives.contains(p) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / positives.len() as f64)
}

fn hits_in_top(ranking: &[PartId], positives: &BTreeSet<PartId>, k: usize) -> usize {
    ranking
        .iter()
        .take(k)
        .filter(|p| positives.contains(p))
        .count()
}

/// Precision within the top |positives|.
pub fn r_precision(ranking: &[PartId], positives: &BTreeSet<PartId>) -> Result<f64> {
    check(positives)?;
    let r = positives.len();
    Ok(hits_in_top(ranking, positives, r) as f64 / r as f64)
}

pub fn recall_at_k(ranking: &[PartId], positives: &BTreeSet<PartId>, k: usize) -> Result<f64> {
    check(positives)?;
    if k == 0 {
        return Err(Error::Request("k must be at least 1".into()));
    }
    Ok(hits_in_top(ranking, positives, k) as f64 / positives.len() as f64)
}

/// F1 between a selected set and the positives.
pub fn f1_score(selected: &BTreeSet<PartId>, positives: &BTreeSet<PartId>) -> f64 {
    let tp = selected.intersection(positives).count();
    let denom = selected.len() + positives.len();
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}
