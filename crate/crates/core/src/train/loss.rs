//! Supervised contrastive loss over a batch with the rest of the batch as
//! the contrast set.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Returns the loss and its gradient with respect to `z` (rows are unit
/// vectors).
///
/// For each anchor `i` with at least one positive, the anchor term is the
/// mean over positives `j` of `logsumexp_{a≠i}(z_i·z_a/τ) − z_i·z_j/τ`;
/// the loss is the mean of the anchor terms. Anchors without positives are
/// skipped.
pub fn supcon_loss<L: PartialEq>(
    z: ArrayView2<'_, f64>,
    labels: &[L],
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    let n = z.nrows();
    if labels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: labels.len(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let sim = z.dot(&z.t()) / tau;

    let positives: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect())
        .collect();
    let anchors = positives.iter().filter(|p| !p.is_empty()).count();
    if anchors == 0 {
        return Err(Error::Data("no anchor in the batch has a positive".into()));
    }
    let inv_anchors = 1.0 / anchors as f64;

    let mut loss = 0.0;
    let mut grad_sim = Array2::<f64>::zeros((n, n));
    let mut probs = vec![0.0; n];
    for i in 0..n {
        let pos = &positives[i];
        if pos.is_empty() {
            continue;
        }
        let row = sim.row(i);
        let max = (0..n)
            .filter(|&a| a != i)
            .map(|a| row[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for a in 0..n {
            if a != i {
                probs[a] = (row[a] - max).exp();
                sum += probs[a];
            }
        }
        let lse = max + sum.ln();
        let inv_pos = 1.0 / pos.len() as f64;
        let term: f64 = pos.iter().map(|&j| lse - row[j]).sum::<f64>() * inv_pos;
        loss += term * inv_anchors;

        for a in 0..n {
            if a != i {
                grad_sim[[i, a]] += probs[a] / sum * inv_anchors;
            }
        }
        for &j in pos {
            grad_sim[[i, j]] -= inv_pos * inv_anchors;
        }
    }

    // s_ia = z_i·z_a / τ, so dL/dz = (G + Gᵀ)·z / τ
    let sym = &grad_sim + &grad_sim.t();
    let grad = sym.dot(&z) / tau;
    Ok((loss, grad))
}
