use crate::error::{bail, Result};
use crate::nn::ValueGrid;

/// Mean softmax cross-entropy over rows, with its gradient.
pub fn cross_entropy(logits: &ValueGrid, labels: &[usize]) -> Result<(f64, ValueGrid)> {
    let (n, c) = (logits.rows(), logits.cols());
    if labels.len() != n {
        bail!(InvalidInput, "{} labels for {n} logit rows", labels.len());
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        bail!(InvalidInput, "label {bad} out of range for {c} classes");
    }
    let mut grad = ValueGrid::zeros(&[n, c]);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label];
        let g = grad.row_mut(i);
        for (gj, v) in g.iter_mut().zip(row) {
            *gj = (v - log_z).exp() / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}
