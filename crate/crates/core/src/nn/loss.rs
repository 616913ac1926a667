use ndarray::{Array2, ArrayView2};

/// Row-wise log-softmax.
pub fn log_softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Summed cross-entropy `Σ_i −log p(y_i | x_i)` and its gradient with respect
/// to the logits.
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    assert_eq!(logits.nrows(), labels.len());
    let logp = log_softmax(logits);
    let mut loss = 0.0;
    let mut grad = logp.mapv(f64::exp);
    for (i, &y) in labels.iter().enumerate() {
        loss -= logp[[i, y]];
        grad[[i, y]] -= 1.0;
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        let logits = array![[800.0, 0.0], [0.0, 800.0]];
        let (loss, grad) = softmax_cross_entropy(logits.view(), &[0, 1]);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-300));
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let (loss, _) = softmax_cross_entropy(array![[0.0, 0.0, 0.0]].view(), &[2]);
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }
}
