use crate::error::{FedFgError, Result};

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Returns `(-log softmax(logits)[label], softmax(logits) - onehot(label))`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(FedFgError::invalid("cross-entropy needs at least two classes"));
    }
    if label >= logits.len() {
        return Err(FedFgError::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(FedFgError::NonFinite("logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - log_sum).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss.max(0.0), grad))
}

/// Index of the largest entry; ties resolve to the lowest index and NaN never wins.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let (loss, grad) = softmax_cross_entropy(&[0.3; 10], 4).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((grad[4] + 0.9).abs() < 1e-12);
        assert!((grad[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_logit() {
        let mut logits = vec![0.0; 5];
        logits[2] = 1e6;
        let (loss, grad) = softmax_cross_entropy(&logits, 2).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(softmax_cross_entropy(&[1.0], 0).is_err());
        assert!(softmax_cross_entropy(&[1.0, 2.0], 2).is_err());
        assert!(matches!(
            softmax_cross_entropy(&[1.0, f64::NAN], 0),
            Err(FedFgError::NonFinite(_))
        ));
    }

    #[test]
    fn argmax_ties_and_nan() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[f64::NAN, 0.5, f64::NAN]), 1);
        assert_eq!(argmax(&[f64::NAN, f64::NAN]), 0);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[0.1, 2.0, -1.0]);
        let b = softmax(&[100.1, 102.0, 99.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
