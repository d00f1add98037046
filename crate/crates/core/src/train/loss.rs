//! Binary cross-entropy on logits.

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-[y log s(x) + (1 - y) log(1 - s(x))]` in the form
/// `max(x, 0) - x y + log(1 + exp(-|x|))`.
pub fn bce_term(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// Mean BCE over all entries. `labels` are taken as given (already smoothed).
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(logits.len(), labels.len(), "logits and labels differ in length");
    if logits.is_empty() {
        return 0.0;
    }
    let sum: f64 = logits.iter().zip(labels).map(|(&x, &y)| bce_term(x, y)).sum();
    sum / logits.len() as f64
}

/// `y (1 - eps) + eps / n`, where `n` is the length of the label vector.
pub fn smooth_label(label: f64, eps: f64, n: usize) -> f64 {
    label * (1.0 - eps) + eps / n as f64
}

pub fn smooth_labels(labels: &[f64], eps: f64) -> Vec<f64> {
    labels.iter().map(|&y| smooth_label(y, eps, labels.len())).collect()
}
