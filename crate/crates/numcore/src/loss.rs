//! Scalar losses returning their value and gradient with respect to the
//! prediction. Sums run in `f64`.

use crate::error::{NumError, Result};

/// Mean squared error over all elements, with gradient w.r.t. `pred`.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(NumError::ShapeMismatch {
            expected: vec![target.len()],
            actual: vec![pred.len()],
        });
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

fn check_label(label: f64) -> Result<()> {
    if label == 0.0 || label == 1.0 {
        Ok(())
    } else {
        Err(NumError::NonBinaryLabel(label))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a raw logit: `max(x,0) - x·y + ln(1 + e^{-|x|})`.
/// The gradient is `σ(x) - y`.
pub fn bce_with_logits(logit: f64, label: f64) -> Result<(f64, f64)> {
    check_label(label)?;
    if !logit.is_finite() {
        return Err(NumError::NonFinite {
            context: "bce logit".into(),
        });
    }
    let loss = logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p();
    Ok((loss, sigmoid(logit) - label))
}

/// Mean BCE over a batch of logits; the gradient includes the `1/n` factor.
pub fn bce_mean(logits: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() {
        return Err(NumError::ShapeMismatch {
            expected: vec![labels.len()],
            actual: vec![logits.len()],
        });
    }
    let n = logits.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.iter().zip(labels) {
        let (l, g) = bce_with_logits(x, y)?;
        total += l;
        grad.push(g / n);
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, vec![0.0, 0.0]));
        assert_eq!(mse(&[1.0, 1.0], &[0.0, 0.0]).unwrap().0, 1.0);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bce_cases() {
        let (l, g) = bce_with_logits(0.0, 1.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g + 0.5).abs() < 1e-12);
        let (l, _) = bce_with_logits(30.0, 1.0).unwrap();
        assert!(l >= 0.0 && l < 1e-12);
        let (l, _) = bce_with_logits(-800.0, 1.0).unwrap();
        assert!((l - 800.0).abs() < 1e-9);
        assert!(bce_with_logits(0.0, 0.5).is_err());
        for &x in &[-3.0, -0.2, 0.7, 5.0] {
            for &y in &[0.0, 1.0] {
                let (_, g) = bce_with_logits(x, y).unwrap();
                assert!((g - (sigmoid(x) - y)).abs() < 1e-15);
            }
        }
    }
}
