//! Label-smoothed cross-entropy.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::model::ops::softmax;

/// Smoothed target `q_k = (1 - eps) [k = label] + eps / C`.
pub fn smoothed_targets(num_classes: usize, label: usize, eps: f64) -> Array1<f64> {
    let mut q = Array1::from_elem(num_classes, eps / num_classes as f64);
    q[label] += 1.0 - eps;
    q
}

fn check(logits: ArrayView1<f64>, label: usize, eps: f64) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 classes, got {}", logits.len())));
    }
    if label >= logits.len() {
        return Err(Error::InvalidConfig(format!("label {label} out of range for {} classes", logits.len())));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidConfig(format!("label smoothing {eps} must lie in [0, 1)")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

/// `-sum_k q_k log softmax(logits)_k`, evaluated with a log-sum-exp.
pub fn smoothed_cross_entropy(logits: ArrayView1<f64>, label: usize, eps: f64) -> Result<f64> {
    check(logits, label, eps)?;
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let q = smoothed_targets(logits.len(), label, eps);
    Ok(q.iter().zip(logits.iter()).map(|(qk, zk)| qk * (lse - zk)).sum())
}

/// Gradient with respect to the logits: `softmax(logits) - q`.
pub fn smoothed_cross_entropy_backward(logits: ArrayView1<f64>, label: usize, eps: f64) -> Result<Array1<f64>> {
    check(logits, label, eps)?;
    Ok(softmax(logits) - smoothed_targets(logits.len(), label, eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn uniform_logits_give_ln_c() {
        for c in [2usize, 3, 12] {
            for eps in [0.0, 0.1, 0.5] {
                let l = smoothed_cross_entropy(Array1::from_elem(c, 0.7).view(), 0, eps).unwrap();
                assert!((l - (c as f64).ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn three_class_worked_value() {
        // straight-line scalar evaluation
        let e = std::f64::consts::E;
        let z = e + 2.0;
        let logp = [(e / z).ln(), (1.0 / z).ln(), (1.0 / z).ln()];
        let q = [0.9 + 0.1 / 3.0, 0.1 / 3.0, 0.1 / 3.0];
        let expect = -(q[0] * logp[0] + q[1] * logp[1] + q[2] * logp[2]);
        let got = smoothed_cross_entropy(arr1(&[1.0, 0.0, 0.0]).view(), 0, 0.1).unwrap();
        assert!((got - expect).abs() < 1e-14, "{got} vs {expect}");
        assert!((got - 0.618_111_380_598_717_8).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_approaches_zero() {
        let l = smoothed_cross_entropy(arr1(&[60.0, 0.0, 0.0]).view(), 0, 0.0).unwrap();
        assert!((0.0..1e-20).contains(&l));
    }

    #[test]
    fn gradient_vanishes_at_target() {
        // logits = log q makes softmax(logits) = q
        let q = smoothed_targets(4, 2, 0.1);
        let g = smoothed_cross_entropy_backward(q.mapv(f64::ln).view(), 2, 0.1).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn errors() {
        assert!(smoothed_cross_entropy(arr1(&[1.0]).view(), 0, 0.1).is_err());
        assert!(smoothed_cross_entropy(arr1(&[1.0, 2.0]).view(), 2, 0.1).is_err());
        assert!(smoothed_cross_entropy(arr1(&[f64::NAN, 2.0]).view(), 0, 0.1).is_err());
        assert!(smoothed_cross_entropy(arr1(&[1.0, 2.0]).view(), 0, 1.0).is_err());
    }
}
