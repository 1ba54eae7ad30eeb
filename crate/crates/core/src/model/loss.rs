use super::layers::sigmoid;
use super::real::Real;
use crate::error::{Error, Result};

/// Label of the fake class.
pub const FAKE: u8 = 1;
pub const REAL: u8 = 0;

/// Class-weighted binary cross-entropy on logits.
///
/// Per-sample losses are weighted by `class_weights[label]` and the result
/// is divided by the total weight, so the loss scale does not depend on the
/// batch composition. Without explicit weights each present class gets
/// weight `1/count`, i.e. equal total mass. Returns the loss and its
/// gradient with respect to every logit.
pub fn balanced_bce<T: Real>(
    logits: &[T],
    labels: &[u8],
    class_weights: Option<[f64; 2]>,
) -> Result<(T, Vec<T>)> {
    if logits.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if logits.len() != labels.len() {
        return Err(Error::invalid("logit and label counts differ"));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels must be 0 (real) or 1 (fake)"));
    }
    let weights = class_weights.unwrap_or_else(|| {
        let fakes = labels.iter().filter(|&&y| y == FAKE).count();
        let reals = labels.len() - fakes;
        let inv = |c: usize| if c == 0 { 0.0 } else { 1.0 / c as f64 };
        [inv(reals), inv(fakes)]
    });
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("class weights must be non-negative"));
    }
    let total: f64 = labels.iter().map(|&y| weights[y as usize]).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("class weights sum to zero over the batch"));
    }
    let mut loss = T::ZERO;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let w = T::from_f64(weights[y as usize] / total);
        let yt = T::from_f64(y as f64);
        let relu = if z > T::ZERO { z } else { T::ZERO };
        let l = relu - z * yt + (T::ONE + (-z.abs()).exp()).ln();
        loss += w * l;
        grad.push(w * (sigmoid(z) - yt));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn zero_logits_give_ln2() {
        let (l, _) = balanced_bce(&[0.0f64, 0.0], &[0, 1], None).unwrap();
        assert!((l - LN2).abs() < 1e-15);
        let (l, g) = balanced_bce(&[0.0f64, 0.0, 0.0], &[0, 1, 1], None).unwrap();
        assert!((l - LN2).abs() < 1e-15);
        // real weight is twice a fake weight
        assert!((g[0] / g[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let (l, _) = balanced_bce(&[-20.0f64, 20.0], &[0, 1], None).unwrap();
        assert!(l < 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z = [0.3f64, -1.2, 2.0, 0.7, -0.1];
        let y = [0u8, 1, 1, 0, 1];
        let (_, g) = balanced_bce(&z, &y, None).unwrap();
        for i in 0..z.len() {
            let mut p = z;
            p[i] += 1e-6;
            let mut m = z;
            m[i] -= 1e-6;
            let num = (balanced_bce(&p, &y, None).unwrap().0 - balanced_bce(&m, &y, None).unwrap().0) / 2e-6;
            assert!((num - g[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(balanced_bce::<f64>(&[], &[], None).is_err());
        assert!(balanced_bce(&[0.0f64], &[2], None).is_err());
        assert!(balanced_bce(&[0.0f64], &[0, 1], None).is_err());
    }
}
