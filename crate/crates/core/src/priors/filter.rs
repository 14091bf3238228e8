//! Training loss that ignores zero and outlying targets.

use crate::error::Result;
use crate::metrics::FilterMask;

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredLoss {
    pub loss: f64,
    /// `∂loss/∂prediction`; exactly zero in masked coordinates.
    pub gradient: Vec<f64>,
    pub kept: usize,
    /// Set when every target was masked and the loss degenerated to zero.
    pub all_masked: bool,
}

/// Mean squared error over the entries whose targets pass the IQR filter
/// built from this batch's targets.
pub fn filtered_loss(predictions: &[f64], targets: &[f64], c: f64) -> Result<FilteredLoss> {
    let mask = FilterMask::build(targets, c)?;
    Ok(masked_mse(predictions, targets, &mask.keep))
}

/// Mean squared error over kept entries.
pub fn masked_mse(predictions: &[f64], targets: &[f64], keep: &[bool]) -> FilteredLoss {
    let kept = keep.iter().filter(|&&k| k).count();
    let mut gradient = vec![0.0; predictions.len()];
    if kept == 0 {
        return FilteredLoss {
            loss: 0.0,
            gradient,
            kept,
            all_masked: true,
        };
    }
    let scale = 1.0 / kept as f64;
    let mut loss = 0.0;
    for (k, ((&p, &y), &keep)) in predictions.iter().zip(targets).zip(keep).enumerate() {
        if keep {
            let e = p - y;
            loss += e * e * scale;
            gradient[k] = 2.0 * e * scale;
        }
    }
    FilteredLoss {
        loss,
        gradient,
        kept,
        all_masked: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vacuous_mask_is_plain_mse() {
        let pred = [1.0, 2.5, 3.0, 4.0];
        let y = [1.5, 2.0, 3.0, 4.5];
        let mse: f64 = pred.iter().zip(&y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / 4.0;
        assert!((filtered_loss(&pred, &y, 1.5).unwrap().loss - mse).abs() < 1e-15);
    }

    #[test]
    fn error_at_zero_target_is_invisible() {
        let out = filtered_loss(&[7.0, 2.0, 3.0, 4.0], &[0.0, 2.0, 3.0, 4.0], 1.5).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.gradient[0], 0.0);
    }

    #[test]
    fn all_masked_flags_and_zeroes() {
        let out = filtered_loss(&[1.0, 2.0], &[0.0, 0.0], 1.5).unwrap();
        assert!(out.all_masked);
        assert_eq!(out.loss, 0.0);
        assert!(out.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn matches_subset_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let len = rng.random_range(1..40);
            let y: Vec<f64> = (0..len)
                .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(-5.0..5.0f64).powi(3) })
                .collect();
            let p: Vec<f64> = y.iter().map(|v| v + rng.random_range(-2.0..2.0)).collect();
            let out = filtered_loss(&p, &y, 1.5).unwrap();
            // Oracle: recompute the fences by sorting and interpolating by hand.
            let mut s = y.clone();
            s.sort_by(f64::total_cmp);
            let q = |q: f64| {
                let pos = q * (s.len() - 1) as f64;
                let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
                s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
            };
            let (q1, q3) = (q(0.25), q(0.75));
            let iqr = q3 - q1;
            let kept: Vec<f64> = p
                .iter()
                .zip(&y)
                .filter(|(_, &t)| t != 0.0 && t >= q1 - 1.5 * iqr && t <= q3 + 1.5 * iqr)
                .map(|(a, b)| (a - b) * (a - b))
                .collect();
            let oracle = if kept.is_empty() { 0.0 } else { kept.iter().sum::<f64>() / kept.len() as f64 };
            assert!((out.loss - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }
    }
}
