//! Binary cross-entropy on a clamped probability.

/// Predictions are clamped to `[PRED_CLAMP, 1 − PRED_CLAMP]` before the log.
pub const PRED_CLAMP: f64 = 1e-7;

/// `−[y·ln p + (1−y)·ln(1−p)]` with `p` clamped away from 0 and 1.
pub fn bce_loss(pred: f64, label: f64) -> f64 {
    let p = pred.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Derivative of [`bce_loss`] in `pred`; zero inside the clamped region.
pub fn bce_grad(pred: f64, label: f64) -> f64 {
    if !(PRED_CLAMP..=1.0 - PRED_CLAMP).contains(&pred) {
        return 0.0;
    }
    -label / pred + (1.0 - label) / (1.0 - pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(0.8, 0.0) - 1.609_437_912_434_100_3).abs() < 1e-12);
        assert!(bce_loss(1.0 - 1e-12, 1.0) < 1e-6);
        assert!(bce_loss(0.0, 1.0).is_finite());
    }

    #[test]
    fn grad_matches_central_difference() {
        for &(p, y) in &[(0.3, 1.0), (0.7, 0.0), (0.55, 1.0)] {
            let h = 1e-6;
            let num = (bce_loss(p + h, y) - bce_loss(p - h, y)) / (2.0 * h);
            assert!((num - bce_grad(p, y)).abs() < 1e-6);
        }
    }
}
