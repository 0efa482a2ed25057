//! Binary classification losses on a scalar logit. Each returns `(loss, d loss / d logit)`.

use serde::{Deserialize, Serialize};

const LOG_FLOOR: f64 = 1e-12;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(z))` without overflow.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

/// `-alpha_t (1 - p_t)^gamma ln p_t` with `p = sigmoid(logit)`; `label` is 0 or 1.
///
/// `ln p_t` is floored at `ln 1e-12`.
pub fn sigmoid_focal_loss(logit: f64, label: f64, params: FocalParams) -> (f64, f64) {
    let FocalParams { gamma, alpha } = params;
    let sign = if label >= 0.5 { 1.0 } else { -1.0 };
    let alpha_t = if label >= 0.5 { alpha } else { 1.0 - alpha };
    let p_t = sigmoid(sign * logit);
    let log_pt = log_sigmoid(sign * logit).max(LOG_FLOOR.ln());
    let q = 1.0 - p_t;
    let q_gamma = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    let loss = -alpha_t * q_gamma * log_pt;
    // d/dz: dp_t/dz = sign * p_t * (1 - p_t)
    let grad = -alpha_t * sign * (q_gamma * q - gamma * q_gamma * p_t * log_pt);
    (loss, grad)
}

/// Binary cross-entropy on a logit, `ln p_t` floored at `ln 1e-12`.
pub fn bce_with_logits(logit: f64, label: f64) -> (f64, f64) {
    let sign = if label >= 0.5 { 1.0 } else { -1.0 };
    let loss = -log_sigmoid(sign * logit).max(LOG_FLOOR.ln());
    let grad = sigmoid(logit) - if label >= 0.5 { 1.0 } else { 0.0 };
    (loss, grad)
}

/// Supervised objective on hard labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SupervisedLoss {
    Focal(FocalParams),
    Bce,
}

impl Default for SupervisedLoss {
    fn default() -> Self {
        SupervisedLoss::Focal(FocalParams::default())
    }
}

impl SupervisedLoss {
    pub fn eval(&self, logit: f64, label: f64) -> (f64, f64) {
        match self {
            SupervisedLoss::Focal(p) => sigmoid_focal_loss(logit, label, *p),
            SupervisedLoss::Bce => bce_with_logits(logit, label),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reduces_to_bce() {
        for &z in &[-3.0, -0.2, 0.0, 1.7, 5.0] {
            let pos = sigmoid_focal_loss(z, 1.0, FocalParams { gamma: 0.0, alpha: 1.0 });
            let neg = sigmoid_focal_loss(z, 0.0, FocalParams { gamma: 0.0, alpha: 0.0 });
            let (b1, g1) = bce_with_logits(z, 1.0);
            let (b0, g0) = bce_with_logits(z, 0.0);
            assert!((pos.0 - b1).abs() < 1e-14 && (pos.1 - g1).abs() < 1e-14);
            assert!((neg.0 - b0).abs() < 1e-14 && (neg.1 - g0).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_correct_prediction() {
        let (l, g) = sigmoid_focal_loss(30.0, 1.0, FocalParams::default());
        assert!(l < 1e-20 && g.abs() < 1e-12);
    }

    #[test]
    fn closed_form_at_zero_logit() {
        let (l, _) = sigmoid_focal_loss(0.0, 1.0, FocalParams { gamma: 2.0, alpha: 0.25 });
        let expected = 0.25 * 0.5f64.powi(2) * -(0.5f64.ln());
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.043322).abs() < 1e-6);
    }

    #[test]
    fn log_floor_bounds_loss() {
        let (l, _) = bce_with_logits(-100.0, 1.0);
        assert!((l - 1e-12f64.ln().abs()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn gradient_matches_central_difference(z in -8.0f64..8.0, label in 0u8..2, gamma in 0.0f64..4.0, alpha in 0.05f64..0.95) {
            let p = FocalParams { gamma, alpha };
            let y = label as f64;
            let h = 1e-5;
            let num = (sigmoid_focal_loss(z + h, y, p).0 - sigmoid_focal_loss(z - h, y, p).0) / (2.0 * h);
            let ana = sigmoid_focal_loss(z, y, p).1;
            prop_assert!((num - ana).abs() <= 1e-6 * ana.abs().max(1e-3));
        }

        #[test]
        fn non_negative_and_decreasing_in_pt(z in -10.0f64..10.0, dz in 0.01f64..3.0, gamma in 0.0f64..4.0, alpha in 0.05f64..0.95) {
            let p = FocalParams { gamma, alpha };
            let (a, _) = sigmoid_focal_loss(z, 1.0, p);
            let (b, _) = sigmoid_focal_loss(z + dz, 1.0, p);
            prop_assert!(a >= 0.0 && b >= 0.0);
            prop_assert!(b <= a);
        }
    }
}
