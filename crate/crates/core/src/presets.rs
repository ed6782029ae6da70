//! Reference model configurations used by the closed-loop checks.

use crate::types::{FirstOrderParams, SecondOrderParams};

/// Two-stock Atlas model `g = (−0.5, 0.5)`, `σ = (0.3, 0.3)`.
pub fn two_stock_atlas() -> FirstOrderParams {
    FirstOrderParams { g: vec![-0.5, 0.5], sigma: vec![0.3, 0.3] }
}

/// Five-stock Atlas model: every rank but the last drifts down at 0.3.
pub fn five_stock_atlas() -> FirstOrderParams {
    FirstOrderParams { g: vec![-0.3, -0.3, -0.3, -0.3, 1.2], sigma: vec![0.3; 5] }
}

/// Ten-stock hybrid Atlas model: name drifts a zero-sum ramp from 0.04 down to
/// −0.04, rank drifts a zero-sum ramp rising with rank, volatilities from 0.2 at
/// the top to 0.4 at the bottom.
pub fn hybrid_ten() -> SecondOrderParams {
    let n = 10;
    let step = |k: usize| k as f64 / (n - 1) as f64;
    SecondOrderParams {
        gamma: (0..n).map(|i| 0.04 - 0.08 * step(i)).collect(),
        g: (0..n).map(|k| 0.03 * (k as f64 - 4.5)).collect(),
        sigma: (0..n).map(|k| 0.2 + 0.2 * step(k)).collect(),
    }
}
