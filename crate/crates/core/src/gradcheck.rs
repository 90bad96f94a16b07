//! Central finite-difference verification of reverse-mode gradients.
//!
//! The numeric side only ever re-runs forward passes, so it stays independent
//! of the backward implementation it checks. Run these at f64; at f32 the
//! difference quotient loses too many bits to be meaningful.

use crate::tensor::{backward, Tensor};

/// Default probe step for f64 central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

/// `max_i |a_i − n_i|` scaled by the larger gradient magnitude (floored at 1),
/// so checks stay meaningful for both tiny and large gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut max_diff = 0.0f64;
    let mut max_mag = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        max_diff = max_diff.max((a - n).abs());
        max_mag = max_mag.max(a.abs()).max(n.abs());
    }
    max_diff / max_mag.max(1.0)
}

/// Numeric gradient of `loss_fn` w.r.t. `target` by central differences.
/// `loss_fn` must rebuild its forward pass from `target`'s current values.
pub fn numeric_gradient(
    target: &Tensor<f64>,
    mut loss_fn: impl FnMut() -> Tensor<f64>,
    eps: f64,
) -> Vec<f64> {
    let original = target.to_vec();
    let mut grad = vec![0.0; original.len()];
    let mut probe = original.clone();
    for i in 0..original.len() {
        probe[i] = original[i] + eps;
        target.set_data(&probe);
        let up = loss_fn().item();
        probe[i] = original[i] - eps;
        target.set_data(&probe);
        let down = loss_fn().item();
        probe[i] = original[i];
        grad[i] = (up - down) / (2.0 * eps);
    }
    target.set_data(&original);
    grad
}

/// Runs backward on `loss_fn()` and compares the adjoint at `target` against
/// central differences; returns the relative error.
///
/// Panics if backward leaves the target without a gradient.
pub fn check_gradient(
    target: &Tensor<f64>,
    mut loss_fn: impl FnMut() -> Tensor<f64>,
    eps: f64,
) -> f64 {
    target.zero_grad();
    let loss = loss_fn();
    backward(&loss).expect("backward failed in gradient check");
    let analytic = target
        .grad()
        .expect("target did not receive a gradient; is it reachable from the loss?");
    target.zero_grad();
    let numeric = numeric_gradient(target, loss_fn, eps);
    relative_error(&analytic, &numeric)
}

/// Like [`check_gradient`] but probes only the given coordinate subset —
/// for targets so large that a full sweep of forward re-evaluations would
/// dominate the test budget. The relative error is computed over the
/// sampled coordinates.
pub fn check_gradient_sampled(
    target: &Tensor<f64>,
    mut loss_fn: impl FnMut() -> Tensor<f64>,
    eps: f64,
    coords: &[usize],
) -> f64 {
    target.zero_grad();
    let loss = loss_fn();
    backward(&loss).expect("backward failed in gradient check");
    let analytic = target
        .grad()
        .expect("target did not receive a gradient; is it reachable from the loss?");
    target.zero_grad();

    let original = target.to_vec();
    let mut probe = original.clone();
    let mut analytic_sample = Vec::with_capacity(coords.len());
    let mut numeric_sample = Vec::with_capacity(coords.len());
    for &i in coords {
        probe[i] = original[i] + eps;
        target.set_data(&probe);
        let up = loss_fn().item();
        probe[i] = original[i] - eps;
        target.set_data(&probe);
        let down = loss_fn().item();
        probe[i] = original[i];
        analytic_sample.push(analytic[i]);
        numeric_sample.push((up - down) / (2.0 * eps));
    }
    target.set_data(&original);
    relative_error(&analytic_sample, &numeric_sample)
}
