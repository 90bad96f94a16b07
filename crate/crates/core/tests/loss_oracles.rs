//! Recomputation oracles: every loss value must be reproducible, exactly,
//! from its constituent perceptual-similarity and MSE calls, and the
//! documented zero cases must be exact zeros.

use morphgan::losses::{endpoint_blend_loss, transition_loss};
use morphgan::perceptual::{FeatureExtractor, LayerGroupSet};
use morphgan::tensor::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn image(rng: &mut ChaCha8Rng, res: usize) -> Tensor<f64> {
    let data: Vec<f64> = (0..3 * res * res).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(&[1, 3, res, res], data).unwrap()
}

fn batch_of(frames: &[Tensor<f64>]) -> Tensor<f64> {
    Tensor::concat_batch(frames).unwrap()
}

#[test]
fn transition_loss_matches_manual_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let fx = FeatureExtractor::<f64>::random(3, 4);
    let a = image(&mut rng, 32);
    let b = image(&mut rng, 32);
    let frames: Vec<Tensor<f64>> = (0..3).map(|_| image(&mut rng, 32)).collect();
    let times = [0.0, 0.4, 1.0];

    let got = transition_loss(&fx, &batch_of(&frames), &times, &a, &b)
        .unwrap()
        .item();

    // Oracle: rebuild from individual ps() calls.
    let groups = LayerGroupSet::pair_metric();
    let ref_ps = fx.ps(&a, &b, &groups).unwrap().item();
    let mut expected = f64::NEG_INFINITY;
    for i in 1..3 {
        let step = fx.ps(&frames[i - 1], &frames[i], &groups).unwrap().item();
        let dev = step - (times[i] - times[i - 1]) * ref_ps;
        expected = expected.max(dev * dev);
    }
    assert_eq!(got, expected);
}

#[test]
fn transition_loss_zero_for_exact_endpoint_pair() {
    // k = 2, frames = (I_A, I_B), schedule (0, 1): the step distance equals
    // the full reference distance exactly, so the deviation is exactly zero.
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let fx = FeatureExtractor::<f64>::random(4, 4);
    let a = image(&mut rng, 32);
    let b = image(&mut rng, 32);
    let frames = batch_of(&[a.clone(), b.clone()]);
    let loss = transition_loss(&fx, &frames, &[0.0, 1.0], &a, &b).unwrap();
    assert_eq!(loss.item(), 0.0);
}

#[test]
fn transition_loss_positive_for_frozen_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let fx = FeatureExtractor::<f64>::random(5, 4);
    let a = image(&mut rng, 32);
    let b = image(&mut rng, 32);
    let still = image(&mut rng, 32);
    let frames = batch_of(&[still.clone(), still.clone(), still.clone()]);
    let loss = transition_loss(&fx, &frames, &[0.0, 0.5, 1.0], &a, &b)
        .unwrap()
        .item();
    // All frames identical: PS between neighbours is 0, so the worst term is
    // max_i (Δt·PS(A,B))² > 0 for distinct inputs.
    let ref_ps = fx.ps(&a, &b, &LayerGroupSet::pair_metric()).unwrap().item();
    assert!(loss > 0.0);
    assert_eq!(loss, (0.5 * ref_ps) * (0.5 * ref_ps));
}

#[test]
fn transition_loss_invariant_to_increment_preserving_reparameterization() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let fx = FeatureExtractor::<f64>::random(6, 4);
    let a = image(&mut rng, 32);
    let b = image(&mut rng, 32);
    let frames: Vec<Tensor<f64>> = (0..4).map(|_| image(&mut rng, 32)).collect();
    let batch = batch_of(&frames);
    // Same increments (0.25, 0.5, 0.25), shifted support.
    let t1 = [0.0, 0.25, 0.75, 1.0];
    let l1 = transition_loss(&fx, &batch, &t1, &a, &b).unwrap().item();
    let t2 = [0.25, 0.5, 1.0, 1.25];
    let l2 = transition_loss(&fx, &batch, &t2, &a, &b).unwrap().item();
    assert_eq!(l1, l2);
}

#[test]
fn endpoint_blend_matches_manual_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let fx = FeatureExtractor::<f64>::random(7, 4);
    let frames: Vec<Tensor<f64>> = (0..3).map(|_| image(&mut rng, 32)).collect();
    let warped_a: Vec<Tensor<f64>> = (0..3).map(|_| image(&mut rng, 32)).collect();
    let warped_b: Vec<Tensor<f64>> = (0..3).map(|_| image(&mut rng, 32)).collect();
    let times = [0.0, 0.35, 1.0];

    let got = endpoint_blend_loss(&fx, &batch_of(&frames), &warped_a, &warped_b, &times, 4)
        .unwrap()
        .item();

    let g4 = LayerGroupSet::single(4).unwrap();
    let mut expected = 0.0;
    for i in 0..3 {
        let t = times[i];
        if t < 1.0 {
            expected += (1.0 - t) * fx.ps(&frames[i], &warped_a[i], &g4).unwrap().item();
        }
        if t > 0.0 {
            expected += t * fx.ps(&frames[i], &warped_b[i], &g4).unwrap().item();
        }
    }
    assert_eq!(got, expected);
}

#[test]
fn endpoint_blend_zero_when_frames_equal_both_warps() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let fx = FeatureExtractor::<f64>::random(8, 4);
    let frames: Vec<Tensor<f64>> = (0..3).map(|_| image(&mut rng, 32)).collect();
    let loss = endpoint_blend_loss(
        &fx,
        &batch_of(&frames),
        &frames,
        &frames,
        &[0.0, 0.6, 1.0],
        4,
    )
    .unwrap()
    .item();
    assert_eq!(loss, 0.0);
}

#[test]
fn endpoint_terms_drop_at_their_zero_coefficients() {
    // At t = 0 the B-similarity is ignored entirely; at t = 1 the A-side is.
    // Making the ignored side arbitrary must not change the loss.
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let fx = FeatureExtractor::<f64>::random(9, 4);
    let frames: Vec<Tensor<f64>> = (0..2).map(|_| image(&mut rng, 32)).collect();
    let wa: Vec<Tensor<f64>> = (0..2).map(|_| image(&mut rng, 32)).collect();
    let wb: Vec<Tensor<f64>> = (0..2).map(|_| image(&mut rng, 32)).collect();
    let base = endpoint_blend_loss(&fx, &batch_of(&frames), &wa, &wb, &[0.0, 1.0], 4)
        .unwrap()
        .item();
    let wa2 = vec![wa[0].clone(), image(&mut rng, 32)]; // A side at t=1: ignored
    let wb2 = vec![image(&mut rng, 32), wb[1].clone()]; // B side at t=0: ignored
    let changed = endpoint_blend_loss(&fx, &batch_of(&frames), &wa2, &wb2, &[0.0, 1.0], 4)
        .unwrap()
        .item();
    assert_eq!(base, changed);
}

#[test]
fn fused_terms_equal_standalone_ops_exactly() {
    use morphgan::losses::{fused_perceptual_terms, warp_loss, PerceptualSelection};
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let fx = FeatureExtractor::<f64>::random(12, 4);
    let a = image(&mut rng, 32);
    let b = image(&mut rng, 32);
    let frames: Vec<Tensor<f64>> = (0..3).map(|_| image(&mut rng, 32)).collect();
    let wa: Vec<Tensor<f64>> = (0..3).map(|_| image(&mut rng, 32)).collect();
    let wb: Vec<Tensor<f64>> = (0..3).map(|_| image(&mut rng, 32)).collect();
    let times = [0.0, 0.45, 1.0];
    let batch = batch_of(&frames);

    let fused = fused_perceptual_terms(
        &fx,
        &batch,
        &wa,
        &wb,
        &times,
        &times,
        &a,
        &b,
        PerceptualSelection {
            transition: true,
            endpoint_group: Some(4),
            warp: true,
        },
    )
    .unwrap();

    let t_sep = transition_loss(&fx, &batch, &times, &a, &b).unwrap();
    let e_sep = endpoint_blend_loss(&fx, &batch, &wa, &wb, &times, 4).unwrap();
    let w_sep = warp_loss(&fx, &wa[2], &b, &wb[0], &a).unwrap();

    assert_eq!(fused.transition.unwrap().item(), t_sep.item());
    assert_eq!(fused.endpoint.unwrap().item(), e_sep.item());
    assert_eq!(fused.warp.unwrap().item(), w_sep.item());
}

#[test]
fn warp_loss_zero_when_warped_equals_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let fx = FeatureExtractor::<f64>::random(10, 4);
    let a = image(&mut rng, 32);
    let b = image(&mut rng, 32);
    let loss = morphgan::losses::warp_loss(&fx, &b, &b, &a, &a).unwrap();
    assert_eq!(loss.item(), 0.0);
}
