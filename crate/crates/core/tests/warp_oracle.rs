//! Brute-force oracles for the sampling ops: an independent per-pixel scalar
//! bilinear loop checked against `grid_sample`, at f64.

use morphgan::tensor::grid_sample;
use morphgan::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Scalar reference: bilinear read of `img[c]` at normalized (fx, fy) with
/// clamp-to-border, align-corners mapping. No shared code with the op.
fn bilinear_read(img: &[f64], h: usize, w: usize, fx: f64, fy: f64) -> f64 {
    let px = ((fx + 1.0) * 0.5 * (w - 1) as f64).clamp(0.0, (w - 1) as f64);
    let py = ((fy + 1.0) * 0.5 * (h - 1) as f64).clamp(0.0, (h - 1) as f64);
    let x0 = px.floor() as usize;
    let y0 = py.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let ax = px - x0 as f64;
    let ay = py - y0 as f64;
    img[y0 * w + x0] * (1.0 - ay) * (1.0 - ax)
        + img[y0 * w + x1] * (1.0 - ay) * ax
        + img[y1 * w + x0] * ay * (1.0 - ax)
        + img[y1 * w + x1] * ay * ax
}

#[test]
fn grid_sample_matches_bruteforce_on_100_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let h = rng.random_range(2..9);
        let w = rng.random_range(2..9);
        let c = rng.random_range(1..4);
        let img_data: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Include out-of-range coordinates so border clamping is exercised.
        let field_data: Vec<f64> = (0..2 * h * w).map(|_| rng.random_range(-1.4..1.4)).collect();

        let img = Tensor::from_vec(&[1, c, h, w], img_data.clone()).unwrap();
        let field = Tensor::from_vec(&[1, 2, h, w], field_data.clone()).unwrap();
        let out = grid_sample(&img, &field).unwrap();
        let out = out.to_vec();

        for ci in 0..c {
            let plane = &img_data[ci * h * w..(ci + 1) * h * w];
            for p in 0..h * w {
                let expected = bilinear_read(plane, h, w, field_data[p], field_data[h * w + p]);
                let got = out[ci * h * w + p];
                let diff = (expected - got).abs();
                worst = worst.max(diff);
                assert!(
                    diff <= 1e-6,
                    "case {case}, channel {ci}, pixel {p}: {got} vs oracle {expected}"
                );
            }
        }
    }
    assert!(worst <= 1e-6, "worst abs diff {worst}");
}

#[test]
fn identity_field_application_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..10 {
        let h = rng.random_range(2..12);
        let w = rng.random_range(2..12);
        let img_data: Vec<f64> = (0..3 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut field = vec![0.0; 2 * h * w];
        for y in 0..h {
            for x in 0..w {
                field[y * w + x] = 2.0 * x as f64 / (w - 1) as f64 - 1.0;
                field[h * w + y * w + x] = 2.0 * y as f64 / (h - 1) as f64 - 1.0;
            }
        }
        let img = Tensor::from_vec(&[1, 3, h, w], img_data.clone()).unwrap();
        let f = Tensor::from_vec(&[1, 2, h, w], field).unwrap();
        let out = grid_sample(&img, &f).unwrap();
        for (a, b) in out.to_vec().iter().zip(&img_data) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}
