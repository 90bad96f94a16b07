//! Finite-difference verification for every differentiable tensor op.
//!
//! All checks run at f64 with central differences; the numeric side re-runs
//! forward passes only, so it cannot share a bug with the backward path.

use morphgan::gradcheck::{check_gradient, DEFAULT_EPS};
use morphgan::tensor::{
    self, add_stat, avg_pool2, bilinear_upsample, conv2d, conv_transpose2d, div_stat, grid_sample,
    instance_stats, max_pool2, mul_stat, sub_stat, INSTANCE_STATS_EPS,
};
use morphgan::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            // Box-Muller; plenty for test fixtures.
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    Tensor::param(shape, data).unwrap()
}

fn assert_grad(name: &str, target: &Tensor<f64>, loss: impl FnMut() -> Tensor<f64>) {
    let err = check_gradient(target, loss, DEFAULT_EPS);
    assert!(err < TOL, "{name}: relative error {err:.3e} >= {TOL:.0e}");
}

#[test]
fn elementwise_and_reduction_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = randn(&mut rng, &[2, 3]);
    let b = randn(&mut rng, &[2, 3]);

    assert_grad("add", &a, || a.add(&b).unwrap().mean_all());
    assert_grad("sub(rhs)", &b, || a.sub(&b).unwrap().mean_all());
    assert_grad("mul", &a, || a.mul(&b).unwrap().mean_all());
    assert_grad("scale", &a, || a.scale(-1.7).mean_all());
    assert_grad("add_scalar", &a, || a.add_scalar(0.3).mean_all());
    assert_grad("mse", &a, || a.mse(&b).unwrap());
    assert_grad("mean", &a, || a.mean_all());
    assert_grad("scale_rows", &a, || {
        a.scale_rows(&[0.25, -1.5]).unwrap().mean_all()
    });
}

#[test]
fn activation_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Keep values away from the relu kink so the difference quotient is clean.
    let data: Vec<f64> = (0..12)
        .map(|_| {
            let v: f64 = rng.random_range(0.2..1.5);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = Tensor::param(&[3, 4], data).unwrap();

    assert_grad("relu", &x, || x.relu().mean_all());
    assert_grad("sigmoid", &x, || x.sigmoid().mean_all());
    assert_grad("tanh", &x, || x.tanh().mean_all());

    let pos = Tensor::param(&[4], vec![0.3, 1.1, 2.4, 0.9]).unwrap();
    assert_grad("sqrt", &pos, || pos.sqrt().unwrap().mean_all());
}

#[test]
fn max_of_routes_gradient_one_hot() {
    let a = Tensor::<f64>::param(&[1], vec![0.7]).unwrap();
    let b = Tensor::<f64>::param(&[1], vec![1.9]).unwrap();
    let c = Tensor::<f64>::param(&[1], vec![-0.4]).unwrap();
    let loss = || {
        Tensor::max_of(&[a.scale(2.0), b.scale(2.0), c.scale(2.0)])
            .unwrap()
            .mean_all()
    };
    assert_grad("max_of argmax", &b, loss);
    tensor::backward(&loss()).unwrap();
    assert_eq!(a.grad().unwrap(), vec![0.0]);
    assert_eq!(c.grad().unwrap(), vec![0.0]);
}

#[test]
fn structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = randn(&mut rng, &[2, 2, 3, 3]);
    let b = randn(&mut rng, &[2, 1, 3, 3]);
    assert_grad("concat_channels", &a, || {
        Tensor::concat_channels(&[a.clone(), b.clone()])
            .unwrap()
            .mul(&randn_like_const(&[2, 3, 3, 3]))
            .unwrap()
            .mean_all()
    });
    assert_grad("reshape", &a, || {
        a.reshape(&[2, 18]).unwrap().mul(&weights(&[2, 18])).unwrap().mean_all()
    });

    let x = randn(&mut rng, &[3, 5]);
    let w = randn(&mut rng, &[4, 5]);
    let bias = randn(&mut rng, &[4]);
    assert_grad("linear x", &x, || {
        Tensor::linear(&x, &w, &bias).unwrap().mul(&weights(&[3, 4])).unwrap().mean_all()
    });
    assert_grad("linear w", &w, || {
        Tensor::linear(&x, &w, &bias).unwrap().mul(&weights(&[3, 4])).unwrap().mean_all()
    });
    assert_grad("linear b", &bias, || {
        Tensor::linear(&x, &w, &bias).unwrap().mul(&weights(&[3, 4])).unwrap().mean_all()
    });
}

/// Fixed pseudo-random loss weighting so reductions do not cancel gradients.
fn weights(shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|i| ((i * 37 + 11) % 17) as f64 / 7.0 - 1.0).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn randn_like_const(shape: &[usize]) -> Tensor<f64> {
    weights(shape)
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = randn(&mut rng, &[2, 3, 8, 8]);
    let k = randn(&mut rng, &[4, 3, 3, 3]);
    let b = randn(&mut rng, &[4]);
    for &(stride, pad) in &[(1usize, 0usize), (2, 1)] {
        let loss = || {
            let y = conv2d(&x, &k, Some(&b), stride, pad).unwrap();
            let w = weights(y.shape());
            y.mul(&w).unwrap().mean_all()
        };
        assert_grad(&format!("conv2d s{stride} p{pad} input"), &x, loss);
        assert_grad(&format!("conv2d s{stride} p{pad} kernel"), &k, loss);
        assert_grad(&format!("conv2d s{stride} p{pad} bias"), &b, loss);
    }
}

#[test]
fn conv_transpose2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = randn(&mut rng, &[2, 4, 4, 4]);
    let k = randn(&mut rng, &[4, 3, 4, 4]);
    let b = randn(&mut rng, &[3]);
    for &(stride, pad) in &[(1usize, 0usize), (2, 1)] {
        let loss = || {
            let y = conv_transpose2d(&x, &k, Some(&b), stride, pad).unwrap();
            let w = weights(y.shape());
            y.mul(&w).unwrap().mean_all()
        };
        assert_grad(&format!("tconv s{stride} p{pad} input"), &x, loss);
        assert_grad(&format!("tconv s{stride} p{pad} kernel"), &k, loss);
        assert_grad(&format!("tconv s{stride} p{pad} bias"), &b, loss);
    }
}

#[test]
fn tconv_matches_conv_input_gradient() {
    // Forward transposed convolution must equal the input-adjoint of conv2d
    // with the same kernel: feed `up` as the upstream gradient of a conv of
    // zeros and compare buffers.
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let up = randn(&mut rng, &[1, 2, 3, 3]);
    let k = randn(&mut rng, &[2, 3, 4, 4]);
    let stride = 2;
    let pad = 1;
    // Conv input size H satisfies (H + 2p - kh)/s + 1 = 3  =>  H = 6.
    let tconv = conv_transpose2d(&up, &k, None, stride, pad).unwrap();
    assert_eq!(tconv.shape(), &[1, 3, 6, 6]);

    let x = Tensor::<f64>::param(&[1, 3, 6, 6], vec![0.0; 108]).unwrap();
    let y = conv2d(&x, &k.detach(), None, stride, pad).unwrap();
    // loss = sum(y * up) has d(loss)/dx = conv backward with upstream `up`.
    let loss = y.mul(&up.detach()).unwrap().mean_all().scale(y.numel() as f64);
    tensor::backward(&loss).unwrap();
    let gx = x.grad().unwrap();
    for (a, b) in tconv.to_vec().iter().zip(gx) {
        assert!((a - b).abs() <= 1e-6, "tconv {a} vs conv input grad {b}");
    }
}

#[test]
fn sampling_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let img = randn(&mut rng, &[1, 2, 5, 5]);
    // Interior coordinates, away from clamp and cell boundaries.
    let field_data: Vec<f64> = (0..2 * 16).map(|_| rng.random_range(-0.83..0.83)).collect();
    let field = Tensor::param(&[1, 2, 4, 4], field_data).unwrap();
    let loss = || {
        let y = grid_sample(&img, &field).unwrap();
        let w = weights(y.shape());
        y.mul(&w).unwrap().mean_all()
    };
    assert_grad("grid_sample image", &img, loss);
    assert_grad("grid_sample field", &field, loss);

    let x = randn(&mut rng, &[2, 2, 3, 3]);
    assert_grad("bilinear_upsample", &x, || {
        let y = bilinear_upsample(&x, 7, 5).unwrap();
        let w = weights(y.shape());
        y.mul(&w).unwrap().mean_all()
    });

    let p = randn(&mut rng, &[1, 2, 4, 4]);
    assert_grad("avg_pool2", &p, || {
        let y = avg_pool2(&p).unwrap();
        let w = weights(y.shape());
        y.mul(&w).unwrap().mean_all()
    });
    assert_grad("max_pool2", &p, || {
        let y = max_pool2(&p).unwrap();
        let w = weights(y.shape());
        y.mul(&w).unwrap().mean_all()
    });
}

#[test]
fn warp_apply_is_differentiable_in_grid_values() {
    use morphgan::warp::{apply, ControlGrid};
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let img = Tensor::from_vec(
        &[1, 2, 8, 8],
        (0..128).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    // Grid values kept strictly inside the sampling range.
    let base = ControlGrid::<f64>::identity(4).values().to_vec();
    let vals: Vec<f64> = base.iter().map(|v| v * 0.7 + rng.random_range(-0.05..0.05)).collect();
    let grid_vals = Tensor::param(&[2, 4, 4], vals).unwrap();
    assert_grad("warp apply wrt grid", &grid_vals, || {
        let grid = ControlGrid::from_tensor(grid_vals.clone()).unwrap();
        let y = apply(&grid, &img).unwrap();
        let w = weights(y.shape());
        y.mul(&w).unwrap().mean_all()
    });
}

#[test]
fn instance_stats_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = randn(&mut rng, &[2, 3, 4, 4]);
    assert_grad("instance_stats mu", &x, || {
        let (mu, _) = instance_stats(&x, INSTANCE_STATS_EPS).unwrap();
        mu.mul(&weights(&[2, 3])).unwrap().mean_all()
    });
    assert_grad("instance_stats sigma", &x, || {
        let (_, sigma) = instance_stats(&x, INSTANCE_STATS_EPS).unwrap();
        sigma.mul(&weights(&[2, 3])).unwrap().mean_all()
    });
}

#[test]
fn stat_broadcast_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = randn(&mut rng, &[2, 3, 4, 4]);
    // Keep the divisor away from zero.
    let s_data: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..2.0)).collect();
    let s = Tensor::param(&[2, 3], s_data).unwrap();
    for (name, op) in [
        ("sub_stat", sub_stat as fn(&Tensor<f64>, &Tensor<f64>) -> _),
        ("add_stat", add_stat),
        ("mul_stat", mul_stat),
        ("div_stat", div_stat),
    ] {
        let loss = || {
            let y = op(&x, &s).unwrap();
            let w = weights(y.shape());
            y.mul(&w).unwrap().mean_all()
        };
        assert_grad(&format!("{name} map"), &x, loss);
        assert_grad(&format!("{name} stat"), &s, loss);
    }
}
