//! Per-sample, per-channel feature statistics and their broadcast arithmetic.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Stabilizer added to the population variance inside the square root.
pub const INSTANCE_STATS_EPS: f64 = 1e-5;

/// Per-sample, per-channel mean and standard deviation over spatial dims.
///
/// `sigma = sqrt(population_variance + eps)`, so a constant channel reports
/// `sigma = sqrt(eps)` and the result is safely invertible.
pub fn instance_stats<S: Scalar>(x: &Tensor<S>, eps: f64) -> Result<(Tensor<S>, Tensor<S>)> {
    if x.shape().len() != 4 {
        return Err(Error::shape(
            "instance_stats",
            format!("expects [N,C,H,W], got {:?}", x.shape()),
        ));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let plane = h * w;
    let inv = S::from_f64(1.0 / plane as f64);
    let eps_s = S::from_f64(eps);

    let mut mu = vec![S::ZERO; n * c];
    let mut sigma = vec![S::ZERO; n * c];
    {
        let xd = x.data();
        for (nc, (m, s)) in mu.iter_mut().zip(sigma.iter_mut()).enumerate() {
            let chan = &xd[nc * plane..(nc + 1) * plane];
            let mut acc = S::ZERO;
            for &v in chan {
                acc += v;
            }
            let mean = acc * inv;
            let mut var = S::ZERO;
            for &v in chan {
                let d = v - mean;
                var += d * d;
            }
            *m = mean;
            *s = (var * inv + eps_s).sqrt();
        }
    }

    let px = x.clone();
    let mu_t = Tensor::from_op(
        vec![n, c],
        mu.clone(),
        vec![x.clone()],
        Box::new(move |g, grads| {
            grads.accumulate_with(&px, |slot| {
                for (nc, &gv) in g.iter().enumerate() {
                    let gd = gv * inv;
                    for s in &mut slot[nc * plane..(nc + 1) * plane] {
                        *s += gd;
                    }
                }
            });
        }),
    );

    let px = x.clone();
    let mu_c = mu;
    let sigma_c = sigma.clone();
    let sigma_t = Tensor::from_op(
        vec![n, c],
        sigma,
        vec![x.clone()],
        Box::new(move |g, grads| {
            // dσ/dx_i = (x_i − μ) / (H·W·σ)
            let xd = px.data();
            grads.accumulate_with(&px, |slot| {
                for (nc, &gv) in g.iter().enumerate() {
                    let scale = gv * inv / sigma_c[nc];
                    let mean = mu_c[nc];
                    let chan = &xd[nc * plane..(nc + 1) * plane];
                    for (s, &v) in slot[nc * plane..(nc + 1) * plane].iter_mut().zip(chan) {
                        *s += scale * (v - mean);
                    }
                }
            });
        }),
    );

    Ok((mu_t, sigma_t))
}

fn check_stat_shapes<S: Scalar>(
    op: &'static str,
    x: &Tensor<S>,
    stat: &Tensor<S>,
) -> Result<(usize, usize, usize)> {
    if x.shape().len() != 4 || stat.shape().len() != 2 {
        return Err(Error::shape(
            op,
            format!("expects x[N,C,H,W], stat[N,C]; got {:?}, {:?}", x.shape(), stat.shape()),
        ));
    }
    let (n, c) = (x.shape()[0], x.shape()[1]);
    if stat.shape() != [n, c] {
        return Err(Error::shape(
            op,
            format!("stat {:?} vs map [{n}, {c}, ..]", stat.shape()),
        ));
    }
    Ok((n, c, x.shape()[2] * x.shape()[3]))
}

macro_rules! stat_broadcast_op {
    ($name:ident, $op_name:literal, $fwd:expr, $bwd_x:expr, $bwd_s:expr) => {
        /// Broadcast of a `[N,C]` statistic over the spatial dims of `[N,C,H,W]`.
        pub fn $name<S: Scalar>(x: &Tensor<S>, stat: &Tensor<S>) -> Result<Tensor<S>> {
            let (n, c, plane) = check_stat_shapes($op_name, x, stat)?;
            let mut data = vec![S::ZERO; n * c * plane];
            {
                let xd = x.data();
                let sd = stat.data();
                for nc in 0..n * c {
                    let sv = sd[nc];
                    let src = &xd[nc * plane..(nc + 1) * plane];
                    let dst = &mut data[nc * plane..(nc + 1) * plane];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = $fwd(v, sv);
                    }
                }
            }
            let px = x.clone();
            let ps = stat.clone();
            Ok(Tensor::from_op(
                x.shape().to_vec(),
                data,
                vec![x.clone(), stat.clone()],
                Box::new(move |g, grads| {
                    let xd = px.data();
                    let sd = ps.data();
                    if px.is_tracked() {
                        grads.accumulate_with(&px, |slot| {
                            for nc in 0..n * c {
                                let sv = sd[nc];
                                let xc = &xd[nc * plane..(nc + 1) * plane];
                                let gc = &g[nc * plane..(nc + 1) * plane];
                                for ((s, &gv), &xv) in
                                    slot[nc * plane..(nc + 1) * plane].iter_mut().zip(gc).zip(xc)
                                {
                                    *s += $bwd_x(gv, xv, sv);
                                }
                            }
                        });
                    }
                    if ps.is_tracked() {
                        grads.accumulate_with(&ps, |slot| {
                            for nc in 0..n * c {
                                let sv = sd[nc];
                                let xc = &xd[nc * plane..(nc + 1) * plane];
                                let gc = &g[nc * plane..(nc + 1) * plane];
                                let mut acc = S::ZERO;
                                for (&gv, &xv) in gc.iter().zip(xc) {
                                    acc += $bwd_s(gv, xv, sv);
                                }
                                slot[nc] += acc;
                            }
                        });
                    }
                }),
            ))
        }
    };
}

stat_broadcast_op!(
    sub_stat,
    "sub_stat",
    |v: S, s: S| v - s,
    |g: S, _x: S, _s: S| g,
    |g: S, _x: S, _s: S| -g
);

stat_broadcast_op!(
    add_stat,
    "add_stat",
    |v: S, s: S| v + s,
    |g: S, _x: S, _s: S| g,
    |g: S, _x: S, _s: S| g
);

stat_broadcast_op!(
    mul_stat,
    "mul_stat",
    |v: S, s: S| v * s,
    |g: S, _x: S, s: S| g * s,
    |g: S, x: S, _s: S| g * x
);

stat_broadcast_op!(
    div_stat,
    "div_stat",
    |v: S, s: S| v / s,
    |g: S, _x: S, s: S| g / s,
    |g: S, x: S, s: S| -g * x / (s * s)
);
