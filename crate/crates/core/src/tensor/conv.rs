//! Convolution and transposed convolution, GEMM-backed.
//!
//! The kernel layout is `[K, C, kh, kw]` for both ops; `conv_transpose2d`
//! forward is exactly the input-adjoint of `conv2d` with the same kernel.
//! Each layer call runs one batch-wide GEMM over `[C·kh·kw, N·H'·W']` patch
//! columns. GEMM parallelizes over disjoint output rows with a fixed inner
//! summation order, so outputs do not depend on thread count.

use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Work below this MAC count is cheaper sequentially than forked.
const PAR_MIN_MACS: usize = 1 << 18;

/// out[m,n] += a[m,k] * b[k,n]
fn gemm_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let body = |(i, orow): (usize, &mut [S])| {
        let arow = &a[i * k..(i + 1) * k];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_MIN_MACS && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.chunks_mut(n).enumerate().for_each(body);
    }
}

/// out[m,n] += a[k,m]ᵀ * b[k,n]
fn gemm_at_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let body = |(i, orow): (usize, &mut [S])| {
        for l in 0..k {
            let av = a[l * m + i];
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_MIN_MACS && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.chunks_mut(n).enumerate().for_each(body);
    }
}

/// out[m,n] += a[m,k] * b[n,k]ᵀ
fn gemm_bt_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let body = |(i, orow): (usize, &mut [S])| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    };
    if m * k * n >= PAR_MIN_MACS && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.chunks_mut(n).enumerate().for_each(body);
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn plane(&self) -> usize {
        self.oh * self.ow
    }
    fn in_plane(&self) -> usize {
        self.h * self.w
    }
}

/// Unfolds the whole batch into `[C·kh·kw, N·oh·ow]` patch columns
/// (column index `= n·plane + p`).
fn im2col_batch<S: Scalar>(x: &[S], g: ConvGeom, col: &mut [S]) {
    let cols = g.n * g.plane();
    debug_assert_eq!(col.len(), g.ckk() * cols);
    for v in col.iter_mut() {
        *v = S::ZERO;
    }
    let (h, w, ow, stride, pad) = (g.h, g.w, g.ow, g.stride, g.pad);
    for ni in 0..g.n {
        let sample = &x[ni * g.c * g.in_plane()..(ni + 1) * g.c * g.in_plane()];
        for ci in 0..g.c {
            let xplane = &sample[ci * h * w..(ci + 1) * h * w];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row_base = ((ci * g.kh + ki) * g.kw + kj) * cols + ni * g.plane();
                    let row = &mut col[row_base..row_base + g.plane()];
                    for oi in 0..g.oh {
                        let iy = (oi * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xplane[iy as usize * w..(iy as usize + 1) * w];
                        for oj in 0..ow {
                            let ix = (oj * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                row[oi * ow + oj] = xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Folds `[C·kh·kw, N·oh·ow]` columns back into `[N, C, H, W]`,
/// accumulating overlaps.
fn col2im_batch_acc<S: Scalar>(col: &[S], g: ConvGeom, x: &mut [S]) {
    let cols = g.n * g.plane();
    let (h, w, ow, stride, pad) = (g.h, g.w, g.ow, g.stride, g.pad);
    for ni in 0..g.n {
        let sample = &mut x[ni * g.c * g.in_plane()..(ni + 1) * g.c * g.in_plane()];
        for ci in 0..g.c {
            let xplane = &mut sample[ci * h * w..(ci + 1) * h * w];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row_base = ((ci * g.kh + ki) * g.kw + kj) * cols + ni * g.plane();
                    let row = &col[row_base..row_base + g.plane()];
                    for oi in 0..g.oh {
                        let iy = (oi * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &mut xplane[iy as usize * w..(iy as usize + 1) * w];
                        for oj in 0..ow {
                            let ix = (oj * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                xrow[ix as usize] += row[oi * ow + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[N, K, plane]` → `[K, N·plane]`.
fn to_channel_major<S: Scalar>(src: &[S], n: usize, k: usize, plane: usize, dst: &mut [S]) {
    for ni in 0..n {
        for ki in 0..k {
            let s = &src[(ni * k + ki) * plane..(ni * k + ki + 1) * plane];
            let d = &mut dst[ki * n * plane + ni * plane..ki * n * plane + (ni + 1) * plane];
            d.copy_from_slice(s);
        }
    }
}

/// `[K, N·plane]` → `[N, K, plane]`, adding `bias[k]` if provided.
fn from_channel_major<S: Scalar>(
    src: &[S],
    n: usize,
    k: usize,
    plane: usize,
    bias: Option<&[S]>,
    dst: &mut [S],
) {
    for ni in 0..n {
        for ki in 0..k {
            let s = &src[ki * n * plane + ni * plane..ki * n * plane + (ni + 1) * plane];
            let d = &mut dst[(ni * k + ki) * plane..(ni * k + ki + 1) * plane];
            match bias {
                Some(b) => {
                    let bv = b[ki];
                    for (dv, &sv) in d.iter_mut().zip(s) {
                        *dv = sv + bv;
                    }
                }
                None => d.copy_from_slice(s),
            }
        }
    }
}

fn conv_output_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if k > padded || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn check_conv_shapes<S: Scalar>(
    op: &'static str,
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    bias_dim: usize,
) -> Result<()> {
    if x.shape().len() != 4 {
        return Err(Error::shape(
            op,
            format!("input must be [N,C,H,W], got {:?}", x.shape()),
        ));
    }
    if kernel.shape().len() != 4 {
        return Err(Error::shape(
            op,
            format!("kernel must be [K,C,kh,kw], got {:?}", kernel.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [bias_dim] {
            return Err(Error::shape(
                op,
                format!("bias must be [{bias_dim}], got {:?}", b.shape()),
            ));
        }
    }
    Ok(())
}

/// Strided cross-correlation: `x[N,C,H,W] ⋆ kernel[K,C,kh,kw] -> [N,K,H',W']`
/// with `H' = (H + 2·pad − kh)/stride + 1`.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    check_conv_shapes("conv2d", x, kernel, bias, kernel.shape()[0])?;
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (k, kc, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels but kernel expects {kc}"),
        ));
    }
    let oh = conv_output_extent(h, kh, stride, pad).ok_or_else(|| {
        Error::shape(
            "conv2d",
            format!("kernel height {kh} exceeds padded input height {}", h + 2 * pad),
        )
    })?;
    let ow = conv_output_extent(w, kw, stride, pad).ok_or_else(|| {
        Error::shape(
            "conv2d",
            format!("kernel width {kw} exceeds padded input width {}", w + 2 * pad),
        )
    })?;
    let geom = ConvGeom {
        n,
        c,
        h,
        w,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
    };
    let plane = geom.plane();
    let cols = n * plane;

    let mut data = vec![S::ZERO; n * k * plane];
    {
        let xd = x.data();
        let kd = kernel.data();
        let mut col = vec![S::ZERO; geom.ckk() * cols];
        im2col_batch(&xd, geom, &mut col);
        let mut big = vec![S::ZERO; k * cols];
        gemm_acc(k, geom.ckk(), cols, &kd, &col, &mut big);
        let bd = bias.map(|b| b.data());
        from_channel_major(&big, n, k, plane, bd.as_deref().map(|v| &v[..]), &mut data);
    }

    let px = x.clone();
    let pk = kernel.clone();
    let pb = bias.cloned();
    let mut parents = vec![x.clone(), kernel.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![n, k, oh, ow],
        data,
        parents,
        Box::new(move |g, grads| {
            let needs_gy_t = px.is_tracked() || pk.is_tracked();
            let mut gy_t = Vec::new();
            if needs_gy_t {
                gy_t = vec![S::ZERO; k * cols];
                to_channel_major(g, n, k, plane, &mut gy_t);
            }
            if px.is_tracked() {
                let kd = pk.data();
                grads.accumulate_with(&px, |slot| {
                    let mut col_g = vec![S::ZERO; geom.ckk() * cols];
                    gemm_at_acc(geom.ckk(), k, cols, &kd, &gy_t, &mut col_g);
                    col2im_batch_acc(&col_g, geom, slot);
                });
            }
            if pk.is_tracked() {
                let xd = px.data();
                grads.accumulate_with(&pk, |slot| {
                    let mut col = vec![S::ZERO; geom.ckk() * cols];
                    im2col_batch(&xd, geom, &mut col);
                    gemm_bt_acc(k, cols, geom.ckk(), &gy_t, &col, slot);
                });
            }
            if let Some(b) = &pb {
                grads.accumulate_with(b, |slot| {
                    for ni in 0..n {
                        for (ki, bg) in slot.iter_mut().enumerate() {
                            let grow = &g[(ni * k + ki) * plane..(ni * k + ki + 1) * plane];
                            let mut acc = S::ZERO;
                            for &gv in grow {
                                acc += gv;
                            }
                            *bg += acc;
                        }
                    }
                });
            }
        }),
    ))
}

/// Transposed convolution (adjoint of [`conv2d`] with the same kernel):
/// `x[N,K,H,W] -> [N,C,H',W']` with `H' = (H−1)·stride − 2·pad + kh`.
pub fn conv_transpose2d<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    check_conv_shapes("conv_transpose2d", x, kernel, bias, kernel.shape()[1])?;
    let (n, k, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kk, c, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kk != k {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("input has {k} channels but kernel expects {kk}"),
        ));
    }
    if (h - 1) * stride + kh < 2 * pad || (w - 1) * stride + kw < 2 * pad {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("padding {pad} too large for kernel {kh}x{kw}"),
        ));
    }
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (w - 1) * stride + kw - 2 * pad;
    // The output plays the conv-input role in the shared geometry.
    let geom = ConvGeom {
        n,
        c,
        h: oh,
        w: ow,
        kh,
        kw,
        oh: h,
        ow: w,
        stride,
        pad,
    };
    let in_plane = h * w;
    let out_plane = oh * ow;
    let cols = n * in_plane;

    let mut data = vec![S::ZERO; n * c * out_plane];
    {
        let xd = x.data();
        let kd = kernel.data();
        let mut x_t = vec![S::ZERO; k * cols];
        to_channel_major(&xd, n, k, in_plane, &mut x_t);
        let mut col = vec![S::ZERO; geom.ckk() * cols];
        gemm_at_acc(geom.ckk(), k, cols, &kd, &x_t, &mut col);
        col2im_batch_acc(&col, geom, &mut data);
        if let Some(b) = bias {
            let bd = b.data();
            for ni in 0..n {
                for ci in 0..c {
                    let bv = bd[ci];
                    for v in &mut data[(ni * c + ci) * out_plane..(ni * c + ci + 1) * out_plane] {
                        *v += bv;
                    }
                }
            }
        }
    }

    let px = x.clone();
    let pk = kernel.clone();
    let pb = bias.cloned();
    let mut parents = vec![x.clone(), kernel.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        data,
        parents,
        Box::new(move |g, grads| {
            let needs_col = px.is_tracked() || pk.is_tracked();
            let mut col_g = Vec::new();
            if needs_col {
                // Adjoint of col2im is im2col of the upstream gradient.
                col_g = vec![S::ZERO; geom.ckk() * cols];
                im2col_batch(g, geom, &mut col_g);
            }
            if px.is_tracked() {
                let kd = pk.data();
                grads.accumulate_with(&px, |slot| {
                    let mut gx_t = vec![S::ZERO; k * cols];
                    gemm_acc(k, geom.ckk(), cols, &kd, &col_g, &mut gx_t);
                    // Accumulate the transposed layout back into [N,K,plane].
                    for ni in 0..n {
                        for ki in 0..k {
                            let s = &gx_t[ki * cols + ni * in_plane
                                ..ki * cols + (ni + 1) * in_plane];
                            let d = &mut slot
                                [(ni * k + ki) * in_plane..(ni * k + ki + 1) * in_plane];
                            for (dv, &sv) in d.iter_mut().zip(s) {
                                *dv += sv;
                            }
                        }
                    }
                });
            }
            if pk.is_tracked() {
                let xd = px.data();
                grads.accumulate_with(&pk, |slot| {
                    let mut x_t = vec![S::ZERO; k * cols];
                    to_channel_major(&xd, n, k, in_plane, &mut x_t);
                    gemm_bt_acc(k, cols, geom.ckk(), &x_t, &col_g, slot);
                });
            }
            if let Some(b) = &pb {
                grads.accumulate_with(b, |slot| {
                    for ni in 0..n {
                        for (ci, bg) in slot.iter_mut().enumerate() {
                            let grow = &g[(ni * c + ci) * out_plane..(ni * c + ci + 1) * out_plane];
                            let mut acc = S::ZERO;
                            for &gv in grow {
                                acc += gv;
                            }
                            *bg += acc;
                        }
                    }
                });
            }
        }),
    ))
}

/// 2×2 max pooling, stride 2. Requires even spatial extents; gradient
/// routes to the argmax, first position on ties.
pub fn max_pool2<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    if x.shape().len() != 4 {
        return Err(Error::shape(
            "max_pool2",
            format!("expects [N,C,H,W], got {:?}", x.shape()),
        ));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "max_pool2",
            format!("spatial extents must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut data = vec![S::ZERO; n * c * oh * ow];
    let mut argmax = vec![0u32; n * c * oh * ow];
    {
        let xd = x.data();
        for nc in 0..n * c {
            let xplane = &xd[nc * h * w..(nc + 1) * h * w];
            let obase = nc * oh * ow;
            for oi in 0..oh {
                for oj in 0..ow {
                    let base = 2 * oi * w + 2 * oj;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if xplane[cand] > xplane[best] {
                            best = cand;
                        }
                    }
                    data[obase + oi * ow + oj] = xplane[best];
                    argmax[obase + oi * ow + oj] = best as u32;
                }
            }
        }
    }
    let p = x.clone();
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        data,
        vec![x.clone()],
        Box::new(move |g, grads| {
            grads.accumulate_with(&p, |slot| {
                for nc in 0..n * c {
                    let gplane = &g[nc * oh * ow..(nc + 1) * oh * ow];
                    let am = &argmax[nc * oh * ow..(nc + 1) * oh * ow];
                    let xslot = &mut slot[nc * h * w..(nc + 1) * h * w];
                    for (gv, &best) in gplane.iter().zip(am) {
                        xslot[best as usize] += *gv;
                    }
                }
            });
        }),
    ))
}

/// 2×2 average pooling, stride 2. Requires even spatial extents.
pub fn avg_pool2<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    if x.shape().len() != 4 {
        return Err(Error::shape(
            "avg_pool2",
            format!("expects [N,C,H,W], got {:?}", x.shape()),
        ));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "avg_pool2",
            format!("spatial extents must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64(0.25);
    let mut data = vec![S::ZERO; n * c * oh * ow];
    {
        let xd = x.data();
        for nc in 0..n * c {
            let xplane = &xd[nc * h * w..(nc + 1) * h * w];
            let oplane = &mut data[nc * oh * ow..(nc + 1) * oh * ow];
            for oi in 0..oh {
                for oj in 0..ow {
                    let base = 2 * oi * w + 2 * oj;
                    oplane[oi * ow + oj] =
                        (xplane[base] + xplane[base + 1] + xplane[base + w] + xplane[base + w + 1])
                            * quarter;
                }
            }
        }
    }
    let p = x.clone();
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        data,
        vec![x.clone()],
        Box::new(move |g, grads| {
            grads.accumulate_with(&p, |slot| {
                for nc in 0..n * c {
                    let gplane = &g[nc * oh * ow..(nc + 1) * oh * ow];
                    let xslot = &mut slot[nc * h * w..(nc + 1) * h * w];
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let gv = gplane[oi * ow + oj] * quarter;
                            let base = 2 * oi * w + 2 * oj;
                            xslot[base] += gv;
                            xslot[base + 1] += gv;
                            xslot[base + w] += gv;
                            xslot[base + w + 1] += gv;
                        }
                    }
                }
            });
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_preserves_input() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect())
            .unwrap();
        let k = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn full_window_sum() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.to_vec(), vec![10.0]);
    }

    #[test]
    fn batched_conv_matches_per_sample_exactly() {
        let mk = |seed: usize, len: usize| -> Vec<f64> {
            (0..len).map(|i| (((i * 131 + seed * 17) % 97) as f64 / 48.5) - 1.0).collect()
        };
        let xa = mk(1, 2 * 6 * 6);
        let xb = mk(2, 2 * 6 * 6);
        let kd = mk(3, 3 * 2 * 4 * 4);
        let k = Tensor::<f64>::from_vec(&[3, 2, 4, 4], kd).unwrap();
        let both = Tensor::<f64>::from_vec(
            &[2, 2, 6, 6],
            xa.iter().chain(&xb).copied().collect(),
        )
        .unwrap();
        let y_batch = conv2d(&both, &k, None, 2, 1).unwrap();
        let ya = conv2d(
            &Tensor::from_vec(&[1, 2, 6, 6], xa).unwrap(),
            &k,
            None,
            2,
            1,
        )
        .unwrap();
        let yb = conv2d(
            &Tensor::from_vec(&[1, 2, 6, 6], xb).unwrap(),
            &k,
            None,
            2,
            1,
        )
        .unwrap();
        let expect: Vec<f64> = ya.to_vec().into_iter().chain(yb.to_vec()).collect();
        assert_eq!(y_batch.to_vec(), expect);
    }

    #[test]
    fn conv_reports_offending_dimension() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 3, 3], vec![0.0; 18]).unwrap();
        let k = Tensor::<f64>::from_vec(&[1, 3, 1, 1], vec![0.0; 3]).unwrap();
        let err = conv2d(&x, &k, None, 1, 0).unwrap_err().to_string();
        assert!(err.contains("2 channels") && err.contains("expects 3"), "{err}");
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let k = Tensor::<f64>::from_vec(&[1, 1, 3, 3], vec![0.0; 9]).unwrap();
        let err = conv2d(&x, &k, None, 1, 0).unwrap_err().to_string();
        assert!(err.contains("height 3"), "{err}");
    }

    #[test]
    fn tconv_unit_kernel_is_identity() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect())
            .unwrap();
        let k = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv_transpose2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn tconv_spatial_size() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 4, 4], vec![0.5; 16]).unwrap();
        let k = Tensor::<f64>::from_vec(&[1, 1, 4, 4], vec![0.1; 16]).unwrap();
        let y = conv_transpose2d(&x, &k, None, 2, 1).unwrap();
        // (4-1)*2 - 2 + 4 = 8
        assert_eq!(y.shape(), &[1, 1, 8, 8]);
    }

    #[test]
    fn avg_pool_halves_extent() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = avg_pool2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.to_vec(), vec![2.5]);
    }
}
