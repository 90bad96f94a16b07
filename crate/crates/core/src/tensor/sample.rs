//! Bilinear sampling: backward warping from a coordinate field, and
//! align-corners resizing.
//!
//! Field coordinates are normalized to [−1, 1]; channel 0 holds x (width),
//! channel 1 holds y (height). Coordinates beyond the range clamp to the
//! border, and the clamp contributes zero gradient to the field there.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Taps {
    i0: usize,
    i1: usize,
    frac: f64,
    /// d(pixel coordinate)/d(normalized coordinate); 0 when clamped.
    dpix: f64,
}

/// Maps a normalized coordinate to pixel taps under align-corners + clamp.
fn taps(coord: f64, extent: usize) -> Taps {
    let last = (extent - 1) as f64;
    let raw = (coord + 1.0) * 0.5 * last;
    let clamped = raw.clamp(0.0, last);
    let inside = extent > 1 && raw > 0.0 && raw < last;
    let i0 = (clamped.floor() as usize).min(extent - 1);
    let i1 = (i0 + 1).min(extent - 1);
    Taps {
        i0,
        i1,
        frac: clamped - i0 as f64,
        dpix: if inside { 0.5 * last } else { 0.0 },
    }
}

/// Backward-warp bilinear sampling.
///
/// `out[n,c,p] = image[n,c] read bilinearly at field[n,:,p]`, with gradients
/// w.r.t. both the image and the field.
pub fn grid_sample<S: Scalar>(image: &Tensor<S>, field: &Tensor<S>) -> Result<Tensor<S>> {
    let is = image.shape();
    let fs = field.shape();
    if is.len() != 4 {
        return Err(Error::shape(
            "grid_sample",
            format!("image must be [N,C,H,W], got {is:?}"),
        ));
    }
    if fs.len() != 4 || fs[1] != 2 {
        return Err(Error::shape(
            "grid_sample",
            format!("field must be [N,2,H,W], got {fs:?}"),
        ));
    }
    if fs[0] != is[0] {
        return Err(Error::shape(
            "grid_sample",
            format!("batch mismatch: image {} vs field {}", is[0], fs[0]),
        ));
    }
    let (n, c, h, w) = (is[0], is[1], is[2], is[3]);
    let (fh, fw) = (fs[2], fs[3]);
    let fplane = fh * fw;
    let iplane = h * w;

    let mut data = vec![S::ZERO; n * c * fplane];
    {
        let img = image.data();
        let fld = field.data();
        for ni in 0..n {
            let fx = &fld[ni * 2 * fplane..ni * 2 * fplane + fplane];
            let fy = &fld[ni * 2 * fplane + fplane..(ni + 1) * 2 * fplane];
            for p in 0..fplane {
                let tx = taps(fx[p].to_f64(), w);
                let ty = taps(fy[p].to_f64(), h);
                let (w00, w01, w10, w11) = (
                    (1.0 - ty.frac) * (1.0 - tx.frac),
                    (1.0 - ty.frac) * tx.frac,
                    ty.frac * (1.0 - tx.frac),
                    ty.frac * tx.frac,
                );
                for ci in 0..c {
                    let plane = &img[(ni * c + ci) * iplane..(ni * c + ci + 1) * iplane];
                    let v = plane[ty.i0 * w + tx.i0].to_f64() * w00
                        + plane[ty.i0 * w + tx.i1].to_f64() * w01
                        + plane[ty.i1 * w + tx.i0].to_f64() * w10
                        + plane[ty.i1 * w + tx.i1].to_f64() * w11;
                    data[(ni * c + ci) * fplane + p] = S::from_f64(v);
                }
            }
        }
    }

    let pi = image.clone();
    let pf = field.clone();
    Ok(Tensor::from_op(
        vec![n, c, fh, fw],
        data,
        vec![image.clone(), field.clone()],
        Box::new(move |g, grads| {
            let img = pi.data();
            let fld = pf.data();
            if pi.is_tracked() {
                grads.accumulate_with(&pi, |slot| {
                    for ni in 0..n {
                        let fx = &fld[ni * 2 * fplane..ni * 2 * fplane + fplane];
                        let fy = &fld[ni * 2 * fplane + fplane..(ni + 1) * 2 * fplane];
                        for p in 0..fplane {
                            let tx = taps(fx[p].to_f64(), w);
                            let ty = taps(fy[p].to_f64(), h);
                            let (w00, w01, w10, w11) = (
                                (1.0 - ty.frac) * (1.0 - tx.frac),
                                (1.0 - ty.frac) * tx.frac,
                                ty.frac * (1.0 - tx.frac),
                                ty.frac * tx.frac,
                            );
                            for ci in 0..c {
                                let gv = g[(ni * c + ci) * fplane + p].to_f64();
                                let plane =
                                    &mut slot[(ni * c + ci) * iplane..(ni * c + ci + 1) * iplane];
                                plane[ty.i0 * w + tx.i0] += S::from_f64(gv * w00);
                                plane[ty.i0 * w + tx.i1] += S::from_f64(gv * w01);
                                plane[ty.i1 * w + tx.i0] += S::from_f64(gv * w10);
                                plane[ty.i1 * w + tx.i1] += S::from_f64(gv * w11);
                            }
                        }
                    }
                });
            }
            if pf.is_tracked() {
                grads.accumulate_with(&pf, |slot| {
                    for ni in 0..n {
                        let fx = &fld[ni * 2 * fplane..ni * 2 * fplane + fplane];
                        let fy = &fld[ni * 2 * fplane + fplane..(ni + 1) * 2 * fplane];
                        for p in 0..fplane {
                            let tx = taps(fx[p].to_f64(), w);
                            let ty = taps(fy[p].to_f64(), h);
                            let mut dx = 0.0;
                            let mut dy = 0.0;
                            for ci in 0..c {
                                let gv = g[(ni * c + ci) * fplane + p].to_f64();
                                if gv == 0.0 {
                                    continue;
                                }
                                let plane =
                                    &img[(ni * c + ci) * iplane..(ni * c + ci + 1) * iplane];
                                let v00 = plane[ty.i0 * w + tx.i0].to_f64();
                                let v01 = plane[ty.i0 * w + tx.i1].to_f64();
                                let v10 = plane[ty.i1 * w + tx.i0].to_f64();
                                let v11 = plane[ty.i1 * w + tx.i1].to_f64();
                                dx += gv
                                    * ((1.0 - ty.frac) * (v01 - v00) + ty.frac * (v11 - v10));
                                dy += gv
                                    * ((1.0 - tx.frac) * (v10 - v00) + tx.frac * (v11 - v01));
                            }
                            slot[ni * 2 * fplane + p] += S::from_f64(dx * tx.dpix);
                            slot[ni * 2 * fplane + fplane + p] += S::from_f64(dy * ty.dpix);
                        }
                    }
                });
            }
        }),
    ))
}

/// Align-corners bilinear resize weights along one axis.
fn axis_taps(out_extent: usize, in_extent: usize) -> Vec<Taps> {
    (0..out_extent)
        .map(|o| {
            if in_extent == 1 || out_extent == 1 {
                return Taps {
                    i0: 0,
                    i1: 0,
                    frac: 0.0,
                    dpix: 0.0,
                };
            }
            let pos = o as f64 * (in_extent - 1) as f64 / (out_extent - 1) as f64;
            let i0 = (pos.floor() as usize).min(in_extent - 1);
            let i1 = (i0 + 1).min(in_extent - 1);
            Taps {
                i0,
                i1,
                frac: pos - i0 as f64,
                dpix: 0.0,
            }
        })
        .collect()
}

/// Align-corners bilinear resize of `[N,C,h,w]` to `[N,C,H,W]`: corner
/// samples map exactly to corner samples.
pub fn bilinear_upsample<S: Scalar>(x: &Tensor<S>, oh: usize, ow: usize) -> Result<Tensor<S>> {
    if x.shape().len() != 4 {
        return Err(Error::shape(
            "bilinear_upsample",
            format!("expects [N,C,H,W], got {:?}", x.shape()),
        ));
    }
    if oh == 0 || ow == 0 {
        return Err(Error::arg("bilinear_upsample", "zero output extent"));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let ys = axis_taps(oh, h);
    let xs = axis_taps(ow, w);

    let mut data = vec![S::ZERO; n * c * oh * ow];
    {
        let xd = x.data();
        for nc in 0..n * c {
            let src = &xd[nc * h * w..(nc + 1) * h * w];
            let dst = &mut data[nc * oh * ow..(nc + 1) * oh * ow];
            for (oi, ty) in ys.iter().enumerate() {
                for (oj, tx) in xs.iter().enumerate() {
                    let v = src[ty.i0 * w + tx.i0].to_f64() * (1.0 - ty.frac) * (1.0 - tx.frac)
                        + src[ty.i0 * w + tx.i1].to_f64() * (1.0 - ty.frac) * tx.frac
                        + src[ty.i1 * w + tx.i0].to_f64() * ty.frac * (1.0 - tx.frac)
                        + src[ty.i1 * w + tx.i1].to_f64() * ty.frac * tx.frac;
                    dst[oi * ow + oj] = S::from_f64(v);
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
                    let dst = &mut slot[nc * h * w..(nc + 1) * h * w];
                    for (oi, ty) in ys.iter().enumerate() {
                        for (oj, tx) in xs.iter().enumerate() {
                            let gv = gplane[oi * ow + oj].to_f64();
                            dst[ty.i0 * w + tx.i0] +=
                                S::from_f64(gv * (1.0 - ty.frac) * (1.0 - tx.frac));
                            dst[ty.i0 * w + tx.i1] += S::from_f64(gv * (1.0 - ty.frac) * tx.frac);
                            dst[ty.i1 * w + tx.i0] += S::from_f64(gv * ty.frac * (1.0 - tx.frac));
                            dst[ty.i1 * w + tx.i1] += S::from_f64(gv * ty.frac * tx.frac);
                        }
                    }
                }
            });
        }),
    ))
}

/// Plain-buffer align-corners bilinear resize of one `[C,h,w]` image.
/// Shared by dataset ingestion and evaluation embedding; no tape involved.
pub fn resize_bilinear_raw(src: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ys = axis_taps(oh, h);
    let xs = axis_taps(ow, w);
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for (oi, ty) in ys.iter().enumerate() {
            for (oj, tx) in xs.iter().enumerate() {
                dst[oi * ow + oj] = plane[ty.i0 * w + tx.i0] * (1.0 - ty.frac) * (1.0 - tx.frac)
                    + plane[ty.i0 * w + tx.i1] * (1.0 - ty.frac) * tx.frac
                    + plane[ty.i1 * w + tx.i0] * ty.frac * (1.0 - tx.frac)
                    + plane[ty.i1 * w + tx.i1] * ty.frac * tx.frac;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_field(n: usize, h: usize, w: usize) -> Tensor<f64> {
        let mut data = vec![0.0; n * 2 * h * w];
        for ni in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let fx = if w > 1 { 2.0 * x as f64 / (w - 1) as f64 - 1.0 } else { 0.0 };
                    let fy = if h > 1 { 2.0 * y as f64 / (h - 1) as f64 - 1.0 } else { 0.0 };
                    data[ni * 2 * h * w + y * w + x] = fx;
                    data[ni * 2 * h * w + h * w + y * w + x] = fy;
                }
            }
        }
        Tensor::from_vec(&[n, 2, h, w], data).unwrap()
    }

    #[test]
    fn identity_field_is_identity_map() {
        let img =
            Tensor::<f64>::from_vec(&[1, 1, 3, 4], (0..12).map(|v| v as f64).collect()).unwrap();
        let out = grid_sample(&img, &identity_field(1, 3, 4)).unwrap();
        for (a, b) in out.to_vec().iter().zip(img.to_vec()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn midpoint_between_adjacent_pixels() {
        // Values 0 and 4 side by side; sampling halfway gives 2.
        let img = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![0.0, 4.0]).unwrap();
        let field = Tensor::<f64>::from_vec(&[1, 2, 1, 1], vec![0.0, 0.0]).unwrap();
        let out = grid_sample(&img, &field).unwrap();
        assert!((out.item() - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn out_of_range_clamps_to_border() {
        let img = Tensor::<f64>::from_vec(&[1, 1, 1, 3], vec![5.0, 6.0, 7.0]).unwrap();
        let field = Tensor::<f64>::from_vec(&[1, 2, 1, 1], vec![-3.0, 0.0]).unwrap();
        let out = grid_sample(&img, &field).unwrap();
        assert_eq!(out.item(), 5.0);
    }

    #[test]
    fn upsample_identity_when_same_size() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let y = bilinear_upsample(&x, 2, 3).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn upsample_from_single_pixel_is_constant() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![3.5]).unwrap();
        let y = bilinear_upsample(&x, 4, 5).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn upsample_center_is_corner_mean() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![0.0, 1.0, 2.0, 5.0]).unwrap();
        let y = bilinear_upsample(&x, 3, 3).unwrap();
        let v = y.to_vec();
        assert!((v[4] - 2.0).abs() <= 1e-12);
        // Corners pin to corners.
        assert_eq!(v[0], 0.0);
        assert_eq!(v[2], 1.0);
        assert_eq!(v[6], 2.0);
        assert_eq!(v[8], 5.0);
    }
}
