//! Elementwise ops, reductions, concatenation and the fully-connected layer.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("add", self, rhs)?;
        let data: Vec<S> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, grads| {
                grads.accumulate(&pa, g);
                grads.accumulate(&pb, g);
            }),
        ))
    }

    pub fn sub(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("sub", self, rhs)?;
        let data: Vec<S> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, grads| {
                grads.accumulate(&pa, g);
                grads.accumulate_with(&pb, |slot| {
                    for (s, &v) in slot.iter_mut().zip(g) {
                        *s -= v;
                    }
                });
            }),
        ))
    }

    pub fn mul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("mul", self, rhs)?;
        let data: Vec<S> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, grads| {
                {
                    let b = pb.data();
                    grads.accumulate_with(&pa, |slot| {
                        for ((s, &gv), &bv) in slot.iter_mut().zip(g).zip(b.iter()) {
                            *s += gv * bv;
                        }
                    });
                }
                let a = pa.data();
                grads.accumulate_with(&pb, |slot| {
                    for ((s, &gv), &av) in slot.iter_mut().zip(g).zip(a.iter()) {
                        *s += gv * av;
                    }
                });
            }),
        ))
    }

    pub fn scale(&self, c: S) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&v| v * c).collect();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, grads| {
                grads.accumulate_with(&p, |slot| {
                    for (s, &gv) in slot.iter_mut().zip(g) {
                        *s += gv * c;
                    }
                });
            }),
        )
    }

    pub fn add_scalar(&self, c: S) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&v| v + c).collect();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, grads| grads.accumulate(&p, g)),
        )
    }

    pub fn relu(&self) -> Tensor<S> {
        let data: Vec<S> = self
            .data()
            .iter()
            .map(|&v| if v > S::ZERO { v } else { S::ZERO })
            .collect();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, grads| {
                // Subgradient at 0 is 0.
                let x = p.data();
                grads.accumulate_with(&p, |slot| {
                    for ((s, &gv), &xv) in slot.iter_mut().zip(g).zip(x.iter()) {
                        if xv > S::ZERO {
                            *s += gv;
                        }
                    }
                });
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        let data: Vec<S> = self
            .data()
            .iter()
            .map(|&v| S::ONE / (S::ONE + (-v).exp()))
            .collect();
        let y = data.clone();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, grads| {
                grads.accumulate_with(&p, |slot| {
                    for ((s, &gv), &yv) in slot.iter_mut().zip(g).zip(y.iter()) {
                        *s += gv * yv * (S::ONE - yv);
                    }
                });
            }),
        )
    }

    pub fn tanh(&self) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&v| v.tanh()).collect();
        let y = data.clone();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, grads| {
                grads.accumulate_with(&p, |slot| {
                    for ((s, &gv), &yv) in slot.iter_mut().zip(g).zip(y.iter()) {
                        *s += gv * (S::ONE - yv * yv);
                    }
                });
            }),
        )
    }

    pub fn sqrt(&self) -> Result<Tensor<S>> {
        if let Some(v) = self.data().iter().find(|v| **v < S::ZERO) {
            return Err(Error::arg("sqrt", format!("negative input {v}")));
        }
        let data: Vec<S> = self.data().iter().map(|&v| v.sqrt()).collect();
        let y = data.clone();
        let p = self.clone();
        let half = S::from_f64(0.5);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, grads| {
                grads.accumulate_with(&p, |slot| {
                    for ((s, &gv), &yv) in slot.iter_mut().zip(g).zip(y.iter()) {
                        *s += gv * half / yv;
                    }
                });
            }),
        ))
    }

    /// Mean over all elements, as a `[1]` tensor.
    pub fn mean_all(&self) -> Tensor<S> {
        let n = self.numel();
        let inv = S::ONE / S::from_f64(n as f64);
        let sum: S = self.data().iter().copied().sum();
        let p = self.clone();
        Tensor::from_op(
            vec![1],
            vec![sum * inv],
            vec![self.clone()],
            Box::new(move |g, grads| {
                let gv = g[0] * inv;
                grads.accumulate_with(&p, |slot| {
                    for s in slot.iter_mut() {
                        *s += gv;
                    }
                });
            }),
        )
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("mse", self, rhs)?;
        let d = self.sub(rhs)?;
        Ok(d.mul(&d)?.mean_all())
    }

    /// Maximum of single-element tensors; gradient routes to the argmax,
    /// lowest index on ties.
    pub fn max_of(terms: &[Tensor<S>]) -> Result<Tensor<S>> {
        if terms.is_empty() {
            return Err(Error::arg("max_of", "empty term list"));
        }
        for t in terms {
            if t.numel() != 1 {
                return Err(Error::shape(
                    "max_of",
                    format!("expects scalars, got {:?}", t.shape()),
                ));
            }
        }
        let values: Vec<S> = terms.iter().map(|t| t.item()).collect();
        let mut best = 0usize;
        for (i, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = i;
            }
        }
        let winner = terms[best].clone();
        Ok(Tensor::from_op(
            vec![1],
            vec![values[best]],
            terms.to_vec(),
            Box::new(move |g, grads| grads.accumulate(&winner, g)),
        ))
    }

    /// Channel-wise concatenation of `[N, C_i, H, W]` tensors.
    pub fn concat_channels(parts: &[Tensor<S>]) -> Result<Tensor<S>> {
        if parts.is_empty() {
            return Err(Error::arg("concat_channels", "empty tensor list"));
        }
        let first = parts[0].shape();
        if first.len() != 4 {
            return Err(Error::shape(
                "concat_channels",
                format!("expects [N,C,H,W], got {first:?}"),
            ));
        }
        let (n, h, w) = (first[0], first[2], first[3]);
        let mut c_total = 0usize;
        for p in parts {
            let s = p.shape();
            if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{s:?} incompatible with {first:?}"),
                ));
            }
            c_total += s[1];
        }
        let plane = h * w;
        let mut data = vec![S::ZERO; n * c_total * plane];
        for ni in 0..n {
            let mut c_off = 0usize;
            for p in parts {
                let c = p.shape()[1];
                let src = p.data();
                let src_base = ni * c * plane;
                let dst_base = (ni * c_total + c_off) * plane;
                data[dst_base..dst_base + c * plane]
                    .copy_from_slice(&src[src_base..src_base + c * plane]);
                c_off += c;
            }
        }
        let owned: Vec<Tensor<S>> = parts.to_vec();
        Ok(Tensor::from_op(
            vec![n, c_total, h, w],
            data,
            parts.to_vec(),
            Box::new(move |g, grads| {
                let mut c_off = 0usize;
                for p in &owned {
                    let c = p.shape()[1];
                    grads.accumulate_with(p, |slot| {
                        for ni in 0..n {
                            let src_base = (ni * c_total + c_off) * plane;
                            let dst_base = ni * c * plane;
                            for i in 0..c * plane {
                                slot[dst_base + i] += g[src_base + i];
                            }
                        }
                    });
                    c_off += c;
                }
            }),
        ))
    }

    /// Stacks same-shape `[N_i, ...]` tensors along the batch dimension.
    pub fn concat_batch(parts: &[Tensor<S>]) -> Result<Tensor<S>> {
        if parts.is_empty() {
            return Err(Error::arg("concat_batch", "empty tensor list"));
        }
        let tail = &parts[0].shape()[1..];
        let row: usize = tail.iter().product();
        let mut n_total = 0usize;
        for p in parts {
            if &p.shape()[1..] != tail {
                return Err(Error::shape(
                    "concat_batch",
                    format!("{:?} incompatible with {:?}", p.shape(), parts[0].shape()),
                ));
            }
            n_total += p.shape()[0];
        }
        let mut data = Vec::with_capacity(n_total * row);
        for p in parts {
            data.extend_from_slice(&p.data());
        }
        let mut shape = vec![n_total];
        shape.extend_from_slice(tail);
        let owned: Vec<Tensor<S>> = parts.to_vec();
        Ok(Tensor::from_op(
            shape,
            data,
            parts.to_vec(),
            Box::new(move |g, grads| {
                let mut base = 0usize;
                for p in &owned {
                    let len = p.numel();
                    grads.accumulate(p, &g[base..base + len]);
                    base += len;
                }
            }),
        ))
    }

    /// Contiguous sub-range along the batch dimension.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Tensor<S>> {
        let n = self.shape()[0];
        if start + len > n || len == 0 {
            return Err(Error::arg(
                "slice_batch",
                format!("range {start}..{} out of batch {n}", start + len),
            ));
        }
        let row = self.numel() / n;
        let data = self.data()[start * row..(start + len) * row].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        let p = self.clone();
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g, grads| {
                grads.accumulate_with(&p, |slot| {
                    for (s, &gv) in slot[start * row..(start + len) * row].iter_mut().zip(g) {
                        *s += gv;
                    }
                });
            }),
        ))
    }

    /// Row-major reinterpretation to a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        let p = self.clone();
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(move |g, grads| grads.accumulate(&p, g)),
        ))
    }

    /// Fully-connected layer: `x[N,D] · w[O,D]ᵀ + b[O]`.
    pub fn linear(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(Error::shape(
                "linear",
                format!("x{xs:?} w{ws:?} b{bs:?}"),
            ));
        }
        let (n, d, o) = (xs[0], xs[1], ws[0]);
        if ws[1] != d {
            return Err(Error::shape(
                "linear",
                format!("input dim {d} vs weight dim {}", ws[1]),
            ));
        }
        if bs[0] != o {
            return Err(Error::shape(
                "linear",
                format!("bias dim {} vs out dim {o}", bs[0]),
            ));
        }
        let mut data = vec![S::ZERO; n * o];
        {
            let xd = x.data();
            let wd = w.data();
            let bd = b.data();
            for ni in 0..n {
                let xrow = &xd[ni * d..(ni + 1) * d];
                let out = &mut data[ni * o..(ni + 1) * o];
                for (oi, ov) in out.iter_mut().enumerate() {
                    let wrow = &wd[oi * d..(oi + 1) * d];
                    let mut acc = S::ZERO;
                    for (xv, wv) in xrow.iter().zip(wrow) {
                        acc += *xv * *wv;
                    }
                    *ov = acc + bd[oi];
                }
            }
        }
        let (px, pw, pb) = (x.clone(), w.clone(), b.clone());
        Ok(Tensor::from_op(
            vec![n, o],
            data,
            vec![x.clone(), w.clone(), b.clone()],
            Box::new(move |g, grads| {
                {
                    let wd = pw.data();
                    grads.accumulate_with(&px, |slot| {
                        for ni in 0..n {
                            let grow = &g[ni * o..(ni + 1) * o];
                            let xslot = &mut slot[ni * d..(ni + 1) * d];
                            for (oi, &gv) in grow.iter().enumerate() {
                                let wrow = &wd[oi * d..(oi + 1) * d];
                                for (xg, &wv) in xslot.iter_mut().zip(wrow) {
                                    *xg += gv * wv;
                                }
                            }
                        }
                    });
                }
                {
                    let xd = px.data();
                    grads.accumulate_with(&pw, |slot| {
                        for ni in 0..n {
                            let grow = &g[ni * o..(ni + 1) * o];
                            let xrow = &xd[ni * d..(ni + 1) * d];
                            for (oi, &gv) in grow.iter().enumerate() {
                                let wslot = &mut slot[oi * d..(oi + 1) * d];
                                for (wg, &xv) in wslot.iter_mut().zip(xrow) {
                                    *wg += gv * xv;
                                }
                            }
                        }
                    });
                }
                grads.accumulate_with(&pb, |slot| {
                    for ni in 0..n {
                        for (oi, bg) in slot.iter_mut().enumerate() {
                            *bg += g[ni * o + oi];
                        }
                    }
                });
            }),
        ))
    }

    /// Per-leading-index scaling by constants: `y[i, ...] = x[i, ...] * c[i]`.
    pub fn scale_rows(&self, consts: &[S]) -> Result<Tensor<S>> {
        let n = self.shape()[0];
        if consts.len() != n {
            return Err(Error::shape(
                "scale_rows",
                format!("{} rows vs {} constants", n, consts.len()),
            ));
        }
        let row = self.numel() / n;
        let mut data = self.to_vec();
        for (i, chunk) in data.chunks_mut(row).enumerate() {
            let c = consts[i];
            for v in chunk {
                *v *= c;
            }
        }
        let p = self.clone();
        let cs = consts.to_vec();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, grads| {
                grads.accumulate_with(&p, |slot| {
                    for (i, chunk) in slot.chunks_mut(row).enumerate() {
                        let c = cs[i];
                        for (s, &gv) in chunk.iter_mut().zip(&g[i * row..(i + 1) * row]) {
                            *s += gv * c;
                        }
                    }
                });
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    fn t(data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let y = t(&[-1.0, 0.0, 2.0]).relu();
        assert_eq!(y.to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let x = t(&[0.3, -0.7, 1.4]);
        assert_eq!(x.mse(&x).unwrap().item(), 0.0);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let a = t(&[1.0, 2.0]);
        let b = t(&[1.0, 2.0, 3.0]);
        let err = a.mse(&b).unwrap_err().to_string();
        assert!(err.contains("mse"), "{err}");
    }

    #[test]
    fn max_of_ties_break_low_index() {
        let a = Tensor::<f64>::param(&[1], vec![2.0]).unwrap();
        let b = Tensor::<f64>::param(&[1], vec![2.0]).unwrap();
        let m = Tensor::max_of(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.item(), 2.0);
        backward(&m).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0]);
        assert_eq!(b.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn sqrt_rejects_negative() {
        assert!(t(&[-0.5]).sqrt().is_err());
        assert_eq!(t(&[4.0]).sqrt().unwrap().item(), 2.0);
    }

    #[test]
    fn concat_channels_stacks_in_order() {
        let a = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = Tensor::concat_channels(&[a, b]).unwrap();
        assert_eq!(y.shape(), &[1, 3, 1, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn fill_map_is_constant() {
        let y = Tensor::<f64>::fill_map(0.25, 3, 4);
        assert_eq!(y.shape(), &[1, 3, 4]);
        assert!(y.to_vec().iter().all(|&v| v == 0.25));
    }
}
