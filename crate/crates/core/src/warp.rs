//! Grid-based freeform-deformation spatial transformer.
//!
//! A small head predicts, from a channel-concatenated image pair, a g×g
//! lattice of absolute backward-sampling coordinates in [−1,1]² (the warp
//! from the first image to the second). Partial deformations interpolate
//! between the identity lattice and the full prediction, are upsampled to
//! image resolution and applied by bilinear backward warping.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{bilinear_upsample, conv2d, grid_sample, Scalar, Tensor};

/// Default control-lattice side.
pub const DEFAULT_GRID_SIDE: usize = 5;

/// g×g lattice of absolute sampling coordinates, stored as `[2, g, g]`
/// (channel 0 = x, channel 1 = y) in normalized [−1, 1] space.
#[derive(Clone)]
pub struct ControlGrid<S: Scalar> {
    values: Tensor<S>,
    side: usize,
}

/// Which input the warp maps from; the B→A direction runs time backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpDirection {
    AToB,
    BToA,
}

impl<S: Scalar> ControlGrid<S> {
    /// The identity lattice: coordinates uniformly spaced over [−1, 1]².
    pub fn identity(side: usize) -> Self {
        assert!(side >= 2, "control grid needs at least 2x2 points");
        let mut data = vec![S::ZERO; 2 * side * side];
        for row in 0..side {
            for col in 0..side {
                let x = 2.0 * col as f64 / (side - 1) as f64 - 1.0;
                let y = 2.0 * row as f64 / (side - 1) as f64 - 1.0;
                data[row * side + col] = S::from_f64(x);
                data[side * side + row * side + col] = S::from_f64(y);
            }
        }
        ControlGrid {
            values: Tensor::from_vec(&[2, side, side], data).expect("grid shape"),
            side,
        }
    }

    pub fn from_tensor(values: Tensor<S>) -> Result<Self> {
        let s = values.shape();
        if s.len() != 3 || s[0] != 2 || s[1] != s[2] || s[1] < 2 {
            return Err(Error::shape(
                "ControlGrid",
                format!("expects [2, g, g] with g >= 2, got {s:?}"),
            ));
        }
        let side = s[1];
        Ok(ControlGrid { values, side })
    }

    pub fn values(&self) -> &Tensor<S> {
        &self.values
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Deviation from the identity lattice, `MSE(W, I)`.
    pub fn identity_deviation(&self) -> Result<Tensor<S>> {
        self.values.mse(ControlGrid::identity(self.side).values())
    }
}

/// Partial deformation at time `t`: `(1−s)·I + s·W` elementwise, where
/// `s = t` for A→B and `s = 1−t` for B→A. Exact at the endpoints.
pub fn partial_warp<S: Scalar>(
    full: &ControlGrid<S>,
    t: f64,
    direction: WarpDirection,
) -> ControlGrid<S> {
    let s = match direction {
        WarpDirection::AToB => t,
        WarpDirection::BToA => 1.0 - t,
    };
    let identity = ControlGrid::identity(full.side());
    let values = identity
        .values()
        .scale(S::from_f64(1.0 - s))
        .add(&full.values().scale(S::from_f64(s)))
        .expect("same lattice shape");
    ControlGrid {
        values,
        side: full.side(),
    }
}

/// Densifies the lattice to the image resolution by bilinear interpolation
/// and backward-warps the image through it.
pub fn apply<S: Scalar>(grid: &ControlGrid<S>, image: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = image.shape();
    if shape.len() != 4 || shape[0] != 1 {
        return Err(Error::shape(
            "warp apply",
            format!("expects [1,C,H,W], got {shape:?}"),
        ));
    }
    let (h, w) = (shape[2], shape[3]);
    let g = grid.side();
    let lattice = grid.values().reshape(&[1, 2, g, g])?;
    let field = bilinear_upsample(&lattice, h, w)?;
    grid_sample(image, &field)
}

/// Prediction head: two stride-2 conv blocks and a fully-connected block
/// emitting a residual added to the identity lattice. The final layer is
/// zero-initialized, so an untrained head predicts the identity warp, and
/// the residual is squashed by tanh·0.5 to bound the deformation.
pub struct StnHead<S: Scalar> {
    conv1: (Tensor<S>, Tensor<S>),
    conv2: (Tensor<S>, Tensor<S>),
    fc1: (Tensor<S>, Tensor<S>),
    fc2: (Tensor<S>, Tensor<S>),
    grid_side: usize,
    resolution: usize,
    conv_widths: (usize, usize),
    fc_hidden: usize,
}

/// Width configuration for [`StnHead`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StnConfig {
    pub grid_side: usize,
    pub conv_widths: (usize, usize),
    pub fc_hidden: usize,
}

impl Default for StnConfig {
    fn default() -> Self {
        StnConfig {
            grid_side: DEFAULT_GRID_SIDE,
            conv_widths: (32, 64),
            fc_hidden: 256,
        }
    }
}

fn gaussian_param<S: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let normal = Normal::new(0.0, std).expect("valid std");
    let data: Vec<S> = (0..n).map(|_| S::from_f64(normal.sample(rng))).collect();
    Tensor::param(shape, data).expect("param shape")
}

fn zero_param<S: Scalar>(shape: &[usize]) -> Tensor<S> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![S::ZERO; n]).expect("param shape")
}

/// GAN-convention initialization scale.
pub const WEIGHT_INIT_STD: f64 = 0.02;

impl<S: Scalar> StnHead<S> {
    pub fn new(rng: &mut ChaCha8Rng, resolution: usize, cfg: StnConfig) -> Result<Self> {
        if !resolution.is_multiple_of(4) {
            return Err(Error::arg(
                "StnHead",
                format!("resolution {resolution} must be divisible by 4"),
            ));
        }
        let (c1, c2) = cfg.conv_widths;
        let flat = c2 * (resolution / 4) * (resolution / 4);
        let out = 2 * cfg.grid_side * cfg.grid_side;
        Ok(StnHead {
            conv1: (
                gaussian_param(rng, &[c1, 6, 4, 4], WEIGHT_INIT_STD),
                zero_param(&[c1]),
            ),
            conv2: (
                gaussian_param(rng, &[c2, c1, 4, 4], WEIGHT_INIT_STD),
                zero_param(&[c2]),
            ),
            fc1: (
                gaussian_param(rng, &[cfg.fc_hidden, flat], WEIGHT_INIT_STD),
                zero_param(&[cfg.fc_hidden]),
            ),
            // Zero final layer: the head starts at the identity warp.
            fc2: (zero_param(&[out, cfg.fc_hidden]), zero_param(&[out])),
            grid_side: cfg.grid_side,
            resolution,
            conv_widths: cfg.conv_widths,
            fc_hidden: cfg.fc_hidden,
        })
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn config(&self) -> StnConfig {
        StnConfig {
            grid_side: self.grid_side,
            conv_widths: self.conv_widths,
            fc_hidden: self.fc_hidden,
        }
    }

    /// The warp from `a` to `b`: identity lattice plus the network residual
    /// on the channel-concatenated pair. Call with swapped arguments for the
    /// reverse direction.
    pub fn predict(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<ControlGrid<S>> {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                "stn predict",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        if a.shape().len() != 4 || a.shape()[0] != 1 || a.shape()[2] != self.resolution {
            return Err(Error::shape(
                "stn predict",
                format!(
                    "expects [1,C,{res},{res}], got {:?}",
                    a.shape(),
                    res = self.resolution
                ),
            ));
        }
        let x = Tensor::concat_channels(&[a.clone(), b.clone()])?;
        let x = conv2d(&x, &self.conv1.0, Some(&self.conv1.1), 2, 1)?.relu();
        let x = conv2d(&x, &self.conv2.0, Some(&self.conv2.1), 2, 1)?.relu();
        let x = x.reshape(&[1, x.numel()])?;
        let x = Tensor::linear(&x, &self.fc1.0, &self.fc1.1)?.relu();
        let x = Tensor::linear(&x, &self.fc2.0, &self.fc2.1)?;
        let residual = x
            .tanh()
            .scale(S::from_f64(0.5))
            .reshape(&[2, self.grid_side, self.grid_side])?;
        let values = ControlGrid::identity(self.grid_side).values().add(&residual)?;
        ControlGrid::from_tensor(values)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<S>)> {
        vec![
            ("stn.conv1.kernel".into(), self.conv1.0.clone()),
            ("stn.conv1.bias".into(), self.conv1.1.clone()),
            ("stn.conv2.kernel".into(), self.conv2.0.clone()),
            ("stn.conv2.bias".into(), self.conv2.1.clone()),
            ("stn.fc1.weight".into(), self.fc1.0.clone()),
            ("stn.fc1.bias".into(), self.fc1.1.clone()),
            ("stn.fc2.weight".into(), self.fc2.0.clone()),
            ("stn.fc2.bias".into(), self.fc2.1.clone()),
        ]
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }
}

/// Both directed warps for an input pair.
pub struct PairWarps<S: Scalar> {
    pub ab: ControlGrid<S>,
    pub ba: ControlGrid<S>,
}

/// Predicts both directed grids for the pair. With `stn` None (alignment
/// disabled) both grids are the identity lattice.
pub fn predict_pair<S: Scalar>(
    stn: Option<&StnHead<S>>,
    a: &Tensor<S>,
    b: &Tensor<S>,
    grid_side: usize,
) -> Result<PairWarps<S>> {
    match stn {
        Some(head) => Ok(PairWarps {
            ab: head.predict(a, b)?,
            ba: head.predict(b, a)?,
        }),
        None => Ok(PairWarps {
            ab: ControlGrid::identity(grid_side),
            ba: ControlGrid::identity(grid_side),
        }),
    }
}

/// Linear-blend baseline: warp both inputs per the schedule, then
/// cross-dissolve each corresponding pair, `(1−t)·I_A^t + t·I_B^t`. No
/// generator involved; with identity warps this is a plain cross-dissolve.
pub fn linear_blend_frames<S: Scalar>(
    stn: Option<&StnHead<S>>,
    a: &Tensor<S>,
    b: &Tensor<S>,
    times: &[f64],
    grid_side: usize,
) -> Result<Vec<Tensor<S>>> {
    let warps = predict_pair(stn, a, b, grid_side)?;
    let (wa, wb) = warp_sequence(&warps, a, b, times)?;
    times
        .iter()
        .zip(wa.iter().zip(&wb))
        .map(|(&t, (xa, xb))| {
            xa.scale(S::from_f64(1.0 - t))
                .add(&xb.scale(S::from_f64(t)))
        })
        .collect()
}

/// The two warped input sequences of a pair, indexed by schedule position.
pub type WarpedSequences<S> = (Vec<Tensor<S>>, Vec<Tensor<S>>);

/// Time-indexed partially-warped input sequences `{I_A^t}, {I_B^t}`.
///
/// At `t = 0` the A-image is untouched and B is fully warped toward A;
/// at `t = 1` the roles reverse.
pub fn warp_sequence<S: Scalar>(
    warps: &PairWarps<S>,
    a: &Tensor<S>,
    b: &Tensor<S>,
    times: &[f64],
) -> Result<WarpedSequences<S>> {
    let mut warped_a = Vec::with_capacity(times.len());
    let mut warped_b = Vec::with_capacity(times.len());
    for &t in times {
        warped_a.push(apply(&partial_warp(&warps.ab, t, WarpDirection::AToB), a)?);
        warped_b.push(apply(&partial_warp(&warps.ba, t, WarpDirection::BToA), b)?);
    }
    Ok((warped_a, warped_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_grid_corners_and_center() {
        let g2 = ControlGrid::<f64>::identity(2);
        assert_eq!(g2.values().to_vec(), vec![-1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0, 1.0]);
        let g3 = ControlGrid::<f64>::identity(3);
        let v = g3.values().to_vec();
        // Center control point sits at (0, 0).
        assert_eq!(v[4], 0.0);
        assert_eq!(v[9 + 4], 0.0);
    }

    #[test]
    fn partial_warp_endpoints_are_exact() {
        let mut data = ControlGrid::<f64>::identity(5).values().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += ((i % 7) as f64 - 3.0) * 0.05;
        }
        let w = ControlGrid::from_tensor(Tensor::from_vec(&[2, 5, 5], data.clone()).unwrap())
            .unwrap();
        let at0 = partial_warp(&w, 0.0, WarpDirection::AToB);
        assert_eq!(at0.values().to_vec(), ControlGrid::<f64>::identity(5).values().to_vec());
        let at1 = partial_warp(&w, 1.0, WarpDirection::AToB);
        assert_eq!(at1.values().to_vec(), data);
        // B->A runs backwards: t=1 is the identity.
        let ba1 = partial_warp(&w, 1.0, WarpDirection::BToA);
        assert_eq!(ba1.values().to_vec(), ControlGrid::<f64>::identity(5).values().to_vec());
    }

    #[test]
    fn partial_warp_midpoint_is_elementwise_mean() {
        let mut data = ControlGrid::<f64>::identity(4).values().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += ((i % 5) as f64 - 2.0) * 0.04;
        }
        let w = ControlGrid::from_tensor(Tensor::from_vec(&[2, 4, 4], data.clone()).unwrap())
            .unwrap();
        let mid = partial_warp(&w, 0.5, WarpDirection::AToB);
        let identity = ControlGrid::<f64>::identity(4);
        for ((m, w), i) in mid
            .values()
            .to_vec()
            .iter()
            .zip(&data)
            .zip(identity.values().to_vec())
        {
            assert_eq!(*m, 0.5 * i + 0.5 * w);
        }
    }

    #[test]
    fn identity_grid_applies_as_identity() {
        let img_data: Vec<f64> = (0..3 * 64).map(|i| (i as f64 * 0.37).sin()).collect();
        let img = Tensor::from_vec(&[1, 3, 8, 8], img_data.clone()).unwrap();
        let out = apply(&ControlGrid::identity(5), &img).unwrap();
        for (a, b) in out.to_vec().iter().zip(&img_data) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn translation_grid_shifts_one_pixel_with_border_clamp() {
        // All x-coordinates shifted by 2/(W-1) sample one pixel to the right.
        let w = 8usize;
        let img_data: Vec<f64> = (0..w * w).map(|i| i as f64).collect();
        let img = Tensor::from_vec(&[1, 1, w, w], img_data.clone()).unwrap();
        let mut grid = ControlGrid::<f64>::identity(5).values().to_vec();
        for v in grid.iter_mut().take(25) {
            *v += 2.0 / (w - 1) as f64;
        }
        let shifted = apply(
            &ControlGrid::from_tensor(Tensor::from_vec(&[2, 5, 5], grid).unwrap()).unwrap(),
            &img,
        )
        .unwrap();
        let out = shifted.to_vec();
        // Brute-force expectation: out[y, x] = img[y, min(x+1, w-1)].
        for y in 0..w {
            for x in 0..w {
                let expected = img_data[y * w + (x + 1).min(w - 1)];
                assert!(
                    (out[y * w + x] - expected).abs() <= 1e-6,
                    "pixel ({y},{x}): {} vs {expected}",
                    out[y * w + x]
                );
            }
        }
    }

    #[test]
    fn zero_initialized_head_predicts_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = StnHead::<f64>::new(
            &mut rng,
            16,
            StnConfig {
                grid_side: 5,
                conv_widths: (8, 16),
                fc_hidden: 32,
            },
        )
        .unwrap();
        let a = Tensor::from_vec(&[1, 3, 16, 16], vec![0.3; 3 * 256]).unwrap();
        let b = Tensor::from_vec(&[1, 3, 16, 16], vec![-0.6; 3 * 256]).unwrap();
        let grid = head.predict(&a, &b).unwrap();
        assert_eq!(grid.values().shape(), &[2, 5, 5]);
        let identity = ControlGrid::<f64>::identity(5);
        for (g, i) in grid.values().to_vec().iter().zip(identity.values().to_vec()) {
            assert_eq!(*g, i);
        }
    }

    #[test]
    fn gradients_reach_head_parameters_through_warped_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = StnHead::<f64>::new(
            &mut rng,
            16,
            StnConfig {
                grid_side: 3,
                conv_widths: (4, 8),
                fc_hidden: 16,
            },
        )
        .unwrap();
        // Nudge the zero-initialized final layer off zero so tanh has slope
        // variation and the image actually deforms.
        let fc2 = &head.named_params()[6].1;
        let n = fc2.numel();
        fc2.set_data(&(0..n).map(|i| ((i % 13) as f64 - 6.0) * 0.01).collect::<Vec<_>>());

        let a_data: Vec<f64> = (0..3 * 256).map(|i| ((i * 31 % 17) as f64 / 8.5) - 1.0).collect();
        let b_data: Vec<f64> = (0..3 * 256).map(|i| ((i * 7 % 23) as f64 / 11.5) - 1.0).collect();
        let a = Tensor::from_vec(&[1, 3, 16, 16], a_data).unwrap();
        let b = Tensor::from_vec(&[1, 3, 16, 16], b_data).unwrap();
        let grid = head.predict(&a, &b).unwrap();
        let warped = apply(&grid, &a).unwrap();
        let loss = warped.mse(&b).unwrap();
        crate::tensor::backward(&loss).unwrap();
        let grads_nonzero = head
            .params()
            .iter()
            .filter(|p| p.grad().map(|g| g.iter().any(|&v| v != 0.0)).unwrap_or(false))
            .count();
        assert!(grads_nonzero >= 6, "only {grads_nonzero} parameter tensors got gradient");
    }

    #[test]
    fn warp_sequence_endpoints_reproduce_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = StnHead::<f64>::new(
            &mut rng,
            16,
            StnConfig {
                grid_side: 5,
                conv_widths: (4, 8),
                fc_hidden: 16,
            },
        )
        .unwrap();
        // Arbitrary non-identity warps.
        let fc2 = &head.named_params()[6].1;
        let n = fc2.numel();
        fc2.set_data(&(0..n).map(|i| ((i % 11) as f64 - 5.0) * 0.02).collect::<Vec<_>>());

        let a = Tensor::from_vec(
            &[1, 3, 16, 16],
            (0..3 * 256).map(|i| ((i % 29) as f64 / 14.5) - 1.0).collect(),
        )
        .unwrap();
        let b = Tensor::from_vec(
            &[1, 3, 16, 16],
            (0..3 * 256).map(|i| ((i % 37) as f64 / 18.5) - 1.0).collect(),
        )
        .unwrap();
        let warps = predict_pair(Some(&head), &a, &b, 5).unwrap();
        let times = [0.0, 0.25, 0.5, 0.75, 1.0];
        let (wa, wb) = warp_sequence(&warps, &a, &b, &times).unwrap();
        assert_eq!(wa.len(), 5);
        assert_eq!(wb.len(), 5);
        for (x, y) in wa[0].to_vec().iter().zip(a.to_vec()) {
            assert!((x - y).abs() <= 1e-6);
        }
        for (x, y) in wb[4].to_vec().iter().zip(b.to_vec()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn control_points_move_affinely_in_time() {
        let mut data = ControlGrid::<f64>::identity(5).values().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += ((i * 13 % 9) as f64 - 4.0) * 0.03;
        }
        let w = ControlGrid::from_tensor(Tensor::from_vec(&[2, 5, 5], data).unwrap()).unwrap();
        let g0 = partial_warp(&w, 0.2, WarpDirection::AToB).values().to_vec();
        let g1 = partial_warp(&w, 0.5, WarpDirection::AToB).values().to_vec();
        let g2 = partial_warp(&w, 0.8, WarpDirection::AToB).values().to_vec();
        // Three collinear samples: midpoint equals the average of the outer two.
        for i in 0..g0.len() {
            assert!((g1[i] - 0.5 * (g0[i] + g2[i])).abs() < 1e-12);
        }
    }
}
