//! Frozen hierarchical feature extractor and the perceptual-similarity
//! metric built on it.
//!
//! Five sequential layer groups, each conv+relu followed by a 2× max-pool
//! downsample, with the doubling channel schedule `base·[1,2,4,8,8]`
//! (64,128,256,512,512 at full width). Weights never train: the default
//! backbone is seeded-random, which is a valid metric backbone for every
//! loss here and keeps the test suite free of external downloads; real
//! pretrained weights can be imported from a named-tensor archive.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::archive::{ArchiveReader, ArchiveWriter};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, max_pool2, Scalar, Tensor};

/// Channel multipliers per layer group, relative to the base width.
pub const GROUP_WIDTH_FACTORS: [usize; 5] = [1, 2, 4, 8, 8];

/// Base width that reproduces the 64/128/256/512/512 schedule.
pub const FULL_BASE_WIDTH: usize = 64;

/// Nonempty subset of the five layer groups, kept in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerGroupSet(Vec<u8>);

impl LayerGroupSet {
    pub fn new(groups: &[u8]) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::arg("LayerGroupSet", "empty group set"));
        }
        let mut v: Vec<u8> = groups.to_vec();
        v.sort_unstable();
        v.dedup();
        if v[0] < 1 || v[v.len() - 1] > 5 {
            return Err(Error::arg(
                "LayerGroupSet",
                format!("groups must lie in 1..=5, got {groups:?}"),
            ));
        }
        Ok(LayerGroupSet(v))
    }

    pub fn groups(&self) -> &[u8] {
        &self.0
    }

    pub fn deepest(&self) -> u8 {
        *self.0.last().expect("set is nonempty")
    }

    /// Groups 4 and 5: the input-pair reference metric.
    pub fn pair_metric() -> Self {
        LayerGroupSet(vec![4, 5])
    }

    pub fn single(g: u8) -> Result<Self> {
        Self::new(&[g])
    }
}

/// Aggregates per-group feature pairs into one similarity scalar: the
/// unweighted mean of per-group MSEs, or one flat MSE over all features
/// when `flat` is set. Shared by [`FeatureExtractor::ps`] and the losses
/// that reuse batched extractions.
pub fn ps_from_feature_pairs<S: Scalar>(
    pairs: &[(Tensor<S>, Tensor<S>)],
    flat: bool,
) -> Result<Tensor<S>> {
    if pairs.is_empty() {
        return Err(Error::arg("ps", "no feature groups"));
    }
    if flat {
        let mut total = 0.0f64;
        let mut acc: Option<Tensor<S>> = None;
        for (xa, xb) in pairs {
            let n = xa.numel() as f64;
            total += n;
            let sse = xa.mse(xb)?.scale(S::from_f64(n));
            acc = Some(match acc {
                Some(prev) => prev.add(&sse)?,
                None => sse,
            });
        }
        Ok(acc.expect("nonempty").scale(S::from_f64(1.0 / total)))
    } else {
        let count = pairs.len() as f64;
        let mut acc: Option<Tensor<S>> = None;
        for (xa, xb) in pairs {
            let m = xa.mse(xb)?;
            acc = Some(match acc {
                Some(prev) => prev.add(&m)?,
                None => m,
            });
        }
        Ok(acc.expect("nonempty").scale(S::from_f64(1.0 / count)))
    }
}

/// Frozen five-group convolutional feature hierarchy.
pub struct FeatureExtractor<S: Scalar> {
    /// One (kernel `[C_out, C_in, 3, 3]`, bias `[C_out]`) pair per group.
    layers: Vec<(Tensor<S>, Tensor<S>)>,
    base_width: usize,
    seed: Option<u64>,
    /// Aggregate multi-group similarity as one flat MSE over all features
    /// instead of the default unweighted mean of per-group MSEs.
    pub flat_ps: bool,
}

impl<S: Scalar> FeatureExtractor<S> {
    /// Deterministic random backbone with the doubling channel schedule.
    ///
    /// After drawing the weights, each group's kernel is rescaled so a
    /// seeded random probe batch leaves the group with unit activation
    /// scale. Without this, the metric's deep features shrink with depth
    /// and similarity values collapse toward zero.
    pub fn random(seed: u64, base_width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(5);
        let mut c_in = 3usize;
        for factor in GROUP_WIDTH_FACTORS {
            let c_out = base_width * factor;
            let fan_in = c_in * 9;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            let kdata: Vec<S> = (0..c_out * c_in * 9)
                .map(|_| S::from_f64(normal.sample(&mut rng)))
                .collect();
            let kernel = Tensor::from_vec(&[c_out, c_in, 3, 3], kdata).expect("kernel shape");
            let bias = Tensor::zeros(&[c_out]).expect("bias shape");
            layers.push((kernel, bias));
            c_in = c_out;
        }

        // Scale calibration. relu and max-pool are positively homogeneous,
        // so dividing a kernel by the observed std divides the group output
        // by the same factor exactly.
        let probe_res = 32usize;
        let mut probe: Vec<S> = (0..4 * 3 * probe_res * probe_res)
            .map(|_| S::from_f64(rng.random_range(-1.0..1.0)))
            .collect();
        let mut shape = [4usize, 3, probe_res, probe_res];
        for (kernel, bias) in &layers {
            let x = Tensor::from_vec(&shape.to_vec(), probe.clone()).expect("probe shape");
            let y = max_pool2(&conv2d(&x, kernel, Some(bias), 1, 1).expect("probe conv").relu())
                .expect("probe pool");
            let data = y.to_vec();
            let n = data.len() as f64;
            let mean = data.iter().map(|v| v.to_f64()).sum::<f64>() / n;
            let var = data
                .iter()
                .map(|v| {
                    let d = v.to_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            let gain = S::from_f64(1.0 / var.sqrt().max(1e-6));
            kernel.with_data_mut(|k| {
                for v in k.iter_mut() {
                    *v *= gain;
                }
            });
            probe = data.into_iter().map(|v| v * gain).collect();
            shape = [
                y.shape()[0],
                y.shape()[1],
                y.shape()[2],
                y.shape()[3],
            ];
        }

        FeatureExtractor {
            layers,
            base_width,
            seed: Some(seed),
            flat_ps: false,
        }
    }

    pub fn base_width(&self) -> usize {
        self.base_width
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn group_widths(&self) -> Vec<usize> {
        GROUP_WIDTH_FACTORS
            .iter()
            .map(|f| f * self.base_width)
            .collect()
    }

    /// Feature maps for the requested groups, in ascending group order.
    /// Gradients flow into `image` only; the weights are constants.
    pub fn extract(&self, image: &Tensor<S>, groups: &LayerGroupSet) -> Result<Vec<Tensor<S>>> {
        let shape = image.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::shape(
                "extract",
                format!("expects [N,3,H,W], got {shape:?}"),
            ));
        }
        let (h, w) = (shape[2], shape[3]);
        let stride = 1usize << groups.deepest();
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::shape(
                "extract",
                format!(
                    "spatial size {h}x{w} not divisible by 2^{} for group {}",
                    groups.deepest(),
                    groups.deepest()
                ),
            ));
        }
        let mut out = Vec::with_capacity(groups.groups().len());
        let mut x = image.clone();
        for (gi, (kernel, bias)) in self.layers.iter().enumerate() {
            let group = gi as u8 + 1;
            x = max_pool2(&conv2d(&x, kernel, Some(bias), 1, 1)?.relu())?;
            if groups.groups().contains(&group) {
                out.push(x.clone());
            }
            if group == groups.deepest() {
                break;
            }
        }
        Ok(out)
    }

    /// Perceptual similarity: MSE between deep features of two images.
    ///
    /// Multiple groups aggregate as the unweighted mean of per-group MSEs
    /// (or one flat MSE over all features when `flat_ps` is set). Zero on
    /// identical inputs, symmetric, nonnegative.
    pub fn ps(&self, a: &Tensor<S>, b: &Tensor<S>, groups: &LayerGroupSet) -> Result<Tensor<S>> {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                "ps",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let fa = self.extract(a, groups)?;
        let fb = self.extract(b, groups)?;
        let pairs: Vec<(Tensor<S>, Tensor<S>)> = fa.into_iter().zip(fb).collect();
        ps_from_feature_pairs(&pairs, self.flat_ps)
    }

    /// FNV-1a over all weight bytes; changes iff any weight changes.
    pub fn weights_hash(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for (kernel, bias) in &self.layers {
            for v in kernel.data().iter() {
                eat(&v.to_le_bytes_vec());
            }
            for v in bias.data().iter() {
                eat(&v.to_le_bytes_vec());
            }
        }
        hash
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ArchiveWriter::new();
        w.meta("kind", "feature-extractor");
        w.meta("base_width", self.base_width);
        if let Some(seed) = self.seed {
            w.meta("seed", seed);
        }
        for (gi, (kernel, bias)) in self.layers.iter().enumerate() {
            let g = gi + 1;
            w.tensor(&format!("g{g}.kernel"), kernel.shape(), kernel.to_vec());
            w.tensor(&format!("g{g}.bias"), bias.shape(), bias.to_vec());
        }
        w.write_to(path)
    }

    /// Imports weights from a named-tensor archive (`g1.kernel`, `g1.bias`,
    /// ... `g5.bias`). Channel widths must follow the doubling schedule.
    pub fn load(path: &Path) -> Result<Self> {
        let r = ArchiveReader::<S>::read_from(path)?;
        let base_width = r
            .meta("base_width")
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| Error::Checkpoint("archive lacks base_width meta".into()))?;
        let mut layers = Vec::with_capacity(5);
        let mut c_in = 3usize;
        for (gi, factor) in GROUP_WIDTH_FACTORS.iter().enumerate() {
            let g = gi + 1;
            let c_out = base_width * factor;
            let (kshape, kdata) = r.tensor(&format!("g{g}.kernel"))?;
            if kshape != [c_out, c_in, 3, 3] {
                return Err(Error::Checkpoint(format!(
                    "g{g}.kernel has shape {kshape:?}, expected [{c_out}, {c_in}, 3, 3]"
                )));
            }
            let (bshape, bdata) = r.tensor(&format!("g{g}.bias"))?;
            if bshape != [c_out] {
                return Err(Error::Checkpoint(format!(
                    "g{g}.bias has shape {bshape:?}, expected [{c_out}]"
                )));
            }
            layers.push((
                Tensor::from_vec(kshape, kdata.to_vec())?,
                Tensor::from_vec(bshape, bdata.to_vec())?,
            ));
            c_in = c_out;
        }
        let seed = r.meta("seed").and_then(|v| v.parse::<u64>().ok());
        Ok(FeatureExtractor {
            layers,
            base_width,
            seed,
            flat_ps: false,
        })
    }
}
