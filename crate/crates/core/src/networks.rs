//! Generator (encoder → statistics blend → late-fusion decoder) and the two
//! discriminators.
//!
//! The two warped inputs are encoded separately; their feature statistics are
//! re-normalized to a time-blended mixture, the maps are concatenated with
//! spatially-expanded time channels, and the decoder emits the frame. No skip
//! connections cross from encoder to decoder: fusion happens only at the
//! decoder input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::schedule::TimeSchedule;
use crate::tensor::{
    add_stat, conv2d, conv_transpose2d, div_stat, instance_stats, mul_stat, sub_stat, Scalar,
    Tensor, INSTANCE_STATS_EPS,
};
use crate::warp::{predict_pair, warp_sequence, StnHead, WEIGHT_INIT_STD};

struct ConvBlock<S: Scalar> {
    kernel: Tensor<S>,
    bias: Tensor<S>,
}

impl<S: Scalar> ConvBlock<S> {
    fn new(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, k: usize) -> Self {
        let normal = Normal::new(0.0, WEIGHT_INIT_STD).expect("valid std");
        let kdata: Vec<S> = (0..c_out * c_in * k * k)
            .map(|_| S::from_f64(normal.sample(rng)))
            .collect();
        ConvBlock {
            kernel: Tensor::param(&[c_out, c_in, k, k], kdata).expect("kernel shape"),
            bias: Tensor::param(&[c_out], vec![S::ZERO; c_out]).expect("bias shape"),
        }
    }

    /// Transposed-conv block: kernel `[c_in, c_out, k, k]`, bias `[c_out]`.
    fn new_transposed(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize) -> Self {
        let normal = Normal::new(0.0, WEIGHT_INIT_STD).expect("valid std");
        let kdata: Vec<S> = (0..c_in * c_out * k * k)
            .map(|_| S::from_f64(normal.sample(rng)))
            .collect();
        ConvBlock {
            kernel: Tensor::param(&[c_in, c_out, k, k], kdata).expect("kernel shape"),
            bias: Tensor::param(&[c_out], vec![S::ZERO; c_out]).expect("bias shape"),
        }
    }

    fn named(&self, name: String, out: &mut Vec<(String, Tensor<S>)>) {
        out.push((format!("{name}.kernel"), self.kernel.clone()));
        out.push((format!("{name}.bias"), self.bias.clone()));
    }
}

fn resolution_depth(resolution: usize) -> Result<usize> {
    // Blocks halve the extent down to a 4x4 bottleneck.
    let mut depth = 0usize;
    let mut r = resolution;
    while r > 4 {
        if !r.is_multiple_of(2) {
            return Err(Error::arg(
                "networks",
                format!("resolution {resolution} must be 4·2^d"),
            ));
        }
        r /= 2;
        depth += 1;
    }
    if r != 4 || depth == 0 {
        return Err(Error::arg(
            "networks",
            format!("resolution {resolution} must be 4·2^d with d >= 1"),
        ));
    }
    Ok(depth)
}

/// Strided conv+relu stack mapping `[N,3,R,R]` to `[N,C,4,4]`.
pub struct Encoder<S: Scalar> {
    blocks: Vec<ConvBlock<S>>,
    resolution: usize,
    base_width: usize,
}

impl<S: Scalar> Encoder<S> {
    pub fn new(rng: &mut ChaCha8Rng, resolution: usize, base_width: usize) -> Result<Self> {
        let depth = resolution_depth(resolution)?;
        let mut blocks = Vec::with_capacity(depth);
        let mut c_in = 3usize;
        for i in 0..depth {
            let c_out = base_width << i;
            blocks.push(ConvBlock::new(rng, c_out, c_in, 4));
            c_in = c_out;
        }
        Ok(Encoder {
            blocks,
            resolution,
            base_width,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.base_width << (self.blocks.len() - 1)
    }

    pub fn encode(&self, image: &Tensor<S>) -> Result<Tensor<S>> {
        let s = image.shape();
        if s.len() != 4 || s[2] != self.resolution || s[3] != self.resolution {
            return Err(Error::shape(
                "encode",
                format!("expects [N,3,{r},{r}], got {s:?}", r = self.resolution),
            ));
        }
        let mut x = image.clone();
        for b in &self.blocks {
            x = conv2d(&x, &b.kernel, Some(&b.bias), 2, 1)?.relu();
        }
        Ok(x)
    }
}

/// Mirrored tconv+relu stack from the fused `[N,Cin,4,4]` block back to an
/// image in [−1, 1] via a final tanh.
pub struct Decoder<S: Scalar> {
    blocks: Vec<ConvBlock<S>>,
    in_channels: usize,
}

impl<S: Scalar> Decoder<S> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        resolution: usize,
        base_width: usize,
        in_channels: usize,
    ) -> Result<Self> {
        let depth = resolution_depth(resolution)?;
        let mut blocks = Vec::with_capacity(depth);
        let mut c_in = in_channels;
        for i in (0..depth).rev() {
            let c_out = if i == 0 { 3 } else { base_width << (i - 1) };
            blocks.push(ConvBlock::new_transposed(rng, c_in, c_out, 4));
            c_in = c_out;
        }
        Ok(Decoder {
            blocks,
            in_channels,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn decode(&self, stack: &Tensor<S>) -> Result<Tensor<S>> {
        let s = stack.shape();
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(Error::shape(
                "decode",
                format!("expects [N,{},4,4], got {s:?}", self.in_channels),
            ));
        }
        let mut x = stack.clone();
        for (i, b) in self.blocks.iter().enumerate() {
            x = conv_transpose2d(&x, &b.kernel, Some(&b.bias), 2, 1)?;
            x = if i + 1 == self.blocks.len() { x.tanh() } else { x.relu() };
        }
        Ok(x)
    }
}

/// Blended per-channel statistics for time `t`:
/// `μ_t = (1−t)·μ_A + t·μ_B`, `σ_t = sqrt((1−t)·σ_A² + t·σ_B²)`.
pub fn blend_stats(mu_a: f64, sigma_a: f64, mu_b: f64, sigma_b: f64, t: f64) -> (f64, f64) {
    let mu = (1.0 - t) * mu_a + t * mu_b;
    let var = (1.0 - t) * sigma_a * sigma_a + t * sigma_b * sigma_b;
    (mu, var.sqrt())
}

/// Re-normalizes both feature maps to shared time-blended statistics,
/// per sample and channel: `F* = σ_t·(F − μ_F)/σ_F + μ_t` with the t of
/// each batch row taken from `times`.
pub fn adain_blend<S: Scalar>(
    f_a: &Tensor<S>,
    f_b: &Tensor<S>,
    times: &[f64],
) -> Result<(Tensor<S>, Tensor<S>)> {
    if f_a.shape() != f_b.shape() {
        return Err(Error::shape(
            "adain_blend",
            format!("{:?} vs {:?}", f_a.shape(), f_b.shape()),
        ));
    }
    if f_a.shape()[0] != times.len() {
        return Err(Error::shape(
            "adain_blend",
            format!("batch {} vs {} times", f_a.shape()[0], times.len()),
        ));
    }
    let (mu_a, sig_a) = instance_stats(f_a, INSTANCE_STATS_EPS)?;
    let (mu_b, sig_b) = instance_stats(f_b, INSTANCE_STATS_EPS)?;

    let t: Vec<S> = times.iter().map(|&v| S::from_f64(v)).collect();
    let one_m_t: Vec<S> = times.iter().map(|&v| S::from_f64(1.0 - v)).collect();

    let mu_t = mu_a.scale_rows(&one_m_t)?.add(&mu_b.scale_rows(&t)?)?;
    let var_t = sig_a
        .mul(&sig_a)?
        .scale_rows(&one_m_t)?
        .add(&sig_b.mul(&sig_b)?.scale_rows(&t)?)?;
    let sig_t = var_t.sqrt()?;

    let renorm = |f: &Tensor<S>, mu: &Tensor<S>, sig: &Tensor<S>| -> Result<Tensor<S>> {
        add_stat(
            &mul_stat(&div_stat(&sub_stat(f, mu)?, sig)?, &sig_t)?,
            &mu_t,
        )
    };
    Ok((renorm(f_a, &mu_a, &sig_a)?, renorm(f_b, &mu_b, &sig_b)?))
}

/// Constant `[N,1,H,W]` channel holding one value per batch row.
pub fn time_channel<S: Scalar>(values: &[f64], h: usize, w: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(values.len() * h * w);
    for &v in values {
        data.extend(std::iter::repeat_n(S::from_f64(v), h * w));
    }
    Tensor::from_vec(&[values.len(), 1, h, w], data).expect("time channel shape")
}

/// Channel stack `[F_A*, F_B*, time...]` fed to the decoder. Order is
/// A-features, B-features, then one channel per time axis.
pub fn assemble<S: Scalar>(
    f_a: &Tensor<S>,
    f_b: &Tensor<S>,
    schedule: &TimeSchedule,
) -> Result<Tensor<S>> {
    let (h, w) = (f_a.shape()[2], f_a.shape()[3]);
    let mut parts = vec![f_a.clone(), f_b.clone()];
    match schedule {
        TimeSchedule::Single(times) => parts.push(time_channel(times, h, w)),
        TimeSchedule::Dual(_) => {
            parts.push(time_channel(&schedule.content_times(), h, w));
            parts.push(time_channel(&schedule.style_times(), h, w));
        }
    }
    Tensor::concat_channels(&parts)
}

/// The conditional generator: shared encoder, statistics blend, decoder.
pub struct Generator<S: Scalar> {
    pub encoder: Encoder<S>,
    pub decoder: Decoder<S>,
    resolution: usize,
    /// Statistics blending on/off (an ablation switch; when off, encoded
    /// maps pass to the decoder unblended).
    pub use_adain: bool,
    time_axes: usize,
}

impl<S: Scalar> Generator<S> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        resolution: usize,
        base_width: usize,
        dual_axis: bool,
    ) -> Result<Self> {
        let encoder = Encoder::new(rng, resolution, base_width)?;
        let time_axes = if dual_axis { 2 } else { 1 };
        let decoder = Decoder::new(
            rng,
            resolution,
            base_width,
            2 * encoder.out_channels() + time_axes,
        )?;
        Ok(Generator {
            encoder,
            decoder,
            resolution,
            use_adain: true,
            time_axes,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn dual_axis(&self) -> bool {
        self.time_axes == 2
    }

    /// Frames `[k,3,R,R]` for pre-warped input sequences.
    pub fn frames_from_warped(
        &self,
        warped_a: &[Tensor<S>],
        warped_b: &[Tensor<S>],
        schedule: &TimeSchedule,
    ) -> Result<Tensor<S>> {
        if schedule.is_dual() != (self.time_axes == 2) {
            return Err(Error::arg(
                "generate",
                "schedule axis count does not match the generator's time channels",
            ));
        }
        let a = Tensor::concat_batch(warped_a)?;
        let b = Tensor::concat_batch(warped_b)?;
        let f_a = self.encoder.encode(&a)?;
        let f_b = self.encoder.encode(&b)?;
        let (f_a, f_b) = if self.use_adain {
            adain_blend(&f_a, &f_b, &schedule.style_times())?
        } else {
            (f_a, f_b)
        };
        let stack = assemble(&f_a, &f_b, schedule)?;
        self.decoder.decode(&stack)
    }

    /// One frame from one pre-warped input pair.
    pub fn generate_frame(
        &self,
        warped_a: &Tensor<S>,
        warped_b: &Tensor<S>,
        schedule_row: &TimeSchedule,
    ) -> Result<Tensor<S>> {
        self.frames_from_warped(
            std::slice::from_ref(warped_a),
            std::slice::from_ref(warped_b),
            schedule_row,
        )
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.blocks.iter().enumerate() {
            b.named(format!("enc.block{i}"), &mut out);
        }
        for (i, b) in self.decoder.blocks.iter().enumerate() {
            b.named(format!("dec.block{i}"), &mut out);
        }
        out
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }
}

/// Full pipeline: predict warps, build warped sequences, generate frames.
/// Returns `[k,3,R,R]`.
pub fn generate_sequence<S: Scalar>(
    generator: &Generator<S>,
    stn: Option<&StnHead<S>>,
    a: &Tensor<S>,
    b: &Tensor<S>,
    schedule: &TimeSchedule,
    grid_side: usize,
) -> Result<Tensor<S>> {
    let warps = predict_pair(stn, a, b, grid_side)?;
    let (wa, wb) = warp_sequence(&warps, a, b, &schedule.content_times())?;
    generator.frames_from_warped(&wa, &wb, schedule)
}

/// Patch discriminator: stride-2 conv+relu blocks and a 1×1 conv with a
/// final sigmoid, emitting an s×s map of per-patch scores.
pub struct LocalDiscriminator<S: Scalar> {
    blocks: Vec<ConvBlock<S>>,
    head: ConvBlock<S>,
}

impl<S: Scalar> LocalDiscriminator<S> {
    pub fn new(rng: &mut ChaCha8Rng, base_width: usize) -> Self {
        let mut blocks = Vec::with_capacity(3);
        let mut c_in = 3usize;
        for i in 0..3 {
            let c_out = base_width << i;
            blocks.push(ConvBlock::new(rng, c_out, c_in, 4));
            c_in = c_out;
        }
        LocalDiscriminator {
            blocks,
            head: ConvBlock::new(rng, 1, c_in, 1),
        }
    }

    pub fn discriminate(&self, image: &Tensor<S>) -> Result<Tensor<S>> {
        let mut x = image.clone();
        for b in &self.blocks {
            x = conv2d(&x, &b.kernel, Some(&b.bias), 2, 1)?.relu();
        }
        Ok(conv2d(&x, &self.head.kernel, Some(&self.head.bias), 1, 0)?.sigmoid())
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.named(format!("dloc.block{i}"), &mut out);
        }
        self.head.named("dloc.head".into(), &mut out);
        out
    }
}

/// Whole-image discriminator: stride-2 blocks down to the 4×4 bottleneck,
/// then a valid 4×4 conv and sigmoid for a single score per image.
pub struct GlobalDiscriminator<S: Scalar> {
    blocks: Vec<ConvBlock<S>>,
    head: ConvBlock<S>,
    resolution: usize,
}

impl<S: Scalar> GlobalDiscriminator<S> {
    pub fn new(rng: &mut ChaCha8Rng, resolution: usize, base_width: usize) -> Result<Self> {
        let depth = resolution_depth(resolution)?;
        let mut blocks = Vec::with_capacity(depth);
        let mut c_in = 3usize;
        for i in 0..depth {
            let c_out = base_width << i;
            blocks.push(ConvBlock::new(rng, c_out, c_in, 4));
            c_in = c_out;
        }
        Ok(GlobalDiscriminator {
            blocks,
            head: ConvBlock::new(rng, 1, c_in, 4),
            resolution,
        })
    }

    pub fn discriminate(&self, image: &Tensor<S>) -> Result<Tensor<S>> {
        let s = image.shape();
        if s[2] != self.resolution || s[3] != self.resolution {
            return Err(Error::shape(
                "discriminate_global",
                format!("expects {r}x{r} input, got {s:?}", r = self.resolution),
            ));
        }
        let mut x = image.clone();
        for b in &self.blocks {
            x = conv2d(&x, &b.kernel, Some(&b.bias), 2, 1)?.relu();
        }
        Ok(conv2d(&x, &self.head.kernel, Some(&self.head.bias), 1, 0)?.sigmoid())
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.named(format!("dglob.block{i}"), &mut out);
        }
        self.head.named("dglob.head".into(), &mut out);
        out
    }
}

/// Convenience bundle of both discriminators.
pub struct Discriminators<S: Scalar> {
    pub local: LocalDiscriminator<S>,
    pub global: GlobalDiscriminator<S>,
}

impl<S: Scalar> Discriminators<S> {
    pub fn new(rng: &mut ChaCha8Rng, resolution: usize, base_width: usize) -> Result<Self> {
        Ok(Discriminators {
            local: LocalDiscriminator::new(rng, base_width),
            global: GlobalDiscriminator::new(rng, resolution, base_width)?,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = self.local.named_params();
        out.extend(self.global.named_params());
        out
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }
}

/// Seeded generator/discriminator/STN construction helper.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
