//! The training protocol: pair sampling, per-pair schedules and real pools,
//! alternating discriminator/generator optimization, metrics logging and
//! self-describing checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::archive::{ArchiveReader, ArchiveWriter};
use crate::config::{ModelConfig, MorphMode, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{
    fused_perceptual_terms, identity_reg, lsgan_d, lsgan_g, recon_loss, total_g, DiscScores,
    GeneratorLossTerms, LossWeights, PerceptualSelection, Toggles,
};
use crate::networks::{Discriminators, Generator};
use crate::perceptual::FeatureExtractor;
use crate::schedule::TimeSchedule;
use crate::tensor::{backward, Adam, Scalar, Tensor};
use crate::warp::{predict_pair, warp_sequence, PairWarps, StnConfig, StnHead};

/// Partner selection: every batch anchor gets a uniformly drawn distinct
/// partner from the whole set (self-pairing only in the degenerate n = 1).
pub fn make_pairs(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    assert!(n > 0 && batch > 0);
    let mut anchors: Vec<usize> = if batch <= n {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.partial_shuffle(rng, batch);
        idx.truncate(batch);
        idx
    } else {
        (0..batch).map(|_| rng.random_range(0..n)).collect()
    };
    anchors
        .drain(..)
        .map(|a| {
            if n == 1 {
                return (a, a);
            }
            loop {
                let p = rng.random_range(0..n);
                if p != a {
                    return (a, p);
                }
            }
        })
        .collect()
}

/// Real images shown to the discriminators alongside one generated sequence;
/// the pool size matches the frame count.
pub fn draw_real_pool(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..n)).collect()
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss_d: f64,
    pub adv_g: f64,
    pub transition: f64,
    pub recon: f64,
    pub warp: f64,
    pub identity: f64,
    pub endpoint: f64,
    pub total_g: f64,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str =
        "step,loss_d,adv_g,transition,recon,warp,identity,endpoint,total_g";

    pub fn csv_row(&self) -> String {
        let mut row = String::new();
        write!(
            row,
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.loss_d,
            self.adv_g,
            self.transition,
            self.recon,
            self.warp,
            self.identity,
            self.endpoint,
            self.total_g
        )
        .expect("string write");
        row
    }
}

struct PairForward<S: Scalar> {
    a: Tensor<S>,
    b: Tensor<S>,
    warps: PairWarps<S>,
    warped_a: Vec<Tensor<S>>,
    warped_b: Vec<Tensor<S>>,
    frames: Tensor<S>,
    schedule: TimeSchedule,
}

/// A morphing model under training: networks, frozen extractor, optimizers
/// and the run RNG.
pub struct Trainer<S: Scalar> {
    pub model: ModelConfig,
    pub generator: Generator<S>,
    pub stn: Option<StnHead<S>>,
    pub discriminators: Option<Discriminators<S>>,
    pub extractor: FeatureExtractor<S>,
    opt_g: Adam<S>,
    opt_d: Option<Adam<S>>,
    g_names: Vec<String>,
    d_names: Vec<String>,
    rng: ChaCha8Rng,
    pub step: usize,
    /// Pairs per optimization step.
    pub batch: usize,
}

fn check_finite<S: Scalar>(component: &str, value: &Tensor<S>, step: usize) -> Result<f64> {
    let v = value.item().to_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite {
            component: component.to_string(),
            detail: format!("value {v} at step {step}"),
        });
    }
    Ok(v)
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: ModelConfig) -> Result<Self> {
        let toggles = model.weights.toggles.normalized();
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        // Construction order is part of the determinism contract: STN,
        // generator, discriminators, regardless of toggles (disabled parts
        // draw nothing).
        let stn = if toggles.stn {
            Some(StnHead::new(&mut rng, model.resolution, model.stn)?)
        } else {
            None
        };
        let mut generator = Generator::new(
            &mut rng,
            model.resolution,
            model.gen_width,
            model.mode == MorphMode::ContentStyle,
        )?;
        generator.use_adain = toggles.adain;
        let discriminators = if toggles.gan {
            Some(Discriminators::new(&mut rng, model.resolution, model.disc_width)?)
        } else {
            None
        };
        let mut extractor = FeatureExtractor::random(model.perceptual_seed, model.perceptual_width);
        extractor.flat_ps = model.ps_flat;

        let mut g_named = Vec::new();
        if let Some(head) = &stn {
            g_named.extend(head.named_params());
        }
        g_named.extend(generator.named_params());
        let g_names: Vec<String> = g_named.iter().map(|(n, _)| n.clone()).collect();
        let opt_g = Adam::new(g_named.into_iter().map(|(_, p)| p).collect(), model.adam);

        let (opt_d, d_names) = match &discriminators {
            Some(d) => {
                let named = d.named_params();
                let names = named.iter().map(|(n, _)| n.clone()).collect();
                (
                    Some(Adam::new(named.into_iter().map(|(_, p)| p).collect(), model.adam)),
                    names,
                )
            }
            None => (None, Vec::new()),
        };

        Ok(Trainer {
            model,
            generator,
            stn,
            discriminators,
            extractor,
            opt_g,
            opt_d,
            g_names,
            d_names,
            rng,
            step: 0,
            batch: 8,
        })
    }

    pub fn toggles(&self) -> Toggles {
        self.model.weights.toggles.normalized()
    }

    pub fn weights(&self) -> &LossWeights {
        &self.model.weights
    }

    fn draw_schedule(&mut self) -> Result<TimeSchedule> {
        match self.model.mode {
            MorphMode::SingleAxis => TimeSchedule::uniform(self.model.k),
            MorphMode::ContentStyle => TimeSchedule::content_style(self.model.k, &mut self.rng),
        }
    }

    fn forward_pair(&self, a: Tensor<S>, b: Tensor<S>, schedule: TimeSchedule) -> Result<PairForward<S>> {
        let warps = predict_pair(self.stn.as_ref(), &a, &b, self.model.stn.grid_side)?;
        let (warped_a, warped_b) = warp_sequence(&warps, &a, &b, &schedule.content_times())?;
        let frames = self
            .generator
            .frames_from_warped(&warped_a, &warped_b, &schedule)?;
        Ok(PairForward {
            a,
            b,
            warps,
            warped_a,
            warped_b,
            frames,
            schedule,
        })
    }

    fn score(discs: &Discriminators<S>, image: &Tensor<S>) -> Result<DiscScores<S>> {
        Ok(DiscScores {
            local: discs.local.discriminate(image)?,
            global: discs.global.discriminate(image)?,
        })
    }

    /// One optimization iteration over a batch of pairs: a discriminator
    /// step on detached frames and real pools, then a generator step on the
    /// full objective through the updated discriminators.
    pub fn train_step(&mut self, train: &Dataset) -> Result<StepMetrics> {
        let toggles = self.toggles();
        let batch = make_pairs(train.len(), self.batch.max(1), &mut self.rng);
        let inv_batch = S::from_f64(1.0 / batch.len() as f64);

        let mut forwards = Vec::with_capacity(batch.len());
        for (ia, ib) in &batch {
            let schedule = self.draw_schedule()?;
            forwards.push(self.forward_pair(
                train.image::<S>(*ia),
                train.image::<S>(*ib),
                schedule,
            )?);
        }

        // Discriminator phase: real pools vs detached frames.
        let mut loss_d_avg = 0.0;
        if let (Some(discs), true) = (&self.discriminators, toggles.gan) {
            let opt_d = self.opt_d.as_mut().expect("optimizer exists with discriminators");
            opt_d.zero_grads();
            for fwd in &forwards {
                let pool = draw_real_pool(train.len(), fwd.schedule.len(), &mut self.rng);
                let real_images: Vec<Tensor<S>> =
                    pool.iter().map(|&i| train.image::<S>(i)).collect();
                let real = Tensor::concat_batch(&real_images)?;
                let real_scores = Self::score(discs, &real)?;
                let fake_scores = Self::score(discs, &fwd.frames.detach())?;
                let loss = lsgan_d(&real_scores, &fake_scores)?;
                loss_d_avg += check_finite("discriminator loss", &loss, self.step)?;
                backward(&loss.scale(inv_batch))?;
            }
            loss_d_avg /= batch.len() as f64;
            opt_d.step();
        }

        // Generator phase, through the just-updated discriminators.
        self.opt_g.zero_grads();
        let mut sums = [0.0f64; 7];
        for fwd in &forwards {
            let k = fwd.schedule.len();
            let content_times = fwd.schedule.content_times();
            let style_times = fwd.schedule.style_times();

            let mut terms = GeneratorLossTerms::none();
            if toggles.gan {
                let discs = self.discriminators.as_ref().expect("gan toggle implies discriminators");
                terms.adv = Some(lsgan_g(&Self::score(discs, &fwd.frames)?)?);
            }
            let endpoint_group = match self.model.mode {
                MorphMode::SingleAxis => 4,
                MorphMode::ContentStyle => 3,
            };
            // Single-pass feature extraction shared by the three perceptual
            // terms; values match the standalone loss ops exactly.
            let perceptual = fused_perceptual_terms(
                &self.extractor,
                &fwd.frames,
                &fwd.warped_a,
                &fwd.warped_b,
                &content_times,
                &style_times,
                &fwd.a,
                &fwd.b,
                PerceptualSelection {
                    transition: toggles.local_ps,
                    endpoint_group: toggles.global_ps.then_some(endpoint_group),
                    warp: toggles.stn,
                },
            )?;
            terms.transition = perceptual.transition;
            terms.endpoint = perceptual.endpoint;
            terms.warp = perceptual.warp;
            if toggles.recon {
                terms.recon = Some(recon_loss(
                    &fwd.frames.slice_batch(0, 1)?,
                    &fwd.frames.slice_batch(k - 1, 1)?,
                    &fwd.a,
                    &fwd.b,
                )?);
            }
            if toggles.stn {
                terms.identity = Some(identity_reg(&fwd.warps.ab, &fwd.warps.ba)?);
            }

            for (name, term) in [
                ("adversarial", &terms.adv),
                ("transition", &terms.transition),
                ("reconstruction", &terms.recon),
                ("warp", &terms.warp),
                ("identity", &terms.identity),
                ("endpoint", &terms.endpoint),
            ] {
                if let Some(t) = term {
                    check_finite(name, t, self.step)?;
                }
            }

            let total = total_g(&terms, &self.model.weights)?;
            let total_v = check_finite("generator total", &total, self.step)?;
            let values = terms.values();
            for (acc, v) in sums.iter_mut().zip(values.iter().chain([&total_v])) {
                *acc += v;
            }
            backward(&total.scale(inv_batch))?;
        }
        self.opt_g.step();

        let n = batch.len() as f64;
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            loss_d: loss_d_avg,
            adv_g: sums[0] / n,
            transition: sums[1] / n,
            recon: sums[2] / n,
            warp: sums[3] / n,
            identity: sums[4] / n,
            endpoint: sums[5] / n,
            total_g: sums[6] / n,
        })
    }

    /// Serializes the model config, every parameter tensor and the optimizer
    /// state. Byte-identical across save → load → save.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let m = &self.model;
        let t = m.weights.toggles;
        let mut w = ArchiveWriter::new();
        w.meta("kind", "checkpoint");
        w.meta("precision", S::DTYPE.name());
        w.meta("mode", m.mode.name());
        w.meta("resolution", m.resolution);
        w.meta("k", m.k);
        w.meta("seed", m.seed);
        w.meta("step", self.step);
        w.meta("gen_width", m.gen_width);
        w.meta("disc_width", m.disc_width);
        w.meta("grid_side", m.stn.grid_side);
        w.meta("stn_conv1", m.stn.conv_widths.0);
        w.meta("stn_conv2", m.stn.conv_widths.1);
        w.meta("stn_fc", m.stn.fc_hidden);
        w.meta("perceptual_seed", m.perceptual_seed);
        w.meta("perceptual_width", m.perceptual_width);
        w.meta("ps_flat", m.ps_flat);
        w.meta("lambda_adv", m.weights.lambda_adv);
        w.meta("lambda_transition", m.weights.lambda_transition);
        w.meta("lambda_recon", m.weights.lambda_recon);
        w.meta("lambda_warp", m.weights.lambda_warp);
        w.meta("lambda_identity", m.weights.lambda_identity);
        w.meta("lambda_endpoint", m.weights.lambda_endpoint);
        w.meta("toggle_gan", t.gan);
        w.meta("toggle_local_ps", t.local_ps);
        w.meta("toggle_global_ps", t.global_ps);
        w.meta("toggle_recon", t.recon);
        w.meta("toggle_adain", t.adain);
        w.meta("toggle_stn", t.stn);
        w.meta("lr", m.adam.lr);
        w.meta("beta1", m.adam.beta1);
        w.meta("beta2", m.adam.beta2);
        w.meta("adam_eps", m.adam.eps);

        let mut named = Vec::new();
        if let Some(head) = &self.stn {
            named.extend(head.named_params());
        }
        named.extend(self.generator.named_params());
        if let Some(d) = &self.discriminators {
            named.extend(d.named_params());
        }
        for (name, p) in &named {
            w.tensor(name, p.shape(), p.to_vec());
        }
        for (name, data) in self.opt_g.state_entries("optim.g", &self.g_names) {
            let len = data.len();
            w.tensor(&name, &[len], data);
        }
        if let Some(opt_d) = &self.opt_d {
            for (name, data) in opt_d.state_entries("optim.d", &self.d_names) {
                let len = data.len();
                w.tensor(&name, &[len], data);
            }
        }
        w.write_to(path)
    }

    /// Rebuilds a trainer from a checkpoint written at the same precision.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let r = ArchiveReader::<S>::read_from(path)?;
        let meta_num = |key: &str| -> Result<f64> {
            r.meta(key)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or bad meta `{key}`")))
        };
        let meta_bool = |key: &str| -> Result<bool> {
            r.meta(key)
                .and_then(|v| v.parse::<bool>().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or bad meta `{key}`")))
        };
        if r.meta("kind") != Some("checkpoint") {
            return Err(Error::Checkpoint("archive is not a checkpoint".into()));
        }
        let model = ModelConfig {
            resolution: meta_num("resolution")? as usize,
            k: meta_num("k")? as usize,
            mode: MorphMode::parse(
                r.meta("mode")
                    .ok_or_else(|| Error::Checkpoint("missing meta `mode`".into()))?,
            )?,
            seed: meta_num("seed")? as u64,
            weights: LossWeights {
                lambda_adv: meta_num("lambda_adv")?,
                lambda_transition: meta_num("lambda_transition")?,
                lambda_recon: meta_num("lambda_recon")?,
                lambda_warp: meta_num("lambda_warp")?,
                lambda_identity: meta_num("lambda_identity")?,
                lambda_endpoint: meta_num("lambda_endpoint")?,
                toggles: Toggles {
                    gan: meta_bool("toggle_gan")?,
                    local_ps: meta_bool("toggle_local_ps")?,
                    global_ps: meta_bool("toggle_global_ps")?,
                    recon: meta_bool("toggle_recon")?,
                    adain: meta_bool("toggle_adain")?,
                    stn: meta_bool("toggle_stn")?,
                },
            },
            adam: crate::tensor::AdamParams {
                lr: meta_num("lr")?,
                beta1: meta_num("beta1")?,
                beta2: meta_num("beta2")?,
                eps: meta_num("adam_eps")?,
            },
            gen_width: meta_num("gen_width")? as usize,
            disc_width: meta_num("disc_width")? as usize,
            stn: StnConfig {
                grid_side: meta_num("grid_side")? as usize,
                conv_widths: (
                    meta_num("stn_conv1")? as usize,
                    meta_num("stn_conv2")? as usize,
                ),
                fc_hidden: meta_num("stn_fc")? as usize,
            },
            perceptual_seed: meta_num("perceptual_seed")? as u64,
            perceptual_width: meta_num("perceptual_width")? as usize,
            ps_flat: meta_bool("ps_flat")?,
        };
        let mut trainer = Trainer::new(model)?;
        trainer.step = meta_num("step")? as usize;

        let mut named = Vec::new();
        if let Some(head) = &trainer.stn {
            named.extend(head.named_params());
        }
        named.extend(trainer.generator.named_params());
        if let Some(d) = &trainer.discriminators {
            named.extend(d.named_params());
        }
        for (name, p) in &named {
            let (shape, data) = r.tensor(name)?;
            if shape != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {shape:?}, expected {:?}",
                    p.shape()
                )));
            }
            p.set_data(data);
        }
        let g_names = trainer.g_names.clone();
        trainer
            .opt_g
            .load_state("optim.g", &g_names, |n| r.take_tensor(n).ok());
        let d_names = trainer.d_names.clone();
        if let Some(opt_d) = trainer.opt_d.as_mut() {
            opt_d.load_state("optim.d", &d_names, |n| r.take_tensor(n).ok());
        }
        Ok(trainer)
    }
}

/// Everything `fit` leaves on disk.
pub struct FitOutcome {
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub steps_run: usize,
    pub final_metrics: Option<StepMetrics>,
}

/// Keeps the held-out split independent of the model seed's other uses.
const SPLIT_SEED_OFFSET: u64 = 0x517;

/// Splits the dataset exactly as `fit` does.
pub fn split_for_training(cfg: &TrainConfig, dataset: Dataset) -> Result<(Dataset, Dataset)> {
    dataset.split(cfg.test_fraction, cfg.model.seed.wrapping_add(SPLIT_SEED_OFFSET))
}

/// Runs the full protocol: split, iterate `train_step`, log one CSV row per
/// step, write the final checkpoint (plus periodic ones when configured).
pub fn fit<S: Scalar>(
    cfg: &TrainConfig,
    dataset: Dataset,
    mut progress: impl FnMut(&StepMetrics),
) -> Result<FitOutcome> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let (train, _test) = split_for_training(cfg, dataset)?;
    let steps = resolve_steps(cfg, train.len());

    let mut trainer = Trainer::<S>::new(cfg.model.clone())?;
    trainer.batch = cfg.batch;

    let metrics_csv = cfg.out_dir.join("metrics.csv");
    let mut csv = String::new();
    csv.push_str(StepMetrics::CSV_HEADER);
    csv.push('\n');

    let mut last = None;
    for i in 0..steps {
        let m = trainer.train_step(&train)?;
        csv.push_str(&m.csv_row());
        csv.push('\n');
        progress(&m);
        if cfg.checkpoint_every > 0 && (i + 1) % cfg.checkpoint_every == 0 && i + 1 < steps {
            trainer.save_checkpoint(&cfg.out_dir.join(format!("checkpoint_{:06}.mga", i + 1)))?;
        }
        last = Some(m);
    }
    std::fs::write(&metrics_csv, csv)?;
    let checkpoint = cfg.out_dir.join("checkpoint.mga");
    trainer.save_checkpoint(&checkpoint)?;
    Ok(FitOutcome {
        checkpoint,
        metrics_csv,
        steps_run: steps,
        final_metrics: last,
    })
}

/// Steps from the explicit budget, or `epochs · ceil(n / batch)`.
pub fn resolve_steps(cfg: &TrainConfig, n_train: usize) -> usize {
    if cfg.steps > 0 {
        cfg.steps
    } else {
        let per_epoch = n_train.div_ceil(cfg.batch.max(1));
        cfg.epochs.unwrap_or(0) * per_epoch
    }
}
