//! Training objectives: least-squares adversarial terms, the perceptual
//! transition pacing, endpoint reconstruction, warp shaping, identity
//! regularization and the time-blended warped-input similarity — plus the
//! weighted total with ablation switches.

use crate::error::{Error, Result};
use crate::perceptual::{ps_from_feature_pairs, FeatureExtractor, LayerGroupSet};
use crate::tensor::{Scalar, Tensor};
use crate::warp::ControlGrid;

/// Ablation switches. Disabling the aligner also disables the global
/// perceptual term, which is defined against its warped sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    pub gan: bool,
    pub local_ps: bool,
    pub global_ps: bool,
    pub recon: bool,
    pub adain: bool,
    pub stn: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            gan: true,
            local_ps: true,
            global_ps: true,
            recon: true,
            adain: true,
            stn: true,
        }
    }
}

impl Toggles {
    /// Applies cross-switch implications.
    pub fn normalized(mut self) -> Self {
        if !self.stn {
            self.global_ps = false;
        }
        self
    }
}

/// The λ coefficients of the generator total, plus the ablation switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_transition: f64,
    pub lambda_recon: f64,
    pub lambda_warp: f64,
    pub lambda_identity: f64,
    pub lambda_endpoint: f64,
    pub toggles: Toggles,
}

impl Default for LossWeights {
    fn default() -> Self {
        // Reconstruction and transition weighted up so the endpoints anchor
        // early training.
        LossWeights {
            lambda_adv: 1.0,
            lambda_transition: 10.0,
            lambda_recon: 25.0,
            lambda_warp: 1.0,
            lambda_identity: 1.0,
            lambda_endpoint: 1.0,
            toggles: Toggles::default(),
        }
    }
}

/// Score pairs from both discriminators for one image batch.
pub struct DiscScores<S: Scalar> {
    pub local: Tensor<S>,
    pub global: Tensor<S>,
}

fn mse_to_label<S: Scalar>(scores: &Tensor<S>, label: f64) -> Tensor<S> {
    let d = scores.add_scalar(S::from_f64(-label));
    d.mul(&d).expect("same shape").mean_all()
}

/// Discriminator objective: squared error of local and global scores to 1 on
/// real images and to 0 on fakes. Callers must detach generated frames
/// before scoring so no gradient reaches the generator.
pub fn lsgan_d<S: Scalar>(real: &DiscScores<S>, fake: &DiscScores<S>) -> Result<Tensor<S>> {
    mse_to_label(&real.local, 1.0)
        .add(&mse_to_label(&real.global, 1.0))?
        .add(&mse_to_label(&fake.local, 0.0))?
        .add(&mse_to_label(&fake.global, 0.0))
}

/// Generator adversarial objective: labels inverted, gradient flows through
/// the discriminators into the generator.
pub fn lsgan_g<S: Scalar>(fake: &DiscScores<S>) -> Result<Tensor<S>> {
    mse_to_label(&fake.local, 1.0).add(&mse_to_label(&fake.global, 1.0))
}

/// Per-frame rows of batched feature maps: element i of the result pairs the
/// requested groups' row i.
fn frame_features<S: Scalar>(
    fx: &FeatureExtractor<S>,
    frames: &Tensor<S>,
    groups: &LayerGroupSet,
) -> Result<Vec<Vec<Tensor<S>>>> {
    let batch = fx.extract(frames, groups)?;
    let k = frames.shape()[0];
    let mut rows = Vec::with_capacity(k);
    for i in 0..k {
        let mut per_group = Vec::with_capacity(batch.len());
        for g in &batch {
            per_group.push(g.slice_batch(i, 1)?);
        }
        rows.push(per_group);
    }
    Ok(rows)
}

fn ps_of_rows<S: Scalar>(
    a: &[Tensor<S>],
    b: &[Tensor<S>],
    flat: bool,
) -> Result<Tensor<S>> {
    let pairs: Vec<(Tensor<S>, Tensor<S>)> =
        a.iter().cloned().zip(b.iter().cloned()).collect();
    ps_from_feature_pairs(&pairs, flat)
}

/// Transition pacing: the worst frame-to-frame deviation from the expected
/// per-step perceptual distance,
/// `max_i ‖PS(I_{i−1}, I_i) − (t_i − t_{i−1})·PS(I_A, I_B)‖²`
/// over groups 4+5, with `t` the content axis.
pub fn transition_loss<S: Scalar>(
    fx: &FeatureExtractor<S>,
    frames: &Tensor<S>,
    content_times: &[f64],
    input_a: &Tensor<S>,
    input_b: &Tensor<S>,
) -> Result<Tensor<S>> {
    let k = frames.shape()[0];
    if k != content_times.len() || k < 2 {
        return Err(Error::shape(
            "transition_loss",
            format!("{k} frames vs {} times", content_times.len()),
        ));
    }
    let groups = LayerGroupSet::pair_metric();
    // The reference distance is a constant of the inputs.
    let ref_ps = fx.ps(input_a, input_b, &groups)?;
    let rows = frame_features(fx, frames, &groups)?;
    let mut terms = Vec::with_capacity(k - 1);
    for i in 1..k {
        let dt = content_times[i] - content_times[i - 1];
        let step_ps = ps_of_rows(&rows[i - 1], &rows[i], fx.flat_ps)?;
        let dev = step_ps.sub(&ref_ps.scale(S::from_f64(dt)))?;
        terms.push(dev.mul(&dev)?);
    }
    Tensor::max_of(&terms)
}

/// Endpoint reconstruction: `MSE(I_1, I_A) + MSE(I_k, I_B)`.
pub fn recon_loss<S: Scalar>(
    first_frame: &Tensor<S>,
    last_frame: &Tensor<S>,
    input_a: &Tensor<S>,
    input_b: &Tensor<S>,
) -> Result<Tensor<S>> {
    first_frame.mse(input_a)?.add(&last_frame.mse(input_b)?)
}

/// Shape warp loss: deepest-group similarity between each fully warped input
/// and the opposite endpoint, summed over both directions.
pub fn warp_loss<S: Scalar>(
    fx: &FeatureExtractor<S>,
    fully_warped_a: &Tensor<S>,
    input_b: &Tensor<S>,
    fully_warped_b: &Tensor<S>,
    input_a: &Tensor<S>,
) -> Result<Tensor<S>> {
    let g5 = LayerGroupSet::single(5)?;
    fx.ps(fully_warped_a, input_b, &g5)?
        .add(&fx.ps(fully_warped_b, input_a, &g5)?)
}

/// Identity regularization: `MSE(W, I)` summed over both predicted grids.
pub fn identity_reg<S: Scalar>(
    grid_ab: &ControlGrid<S>,
    grid_ba: &ControlGrid<S>,
) -> Result<Tensor<S>> {
    grid_ab
        .identity_deviation()?
        .add(&grid_ba.identity_deviation()?)
}

/// Time-blended similarity between each frame and its warped inputs:
/// `Σ_i (1−t_i)·PS_g(I_i, I_A^{t_i}) + t_i·PS_g(I_i, I_B^{t_i})`,
/// with `t` the style axis and `g` = 4 (single-axis) or 3 (content/style).
/// Zero-coefficient endpoint terms are skipped outright.
pub fn endpoint_blend_loss<S: Scalar>(
    fx: &FeatureExtractor<S>,
    frames: &Tensor<S>,
    warped_a: &[Tensor<S>],
    warped_b: &[Tensor<S>],
    style_times: &[f64],
    group: u8,
) -> Result<Tensor<S>> {
    let k = frames.shape()[0];
    if warped_a.len() != k || warped_b.len() != k || style_times.len() != k {
        return Err(Error::shape(
            "endpoint_blend_loss",
            format!(
                "{k} frames vs {} / {} warped, {} times",
                warped_a.len(),
                warped_b.len(),
                style_times.len()
            ),
        ));
    }
    let groups = LayerGroupSet::single(group)?;
    let rows = frame_features(fx, frames, &groups)?;
    let mut acc: Option<Tensor<S>> = None;
    let mut add_term = |term: Tensor<S>| -> Result<()> {
        acc = Some(match acc.take() {
            Some(prev) => prev.add(&term)?,
            None => term,
        });
        Ok(())
    };
    for i in 0..k {
        let t = style_times[i];
        if t < 1.0 {
            let fa = fx.extract(&warped_a[i], &groups)?;
            let ps_a = ps_of_rows(&rows[i], &fa, fx.flat_ps)?;
            add_term(ps_a.scale(S::from_f64(1.0 - t)))?;
        }
        if t > 0.0 {
            let fb = fx.extract(&warped_b[i], &groups)?;
            let ps_b = ps_of_rows(&rows[i], &fb, fx.flat_ps)?;
            add_term(ps_b.scale(S::from_f64(t)))?;
        }
    }
    Ok(acc.expect("k >= 1 so at least one term contributes"))
}

/// Which perceptual terms a fused evaluation should produce.
#[derive(Debug, Clone, Copy)]
pub struct PerceptualSelection {
    pub transition: bool,
    pub endpoint_group: Option<u8>,
    pub warp: bool,
}

/// The transition/endpoint/warp triple a fused evaluation yields;
/// deselected terms stay `None`.
pub struct PerceptualTerms<S: Scalar> {
    pub transition: Option<Tensor<S>>,
    pub endpoint: Option<Tensor<S>>,
    pub warp: Option<Tensor<S>>,
}

/// Fused evaluation of the three perceptual terms.
///
/// Produces values identical to [`transition_loss`], [`endpoint_blend_loss`]
/// and [`warp_loss`] called separately, but extracts each image batch once:
/// the frame batch and the concatenated warped sequences each pass through
/// the extractor a single time at the union of required groups.
#[allow(clippy::too_many_arguments)]
pub fn fused_perceptual_terms<S: Scalar>(
    fx: &FeatureExtractor<S>,
    frames: &Tensor<S>,
    warped_a: &[Tensor<S>],
    warped_b: &[Tensor<S>],
    content_times: &[f64],
    style_times: &[f64],
    input_a: &Tensor<S>,
    input_b: &Tensor<S>,
    select: PerceptualSelection,
) -> Result<PerceptualTerms<S>> {
    let k = frames.shape()[0];
    if warped_a.len() != k || warped_b.len() != k {
        return Err(Error::shape(
            "fused_perceptual_terms",
            format!("{k} frames vs {} / {} warped", warped_a.len(), warped_b.len()),
        ));
    }
    let mut frame_groups = Vec::new();
    if select.transition {
        frame_groups.extend([4u8, 5]);
    }
    let mut warped_groups = Vec::new();
    if let Some(g) = select.endpoint_group {
        frame_groups.push(g);
        warped_groups.push(g);
    }
    if select.warp {
        warped_groups.push(5);
    }
    if frame_groups.is_empty() && warped_groups.is_empty() {
        return Ok(PerceptualTerms {
            transition: None,
            endpoint: None,
            warp: None,
        });
    }

    let pick = |rows: &[Tensor<S>], set: &LayerGroupSet, want: &LayerGroupSet| -> Vec<Tensor<S>> {
        set.groups()
            .iter()
            .zip(rows)
            .filter(|(g, _)| want.groups().contains(g))
            .map(|(_, t)| t.clone())
            .collect()
    };

    let frame_set = LayerGroupSet::new(&frame_groups).ok();
    let frame_rows: Vec<Vec<Tensor<S>>> = match &frame_set {
        Some(set) => frame_features(fx, frames, set)?,
        None => Vec::new(),
    };

    let transition = if select.transition {
        let set = frame_set.as_ref().expect("transition requested");
        let pair_set = LayerGroupSet::pair_metric();
        let ref_ps = fx.ps(input_a, input_b, &pair_set)?;
        let mut terms = Vec::with_capacity(k - 1);
        for i in 1..k {
            let dt = content_times[i] - content_times[i - 1];
            let prev = pick(&frame_rows[i - 1], set, &pair_set);
            let next = pick(&frame_rows[i], set, &pair_set);
            let step_ps = ps_of_rows(&prev, &next, fx.flat_ps)?;
            let dev = step_ps.sub(&ref_ps.scale(S::from_f64(dt)))?;
            terms.push(dev.mul(&dev)?);
        }
        Some(Tensor::max_of(&terms)?)
    } else {
        None
    };

    if warped_groups.is_empty() {
        return Ok(PerceptualTerms {
            transition,
            endpoint: None,
            warp: None,
        });
    }
    // Without the endpoint term only two warped images matter; skip the
    // batched extraction of the full sequences.
    if select.endpoint_group.is_none() {
        debug_assert!(select.warp);
        let warp = Some(warp_loss(fx, &warped_a[k - 1], input_b, &warped_b[0], input_a)?);
        return Ok(PerceptualTerms {
            transition,
            endpoint: None,
            warp,
        });
    }
    let (endpoint, warp) = {
        let warped_set = LayerGroupSet::new(&warped_groups)?;
        let all_warped: Vec<Tensor<S>> = warped_a.iter().chain(warped_b).cloned().collect();
        let warped_batch = Tensor::concat_batch(&all_warped)?;
        let warped_rows = frame_features(fx, &warped_batch, &warped_set)?;

        let endpoint = match select.endpoint_group {
            Some(group) => {
                let g_set = LayerGroupSet::single(group)?;
                let frame_set = frame_set.as_ref().expect("endpoint group implies frames");
                let mut acc: Option<Tensor<S>> = None;
                for i in 0..k {
                    let t = style_times[i];
                    let f_row = pick(&frame_rows[i], frame_set, &g_set);
                    if t < 1.0 {
                        let wa_row = pick(&warped_rows[i], &warped_set, &g_set);
                        let ps_a = ps_of_rows(&f_row, &wa_row, fx.flat_ps)?
                            .scale(S::from_f64(1.0 - t));
                        acc = Some(match acc {
                            Some(prev) => prev.add(&ps_a)?,
                            None => ps_a,
                        });
                    }
                    if t > 0.0 {
                        let wb_row = pick(&warped_rows[k + i], &warped_set, &g_set);
                        let ps_b =
                            ps_of_rows(&f_row, &wb_row, fx.flat_ps)?.scale(S::from_f64(t));
                        acc = Some(match acc {
                            Some(prev) => prev.add(&ps_b)?,
                            None => ps_b,
                        });
                    }
                }
                Some(acc.expect("k >= 1"))
            }
            None => None,
        };

        let warp = if select.warp {
            let g5 = LayerGroupSet::single(5)?;
            let wa_last = pick(&warped_rows[k - 1], &warped_set, &g5);
            let wb_first = pick(&warped_rows[k], &warped_set, &g5);
            let fb = fx.extract(input_b, &g5)?;
            let fa = fx.extract(input_a, &g5)?;
            let loss_ab = ps_of_rows(&wa_last, &fb, fx.flat_ps)?;
            let loss_ba = ps_of_rows(&wb_first, &fa, fx.flat_ps)?;
            Some(loss_ab.add(&loss_ba)?)
        } else {
            None
        };
        (endpoint, warp)
    };

    Ok(PerceptualTerms {
        transition,
        endpoint,
        warp,
    })
}

/// One generator-side loss evaluation; disabled components are absent.
pub struct GeneratorLossTerms<S: Scalar> {
    pub adv: Option<Tensor<S>>,
    pub transition: Option<Tensor<S>>,
    pub recon: Option<Tensor<S>>,
    pub warp: Option<Tensor<S>>,
    pub identity: Option<Tensor<S>>,
    pub endpoint: Option<Tensor<S>>,
}

impl<S: Scalar> GeneratorLossTerms<S> {
    pub fn none() -> Self {
        GeneratorLossTerms {
            adv: None,
            transition: None,
            recon: None,
            warp: None,
            identity: None,
            endpoint: None,
        }
    }

    /// Component values for logging, zero when disabled.
    pub fn values(&self) -> [f64; 6] {
        let v = |t: &Option<Tensor<S>>| t.as_ref().map(|x| x.item().to_f64()).unwrap_or(0.0);
        [
            v(&self.adv),
            v(&self.transition),
            v(&self.recon),
            v(&self.warp),
            v(&self.identity),
            v(&self.endpoint),
        ]
    }
}

/// Weighted generator total. Toggled-off components contribute exactly zero:
/// they are never evaluated, so their exclusive parameters receive no
/// gradient at all.
pub fn total_g<S: Scalar>(
    terms: &GeneratorLossTerms<S>,
    weights: &LossWeights,
) -> Result<Tensor<S>> {
    let toggles = weights.toggles.normalized();
    let mut acc = Tensor::scalar(S::ZERO);
    let mut add = |term: &Option<Tensor<S>>, lambda: f64, enabled: bool| -> Result<()> {
        if enabled {
            if let Some(t) = term {
                acc = acc.add(&t.scale(S::from_f64(lambda)))?;
            }
        }
        Ok(())
    };
    add(&terms.adv, weights.lambda_adv, toggles.gan)?;
    add(&terms.transition, weights.lambda_transition, toggles.local_ps)?;
    add(&terms.recon, weights.lambda_recon, toggles.recon)?;
    add(&terms.warp, weights.lambda_warp, toggles.stn)?;
    add(&terms.identity, weights.lambda_identity, toggles.stn)?;
    add(&terms.endpoint, weights.lambda_endpoint, toggles.global_ps)?;
    Ok(acc)
}
