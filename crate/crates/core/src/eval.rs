//! Evaluation: embedding Fréchet distance between image sets and transition
//! pacing statistics over generated sequences.
//!
//! Images embed as spatially averaged features of one extractor group
//! (resized first, bilinear). Absolute values depend on the extractor and
//! are not comparable across backbones; within one run, relative orderings
//! are the signal.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::networks::generate_sequence;
use crate::perceptual::{FeatureExtractor, LayerGroupSet};
use crate::schedule::TimeSchedule;
use crate::tensor::{no_grad, resize_bilinear_raw, Scalar, Tensor};
use crate::training::Trainer;

/// How images are embedded before fitting Gaussians.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingOptions {
    /// Extractor group whose spatially averaged activations embed the image.
    pub group: u8,
    /// Square resolution images are resized to before embedding.
    pub resize: usize,
    /// Fit a full covariance (matrix square roots via eigendecomposition)
    /// instead of the diagonal closed form.
    pub full_covariance: bool,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        EmbeddingOptions {
            group: 4,
            resize: 96,
            full_covariance: false,
        }
    }
}

/// Spatially averaged group activations for a batch of raw images.
pub fn embed_images<S: Scalar>(
    fx: &FeatureExtractor<S>,
    images: &[&[f64]],
    resolution: usize,
    opts: &EmbeddingOptions,
) -> Result<Vec<Vec<f64>>> {
    let groups = LayerGroupSet::single(opts.group)?;
    let r = opts.resize;
    let mut out = Vec::with_capacity(images.len());
    // Batched extraction amortizes the conv dispatches.
    for chunk in images.chunks(16) {
        let mut data = Vec::with_capacity(chunk.len() * 3 * r * r);
        for img in chunk {
            let resized = if resolution == r {
                img.to_vec()
            } else {
                resize_bilinear_raw(img, 3, resolution, resolution, r, r)
            };
            data.extend(resized.into_iter().map(S::from_f64));
        }
        let batch = Tensor::from_vec(&[chunk.len(), 3, r, r], data)?;
        let feats = no_grad(|| fx.extract(&batch, &groups))?;
        let f = &feats[0];
        let (c, plane) = (f.shape()[1], f.shape()[2] * f.shape()[3]);
        let fd = f.data();
        for ni in 0..chunk.len() {
            let mut v = vec![0.0f64; c];
            for (ci, slot) in v.iter_mut().enumerate() {
                let row = &fd[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                *slot = row.iter().map(|x| x.to_f64()).sum::<f64>() / plane as f64;
            }
            out.push(v);
        }
    }
    Ok(out)
}

fn moments(set: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = set.len();
    let d = set[0].len();
    let mut mean = vec![0.0; d];
    for v in set {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // Sample variance (n − 1), the usual convention for fitted moments.
    let mut var = vec![0.0; d];
    for v in set {
        for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
            let dx = x - m;
            *s += dx * dx;
        }
    }
    for s in &mut var {
        *s /= (n - 1) as f64;
    }
    (mean, var)
}

/// Diagonal closed form from fitted moments:
/// `‖μ_X−μ_Y‖² + Σ_c (σ_{X,c} − σ_{Y,c})²`.
pub fn frechet_from_moments(
    mean_x: &[f64],
    var_x: &[f64],
    mean_y: &[f64],
    var_y: &[f64],
) -> f64 {
    let mut d = 0.0;
    for (mx, my) in mean_x.iter().zip(mean_y) {
        d += (mx - my) * (mx - my);
    }
    for (vx, vy) in var_x.iter().zip(var_y) {
        let s = vx.max(0.0).sqrt() - vy.max(0.0).sqrt();
        d += s * s;
    }
    d
}

/// Fréchet distance between Gaussians fitted to two embedded sets.
/// Symmetric, nonnegative, zero iff the fitted moments coincide.
pub fn frechet_distance(x: &[Vec<f64>], y: &[Vec<f64>], full_covariance: bool) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::arg(
            "frechet_distance",
            format!("sets need at least 2 items, got {} and {}", x.len(), y.len()),
        ));
    }
    if x[0].len() != y[0].len() {
        return Err(Error::shape(
            "frechet_distance",
            format!("embedding dims {} vs {}", x[0].len(), y[0].len()),
        ));
    }
    if full_covariance {
        return frechet_full(x, y);
    }
    let (mx, vx) = moments(x);
    let (my, vy) = moments(y);
    Ok(frechet_from_moments(&mx, &vx, &my, &vy))
}

fn covariance(set: &[Vec<f64>], mean: &[f64]) -> Vec<f64> {
    let n = set.len();
    let d = mean.len();
    let mut cov = vec![0.0; d * d];
    for v in set {
        for i in 0..d {
            let di = v[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (v[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let val = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = val;
            cov[j * d + i] = val;
        }
    }
    cov
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (values +
/// vectors as columns).
fn jacobi_eigen(a: &mut [f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off.sqrt() < 1e-12 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..d {
                    let aip = a[i * d + p];
                    let aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for j in 0..d {
                    let apj = a[p * d + j];
                    let aqj = a[q * d + j];
                    a[p * d + j] = c * apj - s * aqj;
                    a[q * d + j] = s * apj + c * aqj;
                }
                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = c * vip - s * viq;
                    v[i * d + q] = s * vip + c * viq;
                }
            }
        }
    }
    let vals = (0..d).map(|i| a[i * d + i]).collect();
    (vals, v)
}

fn matmul_sq(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for l in 0..d {
            let av = a[i * d + l];
            if av == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += av * b[l * d + j];
            }
        }
    }
    out
}

/// Full 2-Wasserstein distance between fitted Gaussians:
/// `‖Δμ‖² + tr(C_X + C_Y − 2·(C_X^{1/2} C_Y C_X^{1/2})^{1/2})`.
fn frechet_full(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let (mx, _) = moments(x);
    let (my, _) = moments(y);
    let d = mx.len();
    let cx = covariance(x, &mx);
    let cy = covariance(y, &my);

    // C_X^{1/2} via eigendecomposition, eigenvalues clamped at zero.
    let mut cx_work = cx.clone();
    let (vals, vecs) = jacobi_eigen(&mut cx_work, d);
    let mut sqrt_cx = vec![0.0; d * d];
    for (idx, lam) in vals.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        for i in 0..d {
            for j in 0..d {
                sqrt_cx[i * d + j] += s * vecs[i * d + idx] * vecs[j * d + idx];
            }
        }
    }
    let inner = matmul_sq(&matmul_sq(&sqrt_cx, &cy, d), &sqrt_cx, d);
    let mut inner_sym = inner.clone();
    // Symmetrize against round-off before the second eigensolve.
    for i in 0..d {
        for j in 0..d {
            inner_sym[i * d + j] = 0.5 * (inner[i * d + j] + inner[j * d + i]);
        }
    }
    let (inner_vals, _) = jacobi_eigen(&mut inner_sym, d);
    let trace_sqrt: f64 = inner_vals.iter().map(|l| l.max(0.0).sqrt()).sum();
    let trace_x: f64 = (0..d).map(|i| cx[i * d + i]).sum();
    let trace_y: f64 = (0..d).map(|i| cy[i * d + i]).sum();
    let mut dist = 0.0;
    for (a, b) in mx.iter().zip(&my) {
        dist += (a - b) * (a - b);
    }
    Ok(dist + (trace_x + trace_y - 2.0 * trace_sqrt).max(0.0))
}

/// Per-pair pacing deviation: `max_i |PS(I_{i−1}, I_i) − Δt·PS(I_A, I_B)|`
/// over groups 4+5.
pub fn pacing_deviation<S: Scalar>(
    fx: &FeatureExtractor<S>,
    frames: &Tensor<S>,
    times: &[f64],
    input_a: &Tensor<S>,
    input_b: &Tensor<S>,
) -> Result<f64> {
    let groups = LayerGroupSet::pair_metric();
    no_grad(|| {
        let ref_ps = fx.ps(input_a, input_b, &groups)?.item().to_f64();
        let k = frames.shape()[0];
        let mut worst = 0.0f64;
        for i in 1..k {
            let prev = frames.slice_batch(i - 1, 1)?;
            let cur = frames.slice_batch(i, 1)?;
            let step = fx.ps(&prev, &cur, &groups)?.item().to_f64();
            worst = worst.max((step - (times[i] - times[i - 1]) * ref_ps).abs());
        }
        Ok(worst)
    })
}

/// Evaluation summary over sampled test pairs.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub pairs: usize,
    pub frames_per_pair: usize,
    /// Fréchet distance of interior frames to the training set.
    pub frechet_interior: f64,
    pub pacing_mean: f64,
    pub pacing_max: f64,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        format!(
            "pairs,frames_per_pair,frechet_interior,pacing_mean,pacing_max\n{},{},{},{},{}\n",
            self.pairs, self.frames_per_pair, self.frechet_interior, self.pacing_mean, self.pacing_max
        )
    }

    pub fn text(&self) -> String {
        format!(
            "pairs evaluated:        {}\nframes per pair:        {}\nfrechet (interior):     {:.6}\npacing deviation mean:  {:.6}\npacing deviation max:   {:.6}\n",
            self.pairs, self.frames_per_pair, self.frechet_interior, self.pacing_mean, self.pacing_max
        )
    }
}

/// Generates sequences for `pairs` sampled test pairs and scores them:
/// interior-frame Fréchet distance against the training images plus pacing
/// statistics.
pub fn evaluate<S: Scalar>(
    trainer: &Trainer<S>,
    test: &Dataset,
    train: &Dataset,
    pairs: usize,
    frames_per_pair: usize,
    seed: u64,
    opts: &EmbeddingOptions,
) -> Result<EvalReport> {
    if test.len() < 2 {
        return Err(Error::Dataset("test set needs at least 2 images".into()));
    }
    if frames_per_pair < 3 {
        return Err(Error::arg(
            "evaluate",
            "needs at least 3 frames so interior frames exist",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = TimeSchedule::uniform(frames_per_pair)?;
    let times = schedule.content_times();
    let res = test.resolution();
    let plane = 3 * res * res;

    let mut interior_raw: Vec<Vec<f64>> = Vec::with_capacity(pairs * (frames_per_pair - 2));
    let mut pacing = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let ia = rng.random_range(0..test.len());
        let mut ib = rng.random_range(0..test.len());
        while ib == ia {
            ib = rng.random_range(0..test.len());
        }
        let a = test.image::<S>(ia);
        let b = test.image::<S>(ib);
        let frames = no_grad(|| {
            generate_sequence(
                &trainer.generator,
                trainer.stn.as_ref(),
                &a,
                &b,
                &schedule,
                trainer.model.stn.grid_side,
            )
        })?;
        pacing.push(pacing_deviation(&trainer.extractor, &frames, &times, &a, &b)?);
        let fd = frames.data();
        for i in 1..frames_per_pair - 1 {
            interior_raw.push(fd[i * plane..(i + 1) * plane].iter().map(|v| v.to_f64()).collect());
        }
    }

    let interior_refs: Vec<&[f64]> = interior_raw.iter().map(|v| v.as_slice()).collect();
    let train_refs: Vec<&[f64]> = (0..train.len()).map(|i| train.raw(i)).collect();
    let gen_embed = embed_images(&trainer.extractor, &interior_refs, res, opts)?;
    let train_embed = embed_images(&trainer.extractor, &train_refs, train.resolution(), opts)?;
    let frechet = frechet_distance(&gen_embed, &train_embed, opts.full_covariance)?;

    let pacing_mean = pacing.iter().sum::<f64>() / pairs as f64;
    let pacing_max = pacing.iter().cloned().fold(0.0, f64::max);
    Ok(EvalReport {
        pairs,
        frames_per_pair,
        frechet_interior: frechet,
        pacing_mean,
        pacing_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frechet_zero_on_identical_sets() {
        let x = vec![vec![0.3, -1.0], vec![1.5, 0.25], vec![-0.5, 2.0]];
        assert_eq!(frechet_distance(&x, &x, false).unwrap(), 0.0);
        let full = frechet_distance(&x, &x, true).unwrap();
        assert!(full.abs() < 1e-9, "full-cov self distance {full}");
    }

    #[test]
    fn one_dimensional_closed_form() {
        // Moments (0,1) vs (1,2): (0−1)² + (1−2)² = 2.
        assert_eq!(frechet_from_moments(&[0.0], &[1.0], &[1.0], &[4.0]), 2.0);
    }

    #[test]
    fn diagonal_matches_trace_formula_oracle() {
        // For diagonal covariances the trace formula reduces to
        // Σ (s1 + s2 − 2·sqrt(s1·s2)); both routes must agree to 1e-10.
        let means = ([0.2, -0.4, 1.1], [0.0, 0.3, 0.9]);
        let vars = ([0.5, 1.25, 2.0], [0.75, 0.8, 1.5]);
        let direct = frechet_from_moments(&means.0, &vars.0, &means.1, &vars.1);
        let mut oracle = 0.0;
        for i in 0..3 {
            oracle += (means.0[i] - means.1[i]).powi(2);
            oracle += vars.0[i] + vars.1[i] - 2.0 * (vars.0[i] * vars.1[i]).sqrt();
        }
        assert!((direct - oracle).abs() < 1e-10, "{direct} vs {oracle}");
    }

    #[test]
    fn frechet_is_symmetric_and_positive_on_shifted_sets() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, -1.0]];
        let y: Vec<Vec<f64>> = x.iter().map(|v| vec![v[0] + 3.0, v[1]]).collect();
        let dxy = frechet_distance(&x, &y, false).unwrap();
        let dyx = frechet_distance(&y, &x, false).unwrap();
        assert_eq!(dxy, dyx);
        assert!((dxy - 9.0).abs() < 1e-12);
    }

    #[test]
    fn full_covariance_matches_diagonal_on_diagonal_data() {
        // Independent coordinates: sample covariance is near-diagonal, and
        // the full formula should approach the diagonal closed form.
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64, ((i * 3) % 5) as f64 * 2.0])
            .collect();
        let y: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64 + 1.0, ((i * 3) % 5) as f64 * 2.0])
            .collect();
        let full = frechet_distance(&x, &y, true).unwrap();
        let diag = frechet_distance(&x, &y, false).unwrap();
        assert!((full - diag).abs() < 0.15 * diag.max(1e-9), "{full} vs {diag}");
    }

    #[test]
    fn too_small_sets_are_rejected() {
        let x = vec![vec![0.0]];
        let y = vec![vec![1.0], vec![2.0]];
        assert!(frechet_distance(&x, &y, false).is_err());
    }

    #[test]
    fn jacobi_recovers_known_eigenvalues() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let mut m = vec![2.0, 1.0, 1.0, 2.0];
        let (mut vals, _) = jacobi_eigen(&mut m, 2);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 1.0).abs() < 1e-10);
        assert!((vals[1] - 3.0).abs() < 1e-10);
    }
}
