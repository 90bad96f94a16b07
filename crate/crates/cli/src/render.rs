//! Image-producing commands: morph sequences, content/style grids and the
//! linear-blend baseline, plus montage assembly.

use std::path::Path;

use anyhow::{bail, Context, Result};

use morphgan::config::MorphMode;
use morphgan::data;
use morphgan::networks::generate_sequence;
use morphgan::schedule::TimeSchedule;
use morphgan::tensor::{no_grad, Scalar, Tensor};
use morphgan::training::Trainer;
use morphgan::warp::linear_blend_frames;

fn load_input<S: Scalar>(path: &Path, resolution: usize) -> Result<Tensor<S>> {
    let raw = data::load_image(path, resolution)
        .with_context(|| format!("loading {}", path.display()))?;
    let values: Vec<S> = raw.iter().map(|&v| S::from_f64(v)).collect();
    Ok(Tensor::from_vec(&[1, 3, resolution, resolution], values)?)
}

fn frame_raw<S: Scalar>(frames: &Tensor<S>, index: usize) -> Vec<f64> {
    let plane = frames.shape()[1] * frames.shape()[2] * frames.shape()[3];
    frames.data()[index * plane..(index + 1) * plane]
        .iter()
        .map(|v| v.to_f64())
        .collect()
}

/// Horizontal strip of same-size `[3,R,R]` images.
pub(crate) fn montage(frames: &[Vec<f64>], resolution: usize) -> Vec<f64> {
    let n = frames.len();
    let (h, w) = (resolution, resolution);
    let mut out = vec![0.0f64; 3 * h * w * n];
    let out_w = w * n;
    for (fi, frame) in frames.iter().enumerate() {
        for c in 0..3 {
            for y in 0..h {
                let src = &frame[c * h * w + y * w..c * h * w + (y + 1) * w];
                let dst_base = c * h * out_w + y * out_w + fi * w;
                out[dst_base..dst_base + w].copy_from_slice(src);
            }
        }
    }
    out
}

/// Inference schedule: the single axis, or the content/style diagonal.
fn inference_schedule(mode: MorphMode, frames: usize) -> Result<TimeSchedule> {
    let base = TimeSchedule::uniform(frames)?;
    Ok(match mode {
        MorphMode::SingleAxis => base,
        MorphMode::ContentStyle => {
            TimeSchedule::Dual(base.content_times().iter().map(|&t| (t, t)).collect())
        }
    })
}

/// `morph`: n frames plus a horizontal montage strip.
pub(crate) fn cmd_morph<S: Scalar>(
    trainer: &Trainer<S>,
    a: &Path,
    b: &Path,
    frames: usize,
    out: &Path,
) -> Result<()> {
    if frames < 2 {
        bail!("morph needs at least 2 frames, got {frames}");
    }
    let res = trainer.model.resolution;
    let img_a = load_input::<S>(a, res)?;
    let img_b = load_input::<S>(b, res)?;
    let schedule = inference_schedule(trainer.model.mode, frames)?;
    let seq = no_grad(|| {
        generate_sequence(
            &trainer.generator,
            trainer.stn.as_ref(),
            &img_a,
            &img_b,
            &schedule,
            trainer.model.stn.grid_side,
        )
    })?;
    std::fs::create_dir_all(out)?;
    let mut raws = Vec::with_capacity(frames);
    for i in 0..frames {
        let raw = frame_raw(&seq, i);
        data::save_png(&out.join(format!("frame_{i:03}.png")), &raw, res)?;
        raws.push(raw);
    }
    let strip = montage(&raws, res);
    data::save_png_sized(&out.join("montage.png"), &strip, res, res * frames)?;
    println!("wrote {frames} frames + montage to {}", out.display());
    Ok(())
}

/// `csgrid`: size×size cells; cell (i, j) uses content coordinate i/(size−1)
/// and style coordinate j/(size−1). Rows sweep content, so a row holds the
/// style coordinate constant.
pub(crate) fn cmd_csgrid<S: Scalar>(
    trainer: &Trainer<S>,
    a: &Path,
    b: &Path,
    size: usize,
    out: &Path,
) -> Result<()> {
    if trainer.model.mode != MorphMode::ContentStyle {
        bail!(
            "csgrid needs a content-style checkpoint; this one was trained in {} mode",
            trainer.model.mode.name()
        );
    }
    if size < 2 {
        bail!("csgrid needs size >= 2, got {size}");
    }
    let res = trainer.model.resolution;
    let img_a = load_input::<S>(a, res)?;
    let img_b = load_input::<S>(b, res)?;

    std::fs::create_dir_all(out)?;
    let mut cells: Vec<Vec<f64>> = Vec::with_capacity(size * size);
    no_grad(|| -> Result<()> {
        for j in 0..size {
            let style = j as f64 / (size - 1) as f64;
            for i in 0..size {
                let content = i as f64 / (size - 1) as f64;
                let schedule = TimeSchedule::Dual(vec![(content, style)]);
                let frame = generate_sequence(
                    &trainer.generator,
                    trainer.stn.as_ref(),
                    &img_a,
                    &img_b,
                    &schedule,
                    trainer.model.stn.grid_side,
                )?;
                cells.push(frame_raw(&frame, 0));
            }
        }
        Ok(())
    })?;

    // Assemble rows of cells into one size×size sheet.
    let mut rows = Vec::with_capacity(size);
    for j in 0..size {
        rows.push(montage(&cells[j * size..(j + 1) * size], res));
    }
    let row_w = res * size;
    let mut sheet = vec![0.0f64; 3 * res * size * row_w];
    for (j, row) in rows.iter().enumerate() {
        for c in 0..3 {
            for y in 0..res {
                let src = &row[c * res * row_w + y * row_w..c * res * row_w + (y + 1) * row_w];
                let dst_base = c * (res * size) * row_w + (j * res + y) * row_w;
                sheet[dst_base..dst_base + row_w].copy_from_slice(src);
            }
        }
    }
    data::save_png_sized(&out.join("csgrid.png"), &sheet, res * size, row_w)?;
    println!(
        "wrote {size}x{size} grid ({} cells) to {}",
        size * size,
        out.display()
    );
    Ok(())
}

/// `blend`: the linear baseline, `(1−t)·I_A^t + t·I_B^t` from the trained
/// warps alone.
pub(crate) fn cmd_blend<S: Scalar>(
    trainer: &Trainer<S>,
    a: &Path,
    b: &Path,
    frames: usize,
    out: &Path,
) -> Result<()> {
    if frames < 2 {
        bail!("blend needs at least 2 frames, got {frames}");
    }
    let res = trainer.model.resolution;
    let img_a = load_input::<S>(a, res)?;
    let img_b = load_input::<S>(b, res)?;
    let times = TimeSchedule::uniform(frames)?.content_times();
    let blended = no_grad(|| {
        linear_blend_frames(
            trainer.stn.as_ref(),
            &img_a,
            &img_b,
            &times,
            trainer.model.stn.grid_side,
        )
    })?;
    std::fs::create_dir_all(out)?;
    let mut raws = Vec::with_capacity(frames);
    for (i, frame) in blended.iter().enumerate() {
        let raw: Vec<f64> = frame.data().iter().map(|v| v.to_f64()).collect();
        data::save_png(&out.join(format!("frame_{i:03}.png")), &raw, res)?;
        raws.push(raw);
    }
    let strip = montage(&raws, res);
    data::save_png_sized(&out.join("montage.png"), &strip, res, res * frames)?;
    println!("wrote {frames} blended frames + montage to {}", out.display());
    Ok(())
}
