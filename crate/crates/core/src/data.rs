//! Dataset ingestion and the procedural toy-shape generator.
//!
//! Images live in memory as flat `[3, R, R]` f64 buffers in [−1, 1]. The toy
//! generator renders one shape family per dataset (class coherence) with
//! varying geometry, color and optional stripe texture, fully determined by
//! the seed — acceptance runs never download anything.

use std::f64::consts::PI;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{resize_bilinear_raw, Scalar, Tensor};

/// Margin (pixels) the shape keeps from the canvas edge.
pub const CANVAS_MARGIN: usize = 2;

/// Half-extent sampling range as a fraction of the resolution.
pub const HALF_EXTENT_RANGE: (f64, f64) = (0.18, 0.36);

/// In-memory image collection of uniform shape, values in [−1, 1].
#[derive(Clone)]
pub struct Dataset {
    items: Vec<Vec<f64>>,
    resolution: usize,
}

impl Dataset {
    pub fn new(items: Vec<Vec<f64>>, resolution: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Dataset("empty dataset".into()));
        }
        for (i, img) in items.iter().enumerate() {
            if img.len() != 3 * resolution * resolution {
                return Err(Error::Dataset(format!(
                    "item {i} has {} values, expected {}",
                    img.len(),
                    3 * resolution * resolution
                )));
            }
            if img.iter().any(|v| !v.is_finite() || *v < -1.0 || *v > 1.0) {
                return Err(Error::Dataset(format!("item {i} leaves [-1, 1]")));
            }
        }
        Ok(Dataset { items, resolution })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn raw(&self, i: usize) -> &[f64] {
        &self.items[i]
    }

    /// Image `i` as a constant `[1, 3, R, R]` tensor.
    pub fn image<S: Scalar>(&self, i: usize) -> Tensor<S> {
        let r = self.resolution;
        let data: Vec<S> = self.items[i].iter().map(|&v| S::from_f64(v)).collect();
        Tensor::from_vec(&[1, 3, r, r], data).expect("dataset image shape")
    }

    /// Disjoint, exhaustive, seeded split into (train, test).
    pub fn split(self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Dataset(format!(
                "test fraction {test_fraction} outside [0, 1)"
            )));
        }
        let n = self.items.len();
        let n_test = ((n as f64) * test_fraction).floor() as usize;
        if n_test == 0 {
            return Err(Error::Dataset(format!(
                "test fraction {test_fraction} selects no items from {n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let mut items = self.items;
        let mut take = |idx: &[usize]| -> Vec<Vec<f64>> {
            idx.iter().map(|&i| std::mem::take(&mut items[i])).collect()
        };
        let test_items = take(&order[..n_test]);
        let train_items = take(&order[n_test..]);
        Ok((
            Dataset::new(train_items, self.resolution)?,
            Dataset::new(test_items, self.resolution)?,
        ))
    }
}

/// Shape families for the toy generator. One family per dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    Ellipse,
    RoundedRect,
    Ngon,
}

impl ShapeFamily {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "ellipse" => Ok(ShapeFamily::Ellipse),
            "rounded-rect" | "rounded-rectangle" => Ok(ShapeFamily::RoundedRect),
            "ngon" | "n-gon" => Ok(ShapeFamily::Ngon),
            other => Err(Error::Dataset(format!("unknown shape family `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeFamily::Ellipse => "ellipse",
            ShapeFamily::RoundedRect => "rounded-rect",
            ShapeFamily::Ngon => "ngon",
        }
    }

    fn from_seed(seed: u64) -> Self {
        match seed % 3 {
            0 => ShapeFamily::Ellipse,
            1 => ShapeFamily::RoundedRect,
            _ => ShapeFamily::Ngon,
        }
    }
}

/// One sampled shape: geometry, fill, optional stripes, background.
#[derive(Debug, Clone)]
pub struct ShapeSpec {
    pub family: ShapeFamily,
    pub center: (f64, f64),
    pub half_axes: (f64, f64),
    pub rotation: f64,
    pub sides: u32,
    pub fill: [f64; 3],
    pub stripe: Option<(f64, f64, [f64; 3])>, // (phase, frequency, second color)
    pub background: [f64; 3],
}

impl ShapeSpec {
    /// Samples a spec whose shape stays at least [`CANVAS_MARGIN`] pixels
    /// inside the canvas.
    pub fn sample(rng: &mut ChaCha8Rng, family: ShapeFamily, resolution: usize) -> ShapeSpec {
        let res = resolution as f64;
        let a = rng.random_range(HALF_EXTENT_RANGE.0 * res..HALF_EXTENT_RANGE.1 * res);
        let b = rng.random_range(HALF_EXTENT_RANGE.0 * res..HALF_EXTENT_RANGE.1 * res);
        let r = a.max(b);
        let lo = CANVAS_MARGIN as f64 + r;
        let hi = res - 1.0 - CANVAS_MARGIN as f64 - r;
        let cx = rng.random_range(lo..hi.max(lo + 1e-9));
        let cy = rng.random_range(lo..hi.max(lo + 1e-9));
        let rotation = rng.random_range(0.0..PI);
        let sides = rng.random_range(3..=6);

        // Muted darkish background, saturated fill, enforced contrast.
        let bg_base: f64 = rng.random_range(-0.85..-0.25);
        let background = [
            (bg_base + rng.random_range(-0.08..0.08)).clamp(-0.95, 0.0),
            (bg_base + rng.random_range(-0.08..0.08)).clamp(-0.95, 0.0),
            (bg_base + rng.random_range(-0.08..0.08)).clamp(-0.95, 0.0),
        ];
        let fill = [
            rng.random_range(-0.2..0.95),
            rng.random_range(-0.2..0.95),
            rng.random_range(-0.2..0.95),
        ];
        let stripe = if rng.random::<f64>() < 0.5 {
            let phase = rng.random_range(0.0..1.0);
            let freq = rng.random_range(2.0..6.0);
            let second = [
                rng.random_range(-0.2..0.95),
                rng.random_range(-0.2..0.95),
                rng.random_range(-0.2..0.95),
            ];
            Some((phase, freq, second))
        } else {
            None
        };
        ShapeSpec {
            family,
            center: (cx, cy),
            half_axes: (a, b),
            rotation,
            sides,
            fill,
            stripe,
            background,
        }
    }

    /// Signed inside test in unrotated local coordinates scaled to the unit
    /// disc: returns true when (u, v) lies inside the shape.
    fn inside(&self, u: f64, v: f64) -> bool {
        let (a, b) = self.half_axes;
        match self.family {
            ShapeFamily::Ellipse => (u / a) * (u / a) + (v / b) * (v / b) <= 1.0,
            ShapeFamily::RoundedRect => {
                let rad = 0.3 * a.min(b);
                let qx = u.abs() - (a - rad);
                let qy = v.abs() - (b - rad);
                let d = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt()
                    + qx.max(qy).min(0.0)
                    - rad;
                d <= 0.0
            }
            ShapeFamily::Ngon => {
                let x = u / a;
                let y = v / b;
                let r = (x * x + y * y).sqrt();
                if r < 1e-12 {
                    return true;
                }
                let k = self.sides as f64;
                let sector = 2.0 * PI / k;
                let phi = y.atan2(x).rem_euclid(sector) - sector / 2.0;
                // Regular polygon inscribed in the unit circle.
                r * phi.cos() <= (sector / 2.0).cos()
            }
        }
    }

    fn color_at(&self, u: f64, _v: f64) -> [f64; 3] {
        match self.stripe {
            Some((phase, freq, second)) => {
                let s = (2.0 * PI * (freq * (u / self.half_axes.0) * 0.5 + phase)).sin();
                if s > 0.0 {
                    self.fill
                } else {
                    second
                }
            }
            None => self.fill,
        }
    }

    /// Supersampled render to a flat `[3, R, R]` buffer in [−1, 1].
    pub fn render(&self, resolution: usize) -> Vec<f64> {
        const SS: usize = 3;
        let plane = resolution * resolution;
        let mut out = vec![0.0f64; 3 * plane];
        let (cx, cy) = self.center;
        let (sin_r, cos_r) = self.rotation.sin_cos();
        for py in 0..resolution {
            for px in 0..resolution {
                let mut acc = [0.0f64; 3];
                for sy in 0..SS {
                    for sx in 0..SS {
                        let x = px as f64 + (sx as f64 + 0.5) / SS as f64 - 0.5 - cx;
                        let y = py as f64 + (sy as f64 + 0.5) / SS as f64 - 0.5 - cy;
                        let u = x * cos_r + y * sin_r;
                        let v = -x * sin_r + y * cos_r;
                        let c = if self.inside(u, v) {
                            self.color_at(u, v)
                        } else {
                            self.background
                        };
                        for ch in 0..3 {
                            acc[ch] += c[ch];
                        }
                    }
                }
                for ch in 0..3 {
                    out[ch * plane + py * resolution + px] =
                        (acc[ch] / (SS * SS) as f64).clamp(-1.0, 1.0);
                }
            }
        }
        out
    }

    /// Exact analytic foreground area (pixels²) of the sampled geometry.
    pub fn analytic_area(&self) -> f64 {
        let (a, b) = self.half_axes;
        match self.family {
            ShapeFamily::Ellipse => PI * a * b,
            ShapeFamily::RoundedRect => {
                let rad = 0.3 * a.min(b);
                4.0 * a * b - (4.0 - PI) * rad * rad
            }
            ShapeFamily::Ngon => {
                let k = self.sides as f64;
                // Regular k-gon inscribed in the unit circle, scaled by (a, b).
                0.5 * k * (2.0 * PI / k).sin() * a * b
            }
        }
    }
}

/// Deterministic toy dataset; the family is derived from the seed.
pub fn gen_toy(n: usize, seed: u64, resolution: usize) -> Result<Dataset> {
    gen_toy_family(n, seed, resolution, ShapeFamily::from_seed(seed))
}

/// Deterministic toy dataset with an explicit shape family.
pub fn gen_toy_family(
    n: usize,
    seed: u64,
    resolution: usize,
    family: ShapeFamily,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Dataset("toy dataset needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n)
        .map(|_| ShapeSpec::sample(&mut rng, family, resolution).render(resolution))
        .collect();
    Dataset::new(items, resolution)
}

/// Maps [−1,1] to 8-bit and writes an RGB PNG of the given extents.
pub fn save_png_sized(path: &Path, image: &[f64], height: usize, width: usize) -> Result<()> {
    debug_assert_eq!(image.len(), 3 * height * width);
    let plane = height * width;
    let mut rgb = vec![0u8; 3 * plane];
    for p in 0..plane {
        for ch in 0..3 {
            let v = (image[ch * plane + p] + 1.0) * 0.5 * 255.0;
            rgb[p * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = fs::File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&rgb)?;
    Ok(())
}

/// Maps [−1,1] to 8-bit and writes a square RGB PNG.
pub fn save_png(path: &Path, image: &[f64], resolution: usize) -> Result<()> {
    save_png_sized(path, image, resolution, resolution)
}

/// Loads a single PNG, resized to `resolution`, as a flat `[3,R,R]` buffer.
pub fn load_image(path: &Path, resolution: usize) -> Result<Vec<f64>> {
    let (img, h, w) = decode_png(path)?;
    if (h, w) == (resolution, resolution) {
        Ok(img)
    } else {
        Ok(resize_bilinear_raw(&img, 3, h, w, resolution, resolution)
            .into_iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect())
    }
}

fn decode_png(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let file = fs::File::open(path)?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Dataset(format!(
            "{}: only 8-bit PNGs are supported",
            path.display()
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let to_unit = |v: u8| v as f64 / 255.0 * 2.0 - 1.0;
    let plane = w * h;
    let mut out = vec![0.0f64; 3 * plane];
    match info.color_type {
        png::ColorType::Rgb => {
            for p in 0..plane {
                for ch in 0..3 {
                    out[ch * plane + p] = to_unit(buf[p * 3 + ch]);
                }
            }
        }
        png::ColorType::Rgba => {
            for p in 0..plane {
                for ch in 0..3 {
                    out[ch * plane + p] = to_unit(buf[p * 4 + ch]);
                }
            }
        }
        png::ColorType::Grayscale => {
            for p in 0..plane {
                let v = to_unit(buf[p]);
                for ch in 0..3 {
                    out[ch * plane + p] = v;
                }
            }
        }
        png::ColorType::GrayscaleAlpha => {
            for p in 0..plane {
                let v = to_unit(buf[p * 2]);
                for ch in 0..3 {
                    out[ch * plane + p] = v;
                }
            }
        }
        other => {
            return Err(Error::Dataset(format!(
                "{}: unsupported color type {other:?}",
                path.display()
            )));
        }
    }
    Ok((out, h, w))
}

/// Loads every `*.png` under `path` (sorted by filename), resizing to
/// `resolution`. Unreadable files are skipped with a warning; an empty
/// result is an error.
pub fn load_folder(path: &Path, resolution: usize) -> Result<Dataset> {
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    let mut items = Vec::with_capacity(files.len());
    for f in &files {
        match decode_png(f) {
            Ok((img, h, w)) => {
                let img = if (h, w) == (resolution, resolution) {
                    img
                } else {
                    resize_bilinear_raw(&img, 3, h, w, resolution, resolution)
                        .into_iter()
                        .map(|v| v.clamp(-1.0, 1.0))
                        .collect()
                };
                items.push(img);
            }
            Err(err) => eprintln!("warning: skipping {}: {err}", f.display()),
        }
    }
    if items.is_empty() {
        return Err(Error::Dataset(format!(
            "no usable PNG images in {}",
            path.display()
        )));
    }
    Dataset::new(items, resolution)
}

/// Writes `<root>/<seed>/img_%05d.png` and returns the folder path.
pub fn write_toy_folder(
    root: &Path,
    seed: u64,
    n: usize,
    resolution: usize,
    family: Option<ShapeFamily>,
) -> Result<PathBuf> {
    let ds = match family {
        Some(f) => gen_toy_family(n, seed, resolution, f)?,
        None => gen_toy(n, seed, resolution)?,
    };
    let dir = root.join(seed.to_string());
    fs::create_dir_all(&dir)?;
    for i in 0..ds.len() {
        save_png(&dir.join(format!("img_{i:05}.png")), ds.raw(i), resolution)?;
    }
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_generation_is_deterministic() {
        let a = gen_toy(4, 9, 16).unwrap();
        let b = gen_toy(4, 9, 16).unwrap();
        for i in 0..4 {
            assert_eq!(a.raw(i), b.raw(i));
        }
    }

    #[test]
    fn toy_images_cover_range_with_fg_and_bg() {
        let ds = gen_toy_family(6, 3, 32, ShapeFamily::Ellipse).unwrap();
        for i in 0..ds.len() {
            let img = ds.raw(i);
            assert!(img.iter().all(|v| (-1.0..=1.0).contains(v)));
            // Background is dark (≤ 0), fills reach above 0 somewhere in
            // most renders; at minimum the image must not be constant.
            let min = img.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(max - min > 0.1, "image {i} nearly constant");
        }
    }

    #[test]
    fn rendered_area_tracks_the_samplers_analytic_mean() {
        // Oracle: the generator's own parameters give the expected foreground
        // fraction; the rendered coverage must agree within a few sigma.
        let res = 32usize;
        let n = 1000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut rendered = 0.0f64;
        let mut analytic = 0.0f64;
        for _ in 0..n {
            let mut spec = ShapeSpec::sample(&mut rng, ShapeFamily::Ellipse, res);
            analytic += spec.analytic_area() / (res * res) as f64;
            // Re-render in binary colors: mean intensity IS the coverage.
            spec.fill = [1.0; 3];
            spec.stripe = None;
            spec.background = [-1.0; 3];
            let img = spec.render(res);
            let plane = res * res;
            let fg: f64 = img[..plane].iter().map(|v| (v + 1.0) * 0.5).sum();
            rendered += fg / plane as f64;
        }
        rendered /= n as f64;
        analytic /= n as f64;
        // Mid-extent expectation from the uniform sampler: E[a]E[b]·π/res².
        let e_half = 0.5 * (HALF_EXTENT_RANGE.0 + HALF_EXTENT_RANGE.1) * res as f64;
        let expected = PI * e_half * e_half / (res * res) as f64;
        assert!(
            (analytic - expected).abs() < 0.015,
            "analytic {analytic} vs expected {expected}"
        );
        assert!(
            (rendered - analytic).abs() < 0.005,
            "rendered {rendered} vs analytic {analytic}"
        );
    }

    #[test]
    fn png_roundtrip_stays_within_quantization() {
        let dir = std::env::temp_dir().join("morphgan-data-test");
        fs::create_dir_all(&dir).unwrap();
        let ds = gen_toy(3, 5, 16).unwrap();
        for i in 0..3 {
            save_png(&dir.join(format!("img_{i:05}.png")), ds.raw(i), 16).unwrap();
        }
        let loaded = load_folder(&dir, 16).unwrap();
        assert_eq!(loaded.len(), 3);
        for i in 0..3 {
            for (a, b) in loaded.raw(i).iter().zip(ds.raw(i)) {
                assert!((a - b).abs() < 1.0 / 255.0, "{a} vs {b}");
            }
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn eight_bit_mapping_endpoints() {
        // 255 → 1.0, 0 → −1.0, 128 → (128/255)·2−1.
        let to_unit = |v: u8| v as f64 / 255.0 * 2.0 - 1.0;
        assert_eq!(to_unit(255), 1.0);
        assert_eq!(to_unit(0), -1.0);
        assert!((to_unit(128) - 0.00392156862745097).abs() < 1e-15);
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let ds = gen_toy(10, 6, 16).unwrap();
        let originals: Vec<Vec<f64>> = (0..10).map(|i| ds.raw(i).to_vec()).collect();
        let (train, test) = ds.split(0.3, 1).unwrap();
        assert_eq!(train.len(), 7);
        assert_eq!(test.len(), 3);
        let mut seen = [false; 10];
        for part in [&train, &test] {
            for i in 0..part.len() {
                let idx = originals
                    .iter()
                    .position(|o| o == part.raw(i))
                    .expect("split item must come from the source");
                assert!(!seen[idx], "item {idx} appears twice");
                seen[idx] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn zero_usable_images_is_an_error() {
        let dir = std::env::temp_dir().join("morphgan-data-empty");
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("not_a_real.png"), b"junk").unwrap();
        assert!(load_folder(&dir, 16).is_err());
        fs::remove_dir_all(&dir).ok();
    }
}
