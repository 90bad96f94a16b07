//! Command-line frontend for training and driving morphing models.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use morphgan::config::{DataSource, Precision, TrainConfig};
use morphgan::data::{self, Dataset, ShapeFamily};
use morphgan::eval::{evaluate, EmbeddingOptions};
use morphgan::losses::Toggles;
use morphgan::tensor::Scalar;
use morphgan::training::{fit, StepMetrics, Trainer};

mod render;

#[derive(Parser)]
#[command(
    name = "morphgan",
    about = "Learned image morphing: freeform-deformation alignment with a time-conditioned generator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a flat key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a morphing sequence between two images.
    Morph {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Number of frames, endpoints included.
        #[arg(long, default_value_t = 11)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a 2D content/style morphing grid (content/style checkpoints).
    Csgrid {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Cells per axis.
        #[arg(long, default_value_t = 6)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear-blend baseline: warped inputs cross-dissolved, no generator.
    Blend {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 11)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint: interior-frame Fréchet distance and pacing.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Folder of test PNGs.
        #[arg(long)]
        test: PathBuf,
        /// Folder of training PNGs the distance is measured against.
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 11)]
        frames: usize,
        /// Where report.txt / report.csv go (defaults next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Full-covariance Fréchet instead of the diagonal closed form.
        #[arg(long, default_value_t = false)]
        full_cov: bool,
        /// Square resolution images are resized to before embedding.
        #[arg(long, default_value_t = 96)]
        embed_res: usize,
    },
    /// Train one ablation variant of a base config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// full, no-gan, no-local-ps, no-global-ps, no-recon, no-adain, no-stn
        #[arg(long)]
        variant: String,
    },
    /// Write a deterministic toy dataset as <out>/<seed>/img_%05d.png.
    Gentoy {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value = "toy")]
        out: PathBuf,
        /// ellipse, rounded-rect or ngon; derived from the seed when absent.
        #[arg(long)]
        family: Option<String>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

/// Runs a checkpoint-consuming command at the checkpoint's own precision.
macro_rules! dispatch_ckpt {
    ($ckpt:expr, $func:path $(, $arg:expr)*) => {{
        let meta = morphgan::archive::peek_meta($ckpt)
            .with_context(|| format!("reading checkpoint {}", $ckpt.display()))?;
        match meta.get("precision").map(|s| s.as_str()) {
            Some("f32") => {
                let trainer = Trainer::<f32>::load_checkpoint($ckpt)?;
                $func(&trainer $(, $arg)*)
            }
            Some("f64") => {
                let trainer = Trainer::<f64>::load_checkpoint($ckpt)?;
                $func(&trainer $(, $arg)*)
            }
            other => bail!("checkpoint has unsupported precision {other:?}"),
        }
    }};
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config } => cmd_train(&config),
        Command::Morph {
            ckpt,
            a,
            b,
            frames,
            out,
        } => dispatch_ckpt!(&ckpt, render::cmd_morph, &a, &b, frames, &out),
        Command::Csgrid {
            ckpt,
            a,
            b,
            size,
            out,
        } => dispatch_ckpt!(&ckpt, render::cmd_csgrid, &a, &b, size, &out),
        Command::Blend {
            ckpt,
            a,
            b,
            frames,
            out,
        } => dispatch_ckpt!(&ckpt, render::cmd_blend, &a, &b, frames, &out),
        Command::Eval {
            ckpt,
            test,
            train,
            pairs,
            frames,
            out,
            full_cov,
            embed_res,
        } => {
            let opts = EmbeddingOptions {
                group: 4,
                resize: embed_res,
                full_covariance: full_cov,
            };
            let out =
                out.unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).to_path_buf());
            dispatch_ckpt!(&ckpt, cmd_eval, &test, &train, pairs, frames, &out, &opts)
        }
        Command::Ablate { config, variant } => cmd_ablate(&config, &variant),
        Command::Gentoy {
            seed,
            n,
            resolution,
            out,
            family,
        } => {
            let family = family.map(|f| ShapeFamily::parse(&f)).transpose()?;
            let dir = data::write_toy_folder(&out, seed, n, resolution, family)?;
            println!("wrote {n} images to {}", dir.display());
            Ok(())
        }
    }
}

fn cmd_train(config: &Path) -> Result<()> {
    let cfg = TrainConfig::from_file(config)
        .with_context(|| format!("loading config {}", config.display()))?;
    train_with(&cfg)
}

fn train_with(cfg: &TrainConfig) -> Result<()> {
    let dataset = load_source(&cfg.data, cfg.model.resolution)?;
    println!(
        "training on {} images at {res}x{res} ({} mode, {})",
        dataset.len(),
        cfg.model.mode.name(),
        cfg.precision.name(),
        res = cfg.model.resolution,
    );
    let started = std::time::Instant::now();
    let progress = |m: &StepMetrics| {
        if m.step == 1 || m.step.is_multiple_of(100) {
            println!(
                "step {:>6}  d {:.4}  adv {:.4}  trans {:.4}  recon {:.4}  warp {:.4}  ident {:.4}  endp {:.4}  total {:.4}",
                m.step, m.loss_d, m.adv_g, m.transition, m.recon, m.warp, m.identity, m.endpoint, m.total_g
            );
        }
    };
    let outcome = match cfg.precision {
        Precision::F32 => fit::<f32>(cfg, dataset, progress)?,
        Precision::F64 => fit::<f64>(cfg, dataset, progress)?,
    };
    println!(
        "finished {} steps in {:.1}s; checkpoint {}, metrics {}",
        outcome.steps_run,
        started.elapsed().as_secs_f64(),
        outcome.checkpoint.display(),
        outcome.metrics_csv.display()
    );
    Ok(())
}

fn load_source(source: &DataSource, resolution: usize) -> Result<Dataset> {
    Ok(match source {
        DataSource::Toy { n, seed, family } => match family {
            Some(f) => data::gen_toy_family(*n, *seed, resolution, *f)?,
            None => data::gen_toy(*n, *seed, resolution)?,
        },
        DataSource::Folder(path) => data::load_folder(path, resolution)?,
    })
}

fn cmd_eval<S: Scalar>(
    trainer: &Trainer<S>,
    test: &Path,
    train: &Path,
    pairs: usize,
    frames: usize,
    out: &Path,
    opts: &EmbeddingOptions,
) -> Result<()> {
    let res = trainer.model.resolution;
    let test_set = data::load_folder(test, res)?;
    let train_set = data::load_folder(train, res)?;
    let report = evaluate(trainer, &test_set, &train_set, pairs, frames, 1234, opts)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.txt"), report.text())?;
    std::fs::write(out.join("report.csv"), report.csv())?;
    print!("{}", report.text());
    println!("reports written to {}", out.display());
    Ok(())
}

/// Maps an ablation name to its toggle changes.
fn apply_variant(toggles: Toggles, variant: &str) -> Result<Toggles> {
    let mut t = toggles;
    match variant {
        "full" => {}
        "no-gan" => t.gan = false,
        "no-local-ps" => t.local_ps = false,
        "no-global-ps" => t.global_ps = false,
        "no-recon" => t.recon = false,
        "no-adain" => t.adain = false,
        "no-stn" => t.stn = false,
        other => bail!(
            "unknown ablation variant `{other}` (expected full, no-gan, no-local-ps, no-global-ps, no-recon, no-adain, no-stn)"
        ),
    }
    Ok(t.normalized())
}

fn cmd_ablate(config: &Path, variant: &str) -> Result<()> {
    let mut cfg = TrainConfig::from_file(config)
        .with_context(|| format!("loading config {}", config.display()))?;
    cfg.model.weights.toggles = apply_variant(cfg.model.weights.toggles, variant)?;
    cfg.out_dir = cfg.out_dir.join(variant);
    println!("ablation variant `{variant}` -> {}", cfg.out_dir.display());
    train_with(&cfg)
}
