//! Run configuration: model/loss/optimizer settings plus the training-run
//! parameters, parsed from a flat `key = value` file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::data::ShapeFamily;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::tensor::AdamParams;
use crate::warp::StnConfig;

/// Numeric precision of a run. f32 trains fast; f64 backs gradient-check
/// and bit-exact determinism suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::InvalidConfigValue {
                key: "precision".into(),
                detail: format!("expected f32 or f64, got `{other}`"),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// One transformation axis, or disentangled content/style axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphMode {
    SingleAxis,
    ContentStyle,
}

impl MorphMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(MorphMode::SingleAxis),
            "content-style" | "cs" => Ok(MorphMode::ContentStyle),
            other => Err(Error::InvalidConfigValue {
                key: "mode".into(),
                detail: format!("expected single or content-style, got `{other}`"),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MorphMode::SingleAxis => "single",
            MorphMode::ContentStyle => "content-style",
        }
    }
}

/// Where training images come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// Procedural shapes: `toy:n=64,seed=7,family=ellipse` (family optional).
    Toy {
        n: usize,
        seed: u64,
        family: Option<ShapeFamily>,
    },
    /// `folder:path/to/pngs`
    Folder(PathBuf),
}

impl DataSource {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("toy:") {
            let mut n = None;
            let mut seed = None;
            let mut family = None;
            for part in rest.split(',').filter(|p| !p.is_empty()) {
                let (k, v) = part.split_once('=').ok_or_else(|| Error::InvalidConfigValue {
                    key: "data".into(),
                    detail: format!("bad toy parameter `{part}`"),
                })?;
                match k {
                    "n" => n = Some(parse_num::<usize>("data", v)?),
                    "seed" => seed = Some(parse_num::<u64>("data", v)?),
                    "family" => family = Some(ShapeFamily::parse(v)?),
                    other => {
                        return Err(Error::InvalidConfigValue {
                            key: "data".into(),
                            detail: format!("unknown toy parameter `{other}`"),
                        })
                    }
                }
            }
            Ok(DataSource::Toy {
                n: n.unwrap_or(64),
                seed: seed.unwrap_or(7),
                family,
            })
        } else if let Some(path) = s.strip_prefix("folder:") {
            Ok(DataSource::Folder(PathBuf::from(path)))
        } else {
            Err(Error::InvalidConfigValue {
                key: "data".into(),
                detail: format!("expected toy:... or folder:..., got `{s}`"),
            })
        }
    }
}

/// Everything needed to rebuild the networks and losses: stored verbatim in
/// checkpoints so a trained model is self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub resolution: usize,
    /// Frames per pair at train time.
    pub k: usize,
    pub mode: MorphMode,
    pub seed: u64,
    pub weights: LossWeights,
    pub adam: AdamParams,
    pub gen_width: usize,
    pub disc_width: usize,
    pub stn: StnConfig,
    pub perceptual_seed: u64,
    pub perceptual_width: usize,
    pub ps_flat: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        // Desk-scale defaults: sized so the full training acceptance run fits
        // a CPU budget. Paper-scale widths remain reachable through config.
        ModelConfig {
            resolution: 32,
            k: 5,
            mode: MorphMode::SingleAxis,
            seed: 7,
            weights: LossWeights::default(),
            adam: AdamParams {
                lr: 5e-4,
                ..AdamParams::default()
            },
            gen_width: 16,
            disc_width: 8,
            stn: StnConfig {
                grid_side: 5,
                conv_widths: (16, 32),
                fc_hidden: 128,
            },
            perceptual_seed: 100,
            perceptual_width: 8,
            ps_flat: false,
        }
    }
}

/// A full training run: model plus data, schedule length and output layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data: DataSource,
    pub out_dir: PathBuf,
    pub steps: usize,
    /// When set (and `steps` is 0), the step budget resolves at fit time to
    /// `epochs · ceil(n_train / batch)`.
    pub epochs: Option<usize>,
    pub batch: usize,
    pub precision: Precision,
    pub test_fraction: f64,
    pub checkpoint_every: usize,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| Error::InvalidConfigValue {
        key: key.into(),
        detail: format!("cannot parse `{v}`"),
    })
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(Error::InvalidConfigValue {
            key: key.into(),
            detail: format!("expected a boolean, got `{other}`"),
        }),
    }
}

impl TrainConfig {
    /// Parses the flat `key = value` format. Lines starting with `#` and
    /// blank lines are ignored. `data`, `out` and `steps` (or `epochs`) are
    /// required; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: HashMap<String, String> = HashMap::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::InvalidConfigValue {
                key: line.to_string(),
                detail: "expected key = value".into(),
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_pairs(&kv)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn from_pairs(kv: &HashMap<String, String>) -> Result<Self> {
        let mut seen: std::collections::HashSet<&str> = std::collections::HashSet::new();
        let mut get = |key: &'static str| -> Option<&String> {
            seen.insert(key);
            kv.get(key)
        };

        let data = DataSource::parse(
            get("data").ok_or_else(|| Error::MissingConfigKey("data".into()))?,
        )?;
        let out_dir = PathBuf::from(
            get("out").ok_or_else(|| Error::MissingConfigKey("out".into()))?,
        );
        let epochs = match get("epochs") {
            Some(v) => Some(parse_num::<usize>("epochs", v)?),
            None => None,
        };
        let steps = match get("steps") {
            Some(v) => parse_num::<usize>("steps", v)?,
            None if epochs.is_some() => 0,
            None => return Err(Error::MissingConfigKey("steps".into())),
        };

        let mut model = ModelConfig::default();
        if let Some(v) = get("resolution") {
            model.resolution = parse_num("resolution", v)?;
        }
        if let Some(v) = get("k") {
            model.k = parse_num("k", v)?;
        }
        if model.k < 2 {
            return Err(Error::InvalidConfigValue {
                key: "k".into(),
                detail: "needs k >= 2".into(),
            });
        }
        if let Some(v) = get("mode") {
            model.mode = MorphMode::parse(v)?;
        }
        if let Some(v) = get("seed") {
            model.seed = parse_num("seed", v)?;
        }
        if let Some(v) = get("lambda_adv") {
            model.weights.lambda_adv = parse_num("lambda_adv", v)?;
        }
        if let Some(v) = get("lambda_transition") {
            model.weights.lambda_transition = parse_num("lambda_transition", v)?;
        }
        if let Some(v) = get("lambda_recon") {
            model.weights.lambda_recon = parse_num("lambda_recon", v)?;
        }
        if let Some(v) = get("lambda_warp") {
            model.weights.lambda_warp = parse_num("lambda_warp", v)?;
        }
        if let Some(v) = get("lambda_identity") {
            model.weights.lambda_identity = parse_num("lambda_identity", v)?;
        }
        if let Some(v) = get("lambda_endpoint") {
            model.weights.lambda_endpoint = parse_num("lambda_endpoint", v)?;
        }
        if let Some(v) = get("toggle_gan") {
            model.weights.toggles.gan = parse_bool("toggle_gan", v)?;
        }
        if let Some(v) = get("toggle_local_ps") {
            model.weights.toggles.local_ps = parse_bool("toggle_local_ps", v)?;
        }
        if let Some(v) = get("toggle_global_ps") {
            model.weights.toggles.global_ps = parse_bool("toggle_global_ps", v)?;
        }
        if let Some(v) = get("toggle_recon") {
            model.weights.toggles.recon = parse_bool("toggle_recon", v)?;
        }
        if let Some(v) = get("toggle_adain") {
            model.weights.toggles.adain = parse_bool("toggle_adain", v)?;
        }
        if let Some(v) = get("toggle_stn") {
            model.weights.toggles.stn = parse_bool("toggle_stn", v)?;
        }
        model.weights.toggles = model.weights.toggles.normalized();
        if let Some(v) = get("lr") {
            model.adam.lr = parse_num("lr", v)?;
        }
        if let Some(v) = get("beta1") {
            model.adam.beta1 = parse_num("beta1", v)?;
        }
        if let Some(v) = get("beta2") {
            model.adam.beta2 = parse_num("beta2", v)?;
        }
        if let Some(v) = get("adam_eps") {
            model.adam.eps = parse_num("adam_eps", v)?;
        }
        if let Some(v) = get("gen_width") {
            model.gen_width = parse_num("gen_width", v)?;
        }
        if let Some(v) = get("disc_width") {
            model.disc_width = parse_num("disc_width", v)?;
        }
        if let Some(v) = get("grid_side") {
            model.stn.grid_side = parse_num("grid_side", v)?;
        }
        if let Some(v) = get("stn_conv1") {
            model.stn.conv_widths.0 = parse_num("stn_conv1", v)?;
        }
        if let Some(v) = get("stn_conv2") {
            model.stn.conv_widths.1 = parse_num("stn_conv2", v)?;
        }
        if let Some(v) = get("stn_fc") {
            model.stn.fc_hidden = parse_num("stn_fc", v)?;
        }
        if let Some(v) = get("perceptual_seed") {
            model.perceptual_seed = parse_num("perceptual_seed", v)?;
        }
        if let Some(v) = get("perceptual_width") {
            model.perceptual_width = parse_num("perceptual_width", v)?;
        }
        if let Some(v) = get("ps_flat") {
            model.ps_flat = parse_bool("ps_flat", v)?;
        }

        let mut cfg = TrainConfig {
            model,
            data,
            out_dir,
            steps,
            epochs,
            batch: 8,
            precision: Precision::F32,
            test_fraction: 0.25,
            checkpoint_every: 0,
        };
        if let Some(v) = get("batch") {
            cfg.batch = parse_num("batch", v)?;
        }
        if let Some(v) = get("precision") {
            cfg.precision = Precision::parse(v)?;
        }
        if let Some(v) = get("test_fraction") {
            cfg.test_fraction = parse_num("test_fraction", v)?;
        }
        if let Some(v) = get("checkpoint_every") {
            cfg.checkpoint_every = parse_num("checkpoint_every", v)?;
        }
        for key in kv.keys() {
            if !seen.contains(key.as_str()) {
                return Err(Error::InvalidConfigValue {
                    key: key.clone(),
                    detail: "unknown config key".into(),
                });
            }
        }
        Ok(cfg)
    }
}
