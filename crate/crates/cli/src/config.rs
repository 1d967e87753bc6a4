//! Versioned JSON job description. Defaults are overridden by the config
//! file, which is in turn overridden by command-line flags.

use std::path::{Path, PathBuf};

use photostyle::{GenerationNetworkSpec, LossConfig, ResizePolicy, TrainingConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Path to torchvision-layout VGG19 weights in safetensors format, used when
/// the config has no `extractor` section.
pub const WEIGHTS_ENV: &str = "PHOTOSTYLE_VGG19";
/// Expected SHA-256 of the file named by [`WEIGHTS_ENV`].
pub const WEIGHTS_SHA_ENV: &str = "PHOTOSTYLE_VGG19_SHA256";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorConfig {
    /// Randomly initialized VGG19 with the standard layer table. Useful for
    /// testing the pipeline; it carries no perceptual meaning.
    Seeded { seed: u64 },
    /// Pretrained weights pinned by digest.
    File { path: PathBuf, sha256: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub version: u32,
    pub content_path: Option<PathBuf>,
    pub style_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub precision: Precision,
    pub extractor: Option<ExtractorConfig>,
    pub loss: LossConfig,
    pub training: TrainingConfig,
    pub network: GenerationNetworkSpec,
    pub resize: ResizePolicy,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            content_path: None,
            style_path: None,
            output_dir: None,
            precision: Precision::default(),
            extractor: None,
            loss: LossConfig::default(),
            training: TrainingConfig::default(),
            network: GenerationNetworkSpec::default(),
            resize: ResizePolicy::default(),
        }
    }
}

/// Values given on the command line; `None` leaves the file or default value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub content: Option<PathBuf>,
    pub style: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub content_weight: Option<f64>,
    pub style_weight: Option<f64>,
    pub tv_weight: Option<f64>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<usize>,
    pub size: Option<(usize, usize)>,
    pub no_timing: bool,
}

impl JobConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config {} has version {}, this build reads version {CONFIG_VERSION}",
                path.display(),
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Defaults, then the optional file, then the flags.
    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        if let Some(p) = &o.content {
            cfg.content_path = Some(p.clone());
        }
        if let Some(p) = &o.style {
            cfg.style_path = Some(p.clone());
        }
        if let Some(p) = &o.out {
            cfg.output_dir = Some(p.clone());
        }
        if let Some(v) = o.steps {
            cfg.training.steps = v;
        }
        if let Some(v) = o.lr {
            cfg.training.learning_rate = v;
        }
        if let Some(v) = o.content_weight {
            cfg.loss.lambda_content = v;
        }
        if let Some(v) = o.style_weight {
            cfg.loss.lambda_style = v;
        }
        if let Some(v) = o.tv_weight {
            cfg.loss.lambda_tv = v;
        }
        if let Some(v) = o.seed {
            cfg.training.seed = v;
        }
        if let Some(v) = o.checkpoint_every {
            cfg.training.checkpoint_every = Some(v);
        }
        if let Some(v) = o.size {
            cfg.resize.content_target = v;
        }
        if o.no_timing {
            cfg.training.record_wall_time = false;
        }
        if cfg.extractor.is_none() {
            cfg.extractor = Some(extractor_from_env()?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Numeric invariants of every section.
    pub fn validate(&self) -> Result<(), CliError> {
        self.loss.validate()?;
        self.training.validate()?;
        self.network.validate()?;
        self.resize.validate()?;
        Ok(())
    }

    pub fn require_content(&self) -> Result<&Path, CliError> {
        require_file(self.content_path.as_deref(), "content image", "--content")
    }

    pub fn require_style(&self) -> Result<&Path, CliError> {
        require_file(self.style_path.as_deref(), "style image", "--style")
    }

    pub fn require_output_dir(&self) -> Result<&Path, CliError> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory given (use --out)".into()))
    }

    /// Rewrites input paths as absolute so the snapshot is usable from anywhere.
    pub fn absolutize(&mut self) {
        for p in [&mut self.content_path, &mut self.style_path].into_iter().flatten() {
            if let Ok(abs) = std::fs::canonicalize(&*p) {
                *p = abs;
            }
        }
        if let Some(ExtractorConfig::File { path, .. }) = &mut self.extractor {
            if let Ok(abs) = std::fs::canonicalize(&*path) {
                *path = abs;
            }
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}

fn require_file<'a>(path: Option<&'a Path>, what: &str, flag: &str) -> Result<&'a Path, CliError> {
    let path = path.ok_or_else(|| CliError::Config(format!("no {what} given (use {flag})")))?;
    if !path.is_file() {
        return Err(CliError::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(path)
}

fn extractor_from_env() -> Result<ExtractorConfig, CliError> {
    let Some(path) = std::env::var_os(WEIGHTS_ENV) else {
        return Ok(ExtractorConfig::Seeded { seed: 0 });
    };
    let sha256 = std::env::var(WEIGHTS_SHA_ENV)
        .map_err(|_| CliError::Config(format!("{WEIGHTS_ENV} is set but {WEIGHTS_SHA_ENV} is not")))?;
    Ok(ExtractorConfig::File {
        path: PathBuf::from(path),
        sha256,
    })
}

/// Parses `HxW`, e.g. `256x384`.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad dimension `{v}`: {e}"))
    };
    Ok((dim(h)?, dim(w)?))
}

/// Parses a comma-separated list of numbers; blank entries are ignored.
pub fn parse_weights(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad content weight `{v}`: {e}")))
        })
        .collect()
}
