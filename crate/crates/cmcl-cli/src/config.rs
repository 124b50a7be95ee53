//! Run configuration: TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use cmcl_core::data::{self, Dataset};
use cmcl_core::ensemble::{EnsembleConfig, GradVariant, Mode};
use cmcl_core::optim::OptimizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Clusters,
    Rings,
    File,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Generator seed; defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub label_first: bool,
    /// Apply global contrast normalization after loading.
    #[serde(default)]
    pub gcn: bool,
}

fn default_classes() -> usize {
    4
}
fn default_per_class() -> usize {
    125
}
fn default_dim() -> usize {
    2
}
fn default_spread() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Clusters,
            classes: default_classes(),
            per_class: default_per_class(),
            dim: default_dim(),
            spread: default_spread(),
            noise: default_noise(),
            seed: None,
            path: None,
            label_first: true,
            gcn: false,
        }
    }
}

impl DatasetConfig {
    pub fn build(&self, run_seed: u64) -> Result<Dataset> {
        let seed = self.seed.unwrap_or(run_seed);
        let dataset = match self.kind {
            DatasetKind::Clusters => data::gen_gaussian_clusters(
                self.classes,
                self.per_class,
                self.dim,
                self.spread,
                seed,
            )?,
            DatasetKind::Rings => data::gen_rings(self.classes, self.per_class, self.noise, seed)?,
            DatasetKind::File => {
                let path = self
                    .path
                    .as_ref()
                    .context("dataset kind is 'file' but no path was given")?;
                data::load_delimited(path, self.label_first)
                    .with_context(|| format!("loading dataset from {}", path.display()))?
            }
        };
        Ok(if self.gcn {
            data::gcn_normalize(&dataset, 1e-8)?
        } else {
            dataset
        })
    }
}

/// Everything a command needs: the ensemble configuration, the dataset
/// source, the evaluation split and the output directory.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub ensemble: EnsembleConfig,
    pub dataset: DatasetConfig,
    /// Held-out fraction for per-epoch evaluation; 0 evaluates on the
    /// training data itself.
    pub test_fraction: f64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            bail!(
                "test fraction must lie in [0, 1), got {}",
                self.test_fraction
            );
        }
        Ok(())
    }

    /// Training set and evaluation set. With a zero test fraction the
    /// evaluation set is the training set itself.
    pub fn build_splits(&self) -> Result<(Dataset, Dataset)> {
        let dataset = self.dataset.build(self.ensemble.seed)?;
        if self.test_fraction == 0.0 {
            Ok((dataset.clone(), dataset))
        } else {
            Ok(data::split(&dataset, self.test_fraction, self.ensemble.seed)?)
        }
    }

}

/// The TOML schema: top-level ensemble fields plus `[optimizer]` and
/// `[dataset]` tables. Every field is optional; flags override file values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mode: Option<String>,
    pub members: Option<usize>,
    pub overlap: Option<usize>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    /// 0 disables sharing.
    pub share_layer: Option<usize>,
    pub variant: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub hidden_dims: Option<Vec<usize>>,
    pub mc_samples: Option<usize>,
    pub test_fraction: Option<f64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub optimizer: OptimizerFile,
    pub dataset: Option<DatasetConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerFile {
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
}

pub fn parse_mode(text: &str) -> Result<Mode> {
    match text {
        "ie" => Ok(Mode::Ie),
        "mcl" => Ok(Mode::Mcl),
        "cmcl" => Ok(Mode::Cmcl),
        other => bail!("unknown mode {other:?} (expected ie, mcl or cmcl)"),
    }
}

pub fn parse_variant(text: &str) -> Result<GradVariant> {
    match text {
        "v0" => Ok(GradVariant::ExactV0),
        "v1" => Ok(GradVariant::StochasticV1),
        other => bail!("unknown gradient variant {other:?} (expected v0 or v1)"),
    }
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
}

/// Applies file values over the built-in defaults; flag overrides happen in
/// `main` after this.
pub fn config_from_file(file: ConfigFile) -> Result<RunConfig> {
    let mut ensemble = EnsembleConfig {
        beta: 1.0,
        lambda: 0.7,
        ..EnsembleConfig::default()
    };
    if let Some(mode) = &file.mode {
        ensemble.mode = parse_mode(mode)?;
    }
    if let Some(v) = file.members {
        ensemble.members = v;
    }
    if let Some(v) = file.overlap {
        ensemble.overlap = v;
    }
    if let Some(v) = file.beta {
        ensemble.beta = v;
    }
    if let Some(v) = file.lambda {
        ensemble.lambda = v;
    }
    if let Some(v) = file.share_layer {
        ensemble.share_layer = if v == 0 { None } else { Some(v) };
    }
    if let Some(v) = &file.variant {
        ensemble.grad_variant = parse_variant(v)?;
    }
    if let Some(v) = file.epochs {
        ensemble.epochs = v;
    }
    if let Some(v) = file.batch_size {
        ensemble.batch_size = v;
    }
    if let Some(v) = file.seed {
        ensemble.seed = v;
    }
    if let Some(v) = file.hidden_dims {
        ensemble.hidden_dims = v;
    }
    if let Some(v) = file.mc_samples {
        ensemble.mc_samples = v;
    }
    let defaults = OptimizerConfig::default();
    ensemble.optimizer = OptimizerConfig {
        learning_rate: file.optimizer.learning_rate.unwrap_or(defaults.learning_rate),
        momentum: file.optimizer.momentum.unwrap_or(defaults.momentum),
        weight_decay: file.optimizer.weight_decay.unwrap_or(defaults.weight_decay),
    };
    Ok(RunConfig {
        ensemble,
        dataset: file.dataset.unwrap_or_default(),
        test_fraction: file.test_fraction.unwrap_or(0.2),
        out: file.out.unwrap_or_else(|| PathBuf::from("out")),
    })
}
