//! Experiment configuration: parsing, validation and seed derivation.

use std::fs;
use std::path::{Path, PathBuf};

use fedskew::analysis::ProbeSpec;
use fedskew::data::PartitionKind;
use fedskew::seed::derive_seed;
use fedskew::{FedConfig, PartitionSpec, ShareConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub global_seed: u64,
    /// Relative paths are resolved against the config file's directory.
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub partition: PartitionSection,
    pub fed: FedSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share: Option<ShareSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian class blobs; train, test and holdout share the class centres.
    Synthetic {
        classes: usize,
        dim: usize,
        separation: f64,
        train_per_class: usize,
        test_per_class: usize,
        #[serde(default)]
        holdout_per_class: usize,
    },
    /// MNIST-style IDX files. The holdout is a seeded random slice of the
    /// training files.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        holdout_fraction: f64,
    },
}

/// Mirror of [`PartitionKind`] whose every variant is a struct, so stray
/// fields are rejected for `iid` too.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSection {
    Iid {},
    KClass { classes_per_client: usize },
    TargetEmd { emd: f64 },
}

impl From<PartitionSection> for PartitionKind {
    fn from(p: PartitionSection) -> Self {
        match p {
            PartitionSection::Iid {} => PartitionKind::Iid,
            PartitionSection::KClass { classes_per_client } => PartitionKind::KClass { classes_per_client },
            PartitionSection::TargetEmd { emd } => PartitionKind::TargetEmd { emd },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; empty gives a linear softmax model.
    pub hidden: Vec<usize>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    1.0
}

fn default_decay() -> f64 {
    1.0
}

/// [`FedConfig`] without its seed, which is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedSection {
    pub clients: usize,
    pub batch_size: usize,
    pub local_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_steps: Option<usize>,
    pub eta0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShareSection {
    pub beta: f64,
    /// One sharing experiment per entry.
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_batch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub grid: Vec<f64>,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub eta: f64,
    pub sync_interval: usize,
    pub rounds: usize,
    pub probe: ProbeSection,
    /// Per-class λ used instead of the estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_override: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub pairs: usize,
    pub radius: f64,
    #[serde(default = "default_safety")]
    pub safety_factor: f64,
}

fn default_safety() -> f64 {
    1.5
}

/// Every seed used by a run, derived from `global_seed` by component name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DerivedSeeds {
    pub dataset_centres: u64,
    pub dataset_train: u64,
    pub dataset_test: u64,
    pub dataset_holdout: u64,
    pub model_init: u64,
    pub partition: u64,
    pub fed: u64,
    pub sweep: u64,
    pub share: u64,
    pub bound_probe: u64,
}

impl DerivedSeeds {
    pub fn from_global(global: u64) -> Self {
        let d = |name| derive_seed(global, name);
        DerivedSeeds {
            dataset_centres: d("dataset.centres"),
            dataset_train: d("dataset.train"),
            dataset_test: d("dataset.test"),
            dataset_holdout: d("dataset.holdout"),
            model_init: d("model.init"),
            partition: d("partition"),
            fed: d("fed"),
            sweep: d("sweep"),
            share: d("share"),
            bound_probe: d("bound.probe"),
        }
    }
}

/// A validated config with paths resolved and seeds derived.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub config: ExperimentConfig,
    pub seeds: DerivedSeeds,
}

impl ResolvedConfig {
    pub fn fed(&self) -> FedConfig {
        let f = &self.config.fed;
        FedConfig {
            clients: f.clients,
            batch_size: f.batch_size,
            local_epochs: f.local_epochs,
            local_steps: f.local_steps,
            eta0: f.eta0,
            decay: f.decay,
            rounds: f.rounds,
            seed: self.seeds.fed,
        }
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            kind: self.config.partition.into(),
            clients: self.config.fed.clients,
            seed: self.seeds.partition,
        }
    }

    pub fn share_config(&self, alpha: f64) -> Result<ShareConfig> {
        let s = self.require_share()?;
        Ok(ShareConfig {
            beta: s.beta,
            alpha,
            warmup_steps: s.warmup_steps,
            warmup_eta: s.warmup_eta,
            warmup_batch: s.warmup_batch,
            seed: self.seeds.share,
        })
    }

    pub fn probe(&self) -> Result<ProbeSpec> {
        let p = &self.require_bound()?.probe;
        Ok(ProbeSpec {
            pairs: p.pairs,
            radius: p.radius,
            seed: self.seeds.bound_probe,
            safety_factor: p.safety_factor,
        })
    }

    pub fn require_share(&self) -> Result<&ShareSection> {
        self.config
            .share
            .as_ref()
            .ok_or_else(|| CliError::config("share", "section required by this command"))
    }

    pub fn require_sweep(&self) -> Result<&SweepSection> {
        self.config
            .sweep
            .as_ref()
            .ok_or_else(|| CliError::config("sweep", "section required by this command"))
    }

    pub fn require_bound(&self) -> Result<&BoundSection> {
        self.config
            .bound
            .as_ref()
            .ok_or_else(|| CliError::config("bound", "section required by this command"))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::ConfigParse(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = &mut self.dataset
        {
            fix(train_images);
            fix(train_labels);
            fix(test_images);
            fix(test_labels);
        }
    }

    /// Static checks that need no data; data-dependent checks happen when
    /// the experiment is assembled.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::config(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                classes,
                dim,
                separation,
                train_per_class,
                test_per_class,
                ..
            } => {
                positive("dataset.classes", *classes)?;
                positive("dataset.dim", *dim)?;
                positive("dataset.train_per_class", *train_per_class)?;
                positive("dataset.test_per_class", *test_per_class)?;
                if !(separation.is_finite() && *separation >= 0.0) {
                    return Err(CliError::config("dataset.separation", "must be finite and non-negative"));
                }
            }
            DatasetConfig::Idx { holdout_fraction, .. } => {
                if !(0.0..1.0).contains(holdout_fraction) {
                    return Err(CliError::config("dataset.holdout_fraction", "must lie in [0, 1)"));
                }
            }
        }
        if self.model.hidden.contains(&0) {
            return Err(CliError::config("model.hidden", "layer widths must be positive"));
        }
        if !(self.model.init_scale.is_finite() && self.model.init_scale > 0.0) {
            return Err(CliError::config("model.init_scale", "must be positive"));
        }
        self.fed_config_unseeded()
            .validate()
            .map_err(|e| CliError::from(e).in_section("fed"))?;
        if let Some(s) = &self.share {
            if s.alphas.is_empty() {
                return Err(CliError::config("share.alphas", "must not be empty"));
            }
            for &alpha in &s.alphas {
                ShareConfig {
                    beta: s.beta,
                    alpha,
                    warmup_steps: s.warmup_steps,
                    warmup_eta: s.warmup_eta,
                    warmup_batch: s.warmup_batch,
                    seed: 0,
                }
                .validate()
                .map_err(|e| CliError::from(e).in_section("share"))?;
            }
            if s.warmup_eta.is_some_and(|e| !(e.is_finite() && e > 0.0)) {
                return Err(CliError::config("share.warmup_eta", "must be positive"));
            }
            if s.warmup_batch == Some(0) {
                return Err(CliError::config("share.warmup_batch", "must be positive"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.grid.is_empty() {
                return Err(CliError::config("sweep.grid", "must not be empty"));
            }
            positive("sweep.reps", s.reps)?;
        }
        if let Some(b) = &self.bound {
            if !(b.eta.is_finite() && b.eta > 0.0) {
                return Err(CliError::config("bound.eta", "must be positive"));
            }
            positive("bound.sync_interval", b.sync_interval)?;
            positive("bound.rounds", b.rounds)?;
            positive("bound.probe.pairs", b.probe.pairs)?;
            if !(b.probe.radius.is_finite() && b.probe.radius > 0.0) {
                return Err(CliError::config("bound.probe.radius", "must be positive"));
            }
            if !(b.probe.safety_factor.is_finite() && b.probe.safety_factor > 0.0) {
                return Err(CliError::config("bound.probe.safety_factor", "must be positive"));
            }
            if let Some(l) = &b.lambda_override {
                if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(CliError::config(
                        "bound.lambda_override",
                        "entries must be finite and non-negative",
                    ));
                }
            }
        }
        Ok(())
    }

    fn fed_config_unseeded(&self) -> FedConfig {
        ResolvedConfig {
            config: self.clone(),
            seeds: DerivedSeeds::from_global(0),
        }
        .fed()
    }

    /// Validates, applies the seed override and derives all child seeds.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Result<ResolvedConfig> {
        if let Some(s) = seed_override {
            self.global_seed = s;
        }
        self.validate()?;
        let seeds = DerivedSeeds::from_global(self.global_seed);
        Ok(ResolvedConfig { config: self, seeds })
    }
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(CliError::config(field, "must be positive"))
    } else {
        Ok(())
    }
}
