//! Turns a resolved config into datasets, an initial model and client shards.

use fedskew::data::{class_centres, load_idx, partition, sample_blobs};
use fedskew::model::init_params;
use fedskew::seed;
use fedskew::{ClientShard, LabeledDataset, ModelParams};
use rand::seq::SliceRandom;

use crate::config::{DatasetConfig, ResolvedConfig};
use crate::error::{CliError, Result, SectionExt};

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Examples kept out of every client shard; empty unless configured.
    pub holdout: Option<LabeledDataset>,
}

pub fn load_datasets(cfg: &ResolvedConfig) -> Result<Datasets> {
    let s = &cfg.seeds;
    match &cfg.config.dataset {
        DatasetConfig::Synthetic {
            classes,
            dim,
            separation,
            train_per_class,
            test_per_class,
            holdout_per_class,
        } => {
            let centres = class_centres(*classes, *dim, *separation, s.dataset_centres).section("dataset")?;
            let train = sample_blobs(&centres, *train_per_class, s.dataset_train).section("dataset")?;
            let test = sample_blobs(&centres, *test_per_class, s.dataset_test).section("dataset")?;
            let holdout = if *holdout_per_class > 0 {
                Some(sample_blobs(&centres, *holdout_per_class, s.dataset_holdout).section("dataset")?)
            } else {
                None
            };
            Ok(Datasets { train, test, holdout })
        }
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            holdout_fraction,
        } => {
            let full = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            if *holdout_fraction == 0.0 {
                return Ok(Datasets {
                    train: full,
                    test,
                    holdout: None,
                });
            }
            let mut order: Vec<usize> = (0..full.len()).collect();
            order.shuffle(&mut seed::rng(s.dataset_holdout));
            let cut = (holdout_fraction * full.len() as f64).round() as usize;
            let (held, kept) = order.split_at(cut);
            let (mut held, mut kept) = (held.to_vec(), kept.to_vec());
            held.sort_unstable();
            kept.sort_unstable();
            Ok(Datasets {
                train: full.subset(&kept),
                test,
                holdout: Some(full.subset(&held)),
            })
        }
    }
}

/// Layer widths: input, configured hidden layers, one output per class.
pub fn layer_dims(cfg: &ResolvedConfig, data: &LabeledDataset) -> Vec<usize> {
    let mut dims = vec![data.dim()];
    dims.extend(&cfg.config.model.hidden);
    dims.push(data.num_classes());
    dims
}

pub fn initial_model(cfg: &ResolvedConfig, data: &LabeledDataset) -> Result<ModelParams> {
    init_params(&layer_dims(cfg, data), cfg.seeds.model_init, cfg.config.model.init_scale).section("model")
}

/// Partitions `data` and checks that every shard can fill a local batch.
pub fn client_shards(cfg: &ResolvedConfig, data: &LabeledDataset) -> Result<Vec<ClientShard>> {
    let shards = partition(data, &cfg.partition_spec()).map_err(|e| match e {
        fedskew::Error::Config { field, reason } if field == "clients" => CliError::Config {
            field: "fed.clients".into(),
            reason,
        },
        other => CliError::from(other).in_section("partition"),
    })?;
    check_batch_fits(cfg, &shards)?;
    Ok(shards)
}

pub fn check_batch_fits(cfg: &ResolvedConfig, shards: &[ClientShard]) -> Result<()> {
    let smallest = shards.iter().map(ClientShard::n).min().unwrap_or(0);
    let b = cfg.config.fed.batch_size;
    if b > smallest {
        return Err(CliError::config(
            "fed.batch_size",
            format!("batch size {b} exceeds the smallest client shard ({smallest} examples)"),
        ));
    }
    Ok(())
}
