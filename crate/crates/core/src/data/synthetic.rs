use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed;

/// Gaussian blobs: one unit-variance cluster per class centred at
/// `separation · u_c`, with `u_c` a seeded random unit vector. Examples are
/// laid out class by class, `per_class` each.
pub fn gen_synthetic(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let centres = class_centres(num_classes, dim, separation, seed)?;
    sample_blobs(&centres, per_class, seed::derive_seed(seed, "samples"))
}

/// Class centres used by [`gen_synthetic`] for `seed`.
pub fn class_centres(num_classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if num_classes == 0 || dim == 0 {
        return Err(Error::config("synthetic", "class count and dimension must be positive"));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::config("separation", "must be finite and non-negative"));
    }
    let mut rng = seed::rng(seed::derive_seed(seed, "centres"));
    Ok((0..num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| separation * x / norm).collect()
        })
        .collect())
}

/// Draws `per_class` unit-variance samples around each centre.
pub fn sample_blobs(centres: &[Vec<f64>], per_class: usize, seed: u64) -> Result<LabeledDataset> {
    if per_class == 0 {
        return Err(Error::config("per_class", "must be positive"));
    }
    let dim = centres.first().map_or(0, Vec::len);
    let mut rng = seed::rng(seed);
    let mut features = Vec::with_capacity(centres.len() * per_class * dim);
    let mut labels = Vec::with_capacity(centres.len() * per_class);
    for (class, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            features.extend(centre.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
            labels.push(class);
        }
    }
    LabeledDataset::new(features, labels, dim, centres.len())
}
