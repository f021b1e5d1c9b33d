use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const SIMPLEX_TOL: f64 = 1e-9;

/// Probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Data("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Data(format!("negative or non-finite probability in {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Data(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self {
            probs: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    pub fn one_hot(num_classes: usize, class: usize) -> Self {
        let mut probs = vec![0.0; num_classes];
        probs[class] = 1.0;
        Self { probs }
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Data("no examples to form a distribution".into()));
        }
        Ok(Self {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// Class-wise L1 distance `Σ_i |p_i − q_i|` (twice the total variation).
pub fn emd(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    if p.num_classes() != q.num_classes() {
        return Err(Error::Shape(format!(
            "distributions over {} and {} classes",
            p.num_classes(),
            q.num_classes()
        )));
    }
    Ok(p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum())
}

/// Largest EMD any distribution can have against the uniform one.
pub fn max_emd_to_uniform(num_classes: usize) -> f64 {
    2.0 * (1.0 - 1.0 / num_classes as f64)
}

/// Cyclic rotation: entry `i` moves to position `(i + by) mod C`.
pub fn shift_distribution(d: &ClassDistribution, by: usize) -> ClassDistribution {
    let c = d.num_classes();
    let mut probs = vec![0.0; c];
    for (i, p) in d.probs.iter().enumerate() {
        probs[(i + by) % c] = *p;
    }
    ClassDistribution { probs }
}

/// Number of random mass transfers applied by the EMD-preserving perturbation.
const PERTURBATION_ROUNDS: usize = 4;

/// A distribution whose EMD to uniform equals `target`.
///
/// Starts from `(1 − t)·uniform + t·onehot(j)` with `t = target / max_emd`
/// and a seeded anchor class `j`, then moves mass between pairs of classes
/// lying on the same side of `1/C`. Such transfers never cross `1/C` and
/// never go negative, so `Σ|d_i − 1/C|` is unchanged.
pub fn gen_target_emd_distribution(target: f64, num_classes: usize, seed: u64) -> Result<ClassDistribution> {
    let max = max_emd_to_uniform(num_classes);
    if num_classes == 0 || !(0.0..=max + 1e-12).contains(&target) {
        return Err(Error::Domain { target, max });
    }
    let mut rng = seed::rng(seed);
    let mut probs = interpolate_to_target(target, num_classes, rng.random_range(0..num_classes));
    let u = 1.0 / num_classes as f64;

    for _ in 0..PERTURBATION_ROUNDS * num_classes {
        let a = rng.random_range(0..num_classes);
        let b = rng.random_range(0..num_classes);
        if a == b {
            continue;
        }
        // Gains a, loses b; both must keep their side of 1/C.
        let margin = if probs[a] < u && probs[b] < u {
            (u - probs[a]).min(probs[b])
        } else if probs[a] > u && probs[b] > u {
            probs[b] - u
        } else {
            continue;
        };
        let eps = 0.5 * margin * rng.random::<f64>();
        probs[a] += eps;
        probs[b] -= eps;
    }
    ClassDistribution::new(probs)
}

/// The unperturbed interpolation between uniform and a one-hot at `anchor`.
pub fn interpolate_to_target(target: f64, num_classes: usize, anchor: usize) -> Vec<f64> {
    let u = 1.0 / num_classes as f64;
    let t = if num_classes == 1 {
        0.0
    } else {
        (target / max_emd_to_uniform(num_classes)).clamp(0.0, 1.0)
    };
    (0..num_classes)
        .map(|i| (1.0 - t) * u + if i == anchor { t } else { 0.0 })
        .collect()
}
