use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub total: f64,
    pub per_layer: Vec<(String, f64)>,
}

/// `‖w_fed − w_ref‖ / ‖w_ref‖`, over the whole flattened model and for
/// each layer (weights and bias together).
pub fn weight_divergence(w_fed: &ModelParams, w_ref: &ModelParams) -> Result<DivergenceReport> {
    let diff = w_fed.difference(w_ref)?;
    let ref_norm = w_ref.norm();
    if ref_norm == 0.0 {
        return Err(Error::DegenerateReference("whole model".into()));
    }
    let per_layer = w_ref
        .layer_names()
        .into_iter()
        .zip(diff.layers().iter().zip(w_ref.layers()))
        .map(|(name, (d, r))| {
            let n = r.norm();
            if n == 0.0 {
                Err(Error::DegenerateReference(name))
            } else {
                Ok((name, d.norm() / n))
            }
        })
        .collect::<Result<_>>()?;
    Ok(DivergenceReport {
        total: diff.norm() / ref_norm,
        per_layer,
    })
}
