use serde::{Deserialize, Serialize};

use super::model::{init_adapter, AdaptedEncoder, AdapterKind, AdapterSpec};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numeric::ParamSet;

/// Parameter counts of an adapted encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBudget {
    pub backbone: usize,
    pub adapters: Vec<(AdapterKind, usize)>,
    pub fusion: usize,
    /// (adapters + fusion) / backbone
    pub ratio: f64,
}

impl ParamBudget {
    pub fn extra(&self) -> usize {
        self.adapters.iter().map(|(_, n)| n).sum::<usize>() + self.fusion
    }
}

/// `L * (2 d b + b + d)`: down and up projections plus both biases.
pub fn adapter_param_count(dim: usize, layers: usize, bottleneck: usize) -> usize {
    layers * (2 * dim * bottleneck + bottleneck + dim)
}

/// `L * 3 d^2` for the query, key and value projections.
pub fn fusion_param_count(dim: usize, layers: usize) -> usize {
    layers * 3 * dim * dim
}

fn backbone_param_count(c: &EncoderConfig) -> usize {
    let (d, f) = (c.dim, c.ff_dim);
    let per_layer = 4 * d * d + 4 * d + 2 * 2 * d + d * f + f + f * d + d;
    c.vocab_size * d + c.max_len * d + c.vocab_size + c.layers * per_layer + 2 * d
}

/// Closed-form counts for the model's declared structure.
pub fn param_counts(model: &AdaptedEncoder) -> ParamBudget {
    let c = model.config();
    let backbone = backbone_param_count(c);
    let adapters: Vec<(AdapterKind, usize)> = model
        .adapters()
        .iter()
        .map(|a| (a.kind, adapter_param_count(c.dim, c.layers, a.bottleneck)))
        .collect();
    let fusion = if model.has_fusion() { fusion_param_count(c.dim, c.layers) } else { 0 };
    let extra = adapters.iter().map(|(_, n)| n).sum::<usize>() + fusion;
    ParamBudget { backbone, adapters, fusion, ratio: extra as f64 / backbone as f64 }
}

/// Largest bottleneck whose adapter fits in `reference` parameters.
pub fn large_bottleneck(reference: usize, dim: usize, layers: usize) -> Result<usize> {
    let per_layer = reference / layers.max(1);
    let b = per_layer.saturating_sub(dim) / (2 * dim + 1);
    if layers == 0 || b == 0 {
        return Err(Error::Config(format!("budget of {reference} parameters cannot hold a bottleneck of 1")));
    }
    Ok(b)
}

/// A single adapter sized to match `reference` parameters as closely as
/// possible from below.
pub fn make_large_adapter(reference: usize, dim: usize, layers: usize, seed: u64) -> Result<(AdapterSpec, ParamSet)> {
    let b = large_bottleneck(reference, dim, layers)?;
    let params = init_adapter(AdapterKind::LARGE, dim, layers, b, seed)?;
    Ok((AdapterSpec { kind: AdapterKind::LARGE, bottleneck: b }, params))
}
