use serde::{Deserialize, Serialize};

use super::task::{random_inputs, TokenNorm};
use crate::attention::{ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rademacher::{gather_sensitivities, z_scaling_check, SensitivitySet, ZScalingReport};
use crate::rng;

/// Random-model study of how `‖Z‖_op` scales with sequence length.
///
/// `Z` is the sensitivity of the scalar model output to the attention matrix
/// of every layer and head (output gradient fixed at 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZScalingConfig {
    pub seq_lens: Vec<usize>,
    pub models: usize,
    pub inputs_per_model: usize,
    pub seed: u64,
    pub normalization: TokenNorm,
    /// Model width when `width_per_token` is unset.
    pub d_model: usize,
    /// If set, `d_model = d_k = d_v = width_per_token · n`.
    pub width_per_token: Option<usize>,
    pub num_layers: usize,
    pub num_heads: usize,
    /// `B` in the `B/√n` reference line.
    pub sens_scale: f64,
}

impl Default for ZScalingConfig {
    fn default() -> Self {
        ZScalingConfig {
            seq_lens: vec![4, 8, 16, 32],
            models: 8,
            inputs_per_model: 16,
            seed: 0,
            normalization: TokenNorm::UnitRows,
            d_model: 8,
            width_per_token: None,
            num_layers: 1,
            num_heads: 1,
            sens_scale: 1.0,
        }
    }
}

impl ZScalingConfig {
    pub fn spec_for(&self, n: usize) -> ModelSpec {
        let d = self.width_per_token.map_or(self.d_model, |w| w * n);
        ModelSpec {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            seq_len: n,
            d_model: d,
            d_k: d,
            d_v: d,
            mlp_hidden: 2 * d,
            output_dim: 1,
            ..ModelSpec::default()
        }
    }
}

/// Sensitivity sets, one per (n, model).
pub fn z_scaling_sets(cfg: &ZScalingConfig, exec: Execution) -> Result<Vec<SensitivitySet>> {
    if cfg.models == 0 || cfg.inputs_per_model == 0 {
        return Err(Error::domain("models and inputs_per_model must be positive"));
    }
    let jobs: Vec<(usize, usize)> = cfg
        .seq_lens
        .iter()
        .flat_map(|&n| (0..cfg.models).map(move |k| (n, k)))
        .collect();
    par::map(exec, &jobs, |&(n, k)| {
        let spec = cfg.spec_for(n);
        spec.validate()?;
        let seed = rng::split(rng::split(cfg.seed, n as u64), k as u64);
        let params = ModelParams::init(&spec, &mut rng::seeded(rng::split(seed, 0)));
        let inputs = random_inputs(n, spec.d_model, cfg.inputs_per_model, cfg.normalization, rng::split(seed, 1));
        let grads = vec![vec![1.0]; inputs.len()];
        let mut all = Vec::new();
        for layer in 0..spec.num_layers {
            for head in 0..spec.num_heads {
                let set = gather_sensitivities(&params, &spec, &inputs, &grads, layer, head, Execution::Sequential)?;
                all.extend(set.matrices().iter().cloned());
            }
        }
        SensitivitySet::new(all)
    })
    .into_iter()
    .collect()
}

pub fn z_scaling_experiment(cfg: &ZScalingConfig, exec: Execution) -> Result<ZScalingReport> {
    z_scaling_check(&z_scaling_sets(cfg, exec)?, cfg.sens_scale)
}
