//! Adam with global-norm gradient clipping.

use std::collections::BTreeMap;

use mm_tensor::{GradMap, Param, Tensor};

use crate::error::{Result, TrainError};

/// Optimizer hyper-parameters. The values are harness defaults surfaced in
/// the config file, not tuned per task.
#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 1.0 }
    }
}

/// Per-parameter first/second moment accumulators plus the step count.
#[derive(Debug, Clone)]
pub struct OptState {
    pub config: AdamConfig,
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl OptState {
    pub fn new(config: AdamConfig) -> Self {
        OptState { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }
}

/// Clips all gradients to the configured global norm, then applies one
/// bias-corrected Adam update. Parameters absent from `grads` were not on
/// this step's graph (an unused modality net) and are skipped. A
/// non-finite gradient aborts with the offending parameter named.
pub fn adam_step(params: &mut [&mut Param], grads: &GradMap, opt: &mut OptState) -> Result<()> {
    // Validate and measure the global norm first.
    let mut sq_sum = 0.0;
    for p in params.iter() {
        let g = match grads.get(&p.name) {
            Some(g) => g,
            None => continue,
        };
        if g.shape() != p.value.shape() {
            return Err(TrainError::Invalid(format!(
                "gradient shape {:?} vs parameter {:?} for {:?}",
                g.shape(),
                p.value.shape(),
                p.name
            )));
        }
        for v in g.data() {
            if !v.is_finite() {
                return Err(TrainError::NonFinite(format!(
                    "gradient of {:?} contains NaN/Inf",
                    p.name
                )));
            }
            sq_sum += v * v;
        }
    }
    let global_norm = sq_sum.sqrt();
    let clip = opt.config.clip_norm;
    let scale = if clip > 0.0 && global_norm > clip { clip / global_norm } else { 1.0 };

    opt.step += 1;
    let t = opt.step;
    let (b1, b2) = (opt.config.beta1, opt.config.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let lr = opt.config.lr;
    let eps = opt.config.eps;

    for p in params.iter_mut() {
        let g = match grads.get(&p.name) {
            Some(g) => g,
            None => continue,
        };
        let n = p.value.numel();
        let m = opt.m.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = opt.v.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
        let mut new_data = p.value.data().to_vec();
        for i in 0..n {
            let gi = g.data()[i] * scale;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            new_data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        p.value = Tensor::new(p.value.shape(), new_data)
            .map_err(|e| TrainError::NonFinite(format!("update of {:?}: {e}", p.name)))?;
    }
    Ok(())
}

/// Scale factor that global-norm clipping would apply; exposed for tests.
pub fn clip_scale(grads: &GradMap, clip_norm: f64) -> f64 {
    let sq: f64 = grads
        .values()
        .flat_map(|t| t.data().iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if clip_norm > 0.0 && norm > clip_norm {
        clip_norm / norm
    } else {
        1.0
    }
}
