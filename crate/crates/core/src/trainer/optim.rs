use std::collections::BTreeMap;

use crate::config::OptimConfig;
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};

/// Linear warm-up from 0 to `peak` over `warm_frac * total` steps, then
/// linear decay to 0 at `total`.
pub fn one_cycle_lr(step: usize, total: usize, peak: f64, warm_frac: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let s = step.min(total) as f64;
    let total = total as f64;
    let warm = warm_frac * total;
    if s < warm {
        peak * s / warm
    } else {
        peak * (total - s) / (total - warm)
    }
}

/// Alignment-group rate: the main schedule times `mult * rho^step`, with
/// `rho` halving the factor every `half_life * total` steps.
pub fn align_lr(step: usize, total: usize, cfg: &OptimConfig) -> f64 {
    let base = one_cycle_lr(step, total, cfg.peak_lr, cfg.warm_frac);
    base * align_factor(step, total, cfg)
}

pub fn align_factor(step: usize, total: usize, cfg: &OptimConfig) -> f64 {
    let half_life = (cfg.align_half_life * total as f64).max(f64::MIN_POSITIVE);
    cfg.align_lr_mult * 0.5f64.powf(step as f64 / half_life)
}

/// First and second moments plus the update counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamW {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

impl AdamW {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros: BTreeMap<String, Vec<f32>> =
            params.iter().map(|(k, t)| (k.to_string(), vec![0.0; t.numel()])).collect();
        AdamW {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One decoupled-weight-decay Adam update. Gradients are divided by
    /// `grad_scale` (the number of accumulated samples) and rescaled so their
    /// global norm is at most `cfg.grad_clip`; parameters without a gradient
    /// buffer are treated as having zero gradient.
    pub fn update(
        &mut self,
        params: &mut ParamStore<f32>,
        cfg: &OptimConfig,
        lr_main: f64,
        lr_align: f64,
        grad_scale: f64,
    ) -> Result<()> {
        for (name, t) in params.iter() {
            if let Some(g) = t.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGrad(name.to_string()));
                }
            }
        }
        let norm = params
            .iter()
            .filter_map(|(_, t)| t.grad())
            .flat_map(|g| g.iter())
            .map(|&v| (v as f64 / grad_scale).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            grad_scale * norm / cfg.grad_clip
        } else {
            grad_scale
        };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, p) in params.iter_mut() {
            let lr = match ParamGroup::of(name) {
                ParamGroup::Main => lr_main,
                ParamGroup::Alignment => lr_align,
            };
            let n = p.numel();
            let grad: Vec<f64> = match p.grad() {
                Some(g) => g.iter().map(|&v| v as f64 / scale).collect(),
                None => vec![0.0; n],
            };
            let m = self
                .m
                .get_mut(name)
                .ok_or_else(|| Error::contract(format!("no optimiser state for `{name}`")))?;
            let v = self.v.get_mut(name).expect("moments are created together");
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let step = (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
                let w0 = *w as f64;
                *w = (w0 - lr * cfg.weight_decay * w0 - lr * step) as f32;
            }
        }
        Ok(())
    }
}
