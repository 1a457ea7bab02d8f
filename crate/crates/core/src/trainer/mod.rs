//! Loss assembly, schedules, the AdamW optimiser, checkpoints and the
//! training loop.

pub mod checkpoint;
pub mod optim;
mod run;

pub use checkpoint::Checkpoint;
pub use optim::{align_lr, one_cycle_lr, AdamW};
pub use run::{probe_epe, train, StepRecord, TrainOutcome, CHECKPOINT_FILE, LAST_GOOD_FILE, LOG_FILE};

use crate::autograd::{Element, Graph, LossKind, Var};
use crate::error::{Error, Result};

/// Weight `gamma^(n - 1 - i)` of iteration `i` (0-based) out of `n`.
pub fn iteration_weight(gamma: f64, n: usize, i: usize) -> f64 {
    gamma.powi((n - 1 - i) as i32)
}

/// Weight `gamma^(4 - j)` of block `j` (1-based).
pub fn block_weight(gamma: f64, j: usize) -> f64 {
    gamma.powi(4 - j as i32)
}

/// `sum_i gamma^(N - i) * l1_i` over 1-based iterations.
pub fn prediction_loss_value(per_iter: &[f64], gamma: f64) -> f64 {
    let n = per_iter.len();
    per_iter
        .iter()
        .enumerate()
        .map(|(i, &l)| iteration_weight(gamma, n, i) * l)
        .sum()
}

/// `l_p + sum_j gamma^(4 - j) * kd_j`.
pub fn total_loss_value(l_p: f64, kd_blocks: [f64; 3], gamma_kd: f64) -> f64 {
    l_p + kd_blocks
        .iter()
        .enumerate()
        .map(|(j, &k)| block_weight(gamma_kd, j + 1) * k)
        .sum::<f64>()
}

/// Masked L1 of every prediction and their decayed sum.
pub fn prediction_loss<S: Element>(
    g: &mut Graph<S>,
    preds: &[Var],
    gt: Var,
    valid: &[S],
    gamma: f64,
) -> Result<(Vec<Var>, Var)> {
    if preds.is_empty() {
        return Err(Error::contract("prediction loss needs at least one prediction"));
    }
    let n = preds.len();
    let mut per_iter = Vec::with_capacity(n);
    let mut total: Option<Var> = None;
    for (i, &p) in preds.iter().enumerate() {
        let l = g.loss(LossKind::L1, p, gt, Some(valid))?;
        per_iter.push(l);
        let term = g.scale(l, iteration_weight(gamma, n, i))?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok((per_iter, total.unwrap()))
}

/// Adds the decayed block distillation terms that are present.
pub fn total_loss<S: Element>(g: &mut Graph<S>, l_p: Var, kd_blocks: &[Option<Var>], gamma_kd: f64) -> Result<Var> {
    if kd_blocks.len() != 3 {
        return Err(Error::contract(format!("expected 3 block KD terms, got {}", kd_blocks.len())));
    }
    let mut total = l_p;
    for (j, kd) in kd_blocks.iter().enumerate() {
        if let Some(k) = kd {
            let term = g.scale(*k, block_weight(gamma_kd, j + 1))?;
            total = g.add(total, term)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decayed_sums() {
        assert!((prediction_loss_value(&[1.0, 0.5], 0.9) - 1.4).abs() < 1e-15);
        assert_eq!(prediction_loss_value(&[0.7], 0.9), 0.7);
        assert!((total_loss_value(1.0, [1.0; 3], 0.9) - 3.439).abs() < 1e-15);
        assert_eq!(total_loss_value(2.0, [0.0; 3], 0.9), 2.0);
        assert_eq!(total_loss_value(2.0, [5.0; 3], 0.0), 2.0);
    }

    #[test]
    fn deeper_blocks_weigh_more() {
        assert!(block_weight(0.9, 3) > block_weight(0.9, 1));
        assert_eq!(block_weight(0.9, 3), 0.9);
    }
}
