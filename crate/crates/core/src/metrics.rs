//! Disparity error statistics over the valid pixels of a prediction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Thresholds of the bad-pixel rates, in pixels.
pub const BAD_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 3.0];

/// Column header of [`MetricsReport::csv_row`].
pub const CSV_HEADER: &str = "id,n_valid,epe,bad0.5,bad1.0,bad2.0,bad3.0,avgerr,a90,d1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean absolute error in pixels.
    pub epe: f64,
    /// Percentages of errors above each of [`BAD_THRESHOLDS`].
    pub bad: [f64; 4],
    pub avgerr: f64,
    /// 90th percentile of the absolute error.
    pub a90: f64,
    /// Percentage with error above 3 px and above 5 % of the ground truth.
    pub d1: f64,
    pub n_valid: usize,
}

/// Absolute errors and ground-truth values at the valid pixels.
pub fn pixel_errors(pred: &Tensor<f32>, gt: &Tensor<f32>, valid: &Tensor<f32>) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.shape() != gt.shape() || gt.shape() != valid.shape() {
        return Err(Error::contract(format!(
            "metric inputs differ in shape: pred {:?}, gt {:?}, valid {:?}",
            pred.shape(),
            gt.shape(),
            valid.shape()
        )));
    }
    let mut err = Vec::new();
    let mut g = Vec::new();
    for ((&p, &t), &v) in pred.data().iter().zip(gt.data()).zip(valid.data()) {
        if v != 0.0 {
            err.push((p as f64 - t as f64).abs());
            g.push(t as f64);
        }
    }
    Ok((err, g))
}

/// Linear interpolation between the closest ranks of the sorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

impl MetricsReport {
    pub fn from_errors(err: &[f64], gt: &[f64]) -> Result<Self> {
        if err.is_empty() {
            return Err(Error::EmptyReduction("evaluate: no valid pixels"));
        }
        let n = err.len() as f64;
        let pct = |count: usize| 100.0 * count as f64 / n;
        let epe = err.iter().sum::<f64>() / n;
        let bad = BAD_THRESHOLDS.map(|t| pct(err.iter().filter(|&&e| e > t).count()));
        let d1 = pct(err.iter().zip(gt).filter(|(&e, &t)| e > 3.0 && e > 0.05 * t).count());
        Ok(MetricsReport {
            epe,
            bad,
            avgerr: epe,
            a90: percentile(err, 0.9),
            d1,
            n_valid: err.len(),
        })
    }

    pub fn csv_row(&self, id: &str) -> String {
        let mut s = format!("{id},{},{:.6}", self.n_valid, self.epe);
        for b in self.bad {
            let _ = write!(s, ",{b:.6}");
        }
        let _ = write!(s, ",{:.6},{:.6},{:.6}", self.avgerr, self.a90, self.d1);
        s
    }
}

pub fn evaluate(pred: &Tensor<f32>, gt: &Tensor<f32>, valid: &Tensor<f32>) -> Result<MetricsReport> {
    let (err, g) = pixel_errors(pred, gt, valid)?;
    MetricsReport::from_errors(&err, &g)
}

/// Pixel-weighted combination of per-image reports. With `pooled_errors`
/// the A90 is recomputed from all errors, otherwise it is the weighted
/// mean of the per-image values.
pub fn aggregate(reports: &[MetricsReport], pooled_errors: Option<&[f64]>) -> Result<MetricsReport> {
    let total: usize = reports.iter().map(|r| r.n_valid).sum();
    if reports.is_empty() || total == 0 {
        return Err(Error::EmptyReduction("aggregate"));
    }
    let wmean = |f: &dyn Fn(&MetricsReport) -> f64| {
        reports.iter().map(|r| f(r) * r.n_valid as f64).sum::<f64>() / total as f64
    };
    let a90 = match pooled_errors {
        Some(e) if !e.is_empty() => percentile(e, 0.9),
        Some(_) => return Err(Error::EmptyReduction("aggregate: pooled errors")),
        None => wmean(&|r| r.a90),
    };
    Ok(MetricsReport {
        epe: wmean(&|r| r.epe),
        bad: [0, 1, 2, 3].map(|i| wmean(&|r| r.bad[i])),
        avgerr: wmean(&|r| r.avgerr),
        a90,
        d1: wmean(&|r| r.d1),
        n_valid: total,
    })
}
