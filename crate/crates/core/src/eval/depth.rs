use serde::Serialize;

use crate::depth::DepthMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub delta_125: f64,
    pub log_rmse: f64,
    pub pixel_count: usize,
    /// Scale applied to the predictions before the metrics (1 when prealigned).
    pub scale: f64,
}

impl DepthMetrics {
    /// `abs_rel,delta_125,log_rmse` in table column order.
    pub fn csv_header() -> &'static str {
        "abs_rel,delta_125,log_rmse"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.abs_rel, self.delta_125, self.log_rmse)
    }
}

fn check_sequences(pred: &[DepthMap], gt: &[DepthMap]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("empty depth sequence".into()));
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if !p.same_shape(g) {
            return Err(Error::shape(format!(
                "frame {i}: prediction {}x{} vs ground truth {}x{}",
                p.width(),
                p.height(),
                g.width(),
                g.height()
            )));
        }
    }
    Ok(())
}

/// Co-valid `(pred, gt)` values across the whole sequence, frame by frame in
/// row-major order.
fn co_valid<'a>(pred: &'a [DepthMap], gt: &'a [DepthMap]) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.iter().zip(gt).flat_map(|(p, g)| {
        (0..p.len())
            .filter(|&i| p.valid_mask()[i] && g.valid_mask()[i])
            .map(|i| (p.values()[i], g.values()[i]))
    })
}

/// Median of `values`; the mean of the two middle values for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// One scale for the whole sequence: the median of `gt / pred` over all
/// co-valid pixels.
pub fn align_depth_scale(pred: &[DepthMap], gt: &[DepthMap]) -> Result<f64> {
    check_sequences(pred, gt)?;
    let mut ratios: Vec<f64> = co_valid(pred, gt).map(|(p, g)| g / p).collect();
    median(&mut ratios).ok_or_else(|| Error::EmptyInput("no co-valid pixels to align".into()))
}

pub fn depth_metrics(pred: &[DepthMap], gt: &[DepthMap], prealigned: bool) -> Result<DepthMetrics> {
    check_sequences(pred, gt)?;
    let scale = if prealigned {
        1.0
    } else {
        align_depth_scale(pred, gt)?
    };
    let (mut abs_rel, mut inliers, mut sq_log, mut n) = (0.0, 0usize, 0.0, 0usize);
    for (p, g) in co_valid(pred, gt) {
        if !(g > 0.0) {
            return Err(Error::InvalidData(format!(
                "non-positive ground-truth depth {g}"
            )));
        }
        let p = p * scale;
        abs_rel += (p - g).abs() / g;
        if (p / g).max(g / p) < 1.25 {
            inliers += 1;
        }
        sq_log += (p.ln() - g.ln()).powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("no co-valid pixels to evaluate".into()));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / nf,
        delta_125: inliers as f64 / nf,
        log_rmse: (sq_log / nf).sqrt(),
        pixel_count: n,
        scale,
    })
}
