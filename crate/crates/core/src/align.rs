//! Robust scale/offset alignment of monocular depth to human-prior depth.
//!
//! Inside the human mask the two depth sources are related by
//! `d_smpl ≈ s * d_mono + b`. Two-point RANSAC picks the consensus model,
//! least squares on the consensus set polishes it, and the result is applied
//! to the whole monocular map.

use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Smallest `|d_mono(i) - d_mono(j)|` accepted for a two-point sample.
pub const DEGENERATE_SPAN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    /// Inlier residual bound in meters.
    pub threshold: f64,
    pub iterations: usize,
    pub min_valid_pixels: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold: 0.001,
            iterations: 1000,
            min_valid_pixels: 50,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "RANSAC threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("RANSAC needs at least one iteration".into()));
        }
        Ok(())
    }

    /// Parameters for frame `index` of a sequence: same thresholds, seed forked
    /// from the sequence seed so frames can be aligned in any order.
    pub fn for_frame(&self, index: usize) -> RansacParams {
        RansacParams {
            seed: SeededRng::new(self.seed).fork(index as u64).seed(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub scale: f64,
    pub offset: f64,
    pub inlier_count: usize,
    /// Consensus set of the winning two-point model, over the extracted pairs.
    #[serde(skip)]
    pub inlier_mask: Vec<bool>,
}

impl LinearFit {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            offset: 0.0,
            inlier_count: 0,
            inlier_mask: Vec::new(),
        }
    }

    pub fn apply(&self, value: f64) -> f64 {
        self.scale * value + self.offset
    }
}

/// Co-valid `(d_mono, d_smpl)` pairs under `mask`, row-major.
pub fn extract_masked_pairs(
    d_mono: &DepthMap,
    d_smpl: &DepthMap,
    mask: &[bool],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !d_mono.same_shape(d_smpl) || mask.len() != d_mono.len() {
        return Err(Error::shape(format!(
            "mono {}x{}, smpl {}x{}, mask of {} entries",
            d_mono.width(),
            d_mono.height(),
            d_smpl.width(),
            d_smpl.height(),
            mask.len()
        )));
    }
    let (mono_valid, smpl_valid) = (d_mono.valid_mask(), d_smpl.valid_mask());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..mask.len() {
        if mask[i] && mono_valid[i] && smpl_valid[i] {
            xs.push(d_mono.values()[i]);
            ys.push(d_smpl.values()[i]);
        }
    }
    Ok((xs, ys))
}

#[derive(Clone, Copy)]
struct Candidate {
    scale: f64,
    offset: f64,
    count: usize,
    ssr: f64,
}

fn lane_count(xs: &[f64], ys: &[f64], scale: f64, offset: f64, threshold: f64) -> usize {
    // Fixed-width lanes keep the hot loop branch-free and vectorizable.
    const LANES: usize = 8;
    let mut lanes = [0u64; LANES];
    let (xc, yc) = (xs.chunks_exact(LANES), ys.chunks_exact(LANES));
    let tail: usize = xc
        .remainder()
        .iter()
        .zip(yc.remainder())
        .map(|(&x, &y)| usize::from((scale * x + offset - y).abs() <= threshold))
        .sum();
    for (xl, yl) in xc.zip(yc) {
        for k in 0..LANES {
            lanes[k] += u64::from((scale * xl[k] + offset - yl[k]).abs() <= threshold);
        }
    }
    lanes.iter().sum::<u64>() as usize + tail
}

/// Inlier count, or `None` as soon as the count can no longer reach `floor`.
fn inlier_count(
    xs: &[f64],
    ys: &[f64],
    scale: f64,
    offset: f64,
    threshold: f64,
    floor: usize,
) -> Option<usize> {
    const BLOCK: usize = 512;
    let mut count = 0;
    let mut remaining = xs.len();
    for (xb, yb) in xs.chunks(BLOCK).zip(ys.chunks(BLOCK)) {
        if count + remaining < floor {
            return None;
        }
        count += lane_count(xb, yb, scale, offset, threshold);
        remaining -= xb.len();
    }
    (count >= floor).then_some(count)
}

fn inlier_ssr(xs: &[f64], ys: &[f64], scale: f64, offset: f64, threshold: f64) -> f64 {
    const LANES: usize = 8;
    let mut lanes = [0.0f64; LANES];
    let (xc, yc) = (xs.chunks_exact(LANES), ys.chunks_exact(LANES));
    let sq = |x: f64, y: f64| {
        let r = scale * x + offset - y;
        if r.abs() <= threshold {
            r * r
        } else {
            0.0
        }
    };
    let tail: f64 = xc
        .remainder()
        .iter()
        .zip(yc.remainder())
        .map(|(&x, &y)| sq(x, y))
        .sum();
    for (xl, yl) in xc.zip(yc) {
        for k in 0..LANES {
            lanes[k] += sq(xl[k], yl[k]);
        }
    }
    lanes.iter().sum::<f64>() + tail
}

/// Two-point model through samples `i` and `j`, or `None` when the sample is
/// degenerate or implies a non-positive scale.
pub fn two_point_model(xs: &[f64], ys: &[f64], i: usize, j: usize) -> Option<(f64, f64)> {
    let dx = xs[j] - xs[i];
    if dx.abs() < DEGENERATE_SPAN {
        return None;
    }
    let scale = (ys[j] - ys[i]) / dx;
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    let offset = ys[i] - scale * xs[i];
    offset.is_finite().then_some((scale, offset))
}

fn least_squares(xs: &[f64], ys: &[f64], mask: &[bool]) -> Option<(f64, f64)> {
    let n = mask.iter().filter(|m| **m).count();
    if n < 2 {
        return None;
    }
    let pick = || {
        xs.iter()
            .zip(ys)
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(p, _)| p)
    };
    let mean_x = pick().map(|(x, _)| x).sum::<f64>() / n as f64;
    let mean_y = pick().map(|(_, y)| y).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in pick() {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    if sxx <= 0.0 {
        return None;
    }
    let scale = sxy / sxx;
    let offset = mean_y - scale * mean_x;
    (scale > 0.0 && scale.is_finite() && offset.is_finite()).then_some((scale, offset))
}

/// Fit `d_smpl ≈ scale * d_mono + offset` with two-point RANSAC.
///
/// The winner maximizes the inlier count; ties go to the smaller sum of
/// squared inlier residuals, then to the earlier iteration. The winner is
/// refit by ordinary least squares on its inliers (kept only if the refit
/// scale stays positive).
pub fn ransac_linear_fit(
    d_mono: &[f64],
    d_smpl: &[f64],
    params: &RansacParams,
) -> Result<LinearFit> {
    params.validate()?;
    if d_mono.len() != d_smpl.len() {
        return Err(Error::shape(format!(
            "pair vectors differ in length: {} vs {}",
            d_mono.len(),
            d_smpl.len()
        )));
    }
    let n = d_mono.len();
    let needed = params.min_valid_pixels.max(2);
    if n < needed {
        return Err(Error::InsufficientData { needed, got: n });
    }

    let mut rng = SeededRng::new(params.seed);
    let mut best: Option<Candidate> = None;
    for _ in 0..params.iterations {
        let i = rng.below(n as u64) as usize;
        let mut j = rng.below(n as u64 - 1) as usize;
        if j >= i {
            j += 1;
        }
        let Some((scale, offset)) = two_point_model(d_mono, d_smpl, i, j) else {
            continue;
        };
        let floor = best.as_ref().map_or(0, |b| b.count);
        let Some(count) = inlier_count(d_mono, d_smpl, scale, offset, params.threshold, floor)
        else {
            continue;
        };
        // The residual sum only matters for candidates that can win.
        let better = match &best {
            None => true,
            Some(b) if count > b.count => true,
            Some(b) => inlier_ssr(d_mono, d_smpl, scale, offset, params.threshold) < b.ssr,
        };
        if better {
            best = Some(Candidate {
                scale,
                offset,
                count,
                ssr: inlier_ssr(d_mono, d_smpl, scale, offset, params.threshold),
            });
        }
    }

    let best = best.ok_or(Error::NoModel)?;
    let inlier_mask: Vec<bool> = d_mono
        .iter()
        .zip(d_smpl)
        .map(|(&x, &y)| (best.scale * x + best.offset - y).abs() <= params.threshold)
        .collect();
    let (scale, offset) =
        least_squares(d_mono, d_smpl, &inlier_mask).unwrap_or((best.scale, best.offset));
    Ok(LinearFit {
        scale,
        offset,
        inlier_count: best.count,
        inlier_mask,
    })
}

/// `scale * depth + offset` on every valid pixel; results `<= 0` become invalid.
pub fn apply_alignment(depth: &DepthMap, fit: &LinearFit) -> DepthMap {
    depth.map_valid(|v| fit.apply(v))
}

/// Align one frame, using the SMPL validity mask as the human mask.
pub fn align_frame(
    d_mono: &DepthMap,
    d_smpl: &DepthMap,
    params: &RansacParams,
) -> Result<(DepthMap, LinearFit)> {
    let (xs, ys) = extract_masked_pairs(d_mono, d_smpl, d_smpl.valid_mask())?;
    let fit = ransac_linear_fit(&xs, &ys, params)?;
    Ok((apply_alignment(d_mono, &fit), fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(min_valid: usize) -> RansacParams {
        RansacParams {
            min_valid_pixels: min_valid,
            ..RansacParams::default()
        }
    }

    #[test]
    fn masked_pairs_edge_cases() {
        let a = DepthMap::from_values(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DepthMap::from_values(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let (x, y) = extract_masked_pairs(&a, &b, &[false; 4]).unwrap();
        assert!(x.is_empty() && y.is_empty());
        let (x, y) = extract_masked_pairs(&a, &b, &[true; 4]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(y, vec![5.0, 6.0, 7.0, 8.0]);
        assert!(extract_masked_pairs(&a, &b, &[true; 3]).is_err());
    }

    #[test]
    fn checkerboard_mask_picks_eight() {
        let values: Vec<f64> = (1..=16).map(f64::from).collect();
        let a = DepthMap::from_values(4, 4, values.clone()).unwrap();
        let mask: Vec<bool> = (0..16).map(|i| (i / 4 + i % 4) % 2 == 0).collect();
        let (x, _) = extract_masked_pairs(&a, &a, &mask).unwrap();
        // Row-major indices 0,2,5,7,8,10,13,15 hold values index + 1.
        assert_eq!(x, vec![1.0, 3.0, 6.0, 8.0, 9.0, 11.0, 14.0, 16.0]);
    }

    #[test]
    fn two_points_solve_exactly() {
        let fit = ransac_linear_fit(&[1.0, 2.0], &[3.0, 5.0], &params(2)).unwrap();
        assert_eq!((fit.scale, fit.offset, fit.inlier_count), (2.0, 1.0, 2));
    }

    #[test]
    fn identity_data_gives_identity_fit() {
        let xs: Vec<f64> = (0..10).map(|i| 1.0 + 0.37 * i as f64).collect();
        let fit = ransac_linear_fit(&xs, &xs, &params(2)).unwrap();
        assert_eq!(fit.scale, 1.0);
        assert_eq!(fit.offset, 0.0);
        assert_eq!(fit.inlier_count, 10);
    }

    #[test]
    fn insufficient_and_degenerate() {
        let err = ransac_linear_fit(&[1.0], &[1.0], &params(2)).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { needed: 2, got: 1 }));
        let err = ransac_linear_fit(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0], &params(2)).unwrap_err();
        assert!(matches!(err, Error::NoModel));
        // Negative slope is never admissible.
        let err = ransac_linear_fit(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], &params(2)).unwrap_err();
        assert!(matches!(err, Error::NoModel));
    }

    #[test]
    fn apply_alignment_cases() {
        let d = DepthMap::from_values(2, 1, vec![3.0, 2.0]).unwrap();
        assert_eq!(apply_alignment(&d, &LinearFit::identity()), d);
        let fit = LinearFit {
            scale: 2.0,
            offset: 0.5,
            ..LinearFit::identity()
        };
        assert_eq!(apply_alignment(&d, &fit).get(0, 0), Some(6.5));
        let fit = LinearFit {
            scale: 0.1,
            offset: -1.0,
            ..LinearFit::identity()
        };
        let out = apply_alignment(&d, &fit);
        assert!(!out.is_valid(1, 0));
        assert_eq!(out.get(1, 0), None);
    }

    #[test]
    fn one_pixel_mask_is_insufficient() {
        let mono = DepthMap::filled(3, 3, 2.0).unwrap();
        let mut smpl = DepthMap::invalid(3, 3).unwrap();
        smpl.set(1, 1, 2.0);
        assert!(matches!(
            align_frame(&mono, &smpl, &RansacParams::default()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn frame_seeds_differ() {
        let p = RansacParams::default();
        assert_ne!(p.for_frame(0).seed, p.for_frame(1).seed);
        assert_eq!(p.for_frame(3), p.for_frame(3));
    }
}
