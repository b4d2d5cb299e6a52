//! Confidence-weighted pointmap regression loss.
//!
//! Per co-valid pixel `p` with confidence `C = 1 + exp(c)`:
//! `C * |pred/z - gt/z_bar| - alpha * ln C`, summed over pixels.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{CropRect, PointMap};
use crate::resample::Raster;

pub const DEFAULT_ALPHA: f64 = 0.2;

/// Raw (unconstrained) confidence logits, one per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    width: usize,
    height: usize,
    raw: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(width: usize, height: usize, raw: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || raw.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} confidence map with {} entries",
                raw.len()
            )));
        }
        if raw.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("confidence logits".into()));
        }
        Ok(Self { width, height, raw })
    }

    pub fn filled(width: usize, height: usize, raw: f64) -> Result<Self> {
        Self::new(width, height, vec![raw; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// `C = 1 + exp(raw)` at flat index `i`.
    pub fn confidence(&self, i: usize) -> f64 {
        1.0 + self.raw[i].exp()
    }

    pub fn crop(&self, rect: &CropRect) -> Result<ConfidenceMap> {
        rect.check_inside(self.width, self.height)?;
        let mut raw = Vec::with_capacity(rect.area());
        for y in rect.y0..rect.y1() {
            raw.extend_from_slice(&self.raw[y * self.width + rect.x0..y * self.width + rect.x1()]);
        }
        Self::new(rect.width, rect.height, raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParams {
    pub alpha: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl LossParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!(
                "loss alpha must be >= 0, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }
}

/// Summed loss plus the number of pixels it was summed over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossValue {
    pub value: f64,
    pub pixel_count: usize,
}

impl LossValue {
    pub fn mean(&self) -> f64 {
        self.value / self.pixel_count as f64
    }
}

/// Gradients of the summed loss. Entries at pixels that do not contribute are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub pred: Vec<[f64; 3]>,
    pub raw_conf: Vec<f64>,
}

/// Mean Euclidean norm of all valid points across `pms`.
pub fn norm_factor(pms: &[&PointMap]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for pm in pms {
        for (p, ok) in pm.points().iter().zip(pm.valid_mask()) {
            if *ok {
                sum += norm(p);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("no valid points to normalize".into()));
    }
    let z = sum / count as f64;
    if z <= 0.0 {
        return Err(Error::InvalidData(
            "all valid points sit at the origin".into(),
        ));
    }
    Ok(z)
}

fn norm(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn check_inputs(
    pred: &PointMap,
    gt: &PointMap,
    conf: &ConfidenceMap,
    z: f64,
    z_bar: f64,
) -> Result<()> {
    if !pred.same_shape(gt) || conf.width != pred.width() || conf.height != pred.height() {
        return Err(Error::shape(format!(
            "pred {}x{}, gt {}x{}, confidence {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
            conf.width,
            conf.height
        )));
    }
    if !(z > 0.0 && z.is_finite() && z_bar > 0.0 && z_bar.is_finite()) {
        return Err(Error::InvalidData(format!(
            "normalization factors must be positive, got z={z} z_bar={z_bar}"
        )));
    }
    Ok(())
}

pub fn confidence_loss(
    pred: &PointMap,
    gt: &PointMap,
    conf: &ConfidenceMap,
    params: &LossParams,
    z: f64,
    z_bar: f64,
) -> Result<LossValue> {
    confidence_loss_impl(pred, gt, conf, params, z, z_bar, None)
}

pub fn confidence_loss_with_grad(
    pred: &PointMap,
    gt: &PointMap,
    conf: &ConfidenceMap,
    params: &LossParams,
    z: f64,
    z_bar: f64,
) -> Result<(LossValue, LossGrads)> {
    let mut grads = LossGrads {
        pred: vec![[0.0; 3]; pred.len()],
        raw_conf: vec![0.0; pred.len()],
    };
    let value = confidence_loss_impl(pred, gt, conf, params, z, z_bar, Some(&mut grads))?;
    Ok((value, grads))
}

fn confidence_loss_impl(
    pred: &PointMap,
    gt: &PointMap,
    conf: &ConfidenceMap,
    params: &LossParams,
    z: f64,
    z_bar: f64,
    mut grads: Option<&mut LossGrads>,
) -> Result<LossValue> {
    check_inputs(pred, gt, conf, z, z_bar)?;
    let mut value = 0.0;
    let mut pixel_count = 0;
    let (pv, gv) = (pred.valid_mask(), gt.valid_mask());
    for i in 0..pred.len() {
        if !(pv[i] && gv[i]) {
            continue;
        }
        let (p, g) = (pred.points()[i], gt.points()[i]);
        let r = [
            p[0] / z - g[0] / z_bar,
            p[1] / z - g[1] / z_bar,
            p[2] / z - g[2] / z_bar,
        ];
        let n = norm(&r);
        let c = conf.confidence(i);
        value += c * n - params.alpha * c.ln();
        pixel_count += 1;
        if let Some(grads) = grads.as_deref_mut() {
            if n > 0.0 {
                let k = c / (n * z);
                grads.pred[i] = [k * r[0], k * r[1], k * r[2]];
            }
            grads.raw_conf[i] = (n - params.alpha / c) * conf.raw[i].exp();
        }
    }
    if pixel_count == 0 {
        return Err(Error::EmptyInput(
            "no pixel is valid in both pred and gt".into(),
        ));
    }
    Ok(LossValue { value, pixel_count })
}

/// Global and crop loss terms sharing one pair of normalization factors,
/// both computed from the global maps.
#[derive(Debug)]
pub struct SharedNormLoss {
    pub z: f64,
    pub z_bar: f64,
    pub global: LossValue,
    /// Crop failures (e.g. an empty crop) do not affect the global term.
    pub crop: Result<LossValue>,
}

#[allow(clippy::too_many_arguments)]
pub fn loss_with_shared_norm(
    global_pred: &PointMap,
    global_gt: &PointMap,
    global_conf: &ConfidenceMap,
    crop_pred: &PointMap,
    crop_gt: &PointMap,
    crop_conf: &ConfidenceMap,
    params: &LossParams,
) -> Result<SharedNormLoss> {
    let z = norm_factor(&[global_pred])?;
    let z_bar = norm_factor(&[global_gt])?;
    let global = confidence_loss(global_pred, global_gt, global_conf, params, z, z_bar)?;
    let crop = confidence_loss(crop_pred, crop_gt, crop_conf, params, z, z_bar);
    Ok(SharedNormLoss {
        z,
        z_bar,
        global,
        crop,
    })
}

/// Convenience for the common case where the crop comes from the global maps.
pub fn crop_inputs(
    pred: &PointMap,
    gt: &PointMap,
    conf: &ConfidenceMap,
    rect: &CropRect,
) -> Result<(PointMap, PointMap, ConfidenceMap)> {
    Ok((pred.crop(rect)?, gt.crop(rect)?, conf.crop(rect)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: [f64; 3]) -> PointMap {
        PointMap::from_points(1, 1, vec![p]).unwrap()
    }

    #[test]
    fn norm_factor_cases() {
        assert_eq!(norm_factor(&[&single([0.0, 0.0, 2.0])]).unwrap(), 2.0);
        let pm = PointMap::from_points(2, 1, vec![[3.0, 0.0, 4.0], [0.0, 0.0, 5.0]]).unwrap();
        assert_eq!(norm_factor(&[&pm]).unwrap(), 5.0);
        assert!(matches!(
            norm_factor(&[&PointMap::invalid(2, 2).unwrap()]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn hand_case() {
        // Origin gt is not admissible (z = 0), so build gt as the shifted
        // pair pred=(1,0,1), gt=(0,0,1): same residual (1,0,0).
        let pred = single([1.0, 0.0, 1.0]);
        let gt = single([0.0, 0.0, 1.0]);
        let conf = ConfidenceMap::filled(1, 1, 0.0).unwrap();
        let l =
            confidence_loss(&pred, &gt, &conf, &LossParams::new(0.2).unwrap(), 1.0, 1.0).unwrap();
        assert!((l.value - 1.861_370_563_888_011).abs() < 1e-14);
        assert_eq!(l.pixel_count, 1);
    }

    #[test]
    fn zero_residual_cases() {
        let gt = PointMap::from_points(2, 1, vec![[0.5, -0.2, 2.0], [1.0, 1.0, 3.0]]).unwrap();
        let conf = ConfidenceMap::filled(2, 1, 0.0).unwrap();
        let p0 = LossParams::new(0.0).unwrap();
        assert_eq!(
            confidence_loss(&gt, &gt, &conf, &p0, 1.0, 1.0)
                .unwrap()
                .value,
            0.0
        );
        let pred = gt.scaled(3.0);
        let any = ConfidenceMap::new(2, 1, vec![-1.0, 2.5]).unwrap();
        assert!(
            confidence_loss(&pred, &gt, &any, &p0, 3.0, 1.0)
                .unwrap()
                .value
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn invalid_pixels_are_ignored() {
        let pred = PointMap::new(
            2,
            1,
            vec![[0.0, 0.0, 1.0], [9.0, 9.0, 9.0]],
            vec![true, true],
        )
        .unwrap();
        let mut gt = pred.clone();
        gt.invalidate(1, 0);
        let conf = ConfidenceMap::filled(2, 1, 0.3).unwrap();
        let (l, g) =
            confidence_loss_with_grad(&pred, &gt, &conf, &LossParams::default(), 1.0, 2.0).unwrap();
        assert_eq!(l.pixel_count, 1);
        assert_eq!(g.pred[1], [0.0; 3]);
        assert_eq!(g.raw_conf[1], 0.0);
        assert!(confidence_loss(
            &PointMap::invalid(2, 1).unwrap(),
            &gt,
            &conf,
            &LossParams::default(),
            1.0,
            1.0
        )
        .is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let pm = single([0.0, 0.0, 1.0]);
        let conf = ConfidenceMap::filled(1, 1, 0.0).unwrap();
        assert!(confidence_loss(&pm, &pm, &conf, &LossParams::default(), 0.0, 1.0).is_err());
        assert!(confidence_loss(
            &pm,
            &pm,
            &ConfidenceMap::filled(2, 1, 0.0).unwrap(),
            &LossParams::default(),
            1.0,
            1.0
        )
        .is_err());
        assert!(LossParams::new(-0.1).is_err());
    }
}
