//! Pinhole geometry between depth maps and pointmaps, plus the human
//! bounding box and refinement trigger derived from the SMPL depth.

use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::error::{Error, Result};

/// Pinhole intrinsics with square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(focal: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite()) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidData(format!(
                "intrinsics need a positive focal and finite principal point, got f={focal} c=({cx}, {cy})"
            )));
        }
        Ok(Self { focal, cx, cy })
    }

    /// Intrinsics of a crop: same focal, principal point shifted by the crop origin.
    pub fn cropped(&self, rect: &CropRect) -> Self {
        Self {
            focal: self.focal,
            cx: self.cx - rect.x0 as f64,
            cy: self.cy - rect.y0 as f64,
        }
    }
}

/// Axis-aligned pixel rectangle; `(x0, y0)` is the inclusive top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRect(format!(
                "{width}x{height} rect is empty"
            )));
        }
        Ok(Self {
            x0,
            y0,
            width,
            height,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            width,
            height,
        }
    }

    pub fn x1(&self) -> usize {
        self.x0 + self.width
    }

    pub fn y1(&self) -> usize {
        self.y0 + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1()).contains(&x) && (self.y0..self.y1()).contains(&y)
    }

    pub fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.x1() > width || self.y1() > height {
            return Err(Error::InvalidRect(format!(
                "rect ({}, {}, {}, {}) does not fit a {width}x{height} grid",
                self.x0, self.y0, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Camera-frame 3D point per pixel, with validity mask. Valid points have
/// finite coordinates and `z > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMap {
    width: usize,
    height: usize,
    points: Vec<[f64; 3]>,
    valid: Vec<bool>,
}

fn admissible(p: &[f64; 3]) -> bool {
    p.iter().all(|c| c.is_finite()) && p[2] > 0.0
}

impl PointMap {
    /// Invalid pixels are stored as the origin regardless of the point passed in.
    pub fn new(
        width: usize,
        height: usize,
        mut points: Vec<[f64; 3]>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("pointmap must be at least 1x1"));
        }
        if points.len() != width * height || valid.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} pointmap needs {} points and mask entries",
                width * height
            )));
        }
        if let Some(i) = (0..points.len()).find(|&i| valid[i] && !admissible(&points[i])) {
            return Err(Error::InvalidData(format!(
                "valid point {i} is {:?}; needs finite coordinates and z > 0",
                points[i]
            )));
        }
        for (p, ok) in points.iter_mut().zip(&valid) {
            if !ok {
                *p = [0.0; 3];
            }
        }
        Ok(Self {
            width,
            height,
            points,
            valid,
        })
    }

    /// Validity inferred per point (finite with `z > 0`).
    pub fn from_points(width: usize, height: usize, points: Vec<[f64; 3]>) -> Result<Self> {
        let valid = points.iter().map(admissible).collect();
        Self::new(width, height, points, valid)
    }

    pub fn invalid(width: usize, height: usize) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![[0.0; 3]; width * height],
            vec![false; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> Option<[f64; 3]> {
        let i = self.index(x, y);
        self.valid[i].then(|| self.points[i])
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[self.index(x, y)]
    }

    /// Store a point; inadmissible points are stored but marked invalid.
    pub fn set(&mut self, x: usize, y: usize, p: [f64; 3]) {
        let i = self.index(x, y);
        self.valid[i] = admissible(&p);
        self.points[i] = if self.valid[i] { p } else { [0.0; 3] };
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = self.index(x, y);
        self.valid[i] = false;
        self.points[i] = [0.0; 3];
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_shape(&self, other: &PointMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Every point multiplied by `alpha`; validity kept where still admissible.
    pub fn scaled(&self, alpha: f64) -> PointMap {
        let mut out = self.clone();
        for (p, v) in out.points.iter_mut().zip(out.valid.iter_mut()) {
            *p = [p[0] * alpha, p[1] * alpha, p[2] * alpha];
            *v = *v && admissible(p);
            if !*v {
                *p = [0.0; 3];
            }
        }
        out
    }

    /// The z channel as a depth map.
    pub fn depth(&self) -> DepthMap {
        let values = self.points.iter().map(|p| p[2]).collect();
        DepthMap::new(self.width, self.height, values, self.valid.clone())
            .expect("valid points have positive z")
    }
}

/// Grayscale intensity image; every pixel is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} image with {} values",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Lift every valid depth pixel `(u, v, z)` to `((u - cx) z / f, (v - cy) z / f, z)`.
pub fn unproject(depth: &DepthMap, k: &Intrinsics) -> PointMap {
    let (w, h) = (depth.width(), depth.height());
    let mut points = vec![[0.0; 3]; w * h];
    let mut valid = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let i = depth.index(u, v);
            if let Some(z) = depth.get(u, v) {
                points[i] = [
                    (u as f64 - k.cx) * z / k.focal,
                    (v as f64 - k.cy) * z / k.focal,
                    z,
                ];
                valid[i] = true;
            }
        }
    }
    PointMap::new(w, h, points, valid).expect("unprojected points are admissible")
}

/// Grid-aligned inverse of [`unproject`]: the depth at each cell is the z of
/// the point stored there. No scatter, so no intrinsics are needed.
pub fn project(pm: &PointMap) -> DepthMap {
    pm.depth()
}

/// Tight box around the valid SMPL pixels, padded on every side by
/// `ceil(margin_fraction * max_side)` pixels and clamped to the image.
pub fn bbox_from_smpl(d_smpl: &DepthMap, margin_fraction: f64) -> Result<CropRect> {
    if !(margin_fraction >= 0.0 && margin_fraction.is_finite()) {
        return Err(Error::InvalidData(format!(
            "margin fraction must be >= 0, got {margin_fraction}"
        )));
    }
    let (w, h) = (d_smpl.width(), d_smpl.height());
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..h {
        for x in 0..w {
            if d_smpl.is_valid(x, y) {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    let (x0, y0, x1, y1) = bounds.ok_or(Error::EmptyHuman)?;
    let max_side = (x1 - x0 + 1).max(y1 - y0 + 1);
    let pad = (margin_fraction * max_side as f64).ceil() as usize;
    let x0 = x0.saturating_sub(pad);
    let y0 = y0.saturating_sub(pad);
    let x1 = (x1 + pad).min(w - 1);
    let y1 = (y1 + pad).min(h - 1);
    CropRect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}

/// True when the human covers less than `area_threshold` of the image.
pub fn refinement_trigger(d_smpl: &DepthMap, area_threshold: f64) -> bool {
    let coverage = d_smpl.valid_count() as f64 / d_smpl.len() as f64;
    coverage < area_threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> Intrinsics {
        Intrinsics::new(100.0, 4.0, 3.0).unwrap()
    }

    #[test]
    fn unproject_hand_cases() {
        let mut d = DepthMap::invalid(200, 8).unwrap();
        d.set(4, 3, 2.0);
        d.set(104, 3, 2.0);
        let pm = unproject(&d, &k());
        assert_eq!(pm.get(4, 3), Some([0.0, 0.0, 2.0]));
        assert_eq!(pm.get(104, 3), Some([2.0, 0.0, 2.0]));
        assert_eq!(pm.get(0, 0), None);
    }

    #[test]
    fn project_inverts_hand_case() {
        let mut pm = PointMap::invalid(200, 8).unwrap();
        pm.set(104, 3, [2.0, 0.0, 2.0]);
        let d = project(&pm);
        assert_eq!(d.get(104, 3), Some(2.0));
        assert_eq!(d.valid_count(), 1);
        assert_eq!(project(&PointMap::invalid(3, 3).unwrap()).valid_count(), 0);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0).is_err());
        let r = CropRect::new(3, 2, 4, 4).unwrap();
        let kc = k().cropped(&r);
        assert_eq!((kc.cx, kc.cy), (1.0, 1.0));
    }

    #[test]
    fn bbox_cases() {
        let mut d = DepthMap::invalid(20, 20).unwrap();
        d.set(5, 7, 1.0);
        assert_eq!(
            bbox_from_smpl(&d, 0.0).unwrap(),
            CropRect::new(5, 7, 1, 1).unwrap()
        );

        let mut d = DepthMap::invalid(20, 20).unwrap();
        for y in 2..=4 {
            for x in 3..=6 {
                d.set(x, y, 1.0);
            }
        }
        assert_eq!(
            bbox_from_smpl(&d, 0.0).unwrap(),
            CropRect::new(3, 2, 4, 3).unwrap()
        );
        assert_eq!(
            bbox_from_smpl(&d, 0.5).unwrap(),
            CropRect::new(1, 0, 8, 7).unwrap()
        );

        let empty = DepthMap::invalid(4, 4).unwrap();
        assert!(matches!(
            bbox_from_smpl(&empty, 0.1),
            Err(Error::EmptyHuman)
        ));
    }

    #[test]
    fn trigger_cases() {
        assert!(refinement_trigger(
            &DepthMap::invalid(10, 10).unwrap(),
            0.15
        ));
        let mut half = DepthMap::invalid(10, 10).unwrap();
        let mut tenth = DepthMap::invalid(10, 10).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                if x < 5 {
                    half.set(x, y, 1.0);
                }
                if y == 0 {
                    tenth.set(x, y, 1.0);
                }
            }
        }
        assert!(!refinement_trigger(&half, 0.15));
        assert_eq!(tenth.valid_count(), 10);
        assert!(refinement_trigger(&tenth, 0.15));
    }
}
