//! Cropping and Catmull-Rom bicubic resampling of depth maps, pointmaps and
//! images, and integration of refined crops back into a global pointmap.
//!
//! Sampling is align-corners: output coordinate `o` reads source coordinate
//! `o * (in - 1) / (out - 1)` (the center when `out == 1`). Taps that fall
//! outside the grid are linearly extrapolated from the two nearest border
//! samples, so affine signals are reproduced everywhere. An output pixel is
//! valid iff every source pixel with a non-zero effective weight is valid.

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::{CropRect, Image, PointMap};

/// Catmull-Rom (`a = -0.5`) kernel.
pub fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Effective source weights for one output coordinate along one axis.
/// The first entry is the reference tap (floor of the source coordinate).
fn axis_weights(out_i: usize, in_size: usize, out_size: usize) -> Vec<(usize, f64)> {
    let src = if out_size == 1 {
        (in_size - 1) as f64 / 2.0
    } else {
        out_i as f64 * (in_size - 1) as f64 / (out_size - 1) as f64
    };
    let base = (src.floor() as usize).min(in_size - 1);
    let t = src - base as f64;
    let mut taps: Vec<(usize, f64)> = vec![(base, 0.0)];
    let add = |idx: usize, w: f64, taps: &mut Vec<(usize, f64)>| {
        if let Some(e) = taps.iter_mut().find(|e| e.0 == idx) {
            e.1 += w;
        } else {
            taps.push((idx, w));
        }
    };
    for (offset, dist) in [(-1i64, 1.0 + t), (0, t), (1, 1.0 - t), (2, 2.0 - t)] {
        let w = catmull_rom(dist);
        if w == 0.0 {
            continue;
        }
        let k = base as i64 + offset;
        let last = in_size as i64 - 1;
        if in_size == 1 {
            add(0, w, &mut taps);
        } else if k < 0 {
            // f(k) = f(0) + k (f(1) - f(0))
            add(0, (1 - k) as f64 * w, &mut taps);
            add(1, k as f64 * w, &mut taps);
        } else if k > last {
            let e = (k - last) as f64;
            add(last as usize, (1.0 + e) * w, &mut taps);
            add(last as usize - 1, -e * w, &mut taps);
        } else {
            add(k as usize, w, &mut taps);
        }
    }
    taps
}

/// Resample `channels` planes of an `in_w x in_h` grid. Returns the planes
/// and the validity of each output pixel.
fn resample_planes(
    in_w: usize,
    in_h: usize,
    planes: &[Vec<f64>],
    valid: &[bool],
    out_w: usize,
    out_h: usize,
) -> (Vec<Vec<f64>>, Vec<bool>) {
    let xw: Vec<_> = (0..out_w).map(|x| axis_weights(x, in_w, out_w)).collect();
    let yw: Vec<_> = (0..out_h).map(|y| axis_weights(y, in_h, out_h)).collect();
    let mut out = vec![vec![0.0; out_w * out_h]; planes.len()];
    let mut out_valid = vec![false; out_w * out_h];
    for (oy, wy) in yw.iter().enumerate() {
        for (ox, wx) in xw.iter().enumerate() {
            let o = oy * out_w + ox;
            let reference = wy[0].0 * in_w + wx[0].0;
            let involved = wy.iter().filter(|e| e.1 != 0.0).all(|&(iy, _)| {
                wx.iter()
                    .filter(|e| e.1 != 0.0)
                    .all(|&(ix, _)| valid[iy * in_w + ix])
            });
            out_valid[o] = involved && valid[reference];
            if !out_valid[o] {
                continue;
            }
            for (plane, dst) in planes.iter().zip(out.iter_mut()) {
                // Accumulating differences from the reference tap keeps
                // constant regions exact.
                let anchor = plane[reference];
                let mut acc = 0.0;
                for &(iy, ay) in wy {
                    for &(ix, ax) in wx {
                        acc += ay * ax * (plane[iy * in_w + ix] - anchor);
                    }
                }
                dst[o] = anchor + acc;
            }
        }
    }
    (out, out_valid)
}

/// Grids that can be cropped and bicubically resampled.
pub trait Raster: Sized {
    fn width(&self) -> usize;
    fn height(&self) -> usize;

    /// Exact sub-grid copy.
    fn crop(&self, rect: &CropRect) -> Result<Self>;

    /// Bicubic resample to any positive size.
    fn resize_bicubic(&self, out_w: usize, out_h: usize) -> Result<Self>;
}

fn check_out_size(out_w: usize, out_h: usize) -> Result<()> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::shape(format!("cannot resample to {out_w}x{out_h}")));
    }
    Ok(())
}

fn crop_indices(width: usize, rect: &CropRect) -> impl Iterator<Item = usize> + '_ {
    (rect.y0..rect.y1()).flat_map(move |y| (rect.x0..rect.x1()).map(move |x| y * width + x))
}

impl Raster for DepthMap {
    fn width(&self) -> usize {
        DepthMap::width(self)
    }

    fn height(&self) -> usize {
        DepthMap::height(self)
    }

    fn crop(&self, rect: &CropRect) -> Result<Self> {
        rect.check_inside(self.width(), self.height())?;
        let idx: Vec<usize> = crop_indices(self.width(), rect).collect();
        let values = idx.iter().map(|&i| self.values()[i]).collect();
        let valid = idx.iter().map(|&i| self.valid_mask()[i]).collect();
        DepthMap::new(rect.width, rect.height, values, valid)
    }

    fn resize_bicubic(&self, out_w: usize, out_h: usize) -> Result<Self> {
        check_out_size(out_w, out_h)?;
        let (mut planes, mut valid) = resample_planes(
            self.width(),
            self.height(),
            &[self.values().to_vec()],
            self.valid_mask(),
            out_w,
            out_h,
        );
        let values = planes.pop().expect("one plane");
        for (v, ok) in values.iter().zip(valid.iter_mut()) {
            *ok = *ok && v.is_finite() && *v > 0.0;
        }
        DepthMap::new(out_w, out_h, values, valid)
    }
}

impl Raster for PointMap {
    fn width(&self) -> usize {
        PointMap::width(self)
    }

    fn height(&self) -> usize {
        PointMap::height(self)
    }

    fn crop(&self, rect: &CropRect) -> Result<Self> {
        rect.check_inside(self.width(), self.height())?;
        let idx: Vec<usize> = crop_indices(self.width(), rect).collect();
        let points = idx.iter().map(|&i| self.points()[i]).collect();
        let valid = idx.iter().map(|&i| self.valid_mask()[i]).collect();
        PointMap::new(rect.width, rect.height, points, valid)
    }

    fn resize_bicubic(&self, out_w: usize, out_h: usize) -> Result<Self> {
        check_out_size(out_w, out_h)?;
        let planes: Vec<Vec<f64>> = (0..3)
            .map(|c| self.points().iter().map(|p| p[c]).collect())
            .collect();
        let (planes, mut valid) = resample_planes(
            self.width(),
            self.height(),
            &planes,
            self.valid_mask(),
            out_w,
            out_h,
        );
        let points: Vec<[f64; 3]> = (0..out_w * out_h)
            .map(|i| [planes[0][i], planes[1][i], planes[2][i]])
            .collect();
        for (p, ok) in points.iter().zip(valid.iter_mut()) {
            *ok = *ok && p.iter().all(|c| c.is_finite()) && p[2] > 0.0;
        }
        PointMap::new(out_w, out_h, points, valid)
    }
}

impl Raster for Image {
    fn width(&self) -> usize {
        Image::width(self)
    }

    fn height(&self) -> usize {
        Image::height(self)
    }

    fn crop(&self, rect: &CropRect) -> Result<Self> {
        rect.check_inside(self.width(), self.height())?;
        let values = crop_indices(self.width(), rect)
            .map(|i| self.values()[i])
            .collect();
        Image::new(rect.width, rect.height, values)
    }

    fn resize_bicubic(&self, out_w: usize, out_h: usize) -> Result<Self> {
        check_out_size(out_w, out_h)?;
        let all_valid = vec![true; self.values().len()];
        let (mut planes, _) = resample_planes(
            self.width(),
            self.height(),
            &[self.values().to_vec()],
            &all_valid,
            out_w,
            out_h,
        );
        Image::new(out_w, out_h, planes.pop().expect("one plane"))
    }
}

pub fn crop<G: Raster>(grid: &G, rect: &CropRect) -> Result<G> {
    grid.crop(rect)
}

/// Bicubic upsampling; the output must be at least as large as the input.
pub fn bicubic_upsample<G: Raster>(grid: &G, out_w: usize, out_h: usize) -> Result<G> {
    if out_w < grid.width() || out_h < grid.height() {
        return Err(Error::shape(format!(
            "upsample target {out_w}x{out_h} is smaller than {}x{}",
            grid.width(),
            grid.height()
        )));
    }
    grid.resize_bicubic(out_w, out_h)
}

/// Resize `refined_crop` to `rect` and overwrite `global_pm` inside `rect`
/// wherever the resized refined point is valid.
pub fn integrate_refined(
    global_pm: &PointMap,
    refined_crop: &PointMap,
    rect: &CropRect,
) -> Result<PointMap> {
    rect.check_inside(global_pm.width(), global_pm.height())?;
    let resized = refined_crop.resize_bicubic(rect.width, rect.height)?;
    let mut out = global_pm.clone();
    for y in 0..rect.height {
        for x in 0..rect.width {
            if let Some(p) = resized.get(x, y) {
                out.set(rect.x0 + x, rect.y0 + y, p);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counting(w: usize, h: usize) -> DepthMap {
        DepthMap::from_values(w, h, (1..=w * h).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let s: f64 = [1.0 + t, t, 1.0 - t, 2.0 - t]
                .iter()
                .map(|&d| catmull_rom(d))
                .sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(catmull_rom(1.0), 0.0);
        assert_eq!(catmull_rom(2.0), 0.0);
    }

    #[test]
    fn crop_cases() {
        let d = counting(4, 3);
        assert_eq!(crop(&d, &CropRect::full(4, 3)).unwrap(), d);
        assert_eq!(
            crop(&d, &CropRect::new(0, 0, 1, 1).unwrap())
                .unwrap()
                .values(),
            &[1.0]
        );
        let c = crop(&d, &CropRect::new(1, 1, 2, 2).unwrap()).unwrap();
        assert_eq!(c.values(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(matches!(
            crop(&d, &CropRect::new(3, 0, 2, 1).unwrap()),
            Err(Error::InvalidRect(_))
        ));
    }

    #[test]
    fn identity_resample_keeps_holes() {
        let mut d = counting(5, 4);
        d.invalidate(2, 2);
        let r = bicubic_upsample(&d, 5, 4).unwrap();
        assert_eq!(r, d);
    }

    #[test]
    fn constant_and_ramp() {
        let d = DepthMap::filled(3, 5, 2.75).unwrap();
        let up = bicubic_upsample(&d, 11, 17).unwrap();
        assert!(up.values().iter().all(|&v| v == 2.75));
        assert_eq!(up.valid_count(), 11 * 17);

        let ramp = |x: f64, y: f64| 1.0 + 0.3 * x - 0.2 * y + 5.0;
        let (w, h) = (6, 4);
        let src = DepthMap::from_values(
            w,
            h,
            (0..w * h)
                .map(|i| ramp((i % w) as f64, (i / w) as f64))
                .collect(),
        )
        .unwrap();
        let (ow, oh) = (4 * w, 4 * h);
        let up = bicubic_upsample(&src, ow, oh).unwrap();
        for oy in 0..oh {
            for ox in 0..ow {
                let sx = ox as f64 * (w - 1) as f64 / (ow - 1) as f64;
                let sy = oy as f64 * (h - 1) as f64 / (oh - 1) as f64;
                assert!((up.get(ox, oy).unwrap() - ramp(sx, sy)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_taps_spread() {
        let mut d = DepthMap::filled(6, 6, 1.0).unwrap();
        d.invalidate(3, 3);
        let up = bicubic_upsample(&d, 11, 11).unwrap();
        // Output (6, 6) samples source (3, 3) exactly: only that tap counts.
        assert!(!up.is_valid(6, 6));
        // Output (5, 5) samples (2.5, 2.5): taps 1..=4 include (3, 3).
        assert!(!up.is_valid(5, 5));
        // Output (0, 0) is far from the hole.
        assert!(up.is_valid(0, 0));
        assert!(bicubic_upsample(&d, 5, 6).is_err());
    }

    #[test]
    fn single_pixel_source_and_target() {
        let d = DepthMap::filled(1, 1, 3.0).unwrap();
        let up = bicubic_upsample(&d, 4, 2).unwrap();
        assert!(up.values().iter().all(|&v| v == 3.0));
        let d = counting(3, 3);
        let down = d.resize_bicubic(1, 1).unwrap();
        assert_eq!(down.values(), &[5.0]);
    }

    fn grid_pm(w: usize, h: usize, z: f64) -> PointMap {
        let pts = (0..w * h)
            .map(|i| [(i % w) as f64, (i / w) as f64, z])
            .collect();
        PointMap::from_points(w, h, pts).unwrap()
    }

    #[test]
    fn integrate_cases() {
        let g = grid_pm(6, 5, 2.0);
        let rect = CropRect::new(1, 1, 3, 2).unwrap();
        let same = g.crop(&rect).unwrap();
        assert_eq!(integrate_refined(&g, &same, &rect).unwrap(), g);
        let none = PointMap::invalid(3, 2).unwrap();
        assert_eq!(integrate_refined(&g, &none, &rect).unwrap(), g);

        let rect = CropRect::new(2, 2, 2, 2).unwrap();
        let mut one = PointMap::invalid(2, 2).unwrap();
        one.set(1, 0, [9.0, 9.0, 9.0]);
        let out = integrate_refined(&g, &one, &rect).unwrap();
        let changed: Vec<usize> = (0..out.len())
            .filter(|&i| out.points()[i] != g.points()[i])
            .collect();
        assert_eq!(changed, vec![2 * 6 + 3]);
        assert!(integrate_refined(&g, &one, &CropRect::new(5, 4, 2, 2).unwrap()).is_err());
    }
}
