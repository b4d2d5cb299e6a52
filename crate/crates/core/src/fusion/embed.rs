use crate::error::{Error, Result};
use crate::geometry::{Image, PointMap};
use crate::tensor::{LinearLayer, Matrix};

use super::{TokenGrid, ZeroConv};

fn check_divisible(width: usize, height: usize, patch_size: usize) -> Result<(usize, usize)> {
    if patch_size == 0 || !width.is_multiple_of(patch_size) || !height.is_multiple_of(patch_size) {
        return Err(Error::shape(format!(
            "{width}x{height} grid is not divisible into {patch_size}x{patch_size} patches"
        )));
    }
    Ok((height / patch_size, width / patch_size))
}

/// Split a pointmap into `p x p` patches, flatten each row-major with x, y, z
/// interleaved per pixel (invalid pixels contribute zeros), and embed each
/// patch with `embed`. Tokens are ordered row-major over patches.
pub fn patch_embed(pm: &PointMap, patch_size: usize, embed: &LinearLayer) -> Result<TokenGrid> {
    let (rows, cols) = check_divisible(pm.width(), pm.height(), patch_size)?;
    let per_patch = patch_size * patch_size * 3;
    if embed.in_dim() != per_patch {
        return Err(Error::shape(format!(
            "patch embedding reads {} values, patches hold {per_patch}",
            embed.in_dim()
        )));
    }
    let mut flat = Matrix::zeros(rows * cols, per_patch);
    for pr in 0..rows {
        for pc in 0..cols {
            let row = flat.row_mut(pr * cols + pc);
            for yy in 0..patch_size {
                for xx in 0..patch_size {
                    let p = pm
                        .get(pc * patch_size + xx, pr * patch_size + yy)
                        .unwrap_or([0.0; 3]);
                    let o = (yy * patch_size + xx) * 3;
                    row[o..o + 3].copy_from_slice(&p);
                }
            }
        }
    }
    TokenGrid::new(embed.forward(&flat)?, (rows, cols))
}

/// Same patching for a grayscale image (one value per pixel).
pub fn image_patch_tokens(
    img: &Image,
    patch_size: usize,
    embed: &LinearLayer,
) -> Result<TokenGrid> {
    let (rows, cols) = check_divisible(img.width(), img.height(), patch_size)?;
    let per_patch = patch_size * patch_size;
    if embed.in_dim() != per_patch {
        return Err(Error::shape(format!(
            "image embedding reads {} values, patches hold {per_patch}",
            embed.in_dim()
        )));
    }
    let mut flat = Matrix::zeros(rows * cols, per_patch);
    for pr in 0..rows {
        for pc in 0..cols {
            let row = flat.row_mut(pr * cols + pc);
            for yy in 0..patch_size {
                for xx in 0..patch_size {
                    row[yy * patch_size + xx] = img.get(pc * patch_size + xx, pr * patch_size + yy);
                }
            }
        }
    }
    TokenGrid::new(embed.forward(&flat)?, (rows, cols))
}

/// Inverse of the patch flattening for per-token `p * p * 3` offsets:
/// returns one offset per pixel of the `cols*p x rows*p` grid.
pub fn unpatchify_offsets(
    offsets: &Matrix,
    grid_shape: (usize, usize),
    patch_size: usize,
) -> Result<Vec<[f64; 3]>> {
    let (rows, cols) = grid_shape;
    if offsets.rows() != rows * cols || offsets.cols() != patch_size * patch_size * 3 {
        return Err(Error::shape("offset matrix does not match the token grid"));
    }
    let width = cols * patch_size;
    let mut out = vec![[0.0; 3]; rows * cols * patch_size * patch_size];
    for pr in 0..rows {
        for pc in 0..cols {
            let row = offsets.row(pr * cols + pc);
            for yy in 0..patch_size {
                for xx in 0..patch_size {
                    let o = (yy * patch_size + xx) * 3;
                    let pixel = (pr * patch_size + yy) * width + pc * patch_size + xx;
                    out[pixel] = [row[o], row[o + 1], row[o + 2]];
                }
            }
        }
    }
    Ok(out)
}

/// Decoder head that turns tokens into per-pixel corrections of a base
/// pointmap. It is zero-initialized, so an untrained head returns the base
/// pointmap unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct PointHead {
    pub patch_size: usize,
    pub zc: ZeroConv,
}

impl PointHead {
    pub fn new(embed_dim: usize, patch_size: usize) -> Self {
        Self {
            patch_size,
            zc: ZeroConv::new(embed_dim, patch_size * patch_size * 3),
        }
    }

    pub fn decode(&self, tokens: &TokenGrid, base: &PointMap) -> Result<PointMap> {
        let (rows, cols) = tokens.grid_shape();
        if base.width() != cols * self.patch_size || base.height() != rows * self.patch_size {
            return Err(Error::shape(format!(
                "{}x{} base pointmap does not match a {rows}x{cols} token grid of {} px patches",
                base.width(),
                base.height(),
                self.patch_size
            )));
        }
        let offsets = unpatchify_offsets(
            &self.zc.forward(tokens.tokens())?,
            (rows, cols),
            self.patch_size,
        )?;
        let mut out = base.clone();
        for y in 0..base.height() {
            for x in 0..base.width() {
                if let Some(p) = base.get(x, y) {
                    let d = offsets[base.index(x, y)];
                    if d != [0.0; 3] {
                        out.set(x, y, [p[0] + d[0], p[1] + d[1], p[2] + d[2]]);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn counting_pm(w: usize, h: usize) -> PointMap {
        let pts = (0..w * h)
            .map(|i| [i as f64, 0.5, 1.0 + i as f64])
            .collect();
        PointMap::from_points(w, h, pts).unwrap()
    }

    #[test]
    fn zero_weights_give_bias() {
        let pm = counting_pm(8, 4);
        let bias: Vec<f64> = (0..5).map(f64::from).collect();
        let embed = LinearLayer::new(Matrix::zeros(5, 4 * 4 * 3), bias.clone()).unwrap();
        let t = patch_embed(&pm, 4, &embed).unwrap();
        assert_eq!(t.grid_shape(), (1, 2));
        for r in 0..t.len() {
            assert_eq!(t.tokens().row(r), bias.as_slice());
        }
    }

    #[test]
    fn single_patch_and_flatten_order() {
        let mut rng = SeededRng::new(0);
        let embed = LinearLayer::init_uniform(16 * 16 * 3, 4, &mut rng);
        assert_eq!(
            patch_embed(&counting_pm(16, 16), 16, &embed).unwrap().len(),
            1
        );

        // Selector embedding: output k reads flattened entry k.
        let mut w = Matrix::zeros(2, 16 * 16 * 3);
        w[(0, 0)] = 1.0; // x of the patch's top-left pixel
        w[(1, 5)] = 1.0; // z of the second pixel in the first row
        let embed = LinearLayer::new(w, vec![0.0; 2]).unwrap();
        let t = patch_embed(&counting_pm(32, 32), 16, &embed).unwrap();
        assert_eq!(t.grid_shape(), (2, 2));
        // Top-left pixels of the four patches: (0,0), (16,0), (0,16), (16,16).
        let firsts: Vec<f64> = (0..4).map(|r| t.tokens()[(r, 0)]).collect();
        assert_eq!(firsts, vec![0.0, 16.0, 512.0, 528.0]);
        assert_eq!(t.tokens()[(3, 1)], 1.0 + 529.0);
    }

    #[test]
    fn rejects_indivisible() {
        let embed = LinearLayer::zeros(48, 2);
        assert!(patch_embed(&counting_pm(6, 4), 4, &embed).is_err());
    }

    #[test]
    fn fresh_head_is_transparent() {
        let pm = counting_pm(4, 4);
        let head = PointHead::new(3, 2);
        let tokens = TokenGrid::new(Matrix::filled(4, 3, 1.5), (2, 2)).unwrap();
        assert_eq!(head.decode(&tokens, &pm).unwrap(), pm);
    }

    #[test]
    fn unpatchify_inverts_flatten() {
        let pm = counting_pm(4, 2);
        let ident = LinearLayer::new(Matrix::identity(12), vec![0.0; 12]).unwrap();
        let t = patch_embed(&pm, 2, &ident).unwrap();
        let back = unpatchify_offsets(t.tokens(), t.grid_shape(), 2).unwrap();
        assert_eq!(back, pm.points());
    }
}
