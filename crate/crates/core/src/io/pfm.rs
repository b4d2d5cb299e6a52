//! Portable float maps. Depth maps use grayscale `Pf`, pointmaps use
//! three-channel `PF`. Only little-endian files (negative scale) are
//! supported. Rows are stored bottom to top; NaN marks invalid pixels.
//! Values are stored as `f32`.

use std::fs;
use std::path::Path;

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::{Image, PointMap};

struct Header {
    width: usize,
    height: usize,
    channels: usize,
    payload_offset: usize,
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("truncated PFM header".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end])
        .map(str::trim)
        .map_err(|_| Error::Format("PFM header is not ASCII".into()))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let channels = match next_line(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Format(format!("unknown PFM magic {other:?}"))),
    };
    let dims: Vec<&str> = next_line(bytes, &mut pos)?.split_whitespace().collect();
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Format(format!("bad PFM dimension {s:?}")))
    };
    let [w, h] = dims.as_slice() else {
        return Err(Error::Format(
            "PFM size line must hold width and height".into(),
        ));
    };
    let (width, height) = (parse_dim(w)?, parse_dim(h)?);
    let scale_line = next_line(bytes, &mut pos)?;
    let scale: f64 = scale_line
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale {scale_line:?}")))?;
    if !(scale < 0.0) {
        return Err(Error::Format(format!(
            "PFM scale {scale} declares big-endian data, which is unsupported"
        )));
    }
    let expected = width * height * channels * 4;
    let got = bytes.len() - pos;
    if got != expected {
        return Err(Error::Format(format!(
            "PFM payload is {got} bytes, {width}x{height}x{channels} needs {expected}"
        )));
    }
    Ok(Header {
        width,
        height,
        channels,
        payload_offset: pos,
    })
}

fn samples(bytes: &[u8], header: &Header) -> Vec<f32> {
    bytes[header.payload_offset..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn encode(
    magic: &str,
    width: usize,
    height: usize,
    channels: usize,
    value: impl Fn(usize, usize) -> Option<f64>,
) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(width * height * channels * 4);
    for y in (0..height).rev() {
        for x in 0..width {
            for c in 0..channels {
                let v = value(y * width + x, c).map_or(f32::NAN, |v| v as f32);
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    encode("Pf", depth.width(), depth.height(), 1, |i, _| {
        depth.valid_mask()[i].then(|| depth.values()[i])
    })
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    let header = parse_header(bytes)?;
    if header.channels != 1 {
        return Err(Error::Format(
            "expected a grayscale (Pf) map, found color (PF)".into(),
        ));
    }
    let (w, h) = (header.width, header.height);
    let data = samples(bytes, &header);
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            values[y * w + x] = f64::from(data[(h - 1 - y) * w + x]);
        }
    }
    DepthMap::from_values(w, h, values)
}

pub fn encode_points(pm: &PointMap) -> Vec<u8> {
    encode("PF", pm.width(), pm.height(), 3, |i, c| {
        pm.valid_mask()[i].then(|| pm.points()[i][c])
    })
}

pub fn decode_points(bytes: &[u8]) -> Result<PointMap> {
    let header = parse_header(bytes)?;
    if header.channels != 3 {
        return Err(Error::Format(
            "expected a three-channel (PF) map, found grayscale (Pf)".into(),
        ));
    }
    let (w, h) = (header.width, header.height);
    let data = samples(bytes, &header);
    let mut points = vec![[0.0; 3]; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let s = (h - 1 - y) * w + x;
            let p = [data[3 * s], data[3 * s + 1], data[3 * s + 2]].map(f64::from);
            let i = y * w + x;
            valid[i] = p.iter().all(|v| v.is_finite()) && p[2] > 0.0;
            if valid[i] {
                points[i] = p;
            }
        }
    }
    PointMap::new(w, h, points, valid)
}

/// Grayscale image; every value is stored as-is.
pub fn encode_image(img: &Image) -> Vec<u8> {
    encode("Pf", img.width(), img.height(), 1, |i, _| {
        Some(img.values()[i])
    })
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let header = parse_header(bytes)?;
    if header.channels != 1 {
        return Err(Error::Format("expected a grayscale (Pf) image".into()));
    }
    let (w, h) = (header.width, header.height);
    let data = samples(bytes, &header);
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            values[y * w + x] = f64::from(data[(h - 1 - y) * w + x]);
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("image holds non-finite values".into()));
    }
    Image::new(w, h, values)
}

pub fn write_pfm(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_depth(depth)).map_err(|e| Error::from(e).at_path(path))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    decode_depth(&bytes).map_err(|e| e.at_path(path))
}

pub fn write_pfm_points(path: impl AsRef<Path>, pm: &PointMap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_points(pm)).map_err(|e| Error::from(e).at_path(path))
}

pub fn read_pfm_points(path: impl AsRef<Path>) -> Result<PointMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    decode_points(&bytes).map_err(|e| e.at_path(path))
}

pub fn write_pfm_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_image(img)).map_err(|e| Error::from(e).at_path(path))
}

pub fn read_pfm_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    decode_image(&bytes).map_err(|e| e.at_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_single_pixel() {
        let d = DepthMap::filled(1, 1, 2.5).unwrap();
        let mut expected = b"Pf\n1 1\n-1.0\n".to_vec();
        expected.extend_from_slice(&[0x00, 0x00, 0x20, 0x40]);
        assert_eq!(encode_depth(&d), expected);
        assert_eq!(decode_depth(&expected).unwrap(), d);
    }

    #[test]
    fn bottom_row_first() {
        let d = DepthMap::from_values(1, 2, vec![1.0, 2.0]).unwrap();
        let bytes = encode_depth(&d);
        let n = bytes.len();
        assert_eq!(&bytes[n - 8..n - 4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_files() {
        let mut color = b"PF\n1 1\n-1.0\n".to_vec();
        color.extend_from_slice(&[0; 12]);
        assert!(matches!(decode_depth(&color), Err(Error::Format(_))));
        let mut big = b"Pf\n1 1\n1.0\n".to_vec();
        big.extend_from_slice(&[0; 4]);
        assert!(matches!(decode_depth(&big), Err(Error::Format(_))));
        assert!(decode_depth(b"Pf\n2 1\n-1.0\n\0\0\0\0").is_err());
        assert!(decode_depth(b"Pf\n2 x\n-1.0\n").is_err());
        assert!(decode_depth(b"P5\n1 1\n-1.0\n\0\0\0\0").is_err());
    }

    #[test]
    fn invalid_pixels_are_nan() {
        let mut d = DepthMap::from_values(2, 1, vec![1.5, 3.0]).unwrap();
        d.invalidate(0, 0);
        let bytes = encode_depth(&d);
        assert!(
            f32::from_le_bytes(bytes[bytes.len() - 8..bytes.len() - 4].try_into().unwrap())
                .is_nan()
        );
        assert_eq!(decode_depth(&bytes).unwrap(), d);
    }

    #[test]
    fn points_round_trip() {
        let mut pm = PointMap::from_points(
            2,
            2,
            vec![
                [0.5, -1.0, 2.0],
                [1.0, 2.0, 3.0],
                [0.0, 0.0, 1.0],
                [-4.0, 0.25, 8.0],
            ],
        )
        .unwrap();
        pm.invalidate(1, 1);
        assert_eq!(decode_points(&encode_points(&pm)).unwrap(), pm);
    }
}
