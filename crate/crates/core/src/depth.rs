use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric depth grid with a per-pixel validity mask.
///
/// Valid pixels always hold finite, strictly positive depths. Values under
/// invalid pixels are kept as given but carry no meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Invalid pixels are stored as 0 regardless of the value passed in.
    pub fn new(
        width: usize,
        height: usize,
        mut values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("depth map must be at least 1x1"));
        }
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} depth map needs {} values and mask entries, got {} and {}",
                width * height,
                values.len(),
                valid.len()
            )));
        }
        if let Some(i) =
            (0..values.len()).find(|&i| valid[i] && !(values[i].is_finite() && values[i] > 0.0))
        {
            return Err(Error::InvalidData(format!(
                "valid pixel {i} holds non-positive or non-finite depth {}",
                values[i]
            )));
        }
        for (v, ok) in values.iter_mut().zip(&valid) {
            if !ok {
                *v = 0.0;
            }
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// Validity inferred from the values: finite and positive.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Self::new(width, height, values, valid)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_values(width, height, vec![value; width * height])
    }

    pub fn invalid(width: usize, height: usize) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![0.0; width * height],
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
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = self.index(x, y);
        self.valid[i].then(|| self.values[i])
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[self.index(x, y)]
    }

    /// Set a pixel; non-positive or non-finite values mark it invalid.
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        let i = self.index(x, y);
        self.valid[i] = value.is_finite() && value > 0.0;
        self.values[i] = if self.valid[i] { value } else { 0.0 };
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = self.index(x, y);
        self.valid[i] = false;
        self.values[i] = 0.0;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_shape(&self, other: &DepthMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Apply `f` to every valid value; results that are not finite and positive
    /// become invalid.
    pub fn map_valid(&self, f: impl Fn(f64) -> f64) -> DepthMap {
        let mut out = self.clone();
        for i in 0..out.values.len() {
            if out.valid[i] {
                let v = f(out.values[i]);
                out.valid[i] = v.is_finite() && v > 0.0;
                out.values[i] = if out.valid[i] { v } else { 0.0 };
            }
        }
        out
    }
}
