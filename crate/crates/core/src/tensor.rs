//! Shared value types and the vector/grid primitives everything else builds on.
//!
//! All types are plain immutable values once constructed, so they can be
//! shared or sent across threads freely.

use crate::error::{PdaError, Result};

/// Norms below this are treated as an all-zero embedding.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Tolerance used when checking that stored prototypes are unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// A D-dimensional RoI embedding with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(PdaError::Empty("feature vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PdaError::NonFinite("feature vector"));
        }
        Ok(Self(values))
    }

    /// Standard basis vector `e_index` of length `dim`.
    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim, "basis index {index} out of range for dim {dim}");
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Scale `v` to unit L2 norm.
pub fn l2_normalize(v: &FeatureVector) -> Result<FeatureVector> {
    normalize_slice(v.as_slice()).map(FeatureVector)
}

pub(crate) fn normalize_slice(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n.is_nan() || n < DEGENERATE_NORM {
        return Err(PdaError::DegenerateVector { norm: n });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity of two unit vectors: their dot product clamped to [-1, 1].
pub fn cosine(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(PdaError::dims("cosine operand", a.dim(), b.dim()));
    }
    debug_assert!((a.norm() - 1.0).abs() <= UNIT_NORM_TOL);
    debug_assert!((b.norm() - 1.0).abs() <= UNIT_NORM_TOL);
    Ok(clamped_dot(a.as_slice(), b.as_slice()))
}

#[inline]
pub(crate) fn clamped_dot(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

/// A `channels x height x width` RoI feature grid, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiFeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RoiFeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(PdaError::Empty("feature map dimension"));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| PdaError::ConfigInvalid("feature map size overflows".into()))?;
        if data.len() != expected {
            return Err(PdaError::dims("feature map data", expected, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PdaError::NonFinite("feature map"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.cells();
        &self.data[c * n..(c + 1) * n]
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// Per-channel mean over all spatial cells.
pub fn global_average_pool(map: &RoiFeatureMap) -> FeatureVector {
    let cells = map.cells() as f64;
    let pooled = (0..map.channels())
        .map(|c| map.channel(c).iter().sum::<f64>() / cells)
        .collect();
    FeatureVector(pooled)
}

/// Logits over `C` foreground classes followed by one background entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(PdaError::dims("logit vector (C+1, C >= 1)", 2, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PdaError::NonFinite("logit vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(num_classes: usize) -> Self {
        Self(vec![0.0; num_classes + 1])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of foreground classes.
    pub fn num_classes(&self) -> usize {
        self.0.len() - 1
    }

    pub fn background(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Dense row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PdaError::dims("matrix data", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PdaError::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `self^T * v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, vr) in v.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * vr;
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}
