//! Prototype-conditioned RoI alignment.
//!
//! A single linear map takes `concat(GAP(F), p*)` to a `2 x H x W` offset field
//! (`dx` block first, then `dy`), bounded by `OFFSET_BOUND * tanh`. The map is
//! then resampled bilinearly with border clamping. Offsets are in cell units.
//! Zero weights give zero offsets, and zero offsets reproduce the map exactly.

use crate::error::{PdaError, Result};
use crate::memory::PrototypeMemory;
use crate::params::PdaParams;
use crate::scoring::{best_of_k_slice, best_slot_of, project_parts, ClassScores};
use crate::tensor::{global_average_pool, norm, FeatureVector, RoiFeatureMap};

/// Largest absolute offset the aligner can produce, in cells.
pub const OFFSET_BOUND: f64 = 1.0;

/// Per-cell displacement field, `dx` and `dy` each `H x W` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    height: usize,
    width: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
    bound: f64,
}

impl OffsetField {
    pub fn new(height: usize, width: usize, dx: Vec<f64>, dy: Vec<f64>, bound: f64) -> Result<Self> {
        let cells = height * width;
        if dx.len() != cells {
            return Err(PdaError::dims("offset dx", cells, dx.len()));
        }
        if dy.len() != cells {
            return Err(PdaError::dims("offset dy", cells, dy.len()));
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(PdaError::NonFinite("offset field"));
        }
        if dx.iter().chain(&dy).any(|v| v.abs() > bound) {
            return Err(PdaError::ConfigInvalid(format!("offset exceeds bound {bound}")));
        }
        Ok(Self {
            height,
            width,
            dx,
            dy,
            bound,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            dx: vec![0.0; height * width],
            dy: vec![0.0; height * width],
            bound: OFFSET_BOUND,
        }
    }

    /// The same displacement at every cell; `bound` is widened to fit.
    pub fn uniform(height: usize, width: usize, dx: f64, dy: f64) -> Result<Self> {
        let cells = height * width;
        let bound = dx.abs().max(dy.abs()).max(OFFSET_BOUND);
        Self::new(height, width, vec![dx; cells], vec![dy; cells], bound)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn max_abs(&self) -> f64 {
        self.dx.iter().chain(&self.dy).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Weights of the linear offset predictor: `(C_feat + D) x (2 H W)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignerParams {
    feat_channels: usize,
    dim: usize,
    height: usize,
    width: usize,
    weight: Vec<f64>,
}

impl AlignerParams {
    /// Zero-initialized: the identity warp.
    pub fn zeros(feat_channels: usize, dim: usize, height: usize, width: usize) -> Self {
        let n = (feat_channels + dim) * 2 * height * width;
        Self {
            feat_channels,
            dim,
            height,
            width,
            weight: vec![0.0; n],
        }
    }

    pub fn from_weights(
        feat_channels: usize,
        dim: usize,
        height: usize,
        width: usize,
        weight: Vec<f64>,
    ) -> Result<Self> {
        if feat_channels == 0 || dim == 0 || height == 0 || width == 0 {
            return Err(PdaError::Empty("aligner dimension"));
        }
        let expected = (feat_channels + dim)
            .checked_mul(2 * height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| PdaError::ConfigInvalid("aligner size overflows".into()))?;
        if weight.len() != expected {
            return Err(PdaError::dims("aligner weights", expected, weight.len()));
        }
        if weight.iter().any(|v| !v.is_finite()) {
            return Err(PdaError::NonFinite("aligner weights"));
        }
        Ok(Self {
            feat_channels,
            dim,
            height,
            width,
            weight,
        })
    }

    pub fn feat_channels(&self) -> usize {
        self.feat_channels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input_dim(&self) -> usize {
        self.feat_channels + self.dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.height * self.width
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub(crate) fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn is_zero(&self) -> bool {
        self.weight.iter().all(|w| *w == 0.0)
    }

    fn check_map(&self, map: &RoiFeatureMap) -> Result<()> {
        if map.channels() != self.feat_channels {
            return Err(PdaError::dims("aligner map channels", self.feat_channels, map.channels()));
        }
        if map.height() != self.height {
            return Err(PdaError::dims("aligner map height", self.height, map.height()));
        }
        if map.width() != self.width {
            return Err(PdaError::dims("aligner map width", self.width, map.width()));
        }
        Ok(())
    }

    /// `weight^T * input`.
    fn raw_output(&self, input: &[f64]) -> Vec<f64> {
        let out_dim = self.output_dim();
        let mut raw = vec![0.0; out_dim];
        for (i, x) in input.iter().enumerate() {
            let row = &self.weight[i * out_dim..(i + 1) * out_dim];
            for (r, w) in raw.iter_mut().zip(row) {
                *r += w * x;
            }
        }
        raw
    }
}

fn aligner_input(map: &RoiFeatureMap, p_star: &[f64]) -> Vec<f64> {
    let mut input = global_average_pool(map).into_inner();
    input.extend_from_slice(p_star);
    input
}

fn offsets_from_raw(raw: &[f64], height: usize, width: usize) -> OffsetField {
    let cells = height * width;
    let bounded: Vec<f64> = raw.iter().map(|r| OFFSET_BOUND * r.tanh()).collect();
    OffsetField {
        height,
        width,
        dx: bounded[..cells].to_vec(),
        dy: bounded[cells..].to_vec(),
        bound: OFFSET_BOUND,
    }
}

/// Offsets for `map` conditioned on the selected prototype `p_star`.
pub fn predict_offsets(
    map: &RoiFeatureMap,
    p_star: &FeatureVector,
    aligner: &AlignerParams,
) -> Result<OffsetField> {
    aligner.check_map(map)?;
    if p_star.dim() != aligner.dim() {
        return Err(PdaError::dims("aligner prototype", aligner.dim(), p_star.dim()));
    }
    let raw = aligner.raw_output(&aligner_input(map, p_star.as_slice()));
    Ok(offsets_from_raw(&raw, aligner.height(), aligner.width()))
}

/// Bilinear footprint of one sample location after border clamping.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SamplePoint {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
    pub wy: f64,
    pub wx: f64,
    /// The unclamped coordinate fell outside the grid, so it has no gradient.
    pub y_clamped: bool,
    pub x_clamped: bool,
}

pub(crate) fn sample_point(sy: f64, sx: f64, height: usize, width: usize) -> SamplePoint {
    let (y0, y1, wy, y_clamped) = axis(sy, height);
    let (x0, x1, wx, x_clamped) = axis(sx, width);
    SamplePoint {
        y0,
        y1,
        x0,
        x1,
        wy,
        wx,
        y_clamped,
        x_clamped,
    }
}

fn axis(s: f64, len: usize) -> (usize, usize, f64, bool) {
    let max = (len - 1) as f64;
    let clamped = !(0.0..=max).contains(&s);
    let s = s.clamp(0.0, max);
    let i0 = (s.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, s - i0 as f64, clamped)
}

impl SamplePoint {
    #[inline]
    pub fn value(&self, channel: &[f64], width: usize) -> f64 {
        let v00 = channel[self.y0 * width + self.x0];
        let v01 = channel[self.y0 * width + self.x1];
        let v10 = channel[self.y1 * width + self.x0];
        let v11 = channel[self.y1 * width + self.x1];
        (1.0 - self.wy) * ((1.0 - self.wx) * v00 + self.wx * v01)
            + self.wy * ((1.0 - self.wx) * v10 + self.wx * v11)
    }

    /// `(d value / d sy, d value / d sx)`.
    #[inline]
    pub fn gradient(&self, channel: &[f64], width: usize) -> (f64, f64) {
        let v00 = channel[self.y0 * width + self.x0];
        let v01 = channel[self.y0 * width + self.x1];
        let v10 = channel[self.y1 * width + self.x0];
        let v11 = channel[self.y1 * width + self.x1];
        let gy = if self.y_clamped {
            0.0
        } else {
            (1.0 - self.wx) * (v10 - v00) + self.wx * (v11 - v01)
        };
        let gx = if self.x_clamped {
            0.0
        } else {
            (1.0 - self.wy) * (v01 - v00) + self.wy * (v11 - v10)
        };
        (gy, gx)
    }
}

/// Resamples each cell at `(y + dy, x + dx)` with bilinear interpolation and
/// border clamping.
pub fn grid_sample(map: &RoiFeatureMap, offsets: &OffsetField) -> Result<RoiFeatureMap> {
    if offsets.height() != map.height() {
        return Err(PdaError::dims("offset height", map.height(), offsets.height()));
    }
    if offsets.width() != map.width() {
        return Err(PdaError::dims("offset width", map.width(), offsets.width()));
    }
    let (h, w) = (map.height(), map.width());
    let points: Vec<SamplePoint> = (0..h * w)
        .map(|cell| {
            let (y, x) = (cell / w, cell % w);
            sample_point(y as f64 + offsets.dy[cell], x as f64 + offsets.dx[cell], h, w)
        })
        .collect();
    let mut data = Vec::with_capacity(map.data().len());
    for c in 0..map.channels() {
        let channel = map.channel(c);
        data.extend(points.iter().map(|p| p.value(channel, w)));
    }
    RoiFeatureMap::new(map.channels(), h, w, data)
}

/// Which prototype(s) condition the warp.
#[derive(Debug, Clone, PartialEq)]
pub enum AlignTarget {
    /// One warp with the globally best `(class, slot)`, scored against every class.
    Global { class: usize, slot: usize },
    /// One warp per class with that class's best slot, scored against that class only.
    PerClass(Vec<usize>),
}

/// Intermediates of one warp-pool-project pass.
#[derive(Debug, Clone)]
pub(crate) struct WarpTrace {
    /// `None` when this warp scores every class.
    pub scored_class: Option<usize>,
    pub input: Vec<f64>,
    pub raw: Vec<f64>,
    pub offsets: OffsetField,
    pub pooled_norm: f64,
    pub pooled_unit: Vec<f64>,
    pub projected_norm: f64,
    pub embedding: Vec<f64>,
}

pub(crate) fn warp_trace(
    map: &RoiFeatureMap,
    memory: &PrototypeMemory,
    params: &PdaParams,
    aligner: &AlignerParams,
    anchor: (usize, usize),
    scored_class: Option<usize>,
) -> Result<WarpTrace> {
    aligner.check_map(map)?;
    if aligner.dim() != memory.dim() {
        return Err(PdaError::dims("aligner prototype", memory.dim(), aligner.dim()));
    }
    if params.dim() != map.channels() {
        return Err(PdaError::dims("pooled map vs projection", params.dim(), map.channels()));
    }
    let input = aligner_input(map, memory.slot(anchor.0, anchor.1));
    let raw = aligner.raw_output(&input);
    let offsets = offsets_from_raw(&raw, map.height(), map.width());
    let warped = grid_sample(map, &offsets)?;
    let pooled = global_average_pool(&warped);
    let pooled_norm = norm(pooled.as_slice());
    let (pooled_unit, projected_norm, embedding) = project_parts(pooled.as_slice(), &params.projection)?;
    Ok(WarpTrace {
        scored_class,
        input,
        raw,
        offsets,
        pooled_norm,
        pooled_unit,
        projected_norm,
        embedding,
    })
}

/// Class scores recomputed from the aligned, pooled and re-projected map.
pub fn aligned_class_scores(
    map: &RoiFeatureMap,
    memory: &PrototypeMemory,
    params: &PdaParams,
    aligner: &AlignerParams,
    target: &AlignTarget,
) -> Result<ClassScores> {
    match target {
        AlignTarget::Global { class, slot } => {
            memory.check_class(*class)?;
            if *slot >= memory.slots_per_class() {
                return Err(PdaError::dims("anchor slot", memory.slots_per_class(), *slot));
            }
            let w = warp_trace(map, memory, params, aligner, (*class, *slot), None)?;
            Ok(best_of_k_slice(&w.embedding, memory))
        }
        AlignTarget::PerClass(slots) => {
            if slots.len() != memory.num_classes() {
                return Err(PdaError::dims("per-class anchors", memory.num_classes(), slots.len()));
            }
            let mut values = Vec::with_capacity(slots.len());
            let mut best_slot = Vec::with_capacity(slots.len());
            for (c, &k) in slots.iter().enumerate() {
                if k >= memory.slots_per_class() {
                    return Err(PdaError::dims("anchor slot", memory.slots_per_class(), k));
                }
                let w = warp_trace(map, memory, params, aligner, (c, k), Some(c))?;
                let (best, s) = best_slot_of(&w.embedding, memory, c);
                values.push(s);
                best_slot.push(best);
            }
            Ok(ClassScores { values, best_slot })
        }
    }
}
