//! Little-endian binary formats for memories, parameters and episode splits.
//!
//! Memory (`PDAM`): magic, version u32, C u32, K u32, D u32, frozen u8, three
//! zero bytes, then `C*K*D` f32 in class/slot/dim order.
//!
//! Params (`PDAP`): magic, version u32, D u32, `W` as `D*D` f32 row-major,
//! lambda f32, b_bg f32, tau f32, then the aligner block: mode u8 (0 none,
//! 1 global warp, 2 per-class warp) and, when present, C_feat, D, H, W as u32
//! followed by `(C_feat+D) * 2HW` f32 weights.
//!
//! Episode split (`PDAE`): magic, version u32, count u32, C u32, D u32,
//! C_feat u32, H u32, W u32, then per item: class u32, feature `D` f64, map
//! `C_feat*H*W` f64, classifier logits `C+1` f64.

use crate::align::AlignerParams;
use crate::error::{PdaError, Result};
use crate::memory::PrototypeMemory;
use crate::params::PdaParams;
use crate::simgen::EpisodeItem;
use crate::tensor::{FeatureVector, LogitVector, Matrix, RoiFeatureMap};

pub const MEMORY_MAGIC: &[u8; 4] = b"PDAM";
pub const PARAMS_MAGIC: &[u8; 4] = b"PDAP";
pub const EPISODE_MAGIC: &[u8; 4] = b"PDAE";
pub const FORMAT_VERSION: u32 = 1;

/// Fixed-size prefix of a memory file.
pub const MEMORY_HEADER_LEN: usize = 24;

struct Reader<'a> {
    format: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(format: &'static str, bytes: &'a [u8]) -> Self {
        Self { format, bytes, pos: 0 }
    }

    fn fail(&self, reason: impl Into<String>) -> PdaError {
        PdaError::Format {
            format: self.format,
            reason: reason.into(),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.fail(format!("truncated at byte {} (need {n} more)", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(self.fail("bad magic"));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(self.fail(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn dim(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as f64)
    }

    /// Checks the byte budget before allocating.
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(4).ok_or_else(|| self.fail("size overflow"))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(8).ok_or_else(|| self.fail("size overflow"))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.fail(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn product(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d))
}

pub fn encode_memory(memory: &PrototypeMemory) -> Vec<u8> {
    let mut out = Vec::with_capacity(MEMORY_HEADER_LEN + 4 * memory.prototypes().len());
    out.extend_from_slice(MEMORY_MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize);
    put_u32(&mut out, memory.num_classes());
    put_u32(&mut out, memory.slots_per_class());
    put_u32(&mut out, memory.dim());
    out.extend_from_slice(&[u8::from(memory.is_frozen()), 0, 0, 0]);
    for v in memory.prototypes() {
        put_f32(&mut out, *v);
    }
    out
}

/// Header fields of a memory file, readable without the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryHeader {
    pub num_classes: usize,
    pub slots_per_class: usize,
    pub dim: usize,
    pub frozen: bool,
}

fn read_memory_header(r: &mut Reader) -> Result<MemoryHeader> {
    r.magic(MEMORY_MAGIC)?;
    let (num_classes, slots_per_class, dim) = (r.dim()?, r.dim()?, r.dim()?);
    let frozen = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(r.fail(format!("frozen flag must be 0 or 1, got {other}"))),
    };
    if r.take(3)? != [0, 0, 0] {
        return Err(r.fail("nonzero padding"));
    }
    Ok(MemoryHeader {
        num_classes,
        slots_per_class,
        dim,
        frozen,
    })
}

pub fn decode_memory_header(bytes: &[u8]) -> Result<MemoryHeader> {
    read_memory_header(&mut Reader::new("memory", bytes))
}

pub fn decode_memory(bytes: &[u8]) -> Result<PrototypeMemory> {
    let mut r = Reader::new("memory", bytes);
    let h = read_memory_header(&mut r)?;
    let n = product(&[h.num_classes, h.slots_per_class, h.dim]).ok_or_else(|| r.fail("size overflow"))?;
    let values = r.f32s(n)?;
    r.finish()?;
    PrototypeMemory::from_slots(h.num_classes, h.slots_per_class, h.dim, values, h.frozen)
}

/// Decoded parameter file: the head's learnable scalars and the optional aligner.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsFile {
    /// `use_align` and `align_per_class` follow the aligner block; the rest
    /// of the non-stored fields keep their defaults.
    pub params: PdaParams,
    pub aligner: Option<AlignerParams>,
}

pub fn encode_params(params: &PdaParams, aligner: Option<&AlignerParams>) -> Vec<u8> {
    let d = params.dim();
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize);
    put_u32(&mut out, d);
    for v in params.projection.data() {
        put_f32(&mut out, *v);
    }
    put_f32(&mut out, params.log_scale);
    put_f32(&mut out, params.bg_bias);
    put_f32(&mut out, params.temperature());
    match aligner.filter(|_| params.use_align) {
        None => out.push(0),
        Some(a) => {
            out.push(if params.align_per_class { 2 } else { 1 });
            for v in [a.feat_channels(), a.dim(), a.height(), a.width()] {
                put_u32(&mut out, v);
            }
            for v in a.weight() {
                put_f32(&mut out, *v);
            }
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamsFile> {
    let mut r = Reader::new("params", bytes);
    r.magic(PARAMS_MAGIC)?;
    let d = r.dim()?;
    if d == 0 {
        return Err(r.fail("zero dimension"));
    }
    let n = product(&[d, d]).ok_or_else(|| r.fail("size overflow"))?;
    let w = r.f32s(n)?;
    let (log_scale, bg_bias, tau) = (r.f32()?, r.f32()?, r.f32()?);
    let mode = r.u8()?;
    let aligner = match mode {
        0 => None,
        1 | 2 => {
            let (c, ad, h, wd) = (r.dim()?, r.dim()?, r.dim()?, r.dim()?);
            if ad != d {
                return Err(PdaError::dims("aligner prototype dim", d, ad));
            }
            let n = c
                .checked_add(ad)
                .and_then(|v| product(&[v, 2, h, wd]))
                .ok_or_else(|| r.fail("size overflow"))?;
            let weights = r.f32s(n)?;
            Some(AlignerParams::from_weights(c, ad, h, wd, weights)?)
        }
        other => return Err(r.fail(format!("unknown aligner mode {other}"))),
    };
    r.finish()?;
    if !(log_scale.is_finite() && bg_bias.is_finite()) {
        return Err(PdaError::NonFinite("params scalars"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(PdaError::NonFinite("projection"));
    }
    let mut params = PdaParams::new(d).with_temperature(tau)?;
    params.set_projection(Matrix::new(d, d, w)?)?;
    params.log_scale = log_scale;
    params.bg_bias = bg_bias;
    params.use_align = aligner.is_some();
    params.align_per_class = mode == 2;
    Ok(ParamsFile { params, aligner })
}

/// Shape shared by every item of an episode split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitHeader {
    pub count: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

pub fn encode_items(items: &[EpisodeItem], num_classes: usize, map_dims: (usize, usize, usize)) -> Result<Vec<u8>> {
    let dim = items.first().map_or(map_dims.0, |it| it.feature.dim());
    let mut out = Vec::new();
    out.extend_from_slice(EPISODE_MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize);
    for v in [items.len(), num_classes, dim, map_dims.0, map_dims.1, map_dims.2] {
        put_u32(&mut out, v);
    }
    for it in items {
        if it.feature.dim() != dim {
            return Err(PdaError::dims("split feature", dim, it.feature.dim()));
        }
        if it.map.shape() != map_dims {
            return Err(PdaError::dims("split map size", map_dims.0 * map_dims.1 * map_dims.2, it.map.data().len()));
        }
        if it.z_cls.len() != num_classes + 1 {
            return Err(PdaError::dims("split logits", num_classes + 1, it.z_cls.len()));
        }
        put_u32(&mut out, it.class);
        for v in it.feature.as_slice().iter().chain(it.map.data()).chain(it.z_cls.as_slice()) {
            put_f64(&mut out, *v);
        }
    }
    Ok(out)
}

pub fn decode_split_header(bytes: &[u8]) -> Result<SplitHeader> {
    let mut r = Reader::new("episode", bytes);
    read_split_header(&mut r)
}

fn read_split_header(r: &mut Reader) -> Result<SplitHeader> {
    r.magic(EPISODE_MAGIC)?;
    Ok(SplitHeader {
        count: r.dim()?,
        num_classes: r.dim()?,
        dim: r.dim()?,
        channels: r.dim()?,
        height: r.dim()?,
        width: r.dim()?,
    })
}

pub fn decode_items(bytes: &[u8]) -> Result<(SplitHeader, Vec<EpisodeItem>)> {
    let mut r = Reader::new("episode", bytes);
    let h = read_split_header(&mut r)?;
    if h.num_classes == 0 || h.dim == 0 {
        return Err(r.fail("zero class count or dimension"));
    }
    let cells = product(&[h.channels, h.height, h.width]).ok_or_else(|| r.fail("size overflow"))?;
    let per_item = h
        .dim
        .checked_add(cells)
        .and_then(|v| v.checked_add(h.num_classes + 1))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(4))
        .ok_or_else(|| r.fail("size overflow"))?;
    if per_item.checked_mul(h.count) != Some(r.remaining()) {
        return Err(r.fail(format!("payload of {} bytes does not hold {} items", r.remaining(), h.count)));
    }
    let mut items = Vec::with_capacity(h.count);
    for _ in 0..h.count {
        let class = r.dim()?;
        if class >= h.num_classes {
            return Err(PdaError::ClassOutOfRange {
                class,
                num_classes: h.num_classes,
            });
        }
        let feature = FeatureVector::new(r.f64s(h.dim)?)?;
        let map = RoiFeatureMap::new(h.channels, h.height, h.width, r.f64s(cells)?)?;
        let z_cls = LogitVector::new(r.f64s(h.num_classes + 1)?)?;
        items.push(EpisodeItem {
            feature,
            map,
            class,
            z_cls,
        });
    }
    r.finish()?;
    Ok((h, items))
}
