//! Projection, best-of-K metric scoring, metric logits, logit fusion and the
//! end-to-end per-RoI inference pipeline.

use crate::align::{warp_trace, AlignTarget, AlignerParams, WarpTrace};
use crate::error::{PdaError, Result};
use crate::memory::PrototypeMemory;
use crate::params::{FusionWeights, PdaParams};
use crate::tensor::{dot, norm, normalize_slice, FeatureVector, LogitVector, Matrix, RoiFeatureMap};

/// Best-of-K similarity per class with the winning slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub values: Vec<f64>,
    pub best_slot: Vec<usize>,
}

impl ClassScores {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Normalizes `f`, applies `W`, and normalizes again.
pub fn project_and_normalize(f: &FeatureVector, projection: &Matrix) -> Result<FeatureVector> {
    let (_, _, z) = project_parts(f.as_slice(), projection)?;
    FeatureVector::new(z)
}

/// `(f / |f|, |W f_hat|, W f_hat / |W f_hat|)`.
pub(crate) fn project_parts(f: &[f64], projection: &Matrix) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    if projection.cols() != f.len() {
        return Err(PdaError::dims("projection input", projection.cols(), f.len()));
    }
    let f_unit = normalize_slice(f)?;
    let z = projection.mul_vec(&f_unit);
    let z_norm = norm(&z);
    let z_unit = normalize_slice(&z)?;
    Ok((f_unit, z_norm, z_unit))
}

/// Per-class maximum cosine over that class's slots.
pub fn best_of_k(z: &FeatureVector, memory: &PrototypeMemory) -> Result<ClassScores> {
    check_dim(z.as_slice(), memory)?;
    Ok(best_of_k_slice(z.as_slice(), memory))
}

fn check_dim(z: &[f64], memory: &PrototypeMemory) -> Result<()> {
    if z.len() != memory.dim() {
        return Err(PdaError::dims("scored feature", memory.dim(), z.len()));
    }
    Ok(())
}

pub(crate) fn best_of_k_slice(z: &[f64], memory: &PrototypeMemory) -> ClassScores {
    let mut values = Vec::with_capacity(memory.num_classes());
    let mut best_slot = Vec::with_capacity(memory.num_classes());
    for c in 0..memory.num_classes() {
        let (k, s) = best_slot_of(z, memory, c);
        values.push(s);
        best_slot.push(k);
    }
    ClassScores { values, best_slot }
}

/// Winning slot and its clamped cosine for one class.
pub(crate) fn best_slot_of(z: &[f64], memory: &PrototypeMemory, class: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for k in 0..memory.slots_per_class() {
        let sim = dot(z, memory.slot(class, k)).clamp(-1.0, 1.0);
        if sim > best_sim {
            best = k;
            best_sim = sim;
        }
    }
    (best, best_sim)
}

/// Global argmax over all `(class, slot)` pairs, lowest class then slot on ties.
pub fn select_global_best(z: &FeatureVector, memory: &PrototypeMemory) -> Result<(usize, usize)> {
    check_dim(z.as_slice(), memory)?;
    Ok(select_global_best_slice(z.as_slice(), memory))
}

pub(crate) fn select_global_best_slice(z: &[f64], memory: &PrototypeMemory) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_sim = f64::NEG_INFINITY;
    for c in 0..memory.num_classes() {
        for k in 0..memory.slots_per_class() {
            let sim = dot(z, memory.slot(c, k));
            if sim > best_sim {
                best = (c, k);
                best_sim = sim;
            }
        }
    }
    best
}

/// `exp(lambda) * [s_1/tau, ..., s_C/tau, b_bg]`.
pub fn pda_logits(scores: &ClassScores, params: &PdaParams) -> Result<LogitVector> {
    let tau = params.temperature();
    if tau.is_nan() || tau <= 0.0 {
        return Err(PdaError::NonPositiveTemperature(tau));
    }
    let sigma = params.scale();
    let mut values: Vec<f64> = scores.values.iter().map(|s| sigma * (s / tau)).collect();
    values.push(sigma * params.bg_bias);
    LogitVector::new(values)
}

/// `alpha * z_pda + beta * z_cls + gamma * z_pcb`; an absent PCB branch contributes nothing.
pub fn fuse(
    z_pda: &LogitVector,
    z_cls: &LogitVector,
    z_pcb: Option<&LogitVector>,
    weights: FusionWeights,
) -> Result<LogitVector> {
    if z_cls.len() != z_pda.len() {
        return Err(PdaError::dims("classifier logits", z_pda.len(), z_cls.len()));
    }
    let mut out: Vec<f64> = z_pda
        .as_slice()
        .iter()
        .zip(z_cls.as_slice())
        .map(|(p, c)| weights.alpha * p + weights.beta * c)
        .collect();
    if let Some(pcb) = z_pcb {
        if pcb.len() != z_pda.len() {
            return Err(PdaError::dims("PCB logits", z_pda.len(), pcb.len()));
        }
        for (o, v) in out.iter_mut().zip(pcb.as_slice()) {
            *o += weights.gamma * v;
        }
    }
    LogitVector::new(out)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &LogitVector) -> Vec<f64> {
    softmax_slice(logits.as_slice())
}

pub(crate) fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-RoI audit record.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// `(class, slot)` selected before alignment.
    pub global_best: (usize, usize),
    /// Scores from the unaligned projected feature.
    pub unaligned_scores: ClassScores,
    pub aligned: bool,
    pub pda_logits: LogitVector,
    pub cls_logits: LogitVector,
    pub pcb_logits: Option<LogitVector>,
    pub fused_logits: LogitVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRoi {
    pub probabilities: Vec<f64>,
    pub scores: ClassScores,
    pub diagnostics: Diagnostics,
}

/// Inference for one RoI against a frozen memory.
pub fn score_roi(
    feature: &FeatureVector,
    map: &RoiFeatureMap,
    memory: &PrototypeMemory,
    params: &PdaParams,
    aligner: Option<&AlignerParams>,
    z_cls: &LogitVector,
    z_pcb: Option<&LogitVector>,
) -> Result<ScoredRoi> {
    if !memory.is_frozen() {
        return Err(PdaError::MemoryNotFrozen);
    }
    let trace = forward(feature, map, memory, params, aligner, z_cls, z_pcb)?;
    Ok(ScoredRoi {
        probabilities: trace.probabilities,
        scores: trace.scores,
        diagnostics: Diagnostics {
            global_best: trace.global_best,
            unaligned_scores: trace.unaligned_scores,
            aligned: !trace.warps.is_empty(),
            pda_logits: trace.pda,
            cls_logits: z_cls.clone(),
            pcb_logits: z_pcb.cloned(),
            fused_logits: trace.fused,
        },
    })
}

/// Every intermediate of one forward pass, kept for gradient evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub f_unit: Vec<f64>,
    pub z0_norm: f64,
    pub z0_unit: Vec<f64>,
    pub global_best: (usize, usize),
    pub unaligned_scores: ClassScores,
    pub warps: Vec<WarpTrace>,
    pub scores: ClassScores,
    /// Whether the cosine of each class's winning slot hit the [-1, 1] clamp.
    pub clamped: Vec<bool>,
    pub pda: LogitVector,
    pub fused: LogitVector,
    pub probabilities: Vec<f64>,
}

/// The inference pipeline without the frozen-memory check; training reuses it.
pub(crate) fn forward(
    feature: &FeatureVector,
    map: &RoiFeatureMap,
    memory: &PrototypeMemory,
    params: &PdaParams,
    aligner: Option<&AlignerParams>,
    z_cls: &LogitVector,
    z_pcb: Option<&LogitVector>,
) -> Result<Trace> {
    let num_classes = memory.num_classes();
    if z_cls.num_classes() != num_classes {
        return Err(PdaError::dims("classifier logits", num_classes + 1, z_cls.len()));
    }
    if params.dim() != memory.dim() {
        return Err(PdaError::dims("projection vs memory", memory.dim(), params.dim()));
    }
    let (f_unit, z0_norm, z0_unit) = project_parts(feature.as_slice(), &params.projection)?;
    let global_best = select_global_best_slice(&z0_unit, memory);
    let unaligned_scores = best_of_k_slice(&z0_unit, memory);

    let (warps, scores) = if params.use_align {
        let aligner = aligner.ok_or(PdaError::AlignerMissing)?;
        let target = if params.align_per_class {
            AlignTarget::PerClass(unaligned_scores.best_slot.clone())
        } else {
            AlignTarget::Global {
                class: global_best.0,
                slot: global_best.1,
            }
        };
        let warps = match &target {
            AlignTarget::Global { class, slot } => {
                vec![warp_trace(map, memory, params, aligner, (*class, *slot), None)?]
            }
            AlignTarget::PerClass(slots) => slots
                .iter()
                .enumerate()
                .map(|(c, &k)| warp_trace(map, memory, params, aligner, (c, k), Some(c)))
                .collect::<Result<Vec<_>>>()?,
        };
        let scores = match warps.as_slice() {
            [single] if single.scored_class.is_none() => best_of_k_slice(&single.embedding, memory),
            per_class => {
                let mut values = Vec::with_capacity(num_classes);
                let mut best_slot = Vec::with_capacity(num_classes);
                for (c, w) in per_class.iter().enumerate() {
                    let (k, s) = best_slot_of(&w.embedding, memory, c);
                    values.push(s);
                    best_slot.push(k);
                }
                ClassScores { values, best_slot }
            }
        };
        (warps, scores)
    } else {
        (Vec::new(), unaligned_scores.clone())
    };

    let clamped = (0..num_classes)
        .map(|c| {
            let z = match warps.as_slice() {
                [] => &z0_unit,
                [single] if single.scored_class.is_none() => &single.embedding,
                per_class => &per_class[c].embedding,
            };
            dot(z, memory.slot(c, scores.best_slot[c])).abs() > 1.0
        })
        .collect();

    let pda = pda_logits(&scores, params)?;
    let fused = fuse(&pda, z_cls, z_pcb, params.fusion)?;
    let probabilities = softmax(&fused);
    Ok(Trace {
        f_unit,
        z0_norm,
        z0_unit,
        global_best,
        unaligned_scores,
        warps,
        scores,
        clamped,
        pda,
        fused,
        probabilities,
    })
}
