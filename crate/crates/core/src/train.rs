//! Fine-tuning of the head's learnable parameters.
//!
//! The loss is the mean cross-entropy of the softmax over fused (or
//! metric-only) logits. Prototypes, classifier logits and PCB logits are
//! constants; only `W`, `lambda`, `b_bg` and the aligner weights receive
//! gradient. The best-of-K max and the global prototype selection pass
//! gradient through the winning slot only.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{sample_point, AlignerParams, OFFSET_BOUND};
use crate::error::{PdaError, Result};
use crate::memory::{ema_update, PrototypeMemory};
use crate::params::PdaParams;
use crate::scoring::{forward, project_and_normalize, Trace};
use crate::tensor::{dot, FeatureVector, LogitVector, RoiFeatureMap};

/// Training label: a foreground class or the background slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Foreground(usize),
    Background,
}

impl Label {
    /// Position in a `C + 1` logit vector.
    pub fn logit_index(self, num_classes: usize) -> usize {
        match self {
            Label::Foreground(c) => c,
            Label::Background => num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub feature: FeatureVector,
    pub map: RoiFeatureMap,
    pub label: Label,
    pub z_cls: LogitVector,
    pub z_pcb: Option<LogitVector>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledBatch {
    pub items: Vec<LabeledItem>,
}

impl LabeledBatch {
    pub fn new(items: Vec<LabeledItem>) -> Self {
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn foreground(&self) -> impl Iterator<Item = (usize, &LabeledItem)> {
        self.items.iter().filter_map(|it| match it.label {
            Label::Foreground(c) => Some((c, it)),
            Label::Background => None,
        })
    }
}

/// Which logits the cross-entropy is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossTarget {
    #[default]
    Fused,
    MetricOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Shuffles the batch visiting order each pass.
    pub seed: u64,
    pub train_projection: bool,
    pub train_scale: bool,
    pub train_bias: bool,
    pub train_aligner: bool,
    pub loss_target: LossTarget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            steps: 100,
            seed: 0,
            train_projection: true,
            train_scale: true,
            train_bias: true,
            train_aligner: true,
            loss_target: LossTarget::Fused,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PdaError::ConfigInvalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn nothing_trainable(&self) -> bool {
        !(self.train_projection || self.train_scale || self.train_bias || self.train_aligner)
    }
}

/// Partial derivatives of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Row-major `D x D`.
    pub projection: Vec<f64>,
    pub log_scale: f64,
    pub bg_bias: f64,
    /// Same layout as `AlignerParams::weight`; `None` without an aligner.
    pub aligner: Option<Vec<f64>>,
}

impl Gradients {
    fn zeros(dim: usize, aligner: Option<&AlignerParams>) -> Self {
        Self {
            projection: vec![0.0; dim * dim],
            log_scale: 0.0,
            bg_bias: 0.0,
            aligner: aligner.map(|a| vec![0.0; a.weight().len()]),
        }
    }

    fn scale(&mut self, s: f64) {
        self.projection.iter_mut().for_each(|g| *g *= s);
        self.log_scale *= s;
        self.bg_bias *= s;
        if let Some(a) = &mut self.aligner {
            a.iter_mut().for_each(|g| *g *= s);
        }
    }
}

fn check_batch(batch: &LabeledBatch, memory: &PrototypeMemory) -> Result<()> {
    if batch.is_empty() {
        return Err(PdaError::EmptyBatch);
    }
    for item in &batch.items {
        if let Label::Foreground(c) = item.label {
            memory.check_class(c)?;
        }
    }
    Ok(())
}

fn item_trace(
    item: &LabeledItem,
    memory: &PrototypeMemory,
    params: &PdaParams,
    aligner: Option<&AlignerParams>,
) -> Result<Trace> {
    forward(
        &item.feature,
        &item.map,
        memory,
        params,
        aligner,
        &item.z_cls,
        item.z_pcb.as_ref(),
    )
}

/// `-log softmax(z)[target]`, computed stably.
fn cross_entropy(z: &[f64], target: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - z[target]
}

fn softmax(z: &[f64]) -> Vec<f64> {
    crate::scoring::softmax_slice(z)
}

/// Mean cross-entropy over the batch, with the memory held constant.
pub fn metric_loss(
    batch: &LabeledBatch,
    memory: &PrototypeMemory,
    params: &PdaParams,
    aligner: Option<&AlignerParams>,
    target: LossTarget,
) -> Result<f64> {
    check_batch(batch, memory)?;
    let mut total = 0.0;
    for item in &batch.items {
        let trace = item_trace(item, memory, params, aligner)?;
        let logits = match target {
            LossTarget::Fused => trace.fused.as_slice(),
            LossTarget::MetricOnly => trace.pda.as_slice(),
        };
        total += cross_entropy(logits, item.label.logit_index(memory.num_classes()));
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of [`metric_loss`].
pub fn grad_params(
    batch: &LabeledBatch,
    memory: &PrototypeMemory,
    params: &PdaParams,
    aligner: Option<&AlignerParams>,
    target: LossTarget,
) -> Result<Gradients> {
    loss_and_gradients(batch, memory, params, aligner, target).map(|(_, g)| g)
}

pub fn loss_and_gradients(
    batch: &LabeledBatch,
    memory: &PrototypeMemory,
    params: &PdaParams,
    aligner: Option<&AlignerParams>,
    target: LossTarget,
) -> Result<(f64, Gradients)> {
    check_batch(batch, memory)?;
    let mut grads = Gradients::zeros(params.dim(), aligner);
    let mut total = 0.0;
    for item in &batch.items {
        let trace = item_trace(item, memory, params, aligner)?;
        let y = item.label.logit_index(memory.num_classes());
        total += accumulate_item(&trace, y, item, memory, params, aligner, target, &mut grads);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

#[allow(clippy::too_many_arguments)]
fn accumulate_item(
    trace: &Trace,
    y: usize,
    item: &LabeledItem,
    memory: &PrototypeMemory,
    params: &PdaParams,
    aligner: Option<&AlignerParams>,
    target: LossTarget,
    grads: &mut Gradients,
) -> f64 {
    let num_classes = memory.num_classes();
    let dim = params.dim();
    let (logits, branch_weight) = match target {
        LossTarget::Fused => (trace.fused.as_slice(), params.fusion.alpha),
        LossTarget::MetricOnly => (trace.pda.as_slice(), 1.0),
    };
    let loss = cross_entropy(logits, y);
    let mut delta = softmax(logits);
    delta[y] -= 1.0;

    // d loss / d z_pda
    let g_pda: Vec<f64> = delta.iter().map(|d| branch_weight * d).collect();
    let sigma = params.scale();
    let tau = params.temperature();
    grads.log_scale += dot(&g_pda, trace.pda.as_slice());
    grads.bg_bias += g_pda[num_classes] * sigma;
    let d_scores: Vec<f64> = (0..num_classes)
        .map(|c| {
            if trace.clamped[c] {
                0.0
            } else {
                g_pda[c] * sigma / tau
            }
        })
        .collect();

    // sum over scored classes of d_s_c * p_{c, k_c}
    let embedding_grad = |classes: &mut dyn Iterator<Item = usize>| {
        let mut gz = vec![0.0; dim];
        for c in classes {
            let p = memory.slot(c, trace.scores.best_slot[c]);
            for (g, v) in gz.iter_mut().zip(p) {
                *g += d_scores[c] * v;
            }
        }
        gz
    };

    if trace.warps.is_empty() {
        let gz = embedding_grad(&mut (0..num_classes));
        let dz = through_normalization(&gz, &trace.z0_unit, trace.z0_norm);
        add_outer(&mut grads.projection, &dz, &trace.f_unit);
        return loss;
    }

    let aligner = aligner.expect("warps imply an aligner");
    let map = &item.map;
    let (h, w) = (map.height(), map.width());
    let cells = h * w;
    let out_dim = aligner.output_dim();
    for warp in &trace.warps {
        let gz = match warp.scored_class {
            None => embedding_grad(&mut (0..num_classes)),
            Some(c) => embedding_grad(&mut std::iter::once(c)),
        };
        let dz = through_normalization(&gz, &warp.embedding, warp.projected_norm);
        add_outer(&mut grads.projection, &dz, &warp.pooled_unit);

        let Some(grad_aligner) = grads.aligner.as_mut() else {
            continue;
        };
        let d_unit = params.projection.tr_mul_vec(&dz);
        let d_pooled = through_normalization(&d_unit, &warp.pooled_unit, warp.pooled_norm);

        let mut d_raw = vec![0.0; out_dim];
        for cell in 0..cells {
            let (y0, x0) = (cell / w, cell % w);
            let dx = warp.offsets.dx()[cell];
            let dy = warp.offsets.dy()[cell];
            let point = sample_point(y0 as f64 + dy, x0 as f64 + dx, h, w);
            let (mut g_dy, mut g_dx) = (0.0, 0.0);
            for (c, dp) in d_pooled.iter().enumerate() {
                let (gy, gx) = point.gradient(map.channel(c), w);
                g_dy += dp * gy;
                g_dx += dp * gx;
            }
            let inv_cells = 1.0 / cells as f64;
            let tx = warp.raw[cell].tanh();
            let ty = warp.raw[cells + cell].tanh();
            d_raw[cell] = g_dx * inv_cells * OFFSET_BOUND * (1.0 - tx * tx);
            d_raw[cells + cell] = g_dy * inv_cells * OFFSET_BOUND * (1.0 - ty * ty);
        }
        for (i, x) in warp.input.iter().enumerate() {
            let row = &mut grad_aligner[i * out_dim..(i + 1) * out_dim];
            for (g, d) in row.iter_mut().zip(&d_raw) {
                *g += x * d;
            }
        }
    }
    loss
}

/// Gradient w.r.t. `z` of a loss on `z / |z|`, given the gradient `g` w.r.t. the unit vector.
fn through_normalization(g: &[f64], unit: &[f64], length: f64) -> Vec<f64> {
    let proj = dot(g, unit);
    g.iter().zip(unit).map(|(gi, ui)| (gi - proj * ui) / length).collect()
}

fn add_outer(acc: &mut [f64], left: &[f64], right: &[f64]) {
    let cols = right.len();
    for (r, l) in left.iter().enumerate() {
        for (a, v) in acc[r * cols..(r + 1) * cols].iter_mut().zip(right) {
            *a += l * v;
        }
    }
}

/// One plain SGD step on every parameter group whose training flag is on.
pub fn sgd_step(
    params: &mut PdaParams,
    aligner: Option<&mut AlignerParams>,
    grads: &Gradients,
    learning_rate: f64,
    config: &TrainConfig,
) {
    if learning_rate == 0.0 {
        return;
    }
    if config.train_projection {
        for (w, g) in params.projection.data_mut().iter_mut().zip(&grads.projection) {
            *w -= learning_rate * g;
        }
    }
    if config.train_scale {
        params.log_scale -= learning_rate * grads.log_scale;
    }
    if config.train_bias {
        params.bg_bias -= learning_rate * grads.bg_bias;
    }
    if config.train_aligner {
        if let (Some(a), Some(g)) = (aligner, grads.aligner.as_ref()) {
            for (w, d) in a.weight_mut().iter_mut().zip(g) {
                *w -= learning_rate * d;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    /// Loss before this step's parameter update.
    pub loss: f64,
    /// `[class][slot]` EMA member counts for this step.
    pub occupancy: Vec<Vec<usize>>,
    /// Mean cosine between updated slots before and after; 1 when nothing moved.
    pub drift_cos: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// CSV with one occupancy column per `(class, slot)`. The `wall_ms`
    /// column is only written with `timings`, so untimed output is reproducible.
    pub fn to_csv(&self, timings: bool) -> String {
        let mut out = String::from("step,loss");
        if let Some(first) = self.rows.first() {
            for (c, slots) in first.occupancy.iter().enumerate() {
                for k in 0..slots.len() {
                    out.push_str(&format!(",occ_c{c}_k{k}"));
                }
            }
        }
        out.push_str(if timings { ",drift_cos,wall_ms\n" } else { ",drift_cos\n" });
        for r in &self.rows {
            out.push_str(&format!("{},{:.10}", r.step, r.loss));
            for n in r.occupancy.iter().flatten() {
                out.push_str(&format!(",{n}"));
            }
            out.push_str(&format!(",{:.10}", r.drift_cos));
            if timings {
                out.push_str(&format!(",{:.3}", r.wall_ms));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub params: PdaParams,
    pub aligner: Option<AlignerParams>,
    /// Always frozen.
    pub memory: PrototypeMemory,
    pub history: History,
}

/// Runs `config.steps` steps over `batches` (cycled, order reshuffled per pass):
/// loss and gradients, an SGD step, then, unless `params.freeze_mem`, an EMA
/// update from the batch's foreground items projected with the updated `W`.
/// The returned memory is frozen.
pub fn finetune(
    batches: &[LabeledBatch],
    memory: PrototypeMemory,
    params: PdaParams,
    aligner: Option<AlignerParams>,
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    if !params.freeze_mem && memory.is_frozen() {
        return Err(PdaError::MemoryFrozen);
    }
    if config.steps > 0 && batches.is_empty() {
        return Err(PdaError::EmptyBatch);
    }
    let mut memory = memory;
    let mut params = params;
    let mut aligner = aligner;
    let mut history = History::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = Vec::new();

    for step in 0..config.steps {
        let start = Instant::now();
        if order.is_empty() {
            order = (0..batches.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let batch = &batches[order.pop().expect("refilled above")];
        let (loss, grads) =
            loss_and_gradients(batch, &memory, &params, aligner.as_ref(), config.loss_target)?;
        sgd_step(&mut params, aligner.as_mut(), &grads, config.learning_rate, config);

        let mut occupancy = vec![vec![0; memory.slots_per_class()]; memory.num_classes()];
        let mut drift_cos = 1.0;
        if !params.freeze_mem {
            let updates = batch
                .foreground()
                .map(|(c, item)| Ok((c, project_and_normalize(&item.feature, &params.projection)?)))
                .collect::<Result<Vec<_>>>()?;
            let report = ema_update(&mut memory, &updates, params.momentum())?;
            occupancy = report.occupancy(memory.num_classes(), memory.slots_per_class());
            drift_cos = report.mean_drift_cos().unwrap_or(1.0);
        }
        history.rows.push(HistoryRow {
            step,
            loss,
            occupancy,
            drift_cos,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    memory.freeze();
    Ok(FinetuneOutcome {
        params,
        aligner,
        memory,
        history,
    })
}
