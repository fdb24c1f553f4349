#![allow(dead_code)]

pub mod oracle;

use pda_core::train::{Label, LabeledBatch, LabeledItem, LossTarget};
use pda_core::{AlignerParams, FeatureVector, FusionWeights, LogitVector, Matrix, PdaParams, PrototypeMemory, RoiFeatureMap};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| { let x: f64 = StandardNormal.sample(rng); scale * x }).collect()
}

pub fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v = gaussian(rng, d, 1.0);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub classes: usize,
    pub slots: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            classes: rng.random_range(1..=5),
            slots: rng.random_range(1..=3),
            dim: rng.random_range(2..=16),
            height: rng.random_range(1..=5),
            width: rng.random_range(1..=5),
        }
    }
}

pub struct Instance {
    pub shape: Shape,
    pub memory: PrototypeMemory,
    pub params: PdaParams,
    pub aligner: Option<AlignerParams>,
    pub items: Vec<LabeledItem>,
}

pub fn random_memory(rng: &mut ChaCha8Rng, s: Shape) -> PrototypeMemory {
    let slots: Vec<f64> = (0..s.classes * s.slots).flat_map(|_| unit(rng, s.dim)).collect();
    PrototypeMemory::from_slots(s.classes, s.slots, s.dim, slots, true).unwrap()
}

pub fn random_item(rng: &mut ChaCha8Rng, s: Shape, with_pcb: bool) -> LabeledItem {
    // a smooth-ish map so shifts change the pooled vector by O(1)
    let cells = s.height * s.width;
    let mut data = Vec::with_capacity(s.dim * cells);
    for _ in 0..s.dim {
        let base: f64 = StandardNormal.sample(rng);
        let gy: f64 = StandardNormal.sample(rng);
        let gx: f64 = StandardNormal.sample(rng);
        for cell in 0..cells {
            let (y, x) = ((cell / s.width) as f64, (cell % s.width) as f64);
            let noise: f64 = StandardNormal.sample(rng);
            data.push(base + 0.5 * gy * y + 0.5 * gx * x + 0.3 * noise);
        }
    }
    let map = RoiFeatureMap::new(s.dim, s.height, s.width, data).unwrap();
    let feature = pda_core::global_average_pool(&map);
    let label = if rng.random_bool(0.2) {
        Label::Background
    } else {
        Label::Foreground(rng.random_range(0..s.classes))
    };
    LabeledItem {
        feature,
        map,
        label,
        z_cls: LogitVector::new(gaussian(rng, s.classes + 1, 1.5)).unwrap(),
        z_pcb: with_pcb.then(|| LogitVector::new(gaussian(rng, s.classes + 1, 1.0)).unwrap()),
    }
}

/// A random head with every branch active; `align` decides the aligner mode.
pub fn random_instance(rng: &mut ChaCha8Rng, s: Shape, items: usize, align: Option<bool>) -> Instance {
    let memory = random_memory(rng, s);
    let mut params = PdaParams::new(s.dim);
    let w: Vec<f64> = Matrix::identity(s.dim)
        .data()
        .iter()
        .zip(gaussian(rng, s.dim * s.dim, 0.3))
        .map(|(i, n)| i + n)
        .collect();
    params.set_projection(Matrix::new(s.dim, s.dim, w).unwrap()).unwrap();
    params.log_scale = gaussian(rng, 1, 0.3)[0];
    params.bg_bias = gaussian(rng, 1, 0.5)[0];
    params.set_temperature(rng.random_range(0.1..1.0)).unwrap();
    params.fusion = FusionWeights::new(rng.random_range(0.05..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
    let with_pcb = rng.random_bool(0.5);
    let aligner = match align {
        Some(per_class) => {
            params.use_align = true;
            params.align_per_class = per_class;
            let n = (s.dim + s.dim) * 2 * s.height * s.width;
            Some(AlignerParams::from_weights(s.dim, s.dim, s.height, s.width, gaussian(rng, n, 0.15)).unwrap())
        }
        None => None,
    };
    let items = (0..items).map(|_| random_item(rng, s, with_pcb)).collect();
    Instance {
        shape: s,
        memory,
        params,
        aligner,
        items,
    }
}

impl Instance {
    pub fn batch(&self) -> LabeledBatch {
        LabeledBatch::new(self.items.clone())
    }

    pub fn head(&self) -> oracle::Head {
        oracle_head(&self.memory, &self.params, self.aligner.as_ref())
    }
}

pub fn oracle_head(memory: &PrototypeMemory, params: &PdaParams, aligner: Option<&AlignerParams>) -> oracle::Head {
    let slots = (0..memory.num_classes())
        .map(|c| (0..memory.slots_per_class()).map(|k| memory.slot(c, k).to_vec()).collect())
        .collect();
    let w = (0..params.dim()).map(|r| params.projection.row(r).to_vec()).collect();
    let a = aligner.map(|a| a.weight().chunks(a.output_dim()).map(|r| r.to_vec()).collect());
    oracle::Head {
        slots,
        w,
        lambda: params.log_scale,
        b_bg: params.bg_bias,
        tau: params.temperature(),
        alpha: params.fusion.alpha,
        beta: params.fusion.beta,
        gamma: params.fusion.gamma,
        use_align: params.use_align,
        per_class: params.align_per_class,
        a,
    }
}

pub fn oracle_roi(item: &LabeledItem) -> oracle::Roi {
    let m = &item.map;
    let map = (0..m.channels())
        .map(|c| (0..m.height()).map(|y| (0..m.width()).map(|x| m.get(c, y, x)).collect()).collect())
        .collect();
    oracle::Roi {
        f: item.feature.as_slice().to_vec(),
        map,
        z_cls: item.z_cls.as_slice().to_vec(),
        z_pcb: item.z_pcb.as_ref().map(|z| z.as_slice().to_vec()),
    }
}

pub fn feature(v: &[f64]) -> FeatureVector {
    FeatureVector::new(v.to_vec()).unwrap()
}

/// `|a - n| / max(|a|, |n|, guard)`.
pub fn relative_error(analytic: f64, numeric: f64, guard: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(guard)
}

pub const FD_STEP: f64 = 1e-4;

/// Which scalar of the head a finite difference perturbs.
#[derive(Debug, Clone, Copy)]
pub enum Param {
    Projection(usize),
    LogScale,
    BgBias,
    Aligner(usize),
}

pub fn perturbed(inst: &Instance, p: Param, delta: f64) -> (PdaParams, Option<AlignerParams>) {
    let mut params = inst.params.clone();
    let mut aligner = inst.aligner.clone();
    match p {
        Param::Projection(i) => {
            let mut w = params.projection.data().to_vec();
            w[i] += delta;
            params.set_projection(Matrix::new(params.dim(), params.dim(), w).unwrap()).unwrap();
        }
        Param::LogScale => params.log_scale += delta,
        Param::BgBias => params.bg_bias += delta,
        Param::Aligner(i) => {
            let a = aligner.as_ref().unwrap();
            let mut w = a.weight().to_vec();
            w[i] += delta;
            aligner = Some(AlignerParams::from_weights(a.feat_channels(), a.dim(), a.height(), a.width(), w).unwrap());
        }
    }
    (params, aligner)
}

pub struct GradCheck {
    pub worst: f64,
    pub checked: usize,
    /// A perturbation crossed a selection or interpolation-cell boundary.
    pub kinked: bool,
}

fn signatures(inst: &Instance, params: &PdaParams, aligner: Option<&AlignerParams>) -> Vec<oracle::Signature> {
    let head = oracle_head(&inst.memory, params, aligner);
    inst.items.iter().map(|it| oracle::infer(&head, &oracle_roi(it)).signature).collect()
}

/// Compares every analytic partial against a central difference of `metric_loss`.
pub fn check_gradients(inst: &Instance, target: LossTarget, guard: f64) -> GradCheck {
    let batch = inst.batch();
    let grads = pda_core::grad_params(&batch, &inst.memory, &inst.params, inst.aligner.as_ref(), target).unwrap();
    let base_sig = signatures(inst, &inst.params, inst.aligner.as_ref());
    let mut params: Vec<(Param, f64)> = grads.projection.iter().enumerate().map(|(i, g)| (Param::Projection(i), *g)).collect();
    params.push((Param::LogScale, grads.log_scale));
    params.push((Param::BgBias, grads.bg_bias));
    if let Some(ga) = &grads.aligner {
        params.extend(ga.iter().enumerate().map(|(i, g)| (Param::Aligner(i), *g)));
    }
    let mut out = GradCheck {
        worst: 0.0,
        checked: 0,
        kinked: false,
    };
    for (p, analytic) in params {
        let (pp, ap) = perturbed(inst, p, FD_STEP);
        let (pm, am) = perturbed(inst, p, -FD_STEP);
        if signatures(inst, &pp, ap.as_ref()) != base_sig || signatures(inst, &pm, am.as_ref()) != base_sig {
            out.kinked = true;
            return out;
        }
        let lp = pda_core::metric_loss(&batch, &inst.memory, &pp, ap.as_ref(), target).unwrap();
        let lm = pda_core::metric_loss(&batch, &inst.memory, &pm, am.as_ref(), target).unwrap();
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        out.worst = out.worst.max(relative_error(analytic, numeric, guard));
        out.checked += 1;
    }
    out
}
