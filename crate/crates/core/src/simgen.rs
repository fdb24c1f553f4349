//! Synthetic few-shot episodes: multi-modal class distributions in embedding
//! space, small RoI maps whose pooled vectors are the features, and a
//! simulated detector classifier with a configurable bias toward base classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PdaError, Result};
use crate::memory::SupportSet;
use crate::tensor::{argmax, dot, global_average_pool, FeatureVector, LogitVector, RoiFeatureMap};
use crate::train::{Label, LabeledBatch, LabeledItem};

/// Shot counts allowed under the strict protocol.
pub const PROTOCOL_SHOTS: [usize; 5] = [1, 2, 3, 5, 10];

/// Number of seeds aggregated by default.
pub const DEFAULT_SEED_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeLayout {
    /// Independent random unit directions.
    #[default]
    Random,
    /// All modes of all classes mutually orthonormal (needs `dim >= classes * modes`).
    Orthogonal,
    /// Modes orthonormal within each class, unrelated across classes.
    ClassOrthogonal,
}

/// Spatial misalignment applied to query and training RoIs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    /// Displacement in cells along each displaced axis.
    pub cells: usize,
    /// Norm of the clutter vector filling the context ring around the object.
    pub clutter: f64,
    /// One displacement per class instead of a single shared one.
    #[serde(default)]
    pub per_class: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of the per-channel spatial ramp slopes.
    pub variation: f64,
    pub shift: Option<ShiftConfig>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            height: 3,
            width: 3,
            variation: 0.1,
            shift: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub num_base: usize,
    pub num_novel: usize,
    pub dim: usize,
    pub modes_per_class: usize,
    pub mode_layout: ModeLayout,
    pub shots: usize,
    pub queries_per_class: usize,
    /// Labeled fine-tuning RoIs per class, drawn like queries.
    pub train_rois_per_class: usize,
    /// Norm scale of the Gaussian noise added to a mode before normalization.
    pub mode_spread: f64,
    /// Angle in radians by which query and fine-tuning modes are rotated away
    /// from the support modes.
    pub query_rotation: f64,
    /// Added to the detector logits of every base class.
    pub base_bias: f64,
    pub logit_scale: f64,
    pub logit_noise: f64,
    /// Background logit sits this far below the best foreground logit.
    pub bg_margin: f64,
    pub map: MapConfig,
    pub strict_protocol: bool,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            num_base: 5,
            num_novel: 5,
            dim: 16,
            modes_per_class: 1,
            mode_layout: ModeLayout::Random,
            shots: 3,
            queries_per_class: 20,
            train_rois_per_class: 10,
            mode_spread: 0.1,
            query_rotation: 0.0,
            base_bias: 0.0,
            logit_scale: 5.0,
            logit_noise: 0.1,
            bg_margin: 1.0,
            map: MapConfig::default(),
            strict_protocol: true,
            seed: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> PdaError {
    PdaError::ConfigInvalid(msg.into())
}

impl EpisodeConfig {
    pub fn num_classes(&self) -> usize {
        self.num_base + self.num_novel
    }

    pub fn is_novel(&self, class: usize) -> bool {
        class >= self.num_base
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.num_classes();
        if classes == 0 {
            return Err(invalid("episode needs at least one class"));
        }
        if self.dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        if self.modes_per_class == 0 {
            return Err(invalid("modes_per_class must be at least 1"));
        }
        if self.shots == 0 {
            return Err(invalid("shots must be at least 1"));
        }
        if self.strict_protocol && !PROTOCOL_SHOTS.contains(&self.shots) {
            return Err(invalid(format!("shots {} not in {PROTOCOL_SHOTS:?}", self.shots)));
        }
        if !(self.mode_spread > 0.0 && self.mode_spread.is_finite()) {
            return Err(invalid("mode_spread must be positive"));
        }
        let reals = [
            ("query_rotation", self.query_rotation),
            ("base_bias", self.base_bias),
            ("logit_scale", self.logit_scale),
            ("logit_noise", self.logit_noise),
            ("bg_margin", self.bg_margin),
            ("map.variation", self.map.variation),
        ];
        if let Some((name, _)) = reals.iter().find(|(_, v)| !v.is_finite()) {
            return Err(invalid(format!("{name} must be finite")));
        }
        if self.logit_noise < 0.0 || self.map.variation < 0.0 {
            return Err(invalid("noise scales must be non-negative"));
        }
        match self.mode_layout {
            ModeLayout::Orthogonal if self.dim < classes * self.modes_per_class => {
                return Err(invalid("orthogonal layout needs dim >= classes * modes_per_class"))
            }
            ModeLayout::ClassOrthogonal if self.dim < self.modes_per_class => {
                return Err(invalid("class-orthogonal layout needs dim >= modes_per_class"))
            }
            _ => {}
        }
        if self.map.channels != self.dim {
            return Err(invalid(format!(
                "map channels ({}) must equal dim ({})",
                self.map.channels, self.dim
            )));
        }
        if self.map.height == 0 || self.map.width == 0 {
            return Err(invalid("map height and width must be positive"));
        }
        if let Some(shift) = &self.map.shift {
            if !(shift.clutter >= 0.0 && shift.clutter.is_finite()) {
                return Err(invalid("shift clutter must be non-negative"));
            }
            if shift.cells == 0 {
                return Err(invalid("shift cells must be positive"));
            }
        }
        // keeps generated episodes addressable by the u32 file formats
        let per_class = self.shots.max(self.queries_per_class).max(self.train_rois_per_class);
        let cells = self.map.height.saturating_mul(self.map.width).saturating_mul(self.dim);
        if classes > 100_000 || per_class > 1_000_000 || self.dim > 65_536 || cells > 1 << 24 {
            return Err(invalid("episode too large"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeItem {
    /// Always `GAP(map)`.
    pub feature: FeatureVector,
    pub map: RoiFeatureMap,
    pub class: usize,
    pub z_cls: LogitVector,
}

impl EpisodeItem {
    pub fn labeled(&self) -> LabeledItem {
        LabeledItem {
            feature: self.feature.clone(),
            map: self.map.clone(),
            label: Label::Foreground(self.class),
            z_cls: self.z_cls.clone(),
            z_pcb: None,
        }
    }
}

/// Generator-side truth, for oracle checks only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `[class][mode]` support-side mode directions.
    pub modes: Vec<Vec<Vec<f64>>>,
    /// `[class][mode]` directions used for fine-tuning RoIs and queries.
    pub drifted_modes: Vec<Vec<Vec<f64>>>,
    /// Normalized mean of each class's support modes; the simulated classifier's weights.
    pub class_means: Vec<Vec<f64>>,
    /// `(dy, dx)` object displacement per class, zero without a shift.
    pub displacements: Vec<(i64, i64)>,
    pub support_modes: Vec<usize>,
    pub train_modes: Vec<usize>,
    pub query_modes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub config: EpisodeConfig,
    pub support: Vec<EpisodeItem>,
    pub train: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
    pub ground_truth: GroundTruth,
}

impl Episode {
    pub fn num_classes(&self) -> usize {
        self.config.num_classes()
    }

    pub fn support_set(&self) -> Result<SupportSet> {
        let set = SupportSet::new(
            self.num_classes(),
            self.support.iter().map(|it| (it.class, it.feature.clone())).collect(),
        )?;
        if self.config.strict_protocol {
            set.check_shots(self.config.num_base..self.num_classes(), self.config.shots)?;
        }
        Ok(set)
    }

    /// Fine-tuning batches holding one RoI per class each, cycling through
    /// every class's training RoIs.
    pub fn training_batches(&self) -> Vec<LabeledBatch> {
        let mut per_class: Vec<Vec<&EpisodeItem>> = vec![Vec::new(); self.num_classes()];
        for it in &self.train {
            per_class[it.class].push(it);
        }
        let rounds = per_class.iter().map(Vec::len).max().unwrap_or(0);
        (0..rounds)
            .map(|r| {
                LabeledBatch::new(
                    per_class
                        .iter()
                        .filter(|items| !items.is_empty())
                        .map(|items| items[r % items.len()].labeled())
                        .collect(),
                )
            })
            .collect()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `count` orthonormal directions by Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn unit_of(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    v.iter().map(|x| x / n).collect()
}

fn draw_modes(rng: &mut ChaCha8Rng, config: &EpisodeConfig) -> Vec<Vec<Vec<f64>>> {
    let (classes, m, d) = (config.num_classes(), config.modes_per_class, config.dim);
    match config.mode_layout {
        ModeLayout::Random => (0..classes).map(|_| (0..m).map(|_| random_unit(rng, d)).collect()).collect(),
        ModeLayout::Orthogonal => {
            let mut all = orthonormal(rng, d, classes * m).into_iter();
            (0..classes).map(|_| all.by_ref().take(m).collect()).collect()
        }
        ModeLayout::ClassOrthogonal => (0..classes).map(|_| orthonormal(rng, d, m)).collect(),
    }
}

/// Rotates `mode` by `angle` toward a random direction orthogonal to it.
fn rotate(rng: &mut ChaCha8Rng, mode: &[f64], angle: f64) -> Vec<f64> {
    let mut u = random_unit(rng, mode.len());
    if mode.len() == 1 {
        return mode.to_vec();
    }
    loop {
        let p = dot(&u, mode);
        u.iter_mut().zip(mode).for_each(|(x, y)| *x -= p * y);
        let n = dot(&u, &u).sqrt();
        if n > 1e-6 {
            u.iter_mut().for_each(|x| *x /= n);
            break;
        }
        u = random_unit(rng, mode.len());
    }
    let (s, c) = angle.sin_cos();
    mode.iter().zip(&u).map(|(m, v)| c * m + s * v).collect()
}

const NEIGHBOURS: [(i64, i64); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

fn draw_displacements(rng: &mut ChaCha8Rng, config: &EpisodeConfig) -> Vec<(i64, i64)> {
    let classes = config.num_classes();
    match &config.map.shift {
        None => vec![(0, 0); classes],
        Some(shift) => {
            let scale = shift.cells as i64;
            let pick = |rng: &mut ChaCha8Rng| {
                let (dy, dx) = NEIGHBOURS[rng.random_range(0..NEIGHBOURS.len())];
                (dy * scale, dx * scale)
            };
            if shift.per_class {
                (0..classes).map(|_| pick(rng)).collect()
            } else {
                vec![pick(rng); classes]
            }
        }
    }
}

/// Simulated detector logits: `scale * cos(f, class mean)`, plus the base
/// bias on base classes and Gaussian noise; background trails the best
/// foreground logit by the configured margin.
pub fn gen_detector_logits(
    feature: &FeatureVector,
    class_means: &[Vec<f64>],
    config: &EpisodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LogitVector> {
    let f = unit_of(feature.as_slice());
    let mut z: Vec<f64> = class_means
        .iter()
        .enumerate()
        .map(|(c, mean)| {
            let bias = if config.is_novel(c) { 0.0 } else { config.base_bias };
            let noise = if config.logit_noise > 0.0 {
                config.logit_noise * normal(rng)
            } else {
                0.0
            };
            config.logit_scale * dot(&f, mean) + bias + noise
        })
        .collect();
    let best = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    z.push(best - config.bg_margin);
    LogitVector::new(z)
}

struct Sampler<'a> {
    config: &'a EpisodeConfig,
    class_means: &'a [Vec<f64>],
}

impl Sampler<'_> {
    /// Object vector near `mode`: `normalize(mode + spread * n / sqrt(D))`.
    fn object(&self, rng: &mut ChaCha8Rng, mode: &[f64]) -> Vec<f64> {
        let sigma = self.config.mode_spread / (self.config.dim as f64).sqrt();
        let v: Vec<f64> = mode.iter().map(|m| m + sigma * normal(rng)).collect();
        unit_of(&v)
    }

    /// Object window of `object` plus zero-mean per-channel ramps, seen
    /// through a window displaced by `shift` into a ring of clutter.
    fn map(&self, rng: &mut ChaCha8Rng, object: &[f64], shift: (i64, i64)) -> Result<RoiFeatureMap> {
        let mc = &self.config.map;
        let (h, w) = (mc.height, mc.width);
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let slopes: Vec<(f64, f64)> = (0..mc.channels)
            .map(|_| (mc.variation * normal(rng), mc.variation * normal(rng)))
            .collect();
        let clutter: Option<Vec<f64>> = mc.shift.as_ref().map(|s| {
            random_unit(rng, mc.channels).into_iter().map(|v| v * s.clutter).collect()
        });
        let mut data = Vec::with_capacity(mc.channels * h * w);
        for (c, (a, b)) in slopes.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let (oy, ox) = (y as i64 + shift.0, x as i64 + shift.1);
                    let inside = (0..h as i64).contains(&oy) && (0..w as i64).contains(&ox);
                    data.push(if inside {
                        object[c] + a * (ox as f64 - cx) + b * (oy as f64 - cy)
                    } else {
                        clutter.as_ref().map_or(0.0, |q| q[c])
                    });
                }
            }
        }
        RoiFeatureMap::new(mc.channels, h, w, data)
    }

    fn item(&self, rng: &mut ChaCha8Rng, class: usize, mode: &[f64], shift: (i64, i64)) -> Result<EpisodeItem> {
        let object = self.object(rng, mode);
        let map = self.map(rng, &object, shift)?;
        let feature = global_average_pool(&map);
        let z_cls = gen_detector_logits(&feature, self.class_means, self.config, rng)?;
        Ok(EpisodeItem {
            feature,
            map,
            class,
            z_cls,
        })
    }
}

/// Deterministic in `config.seed`. Draw order is modes, displacements,
/// support, drift, fine-tuning RoIs, queries, so changing the query count
/// leaves everything before it untouched.
pub fn gen_episode(config: &EpisodeConfig) -> Result<Episode> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let classes = config.num_classes();
    let m = config.modes_per_class;

    let modes = draw_modes(&mut rng, config);
    let class_means: Vec<Vec<f64>> = modes
        .iter()
        .map(|class_modes| {
            let mut sum = vec![0.0; config.dim];
            for mode in class_modes {
                sum.iter_mut().zip(mode).for_each(|(s, v)| *s += v);
            }
            unit_of(&sum)
        })
        .collect();
    let displacements = draw_displacements(&mut rng, config);
    let sampler = Sampler {
        config,
        class_means: &class_means,
    };

    let mut support = Vec::with_capacity(classes * config.shots);
    let mut support_modes = Vec::with_capacity(classes * config.shots);
    for (c, class_modes) in modes.iter().enumerate() {
        for i in 0..config.shots {
            support.push(sampler.item(&mut rng, c, &class_modes[i % m], (0, 0))?);
            support_modes.push(i % m);
        }
    }

    let drifted_modes: Vec<Vec<Vec<f64>>> = if config.query_rotation == 0.0 {
        modes.clone()
    } else {
        modes
            .iter()
            .map(|cm| cm.iter().map(|mode| rotate(&mut rng, mode, config.query_rotation)).collect())
            .collect()
    };

    let draw = |rng: &mut ChaCha8Rng, per_class: usize| -> Result<(Vec<EpisodeItem>, Vec<usize>)> {
        let mut items = Vec::with_capacity(classes * per_class);
        let mut which = Vec::with_capacity(classes * per_class);
        for (c, class_modes) in drifted_modes.iter().enumerate() {
            for i in 0..per_class {
                items.push(sampler.item(rng, c, &class_modes[i % m], displacements[c])?);
                which.push(i % m);
            }
        }
        Ok((items, which))
    };
    let (train, train_modes) = draw(&mut rng, config.train_rois_per_class)?;
    let (query, query_modes) = draw(&mut rng, config.queries_per_class)?;

    Ok(Episode {
        config: config.clone(),
        support,
        train,
        query,
        ground_truth: GroundTruth {
            modes,
            drifted_modes,
            class_means,
            displacements,
            support_modes,
            train_modes,
            query_modes,
        },
    })
}

/// Top-1 accuracy of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub overall: f64,
    pub base: Option<f64>,
    pub novel: Option<f64>,
}

/// Fraction of query items whose highest probability falls on the true class.
pub fn evaluate<F>(episode: &Episode, mut scorer: F) -> Result<Accuracy>
where
    F: FnMut(&EpisodeItem) -> Result<Vec<f64>>,
{
    if episode.query.is_empty() {
        return Err(PdaError::EmptyQuery);
    }
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for item in &episode.query {
        let probs = scorer(item)?;
        if probs.len() != episode.num_classes() + 1 {
            return Err(PdaError::dims("scorer output", episode.num_classes() + 1, probs.len()));
        }
        let group = usize::from(episode.config.is_novel(item.class));
        totals[group] += 1;
        if argmax(&probs) == item.class {
            hits[group] += 1;
        }
    }
    let rate = |g: usize| (totals[g] > 0).then(|| hits[g] as f64 / totals[g] as f64);
    Ok(Accuracy {
        overall: (hits[0] + hits[1]) as f64 / (totals[0] + totals[1]) as f64,
        base: rate(0),
        novel: rate(1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

/// Accuracy aggregated over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub runs: Vec<Accuracy>,
    pub overall: Summary,
    pub base: Option<Summary>,
    pub novel: Option<Summary>,
}

impl MetricsReport {
    pub fn from_runs(runs: Vec<Accuracy>) -> Result<Self> {
        let overall: Vec<f64> = runs.iter().map(|r| r.overall).collect();
        let overall = Summary::of(&overall).ok_or(PdaError::EmptyQuery)?;
        let base: Vec<f64> = runs.iter().filter_map(|r| r.base).collect();
        let novel: Vec<f64> = runs.iter().filter_map(|r| r.novel).collect();
        Ok(Self {
            base: Summary::of(&base),
            novel: Summary::of(&novel),
            overall,
            runs,
        })
    }
}

/// `count` consecutive seeds starting at `first`.
pub fn seed_list(first: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| first + i).collect()
}

/// Probabilities from the simulated classifier alone.
pub fn classifier_probabilities(item: &EpisodeItem) -> Result<Vec<f64>> {
    Ok(crate::scoring::softmax(&item.z_cls))
}
