//! Multi-slot prototype memory: support-only initialization, winner-take-all
//! routing and per-slot EMA updates.
//!
//! Classes and slots are 0-based throughout. Prototypes are stored
//! class-major, then slot, then dimension; the binary memory file uses the
//! same order.
//!
//! Mutation is single-writer (`ema_update` takes `&mut`); a frozen memory can
//! be shared by any number of readers.

use std::collections::BTreeMap;

use crate::error::{PdaError, Result};
use crate::params::PdaParams;
use crate::scoring::project_and_normalize;
use crate::tensor::{dot, norm, normalize_slice, FeatureVector, DEGENERATE_NORM, UNIT_NORM_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMemory {
    num_classes: usize,
    slots_per_class: usize,
    dim: usize,
    prototypes: Vec<f64>,
    frozen: bool,
}

impl PrototypeMemory {
    /// Builds a memory from raw slot values, checking that every slot is unit norm.
    pub fn from_slots(
        num_classes: usize,
        slots_per_class: usize,
        dim: usize,
        prototypes: Vec<f64>,
        frozen: bool,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(PdaError::Empty("class count"));
        }
        if slots_per_class == 0 {
            return Err(PdaError::Empty("slots per class"));
        }
        if dim == 0 {
            return Err(PdaError::Empty("prototype dimension"));
        }
        let expected = num_classes
            .checked_mul(slots_per_class)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| PdaError::ConfigInvalid("memory size overflows".into()))?;
        if prototypes.len() != expected {
            return Err(PdaError::dims("prototype values", expected, prototypes.len()));
        }
        if prototypes.iter().any(|v| !v.is_finite()) {
            return Err(PdaError::NonFinite("prototype memory"));
        }
        let memory = Self {
            num_classes,
            slots_per_class,
            dim,
            prototypes,
            frozen,
        };
        for c in 0..num_classes {
            for k in 0..slots_per_class {
                let n = norm(memory.slot(c, k));
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(PdaError::NotUnitNorm {
                        class: c,
                        slot: k,
                        norm: n,
                    });
                }
            }
        }
        Ok(memory)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn slots_per_class(&self) -> usize {
        self.slots_per_class
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// All prototype values, class-major then slot then dimension.
    pub fn prototypes(&self) -> &[f64] {
        &self.prototypes
    }

    #[inline]
    pub fn slot(&self, class: usize, slot: usize) -> &[f64] {
        let start = (class * self.slots_per_class + slot) * self.dim;
        &self.prototypes[start..start + self.dim]
    }

    fn slot_mut(&mut self, class: usize, slot: usize) -> &mut [f64] {
        let start = (class * self.slots_per_class + slot) * self.dim;
        &mut self.prototypes[start..start + self.dim]
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn thaw(&mut self) {
        self.frozen = false;
    }

    pub fn frozen(mut self) -> Self {
        self.freeze();
        self
    }

    pub fn thawed(mut self) -> Self {
        self.thaw();
        self
    }

    pub(crate) fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes {
            return Err(PdaError::ClassOutOfRange {
                class,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }
}

/// Labeled support features, the only data allowed to seed the memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    num_classes: usize,
    entries: Vec<(usize, FeatureVector)>,
}

impl SupportSet {
    pub fn new(num_classes: usize, entries: Vec<(usize, FeatureVector)>) -> Result<Self> {
        if num_classes == 0 {
            return Err(PdaError::Empty("class count"));
        }
        let dim = entries.first().map(|(_, f)| f.dim());
        for (class, f) in &entries {
            if *class >= num_classes {
                return Err(PdaError::ClassOutOfRange {
                    class: *class,
                    num_classes,
                });
            }
            if Some(f.dim()) != dim {
                return Err(PdaError::dims("support feature", dim.unwrap_or(0), f.dim()));
            }
        }
        Ok(Self {
            num_classes,
            entries,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn entries(&self) -> &[(usize, FeatureVector)] {
        &self.entries
    }

    pub fn count(&self, class: usize) -> usize {
        self.entries.iter().filter(|(c, _)| *c == class).count()
    }

    /// Strict few-shot protocol: each listed class holds exactly `shots` entries.
    pub fn check_shots(&self, classes: impl IntoIterator<Item = usize>, shots: usize) -> Result<()> {
        for class in classes {
            let actual = self.count(class);
            if actual != shots {
                return Err(PdaError::ShotCountMismatch {
                    class,
                    expected: shots,
                    actual,
                });
            }
        }
        Ok(())
    }
}

/// Initializes every slot of every class to the normalized mean of that
/// class's projected support vectors.
pub fn init_from_support(
    support: &SupportSet,
    slots_per_class: usize,
    params: &PdaParams,
) -> Result<PrototypeMemory> {
    if slots_per_class == 0 {
        return Err(PdaError::Empty("slots per class"));
    }
    let dim = params.dim();
    let num_classes = support.num_classes();
    let mut sums = vec![vec![0.0; dim]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (class, f) in support.entries() {
        if f.dim() != dim {
            return Err(PdaError::dims("support feature", dim, f.dim()));
        }
        let z = project_and_normalize(f, &params.projection)?;
        for (s, v) in sums[*class].iter_mut().zip(z.as_slice()) {
            *s += v;
        }
        counts[*class] += 1;
    }
    let mut prototypes = Vec::with_capacity(num_classes * slots_per_class * dim);
    for (class, (sum, count)) in sums.iter().zip(&counts).enumerate() {
        if *count == 0 {
            return Err(PdaError::EmptyClass(class));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / *count as f64).collect();
        let proto = normalize_slice(&mean)?;
        for _ in 0..slots_per_class {
            prototypes.extend_from_slice(&proto);
        }
    }
    Ok(PrototypeMemory {
        num_classes,
        slots_per_class,
        dim,
        prototypes,
        frozen: false,
    })
}

/// Hard assignment of a batch of one class's samples to that class's slots.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingResult {
    /// Winning slot per sample.
    pub assignments: Vec<usize>,
    /// Sample indices per slot.
    pub members: Vec<Vec<usize>>,
    /// Number of length-D dot products evaluated.
    pub dot_products: usize,
}

/// Routes each unit vector in `batch` to its most similar slot of `class`,
/// lowest slot index on ties.
pub fn route(batch: &[FeatureVector], memory: &PrototypeMemory, class: usize) -> Result<RoutingResult> {
    memory.check_class(class)?;
    let k_slots = memory.slots_per_class();
    let mut assignments = Vec::with_capacity(batch.len());
    let mut members = vec![Vec::new(); k_slots];
    let mut dot_products = 0;
    for (i, z) in batch.iter().enumerate() {
        if z.dim() != memory.dim() {
            return Err(PdaError::dims("routed feature", memory.dim(), z.dim()));
        }
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for k in 0..k_slots {
            let sim = dot(z.as_slice(), memory.slot(class, k));
            dot_products += 1;
            if sim > best_sim {
                best = k;
                best_sim = sim;
            }
        }
        assignments.push(best);
        members[best].push(i);
    }
    Ok(RoutingResult {
        assignments,
        members,
        dot_products,
    })
}

/// Outcome for one slot touched by an EMA update.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotUpdate {
    pub class: usize,
    pub slot: usize,
    pub members: usize,
    /// Cosine between the slot before and after the update.
    pub drift_cos: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    pub slots: Vec<SlotUpdate>,
    /// Total dot products spent on routing.
    pub dot_products: usize,
}

impl UpdateReport {
    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn member_count(&self, class: usize, slot: usize) -> usize {
        self.slots
            .iter()
            .find(|u| u.class == class && u.slot == slot)
            .map_or(0, |u| u.members)
    }

    /// `[class][slot]` member counts.
    pub fn occupancy(&self, num_classes: usize, slots_per_class: usize) -> Vec<Vec<usize>> {
        let mut occ = vec![vec![0; slots_per_class]; num_classes];
        for u in &self.slots {
            occ[u.class][u.slot] = u.members;
        }
        occ
    }

    pub fn total_members(&self) -> usize {
        self.slots.iter().map(|u| u.members).sum()
    }

    /// Mean pre/post cosine over updated slots.
    pub fn mean_drift_cos(&self) -> Option<f64> {
        if self.slots.is_empty() {
            return None;
        }
        Some(self.slots.iter().map(|u| u.drift_cos).sum::<f64>() / self.slots.len() as f64)
    }
}

/// One minibatch of EMA updates from labeled foreground features already in
/// the projected, unit-norm space.
///
/// Each class present is routed independently; slots with no members are left
/// untouched. Nothing is written unless every update succeeds.
pub fn ema_update(
    memory: &mut PrototypeMemory,
    batch: &[(usize, FeatureVector)],
    momentum: f64,
) -> Result<UpdateReport> {
    if memory.is_frozen() {
        return Err(PdaError::MemoryFrozen);
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(PdaError::InvalidMomentum(momentum));
    }
    let mut by_class: BTreeMap<usize, Vec<FeatureVector>> = BTreeMap::new();
    for (i, (class, z)) in batch.iter().enumerate() {
        memory.check_class(*class)?;
        if z.dim() != memory.dim() {
            return Err(PdaError::dims("update feature", memory.dim(), z.dim()));
        }
        let n = z.norm();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(PdaError::NotUnitInput { index: i, norm: n });
        }
        by_class.entry(*class).or_default().push(z.clone());
    }

    let mut report = UpdateReport::default();
    let mut pending = Vec::new();
    for (class, samples) in &by_class {
        let routing = route(samples, memory, *class)?;
        report.dot_products += routing.dot_products;
        for (slot, idx) in routing.members.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let mut mu = vec![0.0; memory.dim()];
            for &i in idx {
                for (m, v) in mu.iter_mut().zip(samples[i].as_slice()) {
                    *m += v;
                }
            }
            let count = idx.len() as f64;
            let old = memory.slot(*class, slot);
            let blended: Vec<f64> = old
                .iter()
                .zip(&mu)
                .map(|(p, m)| momentum * p + (1.0 - momentum) * (m / count))
                .collect();
            let n = norm(&blended);
            if n.is_nan() || n < DEGENERATE_NORM {
                return Err(PdaError::DegenerateVector { norm: n });
            }
            let updated: Vec<f64> = blended.iter().map(|v| v / n).collect();
            report.slots.push(SlotUpdate {
                class: *class,
                slot,
                members: idx.len(),
                drift_cos: dot(old, &updated).clamp(-1.0, 1.0),
            });
            pending.push((*class, slot, updated));
        }
    }
    for (class, slot, values) in pending {
        memory.slot_mut(class, slot).copy_from_slice(&values);
    }
    Ok(report)
}
