use std::fmt::Write as _;
use std::path::Path;

use pda_core::io::decode_memory;
use pda_core::PrototypeMemory;
use serde::Serialize;

use crate::error::{read_bytes, CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct ClassSummary {
    pub class: usize,
    pub slot_norms: Vec<f64>,
    /// Smallest cosine between two slots of this class; absent for one slot.
    pub min_intra_cos: Option<f64>,
    /// Largest cosine between a slot of this class and any other class's slot.
    pub max_cross_cos: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemorySummary {
    pub num_classes: usize,
    pub slots_per_class: usize,
    pub dim: usize,
    pub frozen: bool,
    pub classes: Vec<ClassSummary>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn summarize(memory: &PrototypeMemory) -> MemorySummary {
    let (c, k) = (memory.num_classes(), memory.slots_per_class());
    let classes = (0..c)
        .map(|class| {
            let slots: Vec<&[f64]> = (0..k).map(|s| memory.slot(class, s)).collect();
            let mut intra: Option<f64> = None;
            for i in 0..k {
                for j in i + 1..k {
                    let v = dot(slots[i], slots[j]);
                    intra = Some(intra.map_or(v, |m| m.min(v)));
                }
            }
            let mut cross: Option<f64> = None;
            for other in (0..c).filter(|o| *o != class) {
                for s in 0..k {
                    for p in &slots {
                        let v = dot(p, memory.slot(other, s));
                        cross = Some(cross.map_or(v, |m| m.max(v)));
                    }
                }
            }
            ClassSummary {
                class,
                slot_norms: slots.iter().map(|p| dot(p, p).sqrt()).collect(),
                min_intra_cos: intra,
                max_cross_cos: cross,
            }
        })
        .collect();
    MemorySummary {
        num_classes: c,
        slots_per_class: k,
        dim: memory.dim(),
        frozen: memory.is_frozen(),
        classes,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".to_string())
}

pub fn render(summary: &MemorySummary) -> String {
    let mut out = format!(
        "classes={} slots={} dim={} frozen={}\n",
        summary.num_classes, summary.slots_per_class, summary.dim, summary.frozen
    );
    out.push_str("class  min_intra_cos  max_cross_cos  slot_norms\n");
    for c in &summary.classes {
        let norms: Vec<String> = c.slot_norms.iter().map(|n| format!("{n:.6}")).collect();
        let _ = writeln!(
            out,
            "{:<5}  {:>13}  {:>13}  {}",
            c.class,
            opt(c.min_intra_cos),
            opt(c.max_cross_cos),
            norms.join(" ")
        );
    }
    out
}

pub fn run(path: &Path, json: bool) -> CliResult<String> {
    let memory = decode_memory(&read_bytes(path)?).map_err(|e| CliError::from(e).context(path.display()))?;
    let summary = summarize(&memory);
    Ok(if json {
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        text
    } else {
        render(&summary)
    })
}
