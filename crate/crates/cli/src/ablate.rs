use std::fmt::Write as _;
use std::path::Path;

use pda_core::simgen::{gen_episode, seed_list, Accuracy, Episode, EpisodeConfig, MetricsReport, Summary, DEFAULT_SEED_COUNT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode_dir::EpisodeDir;
use crate::error::{CliError, CliResult, ExitKind};
use crate::eval::{score_episode, Head};
use crate::finetune::{train_episode, train_seeds, FinetuneSettings, Loss};
use crate::manifest::{OutputSet, RunManifest};

pub const TABLE_NAME: &str = "ablation.md";
pub const CSV_NAME: &str = "ablation.csv";
pub const SPEC_NAME: &str = "sweep.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Baseline,
    #[serde(alias = "freeze")]
    Frozen,
    Ema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFusion {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for SweepFusion {
    fn default() -> Self {
        let f = pda_core::FusionWeights::default();
        Self {
            alpha: f.alpha,
            beta: f.beta,
            gamma: f.gamma,
        }
    }
}

fn default_seeds() -> usize {
    DEFAULT_SEED_COUNT
}

fn default_steps() -> usize {
    FinetuneSettings::default().steps
}

fn default_lr() -> f64 {
    FinetuneSettings::default().lr
}

fn default_momentum() -> f64 {
    FinetuneSettings::default().momentum
}

/// Grid of shot counts, slot counts and memory arms to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub shots: Vec<usize>,
    pub k: Vec<usize>,
    pub arms: Vec<Arm>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub use_align: bool,
    #[serde(default)]
    pub fusion: SweepFusion,
    #[serde(default)]
    pub seed: u64,
}

impl SweepSpec {
    /// Parses, sorts and deduplicates the grid axes, and rejects empty sweeps.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let mut spec: Self = serde_json::from_str(text).map_err(|e| CliError::config(format!("sweep spec: {e}")))?;
        spec.shots.sort_unstable();
        spec.shots.dedup();
        spec.k.sort_unstable();
        spec.k.dedup();
        spec.arms.sort_unstable();
        spec.arms.dedup();
        if spec.shots.is_empty() || spec.arms.is_empty() {
            return Err(CliError::config("empty sweep: shots and arms need at least one entry"));
        }
        if spec.k.is_empty() && spec.arms.iter().any(|a| *a != Arm::Baseline) {
            return Err(CliError::config("empty sweep: memory arms need at least one k"));
        }
        if spec.seeds == 0 {
            return Err(CliError::config("sweep needs at least one seed"));
        }
        let fusion = [spec.fusion.alpha, spec.fusion.beta, spec.fusion.gamma];
        if !fusion.iter().all(|v| v.is_finite()) {
            return Err(CliError::config("fusion weights must be finite"));
        }
        for k in &spec.k {
            spec.settings(*k, Arm::Ema).validate()?;
        }
        Ok(spec)
    }

    fn settings(&self, k: usize, arm: Arm) -> FinetuneSettings {
        FinetuneSettings {
            k,
            momentum: self.momentum,
            freeze_mem: arm == Arm::Frozen,
            use_align: self.use_align,
            align_per_class: false,
            steps: self.steps,
            lr: self.lr,
            seed: self.seed,
            loss: Loss::Fused,
        }
    }

    /// Table rows: the baseline once, then each memory arm for every `k`.
    pub fn rows(&self) -> Vec<(Arm, Option<usize>)> {
        let mut rows = Vec::new();
        for arm in &self.arms {
            match arm {
                Arm::Baseline => rows.push((Arm::Baseline, None)),
                _ => rows.extend(self.k.iter().map(|k| (*arm, Some(*k)))),
            }
        }
        rows
    }
}

pub fn row_label(arm: Arm, k: Option<usize>) -> String {
    match (arm, k) {
        (Arm::Baseline, _) => "baseline".to_string(),
        (Arm::Frozen, Some(k)) => format!("+PDA frozen (K={k})"),
        (Arm::Ema, Some(k)) => format!("+PDA EMA (K={k})"),
        (_, None) => unreachable!("memory arms always carry k"),
    }
}

type Pick = fn(&MetricsReport) -> Option<Summary>;

#[derive(Debug, Clone)]
pub enum Cell {
    Done(MetricsReport),
    Failed { kind: ExitKind, message: String },
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub spec: SweepSpec,
    pub rows: Vec<(Arm, Option<usize>)>,
    /// `[row][shot]`
    pub cells: Vec<Vec<Cell>>,
}

impl AblationReport {
    /// The most severe failure class among the cells.
    pub fn failure(&self) -> Option<ExitKind> {
        self.cells
            .iter()
            .flatten()
            .filter_map(|c| match c {
                Cell::Failed { kind, .. } => Some(*kind),
                Cell::Done(_) => None,
            })
            .max()
    }

    pub fn markdown(&self) -> String {
        let mut out = format!(
            "# Prototype memory ablation\n\n{} seeds per cell, mean ± sample std of top-1 accuracy.\n",
            self.spec.seeds
        );
        let metrics: [(&str, Pick); 3] = [
            ("overall", |r| Some(r.overall)),
            ("base", |r| r.base),
            ("novel", |r| r.novel),
        ];
        for (name, pick) in metrics {
            let _ = write!(out, "\n## {name}\n\n| method |");
            for s in &self.spec.shots {
                let _ = write!(out, " {s}-shot |");
            }
            out.push_str("\n|---|");
            out.push_str(&"---:|".repeat(self.spec.shots.len()));
            out.push('\n');
            for ((arm, k), cells) in self.rows.iter().zip(&self.cells) {
                let _ = write!(out, "| {} |", row_label(*arm, *k));
                for cell in cells {
                    match cell {
                        Cell::Done(r) => match pick(r) {
                            Some(s) => {
                                let _ = write!(out, " {:.4} ± {:.4} |", s.mean, s.std);
                            }
                            None => out.push_str(" n/a |"),
                        },
                        Cell::Failed { .. } => out.push_str(" FAILED |"),
                    }
                }
                out.push('\n');
            }
        }
        let failures: Vec<String> = self
            .rows
            .iter()
            .zip(&self.cells)
            .flat_map(|((arm, k), cells)| {
                cells.iter().zip(&self.spec.shots).filter_map(move |(cell, shots)| match cell {
                    Cell::Failed { message, .. } => Some(format!("- {} at {shots}-shot: {message}", row_label(*arm, *k))),
                    Cell::Done(_) => None,
                })
            })
            .collect();
        if !failures.is_empty() {
            out.push_str("\n## failed cells\n\n");
            for f in failures {
                out.push_str(&f);
                out.push('\n');
            }
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut out =
            String::from("method,k,shots,status,overall_mean,overall_std,base_mean,base_std,novel_mean,novel_std,error\n");
        let pair = |s: Option<Summary>| match s {
            Some(s) => format!("{:.6},{:.6}", s.mean, s.std),
            None => ",".to_string(),
        };
        for ((arm, k), cells) in self.rows.iter().zip(&self.cells) {
            let k = k.map(|k| k.to_string()).unwrap_or_default();
            for (cell, shots) in cells.iter().zip(&self.spec.shots) {
                let method = match arm {
                    Arm::Baseline => "baseline",
                    Arm::Frozen => "frozen",
                    Arm::Ema => "ema",
                };
                match cell {
                    Cell::Done(r) => {
                        let _ = writeln!(
                            out,
                            "{method},{k},{shots},ok,{},{},{},",
                            pair(Some(r.overall)),
                            pair(r.base),
                            pair(r.novel)
                        );
                    }
                    Cell::Failed { message, .. } => {
                        let message = message.replace([',', '\n'], ";");
                        let _ = writeln!(out, "{method},{k},{shots},failed,,,,,,,{message}");
                    }
                }
            }
        }
        out
    }
}

fn run_cell(episode: &Episode, arm: Arm, k: Option<usize>, spec: &SweepSpec, train_seed: u64) -> CliResult<Accuracy> {
    let k = match (arm, k) {
        (Arm::Baseline, _) => {
            return Ok(pda_core::simgen::evaluate(episode, pda_core::simgen::classifier_probabilities)?);
        }
        (_, Some(k)) => k,
        (_, None) => unreachable!("memory arms always carry k"),
    };
    let outcome = train_episode(episode, &spec.settings(k, arm), train_seed)?;
    let mut params = outcome.params;
    params.fusion = pda_core::FusionWeights::new(spec.fusion.alpha, spec.fusion.beta, spec.fusion.gamma);
    let head = Head {
        memory: outcome.memory,
        params,
        aligner: outcome.aligner,
    };
    Ok(score_episode(episode, &head, false)?.pda)
}

/// Runs every (row, shots, seed) job in parallel and aggregates per cell.
pub fn sweep(base: &EpisodeConfig, spec: &SweepSpec) -> CliResult<AblationReport> {
    let configs = spec
        .shots
        .iter()
        .map(|&shots| {
            let config = EpisodeConfig {
                shots,
                ..base.clone()
            };
            config.validate().map_err(|e| CliError::config(format!("{shots}-shot episodes: {e}")))?;
            Ok(config)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let seeds = seed_list(base.seed, spec.seeds);
    let training = train_seeds(spec.seed, spec.seeds);

    let episodes: Vec<Vec<CliResult<Episode>>> = configs
        .par_iter()
        .map(|config| {
            seeds
                .par_iter()
                .map(|&seed| Ok(gen_episode(&EpisodeConfig { seed, ..config.clone() })?))
                .collect()
        })
        .collect();

    let rows = spec.rows();
    let (n_shots, n_seeds) = (configs.len(), seeds.len());
    let jobs: Vec<(usize, usize, usize)> = (0..rows.len())
        .flat_map(|r| (0..n_shots).flat_map(move |s| (0..n_seeds).map(move |i| (r, s, i))))
        .collect();
    let results: Vec<CliResult<Accuracy>> = jobs
        .par_iter()
        .map(|&(r, s, i)| {
            let episode = episodes[s][i].as_ref().map_err(Clone::clone)?;
            let (arm, k) = rows[r];
            run_cell(episode, arm, k, spec, training[i]).map_err(|e| e.context(format!("seed {}", seeds[i])))
        })
        .collect();

    let mut results = results.into_iter();
    let mut cells = Vec::with_capacity(rows.len());
    for _ in &rows {
        let mut row = Vec::with_capacity(configs.len());
        for _ in &configs {
            let mut runs = Vec::with_capacity(seeds.len());
            let mut failed = None;
            for r in results.by_ref().take(seeds.len()) {
                match r {
                    Ok(acc) => runs.push(acc),
                    Err(e) => {
                        failed.get_or_insert(e);
                    }
                }
            }
            row.push(match failed {
                Some(e) => Cell::Failed {
                    kind: e.kind,
                    message: e.message,
                },
                None => Cell::Done(MetricsReport::from_runs(runs)?),
            });
        }
        cells.push(row);
    }
    Ok(AblationReport {
        spec: spec.clone(),
        rows,
        cells,
    })
}

pub struct AblateOutput {
    pub report: AblationReport,
    pub manifest: RunManifest,
}

pub fn run(episode_dir: &Path, spec_path: &Path, out: &Path) -> CliResult<AblateOutput> {
    let spec = SweepSpec::from_json(&crate::error::read_config(spec_path)?)?;
    let dir = EpisodeDir::open(episode_dir)?;
    let report = sweep(&dir.config, &spec)?;

    let mut set = OutputSet::new(out);
    let mut bytes = serde_json::to_vec_pretty(&spec).expect("spec serializes");
    bytes.push(b'\n');
    set.write(SPEC_NAME, &bytes)?;
    set.write(TABLE_NAME, report.markdown().as_bytes())?;
    set.write(CSV_NAME, report.csv().as_bytes())?;
    let manifest = set.finish(&bytes, seed_list(dir.config.seed, spec.seeds))?;
    Ok(AblateOutput { report, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> SweepSpec {
        SweepSpec::from_json(text).unwrap()
    }

    #[test]
    fn axes_are_sorted_and_deduplicated() {
        let s = spec(r#"{"shots": [10, 1, 1], "k": [2, 2, 1], "arms": ["ema", "baseline", "freeze", "frozen"]}"#);
        assert_eq!(s.shots, [1, 10]);
        assert_eq!(s.k, [1, 2]);
        assert_eq!(s.arms, [Arm::Baseline, Arm::Frozen, Arm::Ema]);
        assert_eq!(s.seeds, DEFAULT_SEED_COUNT);
        let labels: Vec<String> = s.rows().iter().map(|(a, k)| row_label(*a, *k)).collect();
        assert_eq!(
            labels,
            ["baseline", "+PDA frozen (K=1)", "+PDA frozen (K=2)", "+PDA EMA (K=1)", "+PDA EMA (K=2)"]
        );
    }

    #[test]
    fn baseline_only_sweep_needs_no_k() {
        let s = spec(r#"{"shots": [1], "k": [], "arms": ["baseline"]}"#);
        assert_eq!(s.rows(), [(Arm::Baseline, None)]);
    }

    #[test]
    fn failed_cells_are_marked_and_set_the_exit_class() {
        let s = spec(r#"{"shots": [1, 2], "k": [1], "arms": ["ema"], "seeds": 2}"#);
        let ok = MetricsReport::from_runs(vec![
            Accuracy {
                overall: 0.5,
                base: Some(0.75),
                novel: Some(0.25),
            };
            2
        ])
        .unwrap();
        let mut report = AblationReport {
            rows: s.rows(),
            cells: vec![vec![
                Cell::Done(ok.clone()),
                Cell::Failed {
                    kind: ExitKind::Numeric,
                    message: "seed 3: bad, worse".to_string(),
                },
            ]],
            spec: s,
        };
        assert_eq!(report.failure(), Some(ExitKind::Numeric));
        let md = report.markdown();
        assert!(md.contains("| +PDA EMA (K=1) | 0.5000 ± 0.0000 | FAILED |"), "{md}");
        assert!(md.contains("- +PDA EMA (K=1) at 2-shot: seed 3: bad, worse"));
        let csv = report.csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "ema,1,1,ok,0.500000,0.000000,0.750000,0.000000,0.250000,0.000000,");
        assert_eq!(lines[2], "ema,1,2,failed,,,,,,,seed 3: bad; worse");
        assert_eq!(lines[2].split(',').count(), lines[0].split(',').count());
        report.cells[0][1] = Cell::Done(ok);
        assert_eq!(report.failure(), None);
    }
}
