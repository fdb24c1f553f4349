use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pda_core::io::{decode_memory, decode_memory_header, decode_params, ParamsFile};
use pda_core::simgen::{classifier_probabilities, evaluate, Accuracy, Episode, MetricsReport, Summary};
use pda_core::tensor::argmax;
use pda_core::{score_roi, AlignerParams, FusionWeights, PdaError, PdaParams, PrototypeMemory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode_dir::{dump_split_header, seed_dir, EpisodeDir};
use crate::error::{read_bytes, CliError, CliResult};
use crate::manifest::{OutputSet, RunManifest};

pub const METRICS_NAME: &str = "metrics.csv";
pub const AUDIT_NAME: &str = "audit.csv";
pub const SETTINGS_NAME: &str = "eval.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Overrides the temperature stored in the params file.
    pub tau: Option<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let f = FusionWeights::default();
        Self {
            alpha: f.alpha,
            beta: f.beta,
            gamma: f.gamma,
            tau: None,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> CliResult<()> {
        if ![self.alpha, self.beta, self.gamma].iter().all(|v| v.is_finite()) {
            return Err(CliError::config("fusion weights must be finite"));
        }
        match self.tau {
            Some(t) if !(t > 0.0 && t.is_finite()) => Err(CliError::config(format!("--tau must be positive, got {t}"))),
            _ => Ok(()),
        }
    }

    fn apply(&self, params: &mut PdaParams) -> CliResult<()> {
        params.fusion = FusionWeights::new(self.alpha, self.beta, self.gamma);
        if let Some(t) = self.tau {
            params.set_temperature(t).map_err(|e| CliError::config(e.to_string()))?;
        }
        Ok(())
    }
}

/// A trained head ready for scoring.
#[derive(Debug, Clone)]
pub struct Head {
    pub memory: PrototypeMemory,
    pub params: PdaParams,
    pub aligner: Option<AlignerParams>,
}

/// Accuracy of the classifier alone and of the fused head on one episode.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub baseline: Accuracy,
    pub pda: Accuracy,
    pub audit: Vec<String>,
}

fn per_seed(path: &Path, seed: u64, file: &str) -> PathBuf {
    if path.is_dir() {
        path.join(seed_dir(seed)).join(file)
    } else {
        path.to_path_buf()
    }
}

fn dump_params(p: &ParamsFile) -> String {
    let mut out = format!("params header: dim={} tau={}", p.params.dim(), p.params.temperature());
    match &p.aligner {
        None => out.push_str(" aligner=none"),
        Some(a) => {
            let _ = write!(
                out,
                " aligner={}x{}x{} (prototype dim {}, per_class={})",
                a.feat_channels(),
                a.height(),
                a.width(),
                a.dim(),
                p.params.align_per_class
            );
        }
    }
    out
}

/// Checks that the memory, params and episode agree on shapes; on failure the
/// error carries every header involved.
fn check_dims(dir: &EpisodeDir, seed: u64, memory_bytes: &[u8], params: &ParamsFile) -> CliResult<()> {
    let c = &dir.config;
    let mem = decode_memory_header(memory_bytes)?;
    let mut problems = Vec::new();
    if mem.dim != params.params.dim() {
        problems.push(format!("memory dim {} vs params dim {}", mem.dim, params.params.dim()));
    }
    if mem.dim != c.dim {
        problems.push(format!("memory dim {} vs episode dim {}", mem.dim, c.dim));
    }
    if mem.num_classes != c.num_classes() {
        problems.push(format!("memory classes {} vs episode classes {}", mem.num_classes, c.num_classes()));
    }
    if let Some(a) = &params.aligner {
        if (a.feat_channels(), a.height(), a.width()) != (c.map.channels, c.map.height, c.map.width) {
            problems.push(format!(
                "aligner map {}x{}x{} vs episode map {}x{}x{}",
                a.feat_channels(),
                a.height(),
                a.width(),
                c.map.channels,
                c.map.height,
                c.map.width
            ));
        }
    }
    if problems.is_empty() {
        return Ok(());
    }
    let split = dir.split_header(seed, "query")?;
    Err(CliError::data(format!(
        "dimension mismatch for seed {seed}: {}\nmemory header: classes={} slots={} dim={} frozen={}\n{}\n{}",
        problems.join("; "),
        mem.num_classes,
        mem.slots_per_class,
        mem.dim,
        mem.frozen,
        dump_params(params),
        dump_split_header(&split)
    )))
}

pub fn load_head(dir: &EpisodeDir, seed: u64, params_path: &Path, memory_path: &Path) -> CliResult<Head> {
    let params_path = per_seed(params_path, seed, "params.bin");
    let memory_path = per_seed(memory_path, seed, "memory.bin");
    let params = decode_params(&read_bytes(&params_path)?).map_err(|e| CliError::from(e).context(params_path.display()))?;
    let memory_bytes = read_bytes(&memory_path)?;
    check_dims(dir, seed, &memory_bytes, &params)?;
    let memory = decode_memory(&memory_bytes).map_err(|e| CliError::from(e).context(memory_path.display()))?;
    Ok(Head {
        memory,
        params: params.params,
        aligner: params.aligner,
    })
}

/// Scores every query RoI of `episode` with the classifier alone and with `head`.
pub fn score_episode(episode: &Episode, head: &Head, audit: bool) -> CliResult<SeedResult> {
    let baseline = evaluate(episode, classifier_probabilities)?;
    let mut rows = Vec::new();
    let mut index = 0usize;
    let pda = evaluate(episode, |item| {
        let scored = score_roi(
            &item.feature,
            &item.map,
            &head.memory,
            &head.params,
            head.aligner.as_ref(),
            &item.z_cls,
            None,
        )?;
        if audit {
            let d = &scored.diagnostics;
            let mut row = format!(
                "{},{index},{},{},{},{},{},{},{:.6}",
                episode.config.seed,
                item.class,
                item.z_cls.argmax(),
                argmax(&scored.probabilities),
                d.global_best.0,
                d.global_best.1,
                d.aligned,
                scored.probabilities[item.class]
            );
            for s in &scored.scores.values {
                let _ = write!(row, ",{s:.6}");
            }
            rows.push(row);
        }
        index += 1;
        Ok(scored.probabilities)
    })
    .map_err(|e| match e {
        PdaError::DimensionMismatch { .. } => CliError::from(e).context("scoring"),
        other => other.into(),
    })?;
    Ok(SeedResult {
        seed: episode.config.seed,
        baseline,
        pda,
        audit: rows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn summary_rows(out: &mut String, method: &str, runs: Vec<Accuracy>) -> CliResult<()> {
    let report = MetricsReport::from_runs(runs)?;
    let pick = |f: fn(&Summary) -> f64| {
        (
            f(&report.overall),
            report.base.as_ref().map(f),
            report.novel.as_ref().map(f),
        )
    };
    for (label, (o, b, n)) in [("mean", pick(|s| s.mean)), ("std", pick(|s| s.std))] {
        let _ = writeln!(out, "{method},{label},{o:.6},{},{}", fmt_opt(b), fmt_opt(n));
    }
    Ok(())
}

/// Metrics CSV: per-seed rows for both methods, then mean and std per method.
pub fn metrics_csv(results: &[SeedResult]) -> CliResult<String> {
    let mut out = String::from("method,seed,overall,base,novel\n");
    for r in results {
        for (method, acc) in [("baseline", &r.baseline), ("pda", &r.pda)] {
            let _ = writeln!(
                out,
                "{method},{},{:.6},{},{}",
                r.seed,
                acc.overall,
                fmt_opt(acc.base),
                fmt_opt(acc.novel)
            );
        }
    }
    summary_rows(&mut out, "baseline", results.iter().map(|r| r.baseline).collect())?;
    summary_rows(&mut out, "pda", results.iter().map(|r| r.pda).collect())?;
    Ok(out)
}

pub fn audit_csv(results: &[SeedResult], num_classes: usize) -> String {
    let mut out = String::from("seed,query,class,baseline_pred,pda_pred,global_class,global_slot,aligned,p_true");
    for c in 0..num_classes {
        let _ = write!(out, ",s_{c}");
    }
    out.push('\n');
    for row in results.iter().flat_map(|r| &r.audit) {
        out.push_str(row);
        out.push('\n');
    }
    out
}

pub struct EvalOutput {
    pub csv: String,
    pub manifest: Option<RunManifest>,
}

pub fn run(
    episode_dir: &Path,
    params_path: &Path,
    memory_path: &Path,
    settings: &EvalSettings,
    out: Option<&Path>,
    audit: bool,
) -> CliResult<EvalOutput> {
    settings.validate()?;
    if audit && out.is_none() {
        return Err(CliError::config("--audit needs --out"));
    }
    let dir = EpisodeDir::open(episode_dir)?;
    let results = dir
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut head = load_head(&dir, seed, params_path, memory_path)?;
            settings.apply(&mut head.params)?;
            let episode = dir.load(seed)?;
            score_episode(&episode, &head, audit)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let csv = metrics_csv(&results)?;
    let manifest = match out {
        None => None,
        Some(out) => {
            let mut set = OutputSet::new(out);
            let mut bytes = serde_json::to_vec_pretty(settings).expect("settings serialize");
            bytes.push(b'\n');
            set.write(SETTINGS_NAME, &bytes)?;
            set.write(METRICS_NAME, csv.as_bytes())?;
            if audit {
                set.write(AUDIT_NAME, audit_csv(&results, dir.config.num_classes()).as_bytes())?;
            }
            Some(set.finish(&bytes, dir.seeds.clone())?)
        }
    };
    Ok(EvalOutput { csv, manifest })
}
