use std::path::Path;

use clap::ValueEnum;
use pda_core::io::{encode_memory, encode_params};
use pda_core::simgen::Episode;
use pda_core::train::{finetune, FinetuneOutcome, LossTarget, TrainConfig};
use pda_core::{init_from_support, AlignerParams, PdaParams};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode_dir::{seed_dir, EpisodeDir};
use crate::error::{CliError, CliResult};
use crate::manifest::{OutputSet, RunManifest};

pub const SETTINGS_NAME: &str = "finetune.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    Fused,
    MetricOnly,
}

impl From<Loss> for LossTarget {
    fn from(loss: Loss) -> Self {
        match loss {
            Loss::Fused => LossTarget::Fused,
            Loss::MetricOnly => LossTarget::MetricOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSettings {
    pub k: usize,
    pub momentum: f64,
    pub freeze_mem: bool,
    pub use_align: bool,
    pub align_per_class: bool,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: Loss,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        Self {
            k: 3,
            momentum: pda_core::params::DEFAULT_MOMENTUM,
            freeze_mem: false,
            use_align: false,
            align_per_class: false,
            steps: 100,
            lr: 1e-3,
            seed: 0,
            loss: Loss::Fused,
        }
    }
}

impl FinetuneSettings {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = serde_json::to_string_pretty(self).expect("settings serialize");
        text.push('\n');
        text.into_bytes()
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.k == 0 {
            return Err(CliError::config("--k must be at least 1"));
        }
        if self.align_per_class && !self.use_align {
            return Err(CliError::config("--align-per-class requires --use-align"));
        }
        PdaParams::new(1)
            .with_momentum(self.momentum)
            .map_err(|e| CliError::config(e.to_string()))?;
        self.train_config(0).validate().map_err(|e| CliError::config(e.to_string()))
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            steps: self.steps,
            seed,
            train_aligner: self.use_align,
            loss_target: self.loss.into(),
            ..TrainConfig::default()
        }
    }

    pub fn params(&self, dim: usize) -> CliResult<PdaParams> {
        let mut params = PdaParams::new(dim)
            .with_momentum(self.momentum)
            .map_err(|e| CliError::config(e.to_string()))?;
        params.freeze_mem = self.freeze_mem;
        params.use_align = self.use_align;
        params.align_per_class = self.align_per_class;
        Ok(params)
    }
}

/// Initializes memory from the episode's support set and fine-tunes on its training RoIs.
pub fn train_episode(episode: &Episode, settings: &FinetuneSettings, train_seed: u64) -> CliResult<FinetuneOutcome> {
    let c = &episode.config;
    let params = settings.params(c.dim)?;
    let memory = init_from_support(&episode.support_set()?, settings.k, &params)?;
    let aligner = settings
        .use_align
        .then(|| AlignerParams::zeros(c.map.channels, c.dim, c.map.height, c.map.width));
    Ok(finetune(
        &episode.training_batches(),
        memory,
        params,
        aligner,
        &settings.train_config(train_seed),
    )?)
}

/// One training seed per episode seed, drawn in order from the command's generator.
pub fn train_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

pub fn run(episode_dir: &Path, out: &Path, settings: &FinetuneSettings) -> CliResult<RunManifest> {
    settings.validate()?;
    let dir = EpisodeDir::open(episode_dir)?;
    let seeds = train_seeds(settings.seed, dir.seeds.len());
    let outcomes = dir
        .seeds
        .par_iter()
        .zip(&seeds)
        .map(|(&seed, &train_seed)| {
            let episode = dir.load(seed)?;
            train_episode(&episode, settings, train_seed).map_err(|e| e.context(format!("seed {seed}")))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut set = OutputSet::new(out);
    let bytes = settings.to_bytes();
    set.write(SETTINGS_NAME, &bytes)?;
    for (seed, outcome) in dir.seeds.iter().zip(&outcomes) {
        let sub = seed_dir(*seed);
        set.write(&format!("{sub}/params.bin"), &encode_params(&outcome.params, outcome.aligner.as_ref()))?;
        set.write(&format!("{sub}/memory.bin"), &encode_memory(&outcome.memory))?;
        set.write(&format!("{sub}/history.csv"), outcome.history.to_csv(false).as_bytes())?;
    }
    set.finish(&bytes, dir.seeds.clone())
}
