use std::path::Path;

use pda_core::simgen::{gen_episode, seed_list, EpisodeConfig};
use rayon::prelude::*;

use crate::episode_dir::{config_bytes, write_episode, CONFIG_NAME};
use crate::error::{read_config, CliError, CliResult};
use crate::manifest::{OutputSet, RunManifest};

/// Generates `seeds` consecutive episodes starting at the config's seed.
pub fn run(config_path: &Path, out: &Path, seeds: usize) -> CliResult<RunManifest> {
    let text = read_config(config_path)?;
    let config = EpisodeConfig::from_json(&text).map_err(|e| CliError::from(e).context(config_path.display()))?;
    if seeds == 0 {
        return Err(CliError::config("--seeds must be at least 1"));
    }
    let seeds = seed_list(config.seed, seeds);
    let episodes = seeds
        .par_iter()
        .map(|&seed| gen_episode(&EpisodeConfig { seed, ..config.clone() }))
        .collect::<Result<Vec<_>, _>>()?;

    let mut set = OutputSet::new(out);
    let bytes = config_bytes(&config);
    set.write(CONFIG_NAME, &bytes)?;
    for episode in &episodes {
        write_episode(&mut set, episode)?;
    }
    set.finish(&bytes, seeds)
}
