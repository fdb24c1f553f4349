use std::path::{Path, PathBuf};

use pda_core::io::{decode_items, encode_items, SplitHeader};
use pda_core::simgen::{Episode, EpisodeConfig, EpisodeItem, GroundTruth};

use crate::error::{read_bytes, CliError, CliResult};
use crate::manifest::{OutputSet, RunManifest};

pub const CONFIG_NAME: &str = "config.json";
pub const SPLITS: [&str; 3] = ["support", "train", "query"];

pub fn seed_dir(seed: u64) -> String {
    format!("seed-{seed}")
}

pub fn config_bytes(config: &EpisodeConfig) -> Vec<u8> {
    let mut text = config.to_json();
    text.push('\n');
    text.into_bytes()
}

fn map_dims(config: &EpisodeConfig) -> (usize, usize, usize) {
    (config.map.channels, config.map.height, config.map.width)
}

/// Writes one episode's splits and ground truth under `seed-<seed>/`.
pub fn write_episode(out: &mut OutputSet, episode: &Episode) -> CliResult<()> {
    let dir = seed_dir(episode.config.seed);
    let classes = episode.num_classes();
    let dims = map_dims(&episode.config);
    for (name, items) in SPLITS.iter().zip([&episode.support, &episode.train, &episode.query]) {
        out.write(&format!("{dir}/{name}.bin"), &encode_items(items, classes, dims)?)?;
    }
    let truth = serde_json::to_vec_pretty(&episode.ground_truth).expect("ground truth serializes");
    out.write(&format!("{dir}/ground_truth.json"), &truth)
}

/// A generated episode directory: the base config plus one subdirectory per seed.
#[derive(Debug, Clone)]
pub struct EpisodeDir {
    pub root: PathBuf,
    pub config: EpisodeConfig,
    pub seeds: Vec<u64>,
}

impl EpisodeDir {
    pub fn open(root: &Path) -> CliResult<Self> {
        if !root.is_dir() {
            return Err(CliError::data(format!("episode directory not found: {}", root.display())));
        }
        let manifest = RunManifest::load(root)?;
        let text = read_bytes(&root.join(CONFIG_NAME))?;
        let text = String::from_utf8(text).map_err(|_| CliError::data("episode config is not UTF-8"))?;
        let config = EpisodeConfig::from_json(&text).map_err(|e| CliError::data(format!("episode config: {e}")))?;
        if manifest.seeds.is_empty() {
            return Err(CliError::data("episode manifest lists no seeds"));
        }
        Ok(Self {
            root: root.to_path_buf(),
            config,
            seeds: manifest.seeds,
        })
    }

    pub fn config_for(&self, seed: u64) -> EpisodeConfig {
        EpisodeConfig {
            seed,
            ..self.config.clone()
        }
    }

    fn split(&self, seed: u64, name: &str) -> CliResult<(SplitHeader, Vec<EpisodeItem>)> {
        let path = self.root.join(seed_dir(seed)).join(format!("{name}.bin"));
        let bytes = read_bytes(&path)?;
        let (header, items) = decode_items(&bytes).map_err(|e| CliError::from(e).context(path.display()))?;
        let c = &self.config;
        let expected = [c.num_classes(), c.dim, c.map.channels, c.map.height, c.map.width];
        let actual = [header.num_classes, header.dim, header.channels, header.height, header.width];
        if expected != actual {
            return Err(CliError::data(format!(
                "{}: split header does not match the episode config\n{}",
                path.display(),
                dump_split_header(&header)
            )));
        }
        Ok((header, items))
    }

    pub fn load(&self, seed: u64) -> CliResult<Episode> {
        let (_, support) = self.split(seed, "support")?;
        let (_, train) = self.split(seed, "train")?;
        let (_, query) = self.split(seed, "query")?;
        let path = self.root.join(seed_dir(seed)).join("ground_truth.json");
        let ground_truth: GroundTruth = serde_json::from_slice(&read_bytes(&path)?)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(Episode {
            config: self.config_for(seed),
            support,
            train,
            query,
            ground_truth,
        })
    }

    pub fn split_header(&self, seed: u64, name: &str) -> CliResult<SplitHeader> {
        let path = self.root.join(seed_dir(seed)).join(format!("{name}.bin"));
        Ok(pda_core::io::decode_split_header(&read_bytes(&path)?)?)
    }
}

pub fn dump_split_header(h: &SplitHeader) -> String {
    format!(
        "episode split header: count={} classes={} dim={} map={}x{}x{}",
        h.count, h.num_classes, h.dim, h.channels, h.height, h.width
    )
}
