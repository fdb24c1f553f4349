//! Experiment harness around `pda-core`: episode generation, fine-tuning,
//! evaluation, ablation sweeps and memory inspection.

pub mod ablate;
pub mod episode_dir;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod gen;
pub mod inspect;
pub mod manifest;

/// Caps the global worker pool from `PDA_THREADS`, if set.
pub fn init_threads() -> error::CliResult<()> {
    let Ok(value) = std::env::var("PDA_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| error::CliError::config(format!("PDA_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| error::CliError::config(format!("cannot size worker pool: {e}")))
}
