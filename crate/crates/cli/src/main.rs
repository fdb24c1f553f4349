use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pda_cli::error::{CliError, CliResult};
use pda_cli::eval::EvalSettings;
use pda_cli::finetune::{FinetuneSettings, Loss};
use pda_cli::{ablate, eval, finetune, gen, init_threads, inspect};
use pda_core::simgen::DEFAULT_SEED_COUNT;

#[derive(Parser)]
#[command(name = "pda", version, about = "Multi-prototype metric head experiments on synthetic few-shot episodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate episodes for consecutive seeds from a JSON config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED_COUNT)]
        seeds: usize,
    },
    /// Build prototype memory from support RoIs and fine-tune the head.
    Finetune(FinetuneArgs),
    /// Score query RoIs and report accuracy per seed.
    Eval(EvalArgs),
    /// Run a shots x K x memory-arm grid.
    Ablate {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the header and slot geometry of a memory file.
    InspectMemory {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(clap::Args)]
struct FinetuneArgs {
    #[arg(long)]
    episode: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep the support-initialized memory fixed during fine-tuning.
    #[arg(long)]
    freeze_mem: bool,
    /// Prototype slots per class.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    use_align: bool,
    /// Warp once per class instead of once per RoI (needs --use-align).
    #[arg(long)]
    align_per_class: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    loss: Option<Loss>,
}

impl FinetuneArgs {
    fn settings(&self) -> FinetuneSettings {
        let d = FinetuneSettings::default();
        FinetuneSettings {
            k: self.k.unwrap_or(d.k),
            momentum: self.momentum.unwrap_or(d.momentum),
            freeze_mem: self.freeze_mem,
            use_align: self.use_align,
            align_per_class: self.align_per_class,
            steps: self.steps.unwrap_or(d.steps),
            lr: self.lr.unwrap_or(d.lr),
            seed: self.seed.unwrap_or(d.seed),
            loss: self.loss.unwrap_or(d.loss),
        }
    }
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    episode: PathBuf,
    /// Finetune output directory; sets both --params and --memory.
    #[arg(long, required_unless_present_all = ["params", "memory"])]
    model: Option<PathBuf>,
    /// Params file, or a directory holding seed-<n>/params.bin.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Memory file, or a directory holding seed-<n>/memory.bin.
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Directory for metrics.csv and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-RoI rows to audit.csv.
    #[arg(long)]
    audit: bool,
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Gen { config, out, seeds } => {
            let manifest = gen::run(&config, &out, seeds)?;
            eprintln!("wrote {} episodes to {}", manifest.seeds.len(), out.display());
        }
        Command::Finetune(args) => {
            if args.freeze_mem && args.momentum.is_some() {
                eprintln!("warning: --momentum is unused with --freeze-mem");
            }
            let manifest = finetune::run(&args.episode, &args.out, &args.settings())?;
            eprintln!("fine-tuned {} seeds into {}", manifest.seeds.len(), args.out.display());
        }
        Command::Eval(args) => {
            let params = args.params.or_else(|| args.model.clone());
            let memory = args.memory.or_else(|| args.model.clone());
            let (Some(params), Some(memory)) = (params, memory) else {
                return Err(CliError::config("eval needs --model or both --params and --memory"));
            };
            let d = EvalSettings::default();
            let settings = EvalSettings {
                alpha: args.alpha.unwrap_or(d.alpha),
                beta: args.beta.unwrap_or(d.beta),
                gamma: args.gamma.unwrap_or(d.gamma),
                tau: args.tau,
            };
            let output = eval::run(&args.episode, &params, &memory, &settings, args.out.as_deref(), args.audit)?;
            print!("{}", output.csv);
        }
        Command::Ablate { episode, sweep, out } => {
            let output = ablate::run(&episode, &sweep, &out)?;
            print!("{}", output.report.markdown());
            if let Some(kind) = output.report.failure() {
                return Err(CliError {
                    kind,
                    message: "some ablation cells failed; see the report".to_string(),
                });
            }
        }
        Command::InspectMemory { path, json } => print!("{}", inspect::run(&path, json)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
