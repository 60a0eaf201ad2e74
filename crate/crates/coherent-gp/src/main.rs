use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coherent_gp::cli::{
    self, parse_kernel, resolve_out_dir, CliError, GramArgs, RunConfig, DEFAULT_FLOOR,
    DEFAULT_SHOTS,
};
use coherent_gp::tasks::TargetFunction;

/// Quantum-kernel Gaussian-process experiments: Pauli decompositions,
/// regression, dynamics sweeps, reinforcement learning, and Gram matrices.
#[derive(Parser)]
#[command(name = "coherent-gp", version, about)]
struct Cli {
    /// Optional key=value config file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $COHERENT_GP_OUT or the current directory).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose the N-level displacement generator into Pauli strings.
    Decompose(DecomposeArgs),
    /// One-dimensional regression with an optimized quantum kernel.
    Regress1d(Regress1dArgs),
    /// Car-on-hill dynamics regression over several training sets.
    Dynamics(DynamicsArgs),
    /// GP reinforcement learning on the car-on-hill task.
    Rl(RlArgs),
    /// Evaluate a kernel Gram matrix over a dataset, optionally emulating
    /// shot-limited hardware.
    Gram(GramCli),
}

#[derive(Args)]
struct DecomposeArgs {
    /// Truncation level N (a power of two up to 64).
    #[arg(long)]
    levels: Option<usize>,
}

#[derive(Args)]
struct Regress1dArgs {
    /// Target function: xsinx, f1, or f2.
    #[arg(long)]
    func: Option<String>,
    /// Kernel label: coherent, C-N, CQ-N-tm, or CQ-4-t3-HW.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Random optimizer restarts beyond the deterministic starts.
    #[arg(long)]
    restarts: Option<usize>,
    /// Shots per circuit for the hardware pipeline.
    #[arg(long)]
    shots: Option<u64>,
    /// Background floor rate for the hardware pipeline.
    #[arg(long)]
    floor: Option<f64>,
}

#[derive(Args)]
struct DynamicsArgs {
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    sets: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RlArgs {
    #[arg(long)]
    kernel: Option<String>,
    /// Value-iteration sweep budget.
    #[arg(long)]
    iters: Option<usize>,
    /// Rollout length.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GramCli {
    #[arg(long)]
    kernel: Option<String>,
    /// Dataset CSV with header x1,...,xD,y,sigma2.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Scale prefactor s.
    #[arg(long)]
    s: Option<f64>,
    /// Comma-separated length scales (one value is broadcast).
    #[arg(long)]
    c: Option<String>,
    /// Comma-separated squeezing couplings (squeezed kernel only).
    #[arg(long)]
    d: Option<String>,
    /// Also write a shot-noise-emulated Gram and the relative-error matrix.
    #[arg(long)]
    emulate_hw: bool,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    hw_seed: Option<u64>,
}

fn parse_floats(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad number {v:?}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let out_dir = resolve_out_dir(&mut cfg, cli.out_dir.clone())?;
    match cli.command {
        Command::Decompose(args) => {
            let levels = cfg.resolve("levels", args.levels, 4)?;
            cfg.set("subcommand", "decompose");
            cli::cmd_decompose(levels, &out_dir, &cfg)
        }
        Command::Regress1d(args) => {
            let func_label = cfg.resolve("func", args.func, "xsinx".to_string())?;
            let func = TargetFunction::parse(&func_label)
                .ok_or_else(|| CliError::Usage(format!("unknown function {func_label:?}")))?;
            let kernel_label = cfg.resolve("kernel", args.kernel, "coherent".to_string())?;
            let kernel = parse_kernel(&kernel_label)?;
            let n_train = cfg.resolve("n_train", args.n_train, 40)?;
            let seed = cfg.resolve("seed", args.seed, 0)?;
            let restarts = cfg.resolve("restarts", args.restarts, 0)?;
            let shots = cfg.resolve("shots", args.shots, DEFAULT_SHOTS)?;
            let floor = cfg.resolve("floor", args.floor, DEFAULT_FLOOR)?;
            cfg.set("subcommand", "regress1d");
            if n_train < 2 {
                return Err(CliError::Usage("n_train must be at least 2".into()));
            }
            cli::cmd_regress1d(
                func, kernel, n_train, seed, restarts, shots, floor, &out_dir, &cfg,
            )
        }
        Command::Dynamics(args) => {
            let kernel_label = cfg.resolve("kernel", args.kernel, "coherent".to_string())?;
            let kernel = parse_kernel(&kernel_label)?;
            let sets = cfg.resolve("sets", args.sets, 10)?;
            let seed = cfg.resolve("seed", args.seed, 0)?;
            cfg.set("subcommand", "dynamics");
            if sets == 0 {
                return Err(CliError::Usage("sets must be positive".into()));
            }
            cli::cmd_dynamics(kernel, sets, seed, &out_dir, &cfg)
        }
        Command::Rl(args) => {
            let kernel_label = cfg.resolve("kernel", args.kernel, "coherent".to_string())?;
            let kernel = parse_kernel(&kernel_label)?;
            let iters = cfg.resolve("iters", args.iters, 400)?;
            let steps = cfg.resolve("steps", args.steps, 500)?;
            let seed = cfg.resolve("seed", args.seed, 0)?;
            cfg.set("subcommand", "rl");
            cli::cmd_rl(kernel, iters, steps, seed, &out_dir, &cfg)
        }
        Command::Gram(args) => {
            let kernel_label = cfg.resolve("kernel", args.kernel, "coherent".to_string())?;
            let kernel = parse_kernel(&kernel_label)?;
            let dataset = args
                .dataset
                .or_else(|| cfg.get("dataset").map(PathBuf::from))
                .ok_or_else(|| CliError::Usage("gram needs --dataset".into()))?;
            cfg.set("dataset", dataset.display().to_string());
            let s = cfg.resolve("s", args.s, 1.0)?;
            let c = match args.c.or_else(|| cfg.get("c").map(String::from)) {
                Some(text) => {
                    cfg.set("c", &text);
                    parse_floats(&text)?
                }
                None => Vec::new(),
            };
            let d = match args.d.or_else(|| cfg.get("d").map(String::from)) {
                Some(text) => {
                    cfg.set("d", &text);
                    parse_floats(&text)?
                }
                None => Vec::new(),
            };
            let emulate_hw = args.emulate_hw || cfg.get("emulate_hw") == Some("true");
            cfg.set("emulate_hw", emulate_hw);
            let shots = cfg.resolve("shots", args.shots, DEFAULT_SHOTS)?;
            let floor = cfg.resolve("floor", args.floor, DEFAULT_FLOOR)?;
            let hw_seed = cfg.resolve("hw_seed", args.hw_seed, 0)?;
            cfg.set("subcommand", "gram");
            cli::cmd_gram(
                GramArgs {
                    kernel,
                    dataset,
                    s,
                    c,
                    d,
                    emulate_hw,
                    shots,
                    floor_rate: floor,
                    hw_seed,
                },
                &out_dir,
                &cfg,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
