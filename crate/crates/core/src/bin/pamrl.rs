use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pamrl::cli::{self, export::SMOOTHING_WINDOW, CliError, Overrides, RunConfig, Variant};

#[derive(Parser)]
#[command(name = "pamrl", version, about = "Prompt-augmented multi-agent SAC for RAN slicing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds, comma separated; replaces the config's list.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// pa-mrl, pa-mrl-alt-encoder or marl-noprompt.
    #[arg(long)]
    variant: Option<Variant>,
    /// Number of learnable context tokens.
    #[arg(long = "n-ctx")]
    n_ctx: Option<usize>,
    /// Evaluation episodes per evaluation.
    #[arg(long)]
    episodes: Option<usize>,
    /// Output root directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single-threaded rollouts; bit-reproducible runs.
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        let mut cfg = RunConfig::load(path)?;
        cfg.apply(&Overrides {
            seeds: self.seed.clone(),
            variant: self.variant,
            n_ctx: self.n_ctx,
            episodes: self.episodes,
            out: self.out.clone(),
            sequential: self.sequential,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain adapters and train every seed.
    Train(RunArgs),
    /// Evaluate finished runs; without run directories, those of --config.
    Eval {
        run_dirs: Vec<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train once per n_ctx value per seed and write sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// n_ctx values, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0,2,4,8,16")]
        values: Vec<usize>,
    },
    /// Write plot data for finished runs.
    Export {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, default_value = "export")]
        out: PathBuf,
        /// Moving-average window for reward curves.
        #[arg(long, default_value_t = SMOOTHING_WINDOW)]
        window: usize,
    },
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train(args) => {
            let cfg = args.load()?;
            let mut first_err = None;
            for (seed, dir, r) in cli::train_all(&cfg) {
                match r {
                    Ok(rep) => println!(
                        "{} seed {seed}: {} iterations, converged at {}, final smoothed reward {} -> {}",
                        cfg.variant,
                        rep.iterations_run,
                        rep.converged_at.map_or("-".to_string(), |c| (c + 1).to_string()),
                        rep.final_smoothed_reward(),
                        dir.display()
                    ),
                    Err(e) => {
                        eprintln!("{} seed {seed}: {e}", cfg.variant);
                        first_err.get_or_insert(e);
                    }
                }
            }
            first_err.map_or(Ok(()), Err)
        }
        Command::Eval { run_dirs, run } => {
            let dirs = if run_dirs.is_empty() {
                let cfg = run.load()?;
                cfg.seeds.iter().map(|&s| cli::run_dir(&cfg.out, cfg.variant, s)).collect()
            } else {
                run_dirs
            };
            for d in dirs {
                let r = cli::eval_run(&d, run.episodes)?;
                let std = r.std.iter().sum::<f64>() / r.std.len().max(1) as f64;
                println!("{}: mean return {} (std {std})", d.display(), r.overall_mean());
            }
            Ok(())
        }
        Command::Sweep { run, values } => {
            let cfg = run.load()?;
            let rows = cli::sweep(&cfg, &values)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if let Some(best) = rows.iter().find(|r| r.argmax) {
                println!(
                    "best n_ctx {} (seed {}), max smoothed reward {}",
                    best.n_ctx,
                    best.seed,
                    best.max_smoothed_reward.unwrap_or(f64::NAN)
                );
            }
            println!(
                "{} runs, {failed} failed -> {}",
                rows.len(),
                cfg.out.join("sweep").join(cli::SWEEP_FILE).display()
            );
            Ok(())
        }
        Command::Export { run_dirs, out, window } => {
            let r = cli::export(&run_dirs, &out, window)?;
            println!(
                "exported {} runs ({} skipped) -> {}",
                r.exported.len(),
                r.skipped.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
