use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use comodo::cli::{self, AblationAxis};
use comodo::config::RunConfig;
use comodo::exec::init_thread_pool;
use comodo::probe::ProbeKind;
use comodo::Result;

#[derive(Parser)]
#[command(name = "comodo", version, about = "Cross-modal distillation into a multi-channel time-series student")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// `key = value` config file; defaults apply to every key it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset.
    GenerateData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a student and write metrics and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; overrides `data_dir`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        evict_after_loss: bool,
    },
    /// Probe a checkpoint and report Acc@{1,3,5}.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        probe: Option<ProbeKind>,
    },
    /// Sweep one axis over several seeds and tabulate probe accuracy.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: AblationAxis,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        probe: Option<ProbeKind>,
        #[arg(long)]
        evict_after_loss: bool,
        /// Run the sweep's independent trainings concurrently.
        #[arg(long)]
        parallel: bool,
    },
}

fn resolve(common: &Common, data: Option<&Path>, probe: Option<ProbeKind>, evict: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = data {
        cfg.data_dir = Some(dir.to_path_buf());
    }
    if let Some(p) = probe {
        cfg.probe = p;
    }
    cfg.evict_after_loss |= evict;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { common } => {
            let cfg = resolve(&common, None, None, false)?;
            let r = cli::cmd_generate_data(&cfg, &common.out)?;
            println!(
                "wrote {} train / {} test samples, {} classes, to {}",
                r.meta.train_count,
                r.meta.test_count,
                r.meta.num_classes,
                common.out.display()
            );
        }
        Command::Train {
            common,
            data,
            evict_after_loss,
        } => {
            let cfg = resolve(&common, data.as_deref(), None, evict_after_loss)?;
            let s = cli::cmd_train(&cfg, &common.out)?;
            let losses = s.outcome.epoch_losses();
            if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
                println!(
                    "{} steps, epoch loss {first:.4} -> {last:.4}, final checkpoint {}",
                    s.outcome.history.len(),
                    common.out.join(&s.manifest.final_checkpoint).display()
                );
            }
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            probe,
        } => {
            let cfg = resolve(&common, data.as_deref(), probe, false)?;
            for r in cli::cmd_eval(&cfg, &checkpoint, &common.out)? {
                println!("{} Acc@{} = {:.4} (n = {})", r.probe, r.k, r.accuracy, r.n_test);
            }
        }
        Command::Ablate {
            common,
            axis,
            data,
            probe,
            evict_after_loss,
            parallel,
        } => {
            let cfg = resolve(&common, data.as_deref(), probe, evict_after_loss)?;
            print!("{}", cli::cmd_ablate(&cfg, axis, &common.out, parallel)?.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("COMODO_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            init_thread_pool(n);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::from(cli::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
