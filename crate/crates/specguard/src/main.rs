use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use specguard::config::ExperimentConfig;
use specguard::error::CliResult;
use specguard::run;

#[derive(Parser)]
#[command(name = "specguard", version, about = "Spectral regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// INI file, or `preset:<name>`.
    #[arg(long)]
    config: String,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `section.key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from existing checkpoints.
        #[arg(long)]
        resume: bool,
    },
    Attack {
        #[command(flatten)]
        common: Common,
    },
    Geometry {
        #[command(flatten)]
        common: Common,
    },
    Etf {
        #[command(flatten)]
        common: Common,
    },
    RetrainReadout {
        #[command(flatten)]
        common: Common,
    },
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(c: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    for o in &c.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| specguard::error::CliError::Config(format!("--set {o}: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cmd: &Command) -> CliResult<()> {
    match cmd {
        Command::Train { common, resume } => {
            for s in run::cmd_train(&resolve(common)?, *resume)? {
                let test = s.test_acc.map_or("-".into(), |a| format!("{a:.4}"));
                let sig: Vec<String> = s.sigma.iter().map(|(n, v)| format!("{n}={v:.3}")).collect();
                println!("{} seed {}: loss {:.4e} train {:.4} test {test} σ [{}]", s.mode.name(), s.seed, s.final_loss, s.train_acc, sig.join(" "));
            }
        }
        Command::Attack { common } => {
            for s in run::cmd_attack(&resolve(common)?)? {
                println!(
                    "{} seed {} ({}): n {} mean Δ {:.4} median {:.4} queries {:.0}",
                    s.mode.name(),
                    s.seed,
                    s.head,
                    s.stats.count,
                    s.stats.mean,
                    s.stats.median,
                    s.mean_queries
                );
            }
        }
        Command::Geometry { common } => {
            for d in run::cmd_geometry(&resolve(common)?)? {
                println!("{}", d.display());
            }
        }
        Command::Etf { common } => {
            let r = run::cmd_etf(&resolve(common)?)?;
            for s in &r.runs {
                println!("std {}: min cos {:.6} θ analytic {:.6}", s.init_std, s.min_final_cosine, s.theta_analytic);
            }
            println!("first-step alignment {:.6}", r.first_step_alignment);
        }
        Command::RetrainReadout { common } => {
            for s in run::cmd_retrain_readout(&resolve(common)?)? {
                println!("{} seed {}: {} iterations, converged {}, train {:.4}", s.mode.name(), s.seed, s.iterations, s.converged, s.train_acc);
            }
        }
        Command::Report { common } => {
            for a in run::cmd_report(&resolve(common)?)? {
                println!("{} ({}): mean Δ {:.4} ± {:.4} over {} seeds", a.mode.name(), a.head, a.mean, a.std, a.seeds.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
