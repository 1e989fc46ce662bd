use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use szgan::commands;
use szgan::{CliResult, ExperimentConfig, Scenario};

#[derive(Parser)]
#[command(name = "szgan", version, about = "GAN-based seizure prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// cnn_supervised, gan_cnn, gan_ps_cnn or gan_ps_ospl_cnn.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Upper bound on parallel patient or fold jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    repeats: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the synthetic dataset described by the config.
    Synth,
    /// Build the spectrogram cache.
    Preprocess,
    /// Train GAN trunks and classifier heads.
    Train,
    /// Score held-out windows and write reports.
    Evaluate,
    /// Combine scenario reports into one table.
    Report,
}

fn run(cli: &Cli) -> CliResult<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| szgan::CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = &cli.scenario {
        cfg.scenario = Scenario::parse(s)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(r) = cli.repeats {
        cfg.repeats = r;
    }
    cfg.validate()?;
    let jobs = cli.jobs.max(1);
    match cli.command {
        Command::Synth => {
            for o in commands::synth(&cfg)? {
                println!(
                    "{}: {} seizures, eligible: {}{}",
                    o.patient_id,
                    o.n_seizures,
                    o.eligibility.eligible,
                    if o.eligibility.reasons.is_empty() {
                        String::new()
                    } else {
                        format!(" ({})", o.eligibility.reasons.join(", "))
                    }
                );
            }
        }
        Command::Preprocess => {
            let index = commands::preprocess(&cfg, jobs)?;
            for p in &index.patients {
                println!("{}: {} windows, shape {:?}", p.id, p.windows.len(), p.shape);
            }
        }
        Command::Train => {
            let s = commands::train(&cfg, jobs)?;
            for g in &s.gans {
                println!("GAN {}: {} training windows", g.key, g.n_real_windows);
            }
            for p in &s.patients {
                println!("{}: {} heads", p.id, p.folds.len());
            }
            for p in &s.skipped {
                println!("{}: skipped ({})", p.id, p.reasons.join(", "));
            }
        }
        Command::Evaluate => {
            let r = commands::evaluate(&cfg, jobs)?;
            for p in &r.patients {
                println!("{}: AUC {:.4} ± {:.4}", p.id, p.report.mean_auc, p.report.sd_auc);
            }
        }
        Command::Report => print!("{}", commands::report(&cfg)?.table),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
