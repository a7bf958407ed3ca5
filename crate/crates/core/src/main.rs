use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use contraction_cert::cli::{self, CliError, SimulateArgs};

#[derive(Parser)]
#[command(name = "contraction-cert", version, about = "Certified neural contraction metrics and tracking controllers")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and metric from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute a certificate and compare it with the stored one.
    Verify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Defaults to certificate.json next to the checkpoint.
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Search for a sampled state with positive mu2(G(x)).
    Falsify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate the tracking controller on a reference trajectory.
    Simulate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        shape: String,
        #[arg(long)]
        duration: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 10)]
        starts: usize,
        /// Shape parameter override, e.g. --param amplitude=3.
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write plot manifests and a gnuplot script for a run directory.
    ExportPlots {
        #[arg(long)]
        run: PathBuf,
    },
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        })
}

fn run(args: Args) -> Result<(), CliError> {
    let mut err = std::io::stderr();
    match args.command {
        Command::Train { config, out } => cli::cmd_train(&config, &out, Some(timestamp()), &mut err).map(drop),
        Command::Verify { ckpt, config, cert } => {
            cli::cmd_verify(&ckpt, &config, cert.as_deref(), &mut err).map(drop)
        }
        Command::Falsify { ckpt, samples, seed } => cli::cmd_falsify(&ckpt, samples, seed, &mut err).map(drop),
        Command::Simulate {
            ckpt,
            shape,
            duration,
            dt,
            starts,
            params,
            out,
        } => {
            let sim = SimulateArgs {
                shape,
                params,
                duration,
                dt,
                starts,
                out,
            };
            cli::cmd_simulate(&ckpt, &sim, &mut err).map(drop)
        }
        Command::ExportPlots { run } => cli::cmd_export_plots(&run, &mut err).map(drop),
    }
}

fn main() {
    if let Err(e) = run(Args::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit.code());
    }
}
