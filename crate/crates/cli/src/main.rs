use std::path::PathBuf;

use clap::{Parser, Subcommand};
use star_isac_cli::*;

#[derive(Parser)]
#[command(name = "star-isac", version, about = "STAR-RIS assisted ISAC beamforming experiments")]
struct Cli {
    /// Write 0 in every wall-clock column (byte-stable output).
    #[arg(long, global = true)]
    no_timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the proposed alternating optimization once.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one parameter over several seeds and schemes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// p_max_dbm, gamma_db, n_elements or eta
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        /// Comma-separated seeds or a range `a..b`.
        #[arg(long, default_value = "0..5")]
        seeds: String,
        /// Comma-separated subset of proposed, random-phase, conventional-ris.
        #[arg(long, default_value = "proposed,random-phase,conventional-ris")]
        schemes: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one comparison scheme once.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        /// random-phase or conventional-ris (proposed also accepted)
        #[arg(long)]
        scheme: Scheme,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let opts = OutputOptions { no_timing: cli.no_timing };
    let code = match cli.command {
        Command::Run { config, seed, out } => run_single(&config, seed, &out, opts),
        Command::Sweep { config, param, values, seeds, schemes, out } => {
            let spec = (|| {
                Ok::<_, String>(SweepSpec {
                    param,
                    values: parse_list(&values).map_err(|e| format!("--values {e}"))?,
                    seeds: parse_seeds(&seeds).map_err(|e| format!("--seeds {e}"))?,
                    schemes: parse_list(&schemes).map_err(|e| format!("--schemes {e}"))?,
                })
            })();
            match spec {
                Ok(spec) => run_sweep(&config, &spec, &out, opts),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::Config
                }
            }
        }
        Command::Baseline { config, scheme, seed, out } => run_baseline(&config, scheme, seed, &out, opts),
    };
    std::process::exit(code as i32);
}
