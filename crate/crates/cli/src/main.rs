use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use empg_cli::{
    cmd_ablate, cmd_analyze_curves, cmd_analyze_entropy_shift, cmd_export, cmd_train,
    format_verify_table, load_config, output_root, verify_report, CmdError, VerifyOptions,
    EXIT_CHECK_FAILED,
};

/// Entropy-modulated policy gradients on desk-scale sparse-reward
/// environments: verify the theory, train policies, run ablations, and
/// export run artifacts.
#[derive(Parser)]
#[command(name = "empg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (flat `key = value` lines, dotted sections).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set modulation.zeta=0.05 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (default: $EMPG_OUT_ROOT or ./runs, plus the config
    /// file stem).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the numeric theory checks and print a pass/fail table.
    Verify {
        /// Random policies per identity sweep.
        #[arg(long, default_value_t = 1000)]
        probes: usize,
        /// Monte Carlo samples per probe.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fault-injection test hook: perturbs one side of the norm identity.
        #[arg(long, default_value_t = 0.0, hide = true)]
        inject_fault: f64,
    },
    /// Train one run directory per configured seed.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Train only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train all four ablation variants on identical seeds and compare them.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated seeds overriding the config's seed list.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value = "success_rate")]
        metric: String,
    },
    /// Compare completed runs or compute the entropy-shift table.
    Analyze {
        /// A completed run as label=dir (repeat for each run).
        #[arg(long = "run", value_name = "LABEL=DIR")]
        runs: Vec<String>,
        #[arg(long, default_value = "success_rate")]
        metric: String,
        /// Entropy change by initial-entropy percentile for one run directory.
        #[arg(long, value_name = "DIR", conflicts_with = "runs")]
        entropy_shift: Option<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump a run artifact (metrics | ledger | checkpoint) as TSV.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        what: String,
        /// Ledger/checkpoint iteration (checkpoint also accepts `final`).
        #[arg(long)]
        iteration: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Verify {
            probes,
            samples,
            seed,
            inject_fault,
        } => {
            let rows = verify_report(&VerifyOptions {
                probes,
                samples,
                seed,
                inject_fault,
            })?;
            print!("{}", format_verify_table(&rows));
            if rows.iter().all(|r| r.pass) {
                Ok(())
            } else {
                Err(CmdError {
                    code: EXIT_CHECK_FAILED,
                    message: "verification failed".into(),
                })
            }
        }
        Command::Train { config, seed } => {
            let cfg = load_config(&config.config, &config.set, seed)?;
            let out = resolve_out(&config);
            println!("output root: {}", out.display());
            cmd_train(&cfg, &out)?;
            Ok(())
        }
        Command::Ablate {
            config,
            seeds,
            metric,
        } => {
            let mut cfg = load_config(&config.config, &config.set, None)?;
            if let Some(list) = seeds {
                cfg.seed_list = list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| CmdError::usage(format!("bad seed `{s}`")))
                    })
                    .collect::<Result<Vec<u64>, _>>()?;
            }
            let out = resolve_out(&config);
            println!("output root: {}", out.display());
            cmd_ablate(&cfg, &out, &metric)?;
            Ok(())
        }
        Command::Analyze {
            runs,
            metric,
            entropy_shift,
            out,
        } => {
            let tsv = match entropy_shift {
                Some(run) => cmd_analyze_entropy_shift(&run, out.as_deref())?,
                None => {
                    if runs.len() < 2 {
                        return Err(CmdError::usage(
                            "analyze needs at least two --run label=dir pairs \
                             (or --entropy-shift DIR)",
                        ));
                    }
                    cmd_analyze_curves(&runs, &metric, out.as_deref())?
                }
            };
            if out.is_none() {
                print!("{tsv}");
            }
            Ok(())
        }
        Command::Export {
            run: dir,
            what,
            iteration,
            out,
        } => {
            let tsv = cmd_export(&dir, &what, iteration)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, tsv).map_err(|e| CmdError::failure(e.to_string()))?;
                    println!("table: {}", path.display());
                }
                None => print!("{tsv}"),
            }
            Ok(())
        }
    }
}

fn resolve_out(config: &ConfigArgs) -> PathBuf {
    match &config.out {
        Some(path) => path.clone(),
        None => {
            let stem = config
                .config
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            output_root(None).join(stem)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
