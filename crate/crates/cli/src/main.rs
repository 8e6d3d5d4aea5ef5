use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cocycle_lab_cli::config::{self, ExperimentKind};
use cocycle_lab_cli::{demo, run_config, RunOptions, EXIT_OK, EXIT_VALIDATION};

#[derive(Parser)]
#[command(name = "cocycle-lab", version, about = "Lyapunov spectra of cocycles over the Lorenz flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides the seed (offset) of randomized experiments.
        #[arg(long)]
        seed_offset: Option<u64>,
    },
    /// Check a config file and print the resolved form.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print an example config.
    Demo {
        /// Experiment name; lists the names when omitted.
        experiment: Option<String>,
    },
}

fn load(path: &PathBuf) -> Result<config::RunConfig, Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    config::parse(&text)
}

fn report_errors(errs: &[String]) {
    for e in errs {
        eprintln!("error: {e}");
    }
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, jobs, output, seed_offset } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(errs) => {
                    report_errors(&errs);
                    return code(EXIT_VALIDATION);
                }
            };
            if let Some(n) = jobs {
                if n == 0 {
                    report_errors(&["--jobs must be at least 1".into()]);
                    return code(EXIT_VALIDATION);
                }
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool");
            }
            let r = run_config(cfg, &RunOptions { output, seed_offset, jobs });
            report_errors(&r.errors);
            if r.exit_code == EXIT_OK {
                println!("{}", r.output_dir.display());
            }
            code(r.exit_code)
        }
        Command::Validate { config } => match load(&config) {
            Ok(c) => {
                println!("ok");
                println!("{}", serde_json::to_string_pretty(&c).expect("config serializes"));
                code(EXIT_OK)
            }
            Err(errs) => {
                report_errors(&errs);
                code(EXIT_VALIDATION)
            }
        },
        Command::Demo { experiment } => match experiment {
            None => {
                for k in ExperimentKind::ALL {
                    println!("{}", k.name());
                }
                code(EXIT_OK)
            }
            Some(name) => match ExperimentKind::from_name(&name) {
                Some(k) => {
                    println!("{}", serde_json::to_string_pretty(&demo::demo_config(k)).expect("demo serializes"));
                    code(EXIT_OK)
                }
                None => {
                    report_errors(&[format!("unknown experiment \"{name}\"")]);
                    code(EXIT_VALIDATION)
                }
            },
        },
    }
}
