use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tropscat::algebra::CoeffRing;
use tropscat_cli::{cmd_legendre, cmd_normalize, cmd_run_structure, cmd_sample, cmd_scatter, cmd_verify, read_json, to_json, write_text, CliError, Result};

#[derive(Parser)]
#[command(name = "tropscat", version, about = "Wall structures and scattering diagrams on polarized tropical manifolds")]
struct Cli {
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ring {
    Q,
    Z,
}

impl From<Ring> for CoeffRing {
    fn from(r: Ring) -> Self {
        match r {
            Ring::Q => CoeffRing::Rational,
            Ring::Z => CoeffRing::Integer,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Render {
    Json,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Complete a scattering diagram to a consistent one.
    Scatter {
        input: PathBuf,
        /// Truncate the input to this order first.
        #[arg(long)]
        order: Option<i64>,
        #[arg(long, value_enum, default_value = "json")]
        render: Render,
    },
    /// Discrete Legendre transform of a polarized complex.
    Legendre { input: PathBuf },
    /// Build the wall structure order by order.
    RunStructure {
        input: PathBuf,
        #[arg(long)]
        order: i64,
        #[arg(long, value_enum, default_value = "q")]
        ring: Ring,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Normalize a slab function and print the added t-power coefficients.
    Normalize {
        input: PathBuf,
        #[arg(long)]
        order: i64,
        #[arg(long, value_enum, default_value = "q")]
        ring: Ring,
    },
    /// Re-check consistency, compatibility and integrality of checkpoints.
    Verify {
        /// Checkpoint files or directories holding them.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Print a bundled example input.
    Sample {
        name: String,
        #[arg(long, default_value_t = 3)]
        order: i64,
    },
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.output.as_deref();
    match cli.command {
        Command::Scatter { input, order, render } => {
            let (report, diagram) = cmd_scatter(&read_json(&input)?, order)?;
            match render {
                Render::Svg if report.diagram.joint.rank == 2 => emit(out, &diagram.render_svg()),
                Render::Svg => {
                    eprintln!("notice: svg output needs rank 2, writing json");
                    emit(out, &to_json(&report)?)
                }
                Render::Json => emit(out, &to_json(&report)?),
            }
        }
        Command::Legendre { input } => emit(out, &to_json(&cmd_legendre(&read_json(&input)?)?)?),
        Command::RunStructure { input, order, ring, jobs, checkpoint_dir } => {
            if order < 0 {
                return Err(CliError::Usage("--order must be non-negative".into()));
            }
            let report = cmd_run_structure(&read_json(&input)?, order, ring.into(), jobs, checkpoint_dir.as_deref())?;
            emit(out, &to_json(&report)?)
        }
        Command::Normalize { input, order, ring } => {
            if order < 1 {
                return Err(CliError::Usage("--order must be at least 1".into()));
            }
            emit(out, &to_json(&cmd_normalize(&read_json(&input)?, order, ring.into())?)?)
        }
        Command::Verify { paths } => {
            let report = cmd_verify(&paths)?;
            emit(out, &to_json(&report)?)?;
            if report.passed {
                Ok(())
            } else {
                let bad: Vec<String> = report.files.iter().filter(|f| !f.consistent || !f.integral || f.compatible == Some(false)).map(|f| f.path.display().to_string()).collect();
                Err(CliError::Math(format!("verification failed for {}", bad.join(", "))))
            }
        }
        Command::Sample { name, order } => emit(out, &cmd_sample(&name, order)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tropscat: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
