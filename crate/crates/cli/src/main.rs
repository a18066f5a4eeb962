use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cosmoflow::homogeneous::{self, HomogeneousState, Model, Normalization, RunControls};
use cosmoflow::kernel::Rank;
use cosmoflow::pipeline::{self, ReplayVerdict};
use cosmoflow::Error;

/// Ricci-flow deformation of cosmological initial data.
#[derive(Parser)]
#[command(name = "cosmoflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory (default: `output.directory`, else `<config>.out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a stored experiment and compare every file bit for bit.
    ReplayCheck { dir: PathBuf },
    /// Evolve a homogeneous model directly; CSV on stdout.
    Reduce {
        #[arg(long, value_enum)]
        model: ModelArg,
        /// `c` for flat and round models, `a,c` for Berger spheres.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true, allow_negative_numbers = true)]
        coefficients: Vec<f64>,
        #[arg(long)]
        target: f64,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, value_enum, default_value_t = NormalizationArg::Plain)]
        normalization: NormalizationArg,
        /// `K = kappa g`.
        #[arg(long, allow_negative_numbers = true)]
        kappa: Option<f64>,
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        rm_ceiling: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        alpha3: f64,
    },
    /// Conjugate kernel at a source node of a stored grid experiment.
    Kernel {
        dir: PathBuf,
        /// Source node `i,j,k`.
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<usize>,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        eta: Vec<f64>,
        #[arg(long)]
        eta0: Option<f64>,
        #[arg(long, value_enum, default_value_t = RankArg::Scalar)]
        rank: RankArg,
        /// Directory for kernel snapshots.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merged long-format CSV of an experiment's tables.
    Report {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    FlatTorus,
    RoundSphere,
    BergerSphere,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizationArg {
    Plain,
    Volume,
}

#[derive(Clone, Copy, ValueEnum)]
enum RankArg {
    Scalar,
    Tensor,
}

/// Mismatch found by `replay-check`.
const REPLAY_FAILED: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::Run { config, out } => run(&config, out.as_deref()),
        Command::ReplayCheck { dir } => replay(&dir),
        Command::Reduce {
            model,
            coefficients,
            target,
            step,
            normalization,
            kappa,
            density,
            rm_ceiling,
            alpha3,
        } => {
            let model = match model {
                ModelArg::FlatTorus => Model::FlatTorus,
                ModelArg::RoundSphere => Model::RoundSphere,
                ModelArg::BergerSphere => Model::BergerSphere,
            };
            let mut s = HomogeneousState::from_coefficients(model, &coefficients)?;
            if let Some(k) = kappa {
                s = s.with_kappa(k);
            }
            if let Some(r) = density {
                s = s.with_density(r);
            }
            let controls = RunControls {
                step,
                target,
                normalization: match normalization {
                    NormalizationArg::Plain => Normalization::Plain,
                    NormalizationArg::Volume => Normalization::Volume,
                },
                rm_ceiling,
            };
            let run = homogeneous::evolve(&s, &controls)?;
            homogeneous::write_csv(&run, alpha3, io::stdout().lock())?;
            match run.stop {
                Some(e) => Err(e),
                None => Ok(0),
            }
        }
        Command::Kernel {
            dir,
            y,
            eta,
            eta0,
            rank,
            out,
        } => {
            let y: [usize; 3] = y
                .try_into()
                .map_err(|_| Error::Config("--y takes three node coordinates i,j,k".into()))?;
            let rank = match rank {
                RankArg::Scalar => Rank::Scalar,
                RankArg::Tensor => Rank::Tensor,
            };
            let rows = pipeline::kernel_on_experiment(&dir, y, &eta, eta0, rank, out.as_deref())?;
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            let mut header = vec!["eta".to_string(), "beta".into(), "mass".into()];
            match rank {
                Rank::Scalar => header.push("smoothed_density".into()),
                Rank::Tensor => {
                    header.extend(["11", "12", "13", "22", "23", "33"].map(|p| format!("smoothed_metric_{p}")))
                }
            }
            w.write_record(&header)?;
            for r in rows {
                let mut row = vec![format!("{:.16e}", r.eta), format!("{:.16e}", r.beta)];
                row.push(r.mass.map(|m| format!("{m:.16e}")).unwrap_or_default());
                row.extend(r.represented.iter().map(|v| format!("{v:.16e}")));
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(0)
        }
        Command::Report { dir, out } => {
            match out {
                Some(p) => pipeline::write_report(&dir, File::create(p)?)?,
                None => pipeline::write_report(&dir, io::stdout().lock())?,
            };
            Ok(0)
        }
    }
}

fn run(config: &Path, out: Option<&Path>) -> Result<u8, Error> {
    let outcome = pipeline::run_file(config, out)?;
    let m = &outcome.manifest;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "directory: {}", outcome.dir.display())?;
    for s in &m.stages {
        writeln!(stdout, "  {:<14} {:?}", s.stage, s.status)?;
    }
    if let Some(f) = &m.failure {
        let at = f.beta.map(|b| format!(" at beta = {b}")).unwrap_or_default();
        eprintln!("stopped in {}{at}: {}", f.stage, f.message);
    }
    Ok(m.exit_code() as u8)
}

fn replay(dir: &Path) -> Result<u8, Error> {
    match pipeline::replay_check(dir)? {
        ReplayVerdict::Pass => {
            println!("replay-check passed: all files are bit-identical");
            Ok(0)
        }
        ReplayVerdict::ConfigMismatch { recorded, found } => {
            println!("replay-check failed: config-mismatch (manifest input hash {recorded}, stored config hashes to {found})");
            Ok(REPLAY_FAILED)
        }
        ReplayVerdict::Mismatch {
            file,
            line,
            offset,
            detail,
        } => {
            let at = match (line, offset) {
                (Some(l), _) => format!(" line {l}"),
                (_, Some(o)) => format!(" byte {o}"),
                _ => String::new(),
            };
            println!("replay-check failed: {file}{at}: {detail}");
            Ok(REPLAY_FAILED)
        }
    }
}
