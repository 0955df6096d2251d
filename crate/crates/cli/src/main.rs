use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ppm_cli::artifact::ControllerFile;
use ppm_cli::commands::{self, SimRequest};
use ppm_cli::config::{self, DeloadConfig, ParameterFile, SynthConfig};
use ppm_cli::{CliError, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "ppmctl", version, about = "Coordinated control synthesis and simulation for wind power park modules")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    out_dir: PathBuf,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Vector,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Controller file from `synth`.
    #[arg(long)]
    controller: Option<PathBuf>,
    /// Plant parameter file (defaults to the bundled reference set).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Metrics window start (s); defaults to the first event.
    #[arg(long)]
    from: Option<f64>,
    /// Metrics window end (s); defaults to the end of the run.
    #[arg(long)]
    to: Option<f64>,
    /// Channels to plot into an SVG next to the CSV.
    #[arg(long, value_delimiter = ',')]
    plot: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize and certify a controller.
    Synth {
        /// Synthesis configuration (TOML); reference defaults when omitted.
        config: Option<PathBuf>,
        /// Base name of the written files.
        #[arg(long, default_value = "controller")]
        name: String,
    },
    /// Simulate a scenario file or a bundled scenario.
    Sim {
        scenario: String,
        #[command(flatten)]
        run: RunArgs,
        /// Also run a baseline on the identical scenario.
        #[arg(long, value_enum)]
        compare: Option<Baseline>,
    },
    /// Coordinated controller against the vector-control baseline.
    Compare {
        scenario: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// MPPT and deloaded operating points over a wind-speed range.
    Deload {
        /// Deload configuration (TOML); 1-30 m/s at 10% when omitted.
        config: Option<PathBuf>,
    },
    /// Several scenarios in parallel.
    Sweep {
        #[arg(required = true)]
        scenarios: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// List the bundled scenarios, or print one.
    Scenarios { name: Option<String> },
}

fn request(run: &RunArgs, compare_vector: bool, duration: Option<f64>) -> Result<SimRequest, CliError> {
    let controller = run.controller.as_deref().map(ControllerFile::load).transpose()?;
    let params = run.params.as_deref().map(ParameterFile::load).transpose()?;
    let window = match (run.from, run.to) {
        (None, None) => None,
        (a, b) => Some((a.unwrap_or(0.0), b.or(duration).unwrap_or(f64::INFINITY))),
    };
    Ok(SimRequest { controller, params, compare_vector, window, plot: run.plot.clone() })
}

fn sim(scenario: &str, run: &RunArgs, compare: bool, out_dir: &std::path::Path) -> Result<(), CliError> {
    let sc = config::load_scenario(scenario)?;
    let req = request(run, compare, Some(sc.duration))?;
    let (out, files) = commands::cmd_sim(&sc, &req, out_dir)?;
    if let Some(c) = &out.comparison {
        print!("{}", c.table(&["vdc1_pu", "vdc2_pu", "Vr1_pu", "Vr2_pu", "P1_pu", "Q1_pu", "Omega1_pu"]));
    }
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth { config, name } => {
            let cfg = match config {
                Some(p) => SynthConfig::load(p)?,
                None => SynthConfig::default(),
            };
            let out = commands::cmd_synth(&cfg, &cli.out_dir, name)?;
            let c = &out.report.certificate;
            println!(
                "gamma {:.6e}  norm {:.6e}  abscissa {:.4e}  certified {}",
                out.report.gamma,
                c.hinf_norm.unwrap_or(f64::NAN),
                c.spectral_abscissa,
                c.passed
            );
            println!("{}", cli.out_dir.join(format!("{name}.json")).display());
        }
        Command::Sim { scenario, run, compare } => sim(scenario, run, compare.is_some(), &cli.out_dir)?,
        Command::Compare { scenario, run } => sim(scenario, run, true, &cli.out_dir)?,
        Command::Deload { config } => {
            let cfg = match config {
                Some(p) => DeloadConfig::load(p)?,
                None => DeloadConfig::default(),
            };
            let (curve, path) = commands::cmd_deload(&cfg, &cli.out_dir)?;
            let failed = curve.samples.iter().filter(|s| s.point.is_none()).count();
            println!("{} rows, {failed} without solution", curve.samples.len());
            println!("{}", path.display());
        }
        Command::Sweep { scenarios, run } => {
            let scs = scenarios.iter().map(|s| config::load_scenario(s)).collect::<Result<Vec<_>, _>>()?;
            let req = request(run, false, None)?;
            let mut first_err = None;
            for (sc, r) in scs.iter().zip(commands::cmd_sweep(&scs, &req, &cli.out_dir)) {
                match r {
                    Ok((_, files)) => println!("{}: {}", sc.name, files[0].display()),
                    Err(e) => {
                        eprintln!("{}: {e}", sc.name);
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
        Command::Scenarios { name } => match name {
            None => {
                for (n, _) in config::BUNDLED_SCENARIOS {
                    println!("{n}");
                }
            }
            Some(n) => {
                let text = config::BUNDLED_SCENARIOS
                    .iter()
                    .find(|(b, _)| b == n)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| CliError::Config(format!("no bundled scenario `{n}`")))?;
                print!("{text}");
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ppmctl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
