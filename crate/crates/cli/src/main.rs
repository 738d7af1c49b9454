use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rashomon::advattack::AttackSpace;
use rashomon::bench::{run_stage, Restrict, RunConfig, Stage};
use rashomon::symreg::LossMode;
use rashomon::{Error, Scheme};

#[derive(Parser)]
#[command(name = "rashomon", version, about = "Run one stage of the rashomon pipeline")]
struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-seed jobs (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Hinge,
    Mse,
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Image,
    Latent,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate the synthetic cell dataset.
    GenData,
    /// Train the TC-VAE and encode the dataset.
    TrainVae,
    /// Train the neural heads of one scheme.
    TrainHead {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        scheme: u8,
    },
    /// Fit symbolic heads on the scheme-3 input supports.
    Symreg {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// FGSM attack curves for every trained scheme.
    Attack {
        #[arg(long, value_enum)]
        space: Space,
        /// Comma-separated input indices the attack may change, or
        /// `unselected` for latent dims no sparse or symbolic head reads.
        #[arg(long)]
        restrict: Option<String>,
    },
    /// Latent/factor correlations, sparse-head graphs and response maps.
    Analyze,
    /// Write the Rashomon table.
    Report,
}

fn parse_restrict(s: &str) -> Result<Restrict, Error> {
    if s == "unselected" {
        return Ok(Restrict::Unselected);
    }
    let dims = s
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Error::Config(format!("--restrict expects indices like 0,3,5 or `unselected`, got `{s}`")))?;
    Ok(Restrict::Dims(dims))
}

fn stage(verb: &Verb) -> Result<Stage, Error> {
    Ok(match verb {
        Verb::GenData => Stage::GenData,
        Verb::TrainVae => Stage::TrainVae,
        Verb::TrainHead { scheme } => {
            Stage::TrainHead(Scheme::from_number(*scheme).ok_or_else(|| Error::Config("unknown scheme".into()))?)
        }
        Verb::Symreg { mode } => Stage::Symreg(match mode {
            Mode::Hinge => LossMode::Hinge,
            Mode::Mse => LossMode::Mse,
        }),
        Verb::Attack { space, restrict } => Stage::Attack {
            space: match space {
                Space::Image => AttackSpace::Image,
                Space::Latent => AttackSpace::Latent,
            },
            restrict: restrict.as_deref().map(parse_restrict).transpose()?,
        },
        Verb::Analyze => Stage::Analyze,
        Verb::Report => Stage::Report,
    })
}

fn run(cli: &Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let stage = stage(&cli.verb)?;
    let m = run_stage(&stage, &cfg)?;
    println!("{}: {} artifacts in {}", m.stage, m.outputs.len(), cfg.out_dir.display());
    if stage == Stage::Report {
        print!("{}", std::fs::read_to_string(cfg.out_dir.join("report/rashomon.txt"))?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Dependency { .. } => 3,
                _ => 1,
            })
        }
    }
}
