use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zdx_cli::{run, write_outputs, ExperimentConfig, Kind};

#[derive(Parser)]
#[command(name = "zdx", version, about = "Numerics for Z^d-extensions of random walks and Markov chains")]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output directory for manifest.json and CSV tables.
    #[arg(long, global = true, default_value = "zdx-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DriverArg {
    /// Fixture name (lazy1d, lazy2d, markov3, simple1d, cyclic2, cyclic3) or driver JSON file.
    #[arg(long, default_value = "lazy1d")]
    driver: String,
}

#[derive(Subcommand)]
enum Command {
    /// Aperiodicity scan, stable-parameter fit and local limit checks.
    Spectral {
        #[command(flatten)]
        driver: DriverArg,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// Horizons for the local limit check, comma separated.
        #[arg(long, value_delimiter = ',')]
        n: Vec<u64>,
    },
    /// Potential kernel g(p) by series and by Fourier inversion.
    Kernel {
        #[command(flatten)]
        driver: DriverArg,
        /// Points such as `1,0;2,1`.
        #[arg(long)]
        points: Option<String>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 128)]
        grid: usize,
    },
    /// Kac identity and hitting statistics from simulated excursions.
    Excursion {
        #[command(flatten)]
        driver: DriverArg,
        #[arg(long)]
        points: Option<String>,
        /// Number of excursions.
        #[arg(long, default_value = "1e5")]
        n: String,
        #[arg(long)]
        cap: Option<String>,
    },
    /// Green-Kubo variance of an extension observable (and of its induced version).
    Gk {
        #[command(flatten)]
        driver: DriverArg,
        /// `fp:x[,y]` or an observable JSON file.
        #[arg(long, default_value = "fp:1")]
        obs: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Excursions for the induced estimate; omitted means extension only.
        #[arg(long)]
        induced: Option<String>,
    },
    /// Normalised Birkhoff-sum moments against the MLGM limit.
    Limit {
        #[command(flatten)]
        driver: DriverArg,
        #[arg(long, default_value = "fp:1")]
        obs: String,
        #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
        n: Vec<u64>,
        /// Number of trajectories.
        #[arg(long, default_value = "1e5")]
        traj: String,
    },
    /// MLGM sampler moments against the closed form.
    Mlgm {
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        #[arg(long, default_value = "1e6")]
        samples: String,
    },
    /// Acceptance criteria.
    Suite {
        /// all, identities or quick.
        #[arg(long, default_value = "all")]
        preset: String,
        /// Explicit criterion numbers, overriding the preset.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
        /// Multiplier on Monte Carlo sample counts.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Runs a JSON experiment config.
    Run {
        config: PathBuf,
    },
}

/// Accepts `100000`, `1e5` or `1.5e6`.
fn count(s: &str, field: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 1.8e19 => Ok(v as u64),
        _ => Err(format!("{field}: `{s}` is not a count")),
    }
}

fn parse_points(s: &str) -> Result<Vec<Vec<i64>>, String> {
    s.split(';')
        .map(|p| p.split(',').map(|c| c.trim().parse::<i64>().map_err(|e| format!("points: `{p}`: {e}"))).collect())
        .collect()
}

fn build(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.command {
        Command::Run { config } => {
            let text = std::fs::read_to_string(config).map_err(|e| format!("{}: {e}", config.display()))?;
            return ExperimentConfig::from_json(&text).map_err(|e| e.to_string());
        }
        Command::Spectral { driver, grid, n } => {
            let mut c = ExperimentConfig::new(Kind::Spectral);
            c.driver = Some(driver.driver.clone());
            c.grid = Some(*grid);
            c.n = n.clone();
            c
        }
        Command::Kernel { driver, points, tol, grid } => {
            let mut c = ExperimentConfig::new(Kind::Kernel);
            c.driver = Some(driver.driver.clone());
            c.points = points.as_deref().map(parse_points).transpose()?.unwrap_or_default();
            c.tol = Some(*tol);
            c.grid = Some(*grid);
            c
        }
        Command::Excursion { driver, points, n, cap } => {
            let mut c = ExperimentConfig::new(Kind::Excursion);
            c.driver = Some(driver.driver.clone());
            c.points = points.as_deref().map(parse_points).transpose()?.unwrap_or_default();
            c.samples = Some(count(n, "n")?);
            c.cap = cap.as_deref().map(|s| count(s, "cap")).transpose()?;
            c
        }
        Command::Gk { driver, obs, tol, induced } => {
            let mut c = ExperimentConfig::new(Kind::Gk);
            c.driver = Some(driver.driver.clone());
            c.obs = Some(obs.clone());
            c.tol = Some(*tol);
            c.samples = induced.as_deref().map(|s| count(s, "induced")).transpose()?;
            c
        }
        Command::Limit { driver, obs, n, traj } => {
            let mut c = ExperimentConfig::new(Kind::Limit);
            c.driver = Some(driver.driver.clone());
            c.obs = Some(obs.clone());
            c.n = n.clone();
            c.samples = Some(count(traj, "traj")?);
            c
        }
        Command::Mlgm { gamma, samples } => {
            let mut c = ExperimentConfig::new(Kind::Mlgm);
            c.gamma = Some(*gamma);
            c.samples = Some(count(samples, "samples")?);
            c
        }
        Command::Suite { preset, criteria, scale } => {
            let mut c = ExperimentConfig::new(Kind::Suite);
            c.preset = Some(preset.clone());
            c.criteria = criteria.clone();
            c.scale = Some(*scale);
            c
        }
    };
    cfg.seed = cli.seed;
    cfg.workers = cli.workers;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let manifest = match run(&cfg) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match write_outputs(&manifest, &cli.out) {
        Ok(paths) => {
            for a in &manifest.assertions {
                println!("{} {}", if a.pass { "PASS" } else { "FAIL" }, a.name);
            }
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    if manifest.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
