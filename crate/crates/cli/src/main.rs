use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kestenlab_cli::{CliError, CliResult, RunConfig, Runner, Stage};

#[derive(Parser)]
#[command(name = "kestenlab", version, about = "Tails and stable limits of matrix random difference equations")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "KESTENLAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage listed in `pipeline`.
    Run,
    /// Draw stationary samples and check the moment assumptions.
    Simulate {
        /// Number of stationary draws.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Estimate the Lyapunov exponent.
    Lyapunov {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Solve for the tail index and the transfer-operator eigenpair.
    Kappa {
        /// Matrix draws per grid point.
        #[arg(long)]
        mc_n: Option<usize>,
    },
    /// Hill index, product structure and the three tail-constant estimates.
    Tail {
        #[arg(long)]
        top_fraction: Option<f64>,
    },
    /// Spectral tail measure and its invariance residual.
    Sigma {
        #[arg(long)]
        top_fraction: Option<f64>,
    },
    /// Stable limit law, positivity, self-similarity and CF fit.
    Limit {
        /// Birkhoff sum length (the self-similarity check also uses half of it).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Nondegeneracy verdict of the fitted limit law.
    Nondeg,
    /// Aggregate the artifacts in the output directory into report.json.
    Report,
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config {
        path: "--config".into(),
        message: "a run configuration is required".into(),
    })?;
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    let mut cfg = RunConfig::from_toml(&text)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let mc = &mut cfg.mc;
    let stage = match cli.command {
        Command::Run | Command::Report => None,
        Command::Simulate { n } => {
            mc.stationary = n.unwrap_or(mc.stationary);
            Some(Stage::Simulate)
        }
        Command::Lyapunov { steps, replicas } => {
            mc.lyapunov_steps = steps.unwrap_or(mc.lyapunov_steps);
            mc.lyapunov_replicas = replicas.unwrap_or(mc.lyapunov_replicas);
            Some(Stage::Lyapunov)
        }
        Command::Kappa { mc_n } => {
            mc.kernel_mc = mc_n.unwrap_or(mc.kernel_mc);
            Some(Stage::Kappa)
        }
        Command::Tail { top_fraction } | Command::Sigma { top_fraction } => {
            mc.top_fraction = top_fraction.unwrap_or(mc.top_fraction);
            Some(if matches!(cli.command, Command::Tail { .. }) { Stage::Tail } else { Stage::Sigma })
        }
        Command::Limit { n, replicas } => {
            mc.birkhoff_n = n.unwrap_or(mc.birkhoff_n);
            mc.birkhoff_replicas = replicas.unwrap_or(mc.birkhoff_replicas);
            Some(Stage::Limit)
        }
        Command::Nondeg => Some(Stage::Nondeg),
    };
    if let Some(stage) = stage {
        cfg.pipeline = vec![stage];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<bool> {
    if let Some(n) = cli.threads {
        // a second initialisation only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = load_config(cli)?;
    let mut runner = Runner::new(cfg)?;
    let report = match cli.command {
        Command::Report => runner.write_report()?,
        _ => runner.run_pipeline()?,
    };
    let failed: Vec<String> = report
        .stages
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.stage.to_string())
        .collect();
    println!(
        "seed {}: {} stage(s), {}",
        report.seed,
        report.stages.len(),
        if failed.is_empty() { "all checks passed".to_string() } else { format!("failed: {}", failed.join(", ")) }
    );
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
