use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hybrid_atlas::io::{run_pipeline, Command, RankTargets, RunConfig};
use hybrid_atlas::Error;

#[derive(Parser)]
#[command(name = "hybrid-atlas", version, about = "Rank-based market model estimation and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate a hybrid Atlas market and write its history.
    Simulate(Flags),
    /// Rank variances, growth rates, local times and occupation rates.
    FirstOrder(Flags),
    /// First-order outputs plus flows, rank maps and flow slopes.
    Flows(Flags),
    /// Flow outputs plus matrix-route and recursive-route drifts.
    SecondOrder(Flags),
    /// Simulate, then run the full estimation and compare with the truth.
    ClosedLoop(Flags),
}

#[derive(Args, Clone)]
#[command(allow_negative_numbers = true)]
struct Flags {
    /// TOML file; flags given here override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    years: Option<f64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    lag: Option<usize>,
    #[arg(long)]
    grid_step: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    anchor_rank: Option<usize>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    g: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    #[arg(long)]
    skip_matrix_route: bool,
    /// `fitted` or `rounded`.
    #[arg(long)]
    rank_targets: Option<String>,
    #[arg(long)]
    rank_cutoff: Option<usize>,
}

impl Flags {
    fn to_config(&self) -> Result<RunConfig, Error> {
        Ok(RunConfig {
            input: self.input.clone(),
            output_dir: self.output_dir.clone(),
            seed: self.seed,
            dt: self.dt,
            n_steps: self.n_steps,
            years: self.years,
            burn_in: self.burn_in,
            lag: self.lag,
            grid_step: self.grid_step,
            window: self.window,
            bandwidth: self.bandwidth,
            anchor_rank: self.anchor_rank,
            preset: self.preset.clone(),
            gamma: self.gamma.clone(),
            g: self.g.clone(),
            sigma: self.sigma.clone(),
            skip_matrix_route: self.skip_matrix_route.then_some(true),
            rank_targets: self.rank_targets.as_deref().map(RankTargets::parse).transpose()?,
            rank_cutoff: self.rank_cutoff,
        })
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::NonFinite { .. } => "non_finite",
        Error::Dimension(_) => "dimension",
        Error::InvalidInput(_) => "invalid_input",
        Error::InvalidParams(_) => "invalid_params",
        Error::LagOutOfRange { .. } => "lag_out_of_range",
        Error::MissingLags(_) => "missing_lags",
        Error::Degenerate(_) => "degenerate",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let (command, flags) = match cli.command {
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::FirstOrder(f) => (Command::FirstOrder, f),
        Sub::Flows(f) => (Command::Flows, f),
        Sub::SecondOrder(f) => (Command::SecondOrder, f),
        Sub::ClosedLoop(f) => (Command::ClosedLoop, f),
    };
    let base = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let settings = base.overridden_by(flags.to_config()?).resolve()?;
    let outcome = run_pipeline(command, &settings)?;
    for file in &outcome.files {
        println!("{}", outcome.output_dir.join(file).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage exit=4 message={first:?}");
            return ExitCode::from(4);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let message = e.to_string().replace('\n', " ");
            eprintln!("error kind={} exit={code} message={message:?}", kind(&e));
            ExitCode::from(code as u8)
        }
    }
}
