//! Command-line front end for the HJBI solver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
//! 4 Cordes rejection.

use clap::{Args, Parser, Subcommand};
use hjbi::run::{
    run_cordes, run_custom, run_exp1, run_exp2, with_threads, ProblemRegistry, RunConfig,
};
use hjbi::Error;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hjbi", version, about = "Periodic HJBI finite element solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manufactured-solution convergence study.
    Exp1(RunArgs),
    /// Effective-Hamiltonian tables (mesh refinement and sigma sweep).
    Exp2(RunArgs),
    /// Run a registered problem through the generic pipeline.
    Custom(RunArgs),
    /// Print the Cordes report for a configured problem.
    Cordes(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags override individual fields.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    eta2: Option<f64>,
    /// Comma-separated mesh subdivision counts, e.g. 4,8,16,32.
    #[arg(long, value_delimiter = ',')]
    meshes: Option<Vec<usize>>,
    #[arg(long)]
    n_alpha: Option<usize>,
    #[arg(long)]
    n_beta: Option<usize>,
    /// Comma-separated decreasing sigma values.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[arg(long)]
    sigma_mesh: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    n_y_samples: Option<usize>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    allow_cordes_violation: bool,
    /// Worker threads (HJBI_THREADS as fallback).
    #[arg(long)]
    threads: Option<usize>,
    /// Registered problem name for `custom` / `cordes`.
    #[arg(long)]
    problem: Option<String>,
}

impl RunArgs {
    fn into_config(self, experiment: &str) -> Result<RunConfig, Error> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_json(&std::fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        config.experiment = experiment.to_string();
        if let Some(v) = self.scheme {
            config.scheme = v;
        }
        if let Some(v) = self.degree {
            config.degree = v;
        }
        if let Some(v) = self.theta {
            config.theta = v;
        }
        if self.eta1.is_some() {
            config.eta1 = self.eta1;
        }
        if self.eta2.is_some() {
            config.eta2 = self.eta2;
        }
        if let Some(v) = self.meshes {
            config.meshes = v;
        }
        if self.n_alpha.is_some() {
            config.n_alpha = self.n_alpha;
        }
        if self.n_beta.is_some() {
            config.n_beta = self.n_beta;
        }
        if let Some(v) = self.sigmas {
            config.sigmas = v;
        }
        if let Some(v) = self.sigma_mesh {
            config.sigma_mesh = v;
        }
        if let Some(v) = self.tol {
            config.tol = v;
        }
        if let Some(v) = self.max_iter {
            config.max_iter = v;
        }
        if let Some(v) = self.n_y_samples {
            config.n_y_samples = v;
        }
        if self.output.is_some() {
            config.output = self.output;
        }
        if self.allow_cordes_violation {
            config.allow_cordes_violation = true;
        }
        if self.threads.is_some() {
            config.threads = self.threads;
        }
        if self.problem.is_some() {
            config.problem = self.problem;
        }
        Ok(config)
    }
}

fn dispatch(cmd: Command) -> Result<(), Error> {
    let registry = ProblemRegistry::with_builtins();
    match cmd {
        Command::Exp1(args) => {
            let config = args.into_config("exp1")?;
            let out = with_threads(config.threads, || run_exp1(&config))?;
            print!("{}", out.console);
            Ok(())
        }
        Command::Exp2(args) => {
            let config = args.into_config("exp2")?;
            let out = with_threads(config.threads, || run_exp2(&config))?;
            print!("{}", out.console);
            Ok(())
        }
        Command::Custom(args) => {
            let config = args.into_config("custom")?;
            let out = with_threads(config.threads, || run_custom(&config, &registry))?;
            print!("{}", out.console);
            Ok(())
        }
        Command::Cordes(args) => {
            let config = args.into_config("cordes")?;
            let (_, line) = run_cordes(&config, &registry)?;
            println!("{line}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(hjbi::run::exit_code(&e))
        }
    }
}
