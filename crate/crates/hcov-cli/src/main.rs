use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hcov_cli::{run_command, RunConfig, Task, TruncationOpts};

/// Hierarchical-matrix engine for Matern covariance likelihoods.
#[derive(Parser)]
#[command(name = "hcov", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Output directory for artifacts
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Adaptive per-block accuracy (mutually exclusive with --rank)
    #[arg(long)]
    eps: Option<f64>,
    /// Fixed per-block rank (mutually exclusive with --eps)
    #[arg(long)]
    rank: Option<usize>,
    /// Hard cap on stored block ranks
    #[arg(long, default_value_t = 100)]
    kmax: usize,
    /// Cluster-tree leaf size
    #[arg(long, default_value_t = 32)]
    nmin: usize,
    /// Admissibility parameter
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    /// Diagonal regularization tau^2
    #[arg(long, default_value_t = 1e-4)]
    nugget: f64,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Spatial dimension of the locations
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    dim: u8,
}

#[derive(Args)]
struct FitOpts {
    /// Initial point nu,ell,sigma2
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 1.0])]
    init: Vec<f64>,
    /// Initial simplex steps for nu,ell,sigma2
    #[arg(long, value_delimiter = ',', default_values_t = [0.02, 0.04, 0.01])]
    steps: Vec<f64>,
    /// Simplex-size tolerance
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Iteration cap
    #[arg(long = "max-iter", default_value_t = 200)]
    max_iter: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum VaryParam {
    Ell,
    Nu,
    Sigma2,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum-likelihood fit of (nu, ell, sigma2) on a dataset file
    Fit {
        /// Input dataset (first line N, then coordinate/value rows)
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        fit: FitOpts,
        /// Use the exact dense objective instead of the H objective
        #[arg(long)]
        dense: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Draw a synthetic Gaussian field at random locations and write it as a
    /// dataset file
    Simulate {
        /// Number of locations
        #[arg(long)]
        n: usize,
        /// Box extents, e.g. 10,12 (one per dimension)
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0])]
        domain: Vec<f64>,
        /// True parameters ell,nu,sigma2
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.5, 1.0])]
        theta: Vec<f64>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Negative log-likelihood profile over one parameter
    Profile {
        #[arg(long)]
        input: PathBuf,
        /// Parameter to vary
        #[arg(long, value_enum)]
        vary: VaryParam,
        /// Grid start,stop,count
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        /// Fixed parameters ell,nu,sigma2
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.5, 1.0])]
        theta: Vec<f64>,
        /// Use the exact dense likelihood
        #[arg(long)]
        dense: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Subsample-and-fit replicate study over a master dataset
    Replicates {
        /// Master dataset file
        #[arg(long)]
        input: PathBuf,
        /// Subsample sizes, e.g. 500,1000,2000
        #[arg(long = "n-list", value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        /// Replicates per size
        #[arg(long, default_value_t = 20)]
        m: usize,
        #[command(flatten)]
        fit: FitOpts,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Build/factorization timing, storage, and inversion-error table
    Benchmark {
        /// Problem sizes, e.g. 4000,8000,16000
        #[arg(long = "n-list", value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        /// Box extents (one per dimension)
        #[arg(long, value_delimiter = ',', default_values_t = [11.0, 12.0])]
        domain: Vec<f64>,
        /// Kernel parameters ell,nu,sigma2
        #[arg(long, value_delimiter = ',', default_values_t = [0.65, 0.33, 1.0])]
        theta: Vec<f64>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Rank study on a unit-square grid: KLD and matrix errors per rank
    KldStudy {
        /// Points per grid axis (n = side^2)
        #[arg(long = "grid-side", default_value_t = 32)]
        grid_side: usize,
        /// Ranks to sweep
        #[arg(long, value_delimiter = ',', default_values_t = [10, 12, 15, 20, 50])]
        ranks: Vec<usize>,
        #[arg(long, default_value_t = 0.25)]
        ell: f64,
        #[arg(long, default_value_t = 0.5)]
        nu: f64,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn to_array3(v: &[f64]) -> [f64; 3] {
    if v.len() != 3 {
        eprintln!("error: expected three comma-separated values, got {}", v.len());
        std::process::exit(2);
    }
    [v[0], v[1], v[2]]
}

fn build_config(common: &CommonOpts, task: Task) -> RunConfig {
    RunConfig {
        task,
        out: common.out.clone(),
        trunc: TruncationOpts {
            eps: common.eps,
            rank: common.rank,
            k_max: common.kmax,
        },
        n_min: common.nmin,
        eta: common.eta,
        nugget: common.nugget,
        seed: common.seed,
        threads: common.threads,
        dim: common.dim as usize,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.command {
        Command::Fit { input, fit, dense, common } => build_config(
            common,
            Task::Fit {
                input: input.clone(),
                init: to_array3(&fit.init),
                steps: to_array3(&fit.steps),
                tol: fit.tol,
                max_iter: fit.max_iter,
                dense: *dense,
            },
        ),
        Command::Simulate { n, domain, theta, common } => build_config(
            common,
            Task::Simulate {
                n: *n,
                domain: domain.clone(),
                theta: to_array3(theta),
            },
        ),
        Command::Profile { input, vary, grid, theta, dense, common } => build_config(
            common,
            Task::Profile {
                input: input.clone(),
                vary: match vary {
                    VaryParam::Ell => hcov::estimate::ProfileParam::Ell,
                    VaryParam::Nu => hcov::estimate::ProfileParam::Nu,
                    VaryParam::Sigma2 => hcov::estimate::ProfileParam::Sigma2,
                },
                grid: {
                    let g = to_array3(grid);
                    (g[0], g[1], g[2] as usize)
                },
                theta: to_array3(theta),
                dense: *dense,
            },
        ),
        Command::Replicates { input, n_list, m, fit, common } => build_config(
            common,
            Task::Replicates {
                input: input.clone(),
                n_list: n_list.clone(),
                m: *m,
                init: to_array3(&fit.init),
                steps: to_array3(&fit.steps),
                tol: fit.tol,
                max_iter: fit.max_iter,
            },
        ),
        Command::Benchmark { n_list, domain, theta, common } => build_config(
            common,
            Task::Benchmark {
                n_list: n_list.clone(),
                domain: domain.clone(),
                theta: to_array3(theta),
            },
        ),
        Command::KldStudy { grid_side, ranks, ell, nu, common } => build_config(
            common,
            Task::KldStudy {
                grid_side: *grid_side,
                ranks: ranks.clone(),
                ell: *ell,
                nu: *nu,
            },
        ),
    };
    match run_command(&cfg) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
