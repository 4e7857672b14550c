//! Command-line surface for the hierarchical covariance engine: dataset
//! ingestion in the plain text format (count line followed by
//! coordinate/value rows), subcommands for fitting, simulation, likelihood
//! profiles, replicate studies, scaling benchmarks and rank studies, and the
//! CSV/report emitters.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hcov::estimate::{
    fit_parameters, profile_likelihood, replicate_study, simulate_field, FitConfig, ProfileParam,
    ReplicateRecord, TraceRow,
};
use hcov::geometry::{build_block_cluster_tree, build_cluster_tree, PointSet};
use hcov::hmatrix::{
    build_hmatrix, factorize, kld, spectral_error_metrics, FactorForm, Oracle,
};
use hcov::kernel::{dense_covariance_internal, KernelEvaluator, MaternParams};
use hcov::likelihood::{loglik_dense, Dataset, HSettings};
use hcov::lowrank::TruncationControl;

#[derive(Debug)]
pub enum CliError {
    Io(std::io::Error),
    Parse { line: usize, message: String },
    Invalid(String),
    Core(hcov::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Parse { line, message } => write!(f, "{message} (line {line})"),
            CliError::Invalid(m) => write!(f, "invalid configuration: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<hcov::Error> for CliError {
    fn from(e: hcov::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Reads a dataset file: line 1 holds the number of locations N, lines
/// 2..=N+1 hold whitespace-separated coordinates (2 or 3 per `dim`) followed
/// by the observed value. Blank lines are ignored; every malformed token is
/// reported with its line number.
pub fn parse_input_file(path: &Path, dim: usize) -> CliResult<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_input_str(&text, dim)
}

pub fn parse_input_str(text: &str, dim: usize) -> CliResult<Dataset> {
    if !(2..=3).contains(&dim) {
        return Err(CliError::Invalid(format!("dim must be 2 or 3, got {dim}")));
    }
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (header_line, header) = lines
        .next()
        .ok_or(CliError::Parse { line: 1, message: "empty input file".into() })?;
    let n: i64 = header
        .trim()
        .parse()
        .map_err(|_| CliError::Parse {
            line: header_line,
            message: format!("expected the number of locations, found {:?}", header.trim()),
        })?;
    if n <= 0 {
        return Err(CliError::Parse {
            line: header_line,
            message: format!("the number of locations must be positive, found {n}"),
        });
    }
    let n = n as usize;

    let mut points = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut last_line = header_line;
    for _ in 0..n {
        let Some((line_no, line)) = lines.next() else {
            return Err(CliError::Parse {
                line: last_line + 1,
                message: format!("expected {n} records, found {}", points.len()),
            });
        };
        last_line = line_no;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != dim + 1 {
            return Err(CliError::Parse {
                line: line_no,
                message: format!(
                    "expected {} whitespace-separated numbers, found {}",
                    dim + 1,
                    fields.len()
                ),
            });
        }
        let mut numbers = Vec::with_capacity(dim + 1);
        for f in &fields {
            let v: f64 = f.parse().map_err(|_| CliError::Parse {
                line: line_no,
                message: format!("non-numeric token {f:?}"),
            })?;
            numbers.push(v);
        }
        values.push(numbers.pop().expect("value column"));
        points.push(numbers);
    }
    if let Some((line_no, _)) = lines.next() {
        return Err(CliError::Parse {
            line: line_no,
            message: format!("expected {n} records, found more"),
        });
    }
    let ps = PointSet::new(&points).map_err(CliError::Core)?;
    Dataset::new(Arc::new(ps), values).map_err(CliError::Core)
}

/// Writes a dataset in the input format, so that parsing it back recovers the
/// dataset (shortest round-trip decimals).
pub fn write_dataset(ds: &Dataset, w: &mut impl std::io::Write) -> CliResult<()> {
    writeln!(w, "{}", ds.len())?;
    for i in 0..ds.len() {
        let coords: Vec<String> = ds.points.point(i).iter().map(|c| c.to_string()).collect();
        writeln!(w, "{} {}", coords.join(" "), ds.z[i])?;
    }
    Ok(())
}

/// Iteration log: one row per optimizer iteration in the layout
/// `index nu ell sigma2 L = <objective> TOL= <simplex size>`, followed by the
/// solution row when the fit converged.
pub fn write_iteration_log(
    trace: &[TraceRow],
    solution: Option<(f64, f64, f64)>,
    w: &mut impl std::io::Write,
) -> CliResult<()> {
    for row in trace {
        writeln!(
            w,
            "{} {} {} {} L = {} TOL= {}",
            row.index, row.nu, row.ell, row.sigma2, row.negloglik, row.size
        )?;
    }
    if let Some((ell, nu, sigma2)) = solution {
        writeln!(w, "converged to minimum at")?;
        writeln!(w, "{ell} {nu} {sigma2}")?;
    }
    Ok(())
}

/// Replicate table: one `n ell nu sigma2` row per successful replicate;
/// failed replicates become comment rows carrying the reason.
pub fn write_replicate_csv(records: &[ReplicateRecord], w: &mut impl std::io::Write) -> CliResult<()> {
    for r in records {
        match (&r.estimate, &r.error) {
            (Some((ell, nu, sigma2)), _) => {
                writeln!(w, "{} {ell} {nu} {sigma2}", r.n)?;
            }
            (None, Some(reason)) => {
                writeln!(w, "# n={} replicate={} failed: {reason}", r.n, r.replicate)?;
            }
            (None, None) => unreachable!("record without estimate or error"),
        }
    }
    Ok(())
}

/// Profile CSV with the negative log-likelihood split into its ingredients.
pub fn write_profile_csv(
    rows: &[hcov::estimate::ProfileRow],
    param: &str,
    w: &mut impl std::io::Write,
) -> CliResult<()> {
    writeln!(w, "{param} negloglik logdet quadform")?;
    for r in rows {
        match (r.negloglik, r.logdet, r.quadform) {
            (Some(nll), Some(ld), Some(qf)) => writeln!(w, "{} {nll} {ld} {qf}", r.value)?,
            _ => writeln!(
                w,
                "# {} failed: {}",
                r.value,
                r.error.as_deref().unwrap_or("unknown")
            )?,
        }
    }
    Ok(())
}

/// Truncation selection: a per-block accuracy or a fixed rank.
#[derive(Debug, Clone, Copy)]
pub struct TruncationOpts {
    pub eps: Option<f64>,
    pub rank: Option<usize>,
    pub k_max: usize,
}

impl TruncationOpts {
    pub fn control(&self) -> CliResult<TruncationControl> {
        let ctl = match (self.eps, self.rank) {
            (Some(_), Some(_)) => {
                return Err(CliError::Invalid("--eps and --rank are mutually exclusive".into()))
            }
            (None, Some(k)) => TruncationControl::fixed_rank(k),
            (Some(e), None) if e > 0.0 => TruncationControl::adaptive(e),
            (Some(e), None) => {
                return Err(CliError::Invalid(format!("--eps must be positive, got {e}")))
            }
            (None, None) => TruncationControl::adaptive(1e-5),
        };
        Ok(ctl.with_k_max(self.k_max))
    }
}

/// Fully resolved run configuration for one subcommand invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: Task,
    pub out: PathBuf,
    pub trunc: TruncationOpts,
    pub n_min: usize,
    pub eta: f64,
    pub nugget: f64,
    pub seed: u64,
    pub threads: Option<usize>,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub enum Task {
    Fit {
        input: PathBuf,
        init: [f64; 3], // nu, ell, sigma2
        steps: [f64; 3],
        tol: f64,
        max_iter: usize,
        dense: bool,
    },
    Simulate {
        n: usize,
        domain: Vec<f64>,
        theta: [f64; 3], // ell, nu, sigma2
    },
    Profile {
        input: PathBuf,
        vary: ProfileParam,
        grid: (f64, f64, usize),
        theta: [f64; 3],
        dense: bool,
    },
    Replicates {
        input: PathBuf,
        n_list: Vec<usize>,
        m: usize,
        init: [f64; 3],
        steps: [f64; 3],
        tol: f64,
        max_iter: usize,
    },
    Benchmark {
        n_list: Vec<usize>,
        domain: Vec<f64>,
        theta: [f64; 3],
    },
    KldStudy {
        grid_side: usize,
        ranks: Vec<usize>,
        ell: f64,
        nu: f64,
    },
}

fn settings_of(cfg: &RunConfig) -> CliResult<HSettings> {
    Ok(HSettings {
        ctl: cfg.trunc.control()?,
        factor_ctl: None,
        n_min: cfg.n_min,
        eta: cfg.eta,
    })
}

fn grid_values(range: (f64, f64, usize)) -> CliResult<Vec<f64>> {
    let (start, stop, count) = range;
    if count == 0 || !(start > 0.0) || !(stop > start) {
        return Err(CliError::Invalid(format!(
            "grid must satisfy 0 < start < stop with count >= 1, got {start}:{stop}:{count}"
        )));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let step = (stop - start) / (count - 1) as f64;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

/// Uniform random locations in the box [0, domain_0] x ... for simulation and
/// benchmarks.
pub fn uniform_locations(n: usize, domain: &[f64], seed: u64) -> CliResult<Arc<PointSet>> {
    if domain.iter().any(|&d| !(d > 0.0)) {
        return Err(CliError::Invalid("domain extents must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| domain.iter().map(|&d| rng.gen::<f64>() * d).collect())
        .collect();
    PointSet::new(&pts).map(Arc::new).map_err(CliError::Core)
}

/// Regular grid on [0,1]^2 with `side` points per axis.
fn unit_grid(side: usize) -> CliResult<Arc<PointSet>> {
    if side < 2 {
        return Err(CliError::Invalid("grid side must be at least 2".into()));
    }
    let h = 1.0 / (side - 1) as f64;
    let pts: Vec<Vec<f64>> = (0..side * side)
        .map(|i| vec![(i % side) as f64 * h, (i / side) as f64 * h])
        .collect();
    PointSet::new(&pts).map(Arc::new).map_err(CliError::Core)
}

/// Runs one subcommand, writing its artifacts under the output directory.
/// Returns the list of files written.
pub fn run_command(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    if let Some(t) = cfg.threads {
        // best effort; the global pool may already exist
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    fs::create_dir_all(&cfg.out)?;
    match &cfg.task {
        Task::Fit { input, init, steps, tol, max_iter, dense } => run_fit(
            cfg, input, *init, *steps, *tol, *max_iter, *dense,
        ),
        Task::Simulate { n, domain, theta } => run_simulate(cfg, *n, domain, *theta),
        Task::Profile { input, vary, grid, theta, dense } => {
            run_profile(cfg, input, *vary, *grid, *theta, *dense)
        }
        Task::Replicates { input, n_list, m, init, steps, tol, max_iter } => {
            run_replicates(cfg, input, n_list, *m, *init, *steps, *tol, *max_iter)
        }
        Task::Benchmark { n_list, domain, theta } => run_benchmark(cfg, n_list, domain, *theta),
        Task::KldStudy { grid_side, ranks, ell, nu } => {
            run_kld_study(cfg, *grid_side, ranks, *ell, *nu)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_fit(
    cfg: &RunConfig,
    input: &Path,
    init: [f64; 3],
    steps: [f64; 3],
    tol: f64,
    max_iter: usize,
    dense: bool,
) -> CliResult<Vec<PathBuf>> {
    let ds = parse_input_file(input, cfg.dim)?;
    let fit = if dense {
        // dense-oracle objective for small problems
        let nugget = cfg.nugget;
        let objective = |x: &[f64]| -> f64 {
            let Ok(p) = MaternParams::with_nugget(x[2], x[1], x[0], nugget) else {
                return f64::INFINITY;
            };
            match loglik_dense(&ds, &p) {
                Ok(r) => -r.loglik,
                Err(_) => f64::INFINITY,
            }
        };
        let nm = hcov::estimate::nelder_mead_minimize(objective, &init, &steps, tol, max_iter)?;
        hcov::estimate::FitResult {
            ell: nm.x[1],
            nu: nm.x[0],
            sigma2: nm.x[2],
            negloglik: nm.value,
            converged: nm.converged,
            iterations: nm.iterations,
            trace: nm
                .trace
                .iter()
                .map(|r| TraceRow {
                    index: r.index,
                    nu: r.x[0],
                    ell: r.x[1],
                    sigma2: r.x[2],
                    negloglik: r.value,
                    size: r.size,
                })
                .collect(),
        }
    } else {
        let fc = FitConfig {
            initial: init,
            steps,
            tol,
            max_iter,
            settings: settings_of(cfg)?,
            nugget: cfg.nugget,
        };
        fit_parameters(&ds, &fc)?
    };

    let log_path = cfg.out.join("iterations.log");
    let mut log = fs::File::create(&log_path)?;
    let solution = fit
        .converged
        .then_some((fit.ell, fit.nu, fit.sigma2));
    write_iteration_log(&fit.trace, solution, &mut log)?;

    let est_path = cfg.out.join("estimate.txt");
    let mut est = fs::File::create(&est_path)?;
    writeln!(est, "ell nu sigma2 negloglik converged iterations")?;
    writeln!(
        est,
        "{} {} {} {} {} {}",
        fit.ell, fit.nu, fit.sigma2, fit.negloglik, fit.converged, fit.iterations
    )?;
    Ok(vec![log_path, est_path])
}

fn run_simulate(
    cfg: &RunConfig,
    n: usize,
    domain: &[f64],
    theta: [f64; 3],
) -> CliResult<Vec<PathBuf>> {
    if domain.len() != cfg.dim {
        return Err(CliError::Invalid(format!(
            "--domain needs {} extents for dim {}",
            cfg.dim, cfg.dim
        )));
    }
    let [ell, nu, sigma2] = theta;
    let p = MaternParams::with_nugget(sigma2, ell, nu, cfg.nugget).map_err(CliError::Core)?;
    let ps = uniform_locations(n, domain, cfg.seed)?;
    let ds = simulate_field(&ps, &p, &settings_of(cfg)?, cfg.seed.wrapping_add(1))?;
    let path = cfg.out.join("dataset.txt");
    let mut f = fs::File::create(&path)?;
    write_dataset(&ds, &mut f)?;
    Ok(vec![path])
}

fn run_profile(
    cfg: &RunConfig,
    input: &Path,
    vary: ProfileParam,
    grid: (f64, f64, usize),
    theta: [f64; 3],
    dense: bool,
) -> CliResult<Vec<PathBuf>> {
    let ds = parse_input_file(input, cfg.dim)?;
    let [ell, nu, sigma2] = theta;
    let fixed = MaternParams::with_nugget(sigma2, ell, nu, cfg.nugget).map_err(CliError::Core)?;
    let values = grid_values(grid)?;
    let rows = if dense {
        values
            .iter()
            .map(|&value| {
                let mut p = fixed;
                match vary {
                    ProfileParam::Ell => p.ell = value,
                    ProfileParam::Nu => p.nu = value,
                    ProfileParam::Sigma2 => p.sigma2 = value,
                }
                match p.validate().and_then(|()| loglik_dense(&ds, &p)) {
                    Ok(r) => hcov::estimate::ProfileRow {
                        value,
                        negloglik: Some(-r.loglik),
                        logdet: Some(r.logdet),
                        quadform: Some(r.quadform),
                        error: None,
                    },
                    Err(e) => hcov::estimate::ProfileRow {
                        value,
                        negloglik: None,
                        logdet: None,
                        quadform: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    } else {
        profile_likelihood(&ds, vary, &values, &fixed, &settings_of(cfg)?)?
    };
    let name = match vary {
        ProfileParam::Ell => "ell",
        ProfileParam::Nu => "nu",
        ProfileParam::Sigma2 => "sigma2",
    };
    let path = cfg.out.join("profile.csv");
    let mut f = fs::File::create(&path)?;
    write_profile_csv(&rows, name, &mut f)?;
    Ok(vec![path])
}

#[allow(clippy::too_many_arguments)]
fn run_replicates(
    cfg: &RunConfig,
    input: &Path,
    n_list: &[usize],
    m: usize,
    init: [f64; 3],
    steps: [f64; 3],
    tol: f64,
    max_iter: usize,
) -> CliResult<Vec<PathBuf>> {
    let master = parse_input_file(input, cfg.dim)?;
    let fc = FitConfig {
        initial: init,
        steps,
        tol,
        max_iter,
        settings: settings_of(cfg)?,
        nugget: cfg.nugget,
    };
    let records = replicate_study(&master, n_list, m, &fc, cfg.seed)?;
    let path = cfg.out.join("replicates.csv");
    let mut f = fs::File::create(&path)?;
    write_replicate_csv(&records, &mut f)?;
    Ok(vec![path])
}

fn run_benchmark(
    cfg: &RunConfig,
    n_list: &[usize],
    domain: &[f64],
    theta: [f64; 3],
) -> CliResult<Vec<PathBuf>> {
    if domain.len() != cfg.dim {
        return Err(CliError::Invalid(format!(
            "--domain needs {} extents for dim {}",
            cfg.dim, cfg.dim
        )));
    }
    let [ell, nu, sigma2] = theta;
    let p = MaternParams::with_nugget(sigma2, ell, nu, cfg.nugget).map_err(CliError::Core)?;
    let settings = settings_of(cfg)?;
    let path = cfg.out.join("benchmark.txt");
    let mut f = fs::File::create(&path)?;
    // size columns carry both the human-readable MB figure and the exact
    // byte count of the storage report
    writeln!(f, "n build_s c_mb c_bytes kb_per_dof factor_s l_mb l_bytes inv_err")?;
    for (i, &n) in n_list.iter().enumerate() {
        let ps = uniform_locations(n, domain, cfg.seed.wrapping_add(i as u64))?;
        let ct = Arc::new(build_cluster_tree(&ps, settings.n_min).map_err(CliError::Core)?);
        let bct = Arc::new(build_block_cluster_tree(&ct, settings.eta));
        let ev = KernelEvaluator::new(p, Arc::clone(&ps), &ct).map_err(CliError::Core)?;

        let t0 = Instant::now();
        let h = build_hmatrix(&bct, &ev, &settings.ctl).map_err(CliError::Core)?;
        let sym = h.symmetrize(&settings.ctl);
        let build_s = t0.elapsed().as_secs_f64();
        let report = sym.storage_report();

        let t1 = Instant::now();
        let factor =
            factorize(&sym, &settings.ctl, FactorForm::Ldl).map_err(CliError::Core)?;
        let factor_s = t1.elapsed().as_secs_f64();
        let f_report = factor.storage_report();

        let metrics = spectral_error_metrics(&sym, &Oracle::H(&sym), Some(&factor))
            .map_err(CliError::Core)?;
        let inv_err = metrics.factor_residual_norm2.unwrap_or(f64::NAN);
        writeln!(
            f,
            "{n} {build_s:.3} {:.3} {} {:.3} {factor_s:.3} {:.3} {} {inv_err:.3e}",
            report.bytes as f64 / 1e6,
            report.bytes,
            report.kb_per_dof,
            f_report.bytes as f64 / 1e6,
            f_report.bytes,
        )?;
    }
    Ok(vec![path])
}

fn run_kld_study(
    cfg: &RunConfig,
    grid_side: usize,
    ranks: &[usize],
    ell: f64,
    nu: f64,
) -> CliResult<Vec<PathBuf>> {
    let ps = unit_grid(grid_side)?;
    let p = MaternParams::with_nugget(1.0, ell, nu, cfg.nugget).map_err(CliError::Core)?;
    let ct = Arc::new(build_cluster_tree(&ps, cfg.n_min).map_err(CliError::Core)?);
    let bct = Arc::new(build_block_cluster_tree(&ct, cfg.eta));
    let ev = KernelEvaluator::new(p, Arc::clone(&ps), &ct).map_err(CliError::Core)?;
    let n = ps.len();
    let oracle = dense_covariance_internal(&ev, n).map_err(CliError::Core)?;

    let path = cfg.out.join("kld_study.txt");
    let mut f = fs::File::create(&path)?;
    writeln!(f, "k kld err2 inv_err")?;
    for &k in ranks {
        let ctl = TruncationControl::fixed_rank(k);
        let h = build_hmatrix(&bct, &ev, &ctl)
            .map_err(CliError::Core)?
            .symmetrize(&ctl);
        // the factor realizes the C~ inverse, so it is computed near exactly
        let tight = TruncationControl::adaptive(1e-12).with_k_max(n);
        let factor = factorize(&h, &tight, FactorForm::Ldl).map_err(CliError::Core)?;
        let divergence = kld(&oracle, &h).map_err(CliError::Core)?;
        let metrics = spectral_error_metrics(&h, &Oracle::Dense(&oracle), Some(&factor))
            .map_err(CliError::Core)?;
        writeln!(
            f,
            "{k} {divergence:.6e} {:.6e} {:.6e}",
            metrics.diff_norm2,
            metrics.inverse_identity_norm2.unwrap_or(f64::NAN)
        )?;
    }
    Ok(vec![path])
}

