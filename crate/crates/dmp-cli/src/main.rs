//! Command-line front end for the dmp library: limiting spectral laws,
//! Gaussian limits of linear spectral statistics, covariance-structure tests
//! on CSV data, and the seeded Monte Carlo experiments.
//!
//! Conventions shared by all subcommands:
//! * results go to stdout as JSON in full double precision; plot-ready CSV
//!   tables go to `--out` when given;
//! * a reproducibility header (version, full flag set, seed) is echoed to
//!   stderr on every run;
//! * exit code 0 on success, 2 on usage errors, 1 on computational failures
//!   with a machine-readable JSON error on stderr.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dmp::error::DmpError;
use dmp::law::{self, DensityOptions, PopulationSpectrum};
use dmp::sim::{self, AlternativeSpec, EnsembleConfig, EntryLaw, SigmaSpec};
use dmp::stats::{self, FnBase, TestFunctionSpec, TestKind, TestParams};
use dmp::{clt, Result};

#[derive(Parser)]
#[command(
    name = "dmp",
    version,
    about = "Deformed Marchenko-Pastur laws, CLT limits and covariance-structure tests \
             for Gram matrices of proportionally wide data (p/n = phi >= 1)"
)]
struct Cli {
    /// Worker threads for replicate-parallel commands (default: all cores,
    /// or the DMP_THREADS environment variable)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Density of the limiting spectral law on a grid covering the support
    LawDensity(LawDensityArgs),
    /// Support edges (gamma_minus, gamma_plus) of the limiting law
    LawEdges(PiArgs),
    /// Stieltjes transform m(z) at one point (im = 0 gives the boundary value)
    LawM(LawMArgs),
    /// Gaussian limit (means and covariance) of global linear spectral statistics
    LimitGlobal(LimitGlobalArgs),
    /// Universal Gaussian limit of local (edge or bulk) spectral statistics
    LimitLocal(LimitLocalArgs),
    /// Covariance-structure tests on a CSV data matrix
    Test(TestArgs),
    /// Null-calibration experiment: standardized replicate z-scores and KS distances
    SimulateEcdf(SimEcdfArgs),
    /// Empirical power sweep across cluster or spiked alternatives
    SimulatePower(SimPowerArgs),
    /// ROC curves and AUC for detecting one alternative
    SimulateRoc(SimRocArgs),
}

#[derive(Args)]
struct PiArgs {
    /// Population spectrum as "w:v,w:v" (weights and atom values)
    #[arg(long, default_value = "1:1")]
    pi: String,
    /// Aspect ratio p/n (must be >= 1)
    #[arg(long)]
    phi: f64,
}

#[derive(Args)]
struct LawDensityArgs {
    #[command(flatten)]
    pi: PiArgs,
    /// Number of grid points
    #[arg(long, default_value_t = 2000)]
    points: usize,
    /// Margin beyond each edge, relative to the support width
    #[arg(long, default_value_t = 0.02)]
    pad: f64,
    /// Write the grid as CSV (x,rho) here instead of embedding it in the JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LawMArgs {
    #[command(flatten)]
    pi: PiArgs,
    /// Real part of z
    #[arg(long, allow_negative_numbers = true)]
    re: f64,
    /// Imaginary part of z; 0 evaluates the boundary value m(x + i0)
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    im: f64,
}

#[derive(Args)]
struct LimitGlobalArgs {
    #[command(flatten)]
    pi: PiArgs,
    /// Fourth cumulant of the standardized entries
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    kappa4: f64,
    /// Comma-separated global test functions: linear:<c>, quad:<c>, log:<t>
    /// (shifts measured from gamma_tilde = sqrt(phi) + 1/sqrt(phi), t > 1)
    #[arg(long, default_value = "linear:3,quad:3,log:3")]
    fns: String,
}

#[derive(Args)]
struct LimitLocalArgs {
    /// Comma-separated local window functions: linear, quad, log:<c>
    #[arg(long, default_value = "linear,quad,log:0.5")]
    fns: String,
    /// Where the window sits: edge-upper, edge-lower or bulk
    #[arg(long, default_value = "edge-upper")]
    at: String,
    /// Cutoff parameters "a,b": identity on [-a,a], zero outside [-a-b,a+b]
    #[arg(long, default_value = "1,4")]
    cutoff: String,
}

#[derive(Args)]
struct TestArgs {
    /// CSV matrix input (comma-separated numbers, no header unless --header)
    #[arg(long)]
    input: PathBuf,
    /// Skip one header line in the input
    #[arg(long, default_value_t = false)]
    header: bool,
    /// Row orientation of the input: vars (p x n) or samples (n x p)
    #[arg(long, default_value = "vars")]
    rows: String,
    /// Statistic to run: t1g..t4g, t1l..t4l, or all
    #[arg(long, default_value = "all")]
    stat: String,
    /// Fourth cumulant of the standardized entries (globals only; locals ignore it)
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    kappa4: f64,
    /// Two-sided level of the test
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Shift parameter of the global linear/quadratic/ratio statistics
    #[arg(long, default_value_t = 3.0)]
    c: f64,
    /// Parameter t > 1 of the global log statistic
    #[arg(long, default_value_t = 3.0)]
    t: f64,
    /// Local window scale (default n^{-1/4})
    #[arg(long)]
    eta0: Option<f64>,
    /// Standardize t4g by the plain ratio constants instead of the delta method
    #[arg(long, default_value_t = false)]
    t4g_literal: bool,
}

#[derive(Args)]
struct SimCommonArgs {
    /// Samples per replicate (default 200, or 400 with --full-scale)
    #[arg(long)]
    n: Option<usize>,
    /// Aspect ratio p/n (default 50, or 100 with --full-scale)
    #[arg(long)]
    phi: Option<f64>,
    /// Replicates (default 500, or 1000 with --full-scale)
    #[arg(long)]
    reps: Option<usize>,
    /// Use the larger scale n=400, phi=100, reps=1000 unless overridden
    #[arg(long, default_value_t = false)]
    full_scale: bool,
    /// Entry law: gaussian, twopoint_neg, twopoint_pos or twopoint:<v>
    #[arg(long, default_value = "gaussian")]
    dist: String,
    /// Master seed; replicate r draws from substream r
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Statistics to evaluate (comma-separated, or all)
    #[arg(long, default_value = "all")]
    stats: String,
    /// Write the per-replicate or per-sweep-point CSV here
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SimCommonArgs {
    fn resolve(&self) -> (usize, f64, usize) {
        let (n0, phi0, r0) = if self.full_scale {
            (400, 100.0, 1000)
        } else {
            (200, 50.0, 500)
        };
        (
            self.n.unwrap_or(n0),
            self.phi.unwrap_or(phi0),
            self.reps.unwrap_or(r0),
        )
    }
}

#[derive(Args)]
struct SimEcdfArgs {
    #[command(flatten)]
    common: SimCommonArgs,
    /// Second entry law: adds two-sample KS between the z-scores of the two laws
    #[arg(long)]
    dist2: Option<String>,
}

#[derive(Args)]
struct AltArgs {
    /// Alternative family: cluster or spiked
    #[arg(long, default_value = "cluster")]
    alt: String,
    /// Cluster weight of the inflated atom 1 + eps
    #[arg(long, default_value_t = 0.5)]
    a: f64,
    /// Spike count for the spiked family
    #[arg(long, default_value_t = 1)]
    r: usize,
}

impl AltArgs {
    fn build(&self, epsilon: f64) -> Result<AlternativeSpec> {
        match self.alt.as_str() {
            "cluster" => Ok(AlternativeSpec::Cluster { a: self.a, epsilon }),
            "spiked" => Ok(AlternativeSpec::Spiked { r: self.r, epsilon }),
            other => Err(DmpError::InvalidArgument(format!(
                "unknown alternative family '{other}'"
            ))),
        }
    }
}

#[derive(Args)]
struct SimPowerArgs {
    #[command(flatten)]
    common: SimCommonArgs,
    #[command(flatten)]
    alt: AltArgs,
    /// Comma-separated sweep of eps values
    #[arg(long, default_value = "0,0.05,0.1,0.2,0.3")]
    eps: String,
    /// Two-sided level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct SimRocArgs {
    #[command(flatten)]
    common: SimCommonArgs,
    #[command(flatten)]
    alt: AltArgs,
    /// Single eps of the alternative (its replicates use seed + 1)
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
}

fn main() {
    let cli = Cli::parse();
    if let Some(k) = cli
        .threads
        .or_else(|| std::env::var("DMP_THREADS").ok().and_then(|s| s.parse().ok()))
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }
    repro_header(seed_of(&cli.cmd));
    match run(cli.cmd) {
        Ok(()) => {}
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.to_string(), "kind": error_kind(&e) })
            );
            std::process::exit(1);
        }
    }
}

fn seed_of(cmd: &Cmd) -> Option<u64> {
    match cmd {
        Cmd::SimulateEcdf(a) => Some(a.common.seed),
        Cmd::SimulatePower(a) => Some(a.common.seed),
        Cmd::SimulateRoc(a) => Some(a.common.seed),
        _ => None,
    }
}

fn repro_header(seed: Option<u64>) {
    let args: Vec<String> = std::env::args().skip(1).collect();
    eprintln!(
        "# dmp {} | args: {} | seed: {}",
        env!("CARGO_PKG_VERSION"),
        args.join(" "),
        seed.map_or_else(|| "-".to_string(), |s| s.to_string())
    );
}

fn error_kind(e: &DmpError) -> &'static str {
    match e {
        DmpError::UnsupportedRegime { .. } => "unsupported_regime",
        DmpError::InvalidSpectrum(_) => "invalid_spectrum",
        DmpError::PoleProximity { .. } => "pole_proximity",
        DmpError::SolverDiverged { .. } => "solver_diverged",
        DmpError::Bracketing(_) => "bracketing",
        DmpError::LogDomain { .. } => "log_domain",
        DmpError::DegenerateRatio => "degenerate_ratio",
        DmpError::KappaRange { .. } => "kappa_range",
        DmpError::CoincidentPoints => "coincident_points",
        DmpError::NonConvergence(_) => "non_convergence",
        DmpError::InvalidArgument(_) => "invalid_argument",
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::LawDensity(a) => law_density(a),
        Cmd::LawEdges(a) => law_edges(a),
        Cmd::LawM(a) => law_m(a),
        Cmd::LimitGlobal(a) => limit_global(a),
        Cmd::LimitLocal(a) => limit_local(a),
        Cmd::Test(a) => run_tests(a),
        Cmd::SimulateEcdf(a) => simulate_ecdf(a),
        Cmd::SimulatePower(a) => simulate_power(a),
        Cmd::SimulateRoc(a) => simulate_roc(a),
    }
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| DmpError::InvalidArgument(format!("serialization failed: {e}")))?;
    println!("{text}");
    Ok(())
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| {
        DmpError::InvalidArgument(format!("cannot create {}: {e}", path.display()))
    })?;
    Ok(BufWriter::new(f))
}

fn write_line(w: &mut impl Write, line: &str) -> Result<()> {
    writeln!(w, "{line}").map_err(|e| DmpError::InvalidArgument(format!("write failed: {e}")))
}

// ---------------------------------------------------------------------------
// law commands
// ---------------------------------------------------------------------------

fn law_density(a: LawDensityArgs) -> Result<()> {
    let sp = PopulationSpectrum::parse(&a.pi.pi, a.pi.phi)?;
    let grid = law::density(
        &sp,
        &DensityOptions {
            npts: a.points,
            pad_rel: a.pad,
            grid: None,
        },
    )?;
    let sup = law::support(&sp)?;

    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        pi: String,
        phi: f64,
        gamma_minus: f64,
        gamma_plus: f64,
        points: usize,
        total_mass: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        xs: Option<Vec<f64>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        rho: Option<Vec<f64>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        out: Option<String>,
    }
    let mut out = Out {
        command: "law-density",
        pi: a.pi.pi.clone(),
        phi: a.pi.phi,
        gamma_minus: sup.gamma_minus,
        gamma_plus: sup.gamma_plus,
        points: grid.xs.len(),
        total_mass: grid.total_mass,
        xs: None,
        rho: None,
        out: None,
    };
    match &a.out {
        Some(path) => {
            let mut w = csv_writer(path)?;
            write_line(&mut w, "x,rho")?;
            for (x, r) in grid.xs.iter().zip(&grid.rho) {
                write_line(&mut w, &format!("{x},{r}"))?;
            }
            out.out = Some(path.display().to_string());
        }
        None => {
            out.xs = Some(grid.xs);
            out.rho = Some(grid.rho);
        }
    }
    emit(&out)
}

fn law_edges(a: PiArgs) -> Result<()> {
    let sp = PopulationSpectrum::parse(&a.pi, a.phi)?;
    let sup = law::support(&sp)?;

    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        pi: String,
        phi: f64,
        gamma_minus: f64,
        gamma_plus: f64,
    }
    emit(&Out {
        command: "law-edges",
        pi: a.pi,
        phi: a.phi,
        gamma_minus: sup.gamma_minus,
        gamma_plus: sup.gamma_plus,
    })
}

fn law_m(a: LawMArgs) -> Result<()> {
    let sp = PopulationSpectrum::parse(&a.pi.pi, a.pi.phi)?;

    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        pi: String,
        phi: f64,
        z: [f64; 2],
        m: [f64; 2],
        m_prime: [f64; 2],
        m_second: [f64; 2],
        residual: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        density: Option<f64>,
    }
    let out = if a.im == 0.0 {
        let b = law::boundary_value(&sp, a.re)?;
        Out {
            command: "law-m",
            pi: a.pi.pi,
            phi: a.pi.phi,
            z: [a.re, 0.0],
            m: [b.m.re, b.m.im],
            m_prime: [b.m_prime.re, b.m_prime.im],
            m_second: [b.m_second.re, b.m_second.im],
            residual: b.residual,
            density: Some(b.density),
        }
    } else {
        let v = law::solve_m(&sp, dmp::Complex64::new(a.re, a.im))?;
        Out {
            command: "law-m",
            pi: a.pi.pi,
            phi: a.pi.phi,
            z: [v.z.re, v.z.im],
            m: [v.m.re, v.m.im],
            m_prime: [v.m_prime.re, v.m_prime.im],
            m_second: [v.m_second.re, v.m_second.im],
            residual: v.residual,
            density: None,
        }
    };
    emit(&out)
}

// ---------------------------------------------------------------------------
// limit commands
// ---------------------------------------------------------------------------

fn parse_global_fns(text: &str, phi: f64) -> Result<(Vec<String>, Vec<TestFunctionSpec>)> {
    let mut names = Vec::new();
    let mut fns = Vec::new();
    for tok in text.split(',').filter(|t| !t.trim().is_empty()) {
        let tok = tok.trim();
        let (kind, param) = tok.split_once(':').ok_or_else(|| {
            DmpError::InvalidArgument(format!("function '{tok}' needs a parameter, like linear:3"))
        })?;
        let v: f64 = param
            .parse()
            .map_err(|_| DmpError::InvalidArgument(format!("bad parameter in '{tok}'")))?;
        let f = match kind {
            "linear" => TestFunctionSpec::global_linear(phi, v)?,
            "quad" => TestFunctionSpec::global_quadratic(phi, v)?,
            "log" => TestFunctionSpec::global_pure_log(phi, v)?,
            other => {
                return Err(DmpError::InvalidArgument(format!(
                    "unknown global function '{other}' (want linear, quad or log)"
                )))
            }
        };
        names.push(tok.to_string());
        fns.push(f);
    }
    if fns.is_empty() {
        return Err(DmpError::InvalidArgument("no functions given".into()));
    }
    Ok((names, fns))
}

fn limit_global(a: LimitGlobalArgs) -> Result<()> {
    let sp = PopulationSpectrum::parse(&a.pi.pi, a.pi.phi)?;
    let (names, fns) = parse_global_fns(&a.fns, a.pi.phi)?;
    let lim = clt::global_limit(&sp, &fns, a.kappa4)?;

    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        pi: String,
        phi: f64,
        kappa4: f64,
        fns: Vec<String>,
        means: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    }
    emit(&Out {
        command: "limit-global",
        pi: a.pi.pi,
        phi: a.pi.phi,
        kappa4: a.kappa4,
        fns: names,
        means: lim.means,
        covariance: lim.covariance,
    })
}

fn limit_local(a: LimitLocalArgs) -> Result<()> {
    let ab = {
        let parts: Vec<&str> = a.cutoff.split(',').collect();
        if parts.len() != 2 {
            return Err(DmpError::InvalidArgument(format!(
                "cutoff '{}' must be 'a,b'",
                a.cutoff
            )));
        }
        let pa: f64 = parts[0].trim().parse().map_err(|_| {
            DmpError::InvalidArgument(format!("bad cutoff parameter '{}'", parts[0]))
        })?;
        let pb: f64 = parts[1].trim().parse().map_err(|_| {
            DmpError::InvalidArgument(format!("bad cutoff parameter '{}'", parts[1]))
        })?;
        (pa, pb)
    };
    let mut names = Vec::new();
    let mut fns = Vec::new();
    for tok in a.fns.split(',').filter(|t| !t.trim().is_empty()) {
        let tok = tok.trim();
        let base = match tok.split_once(':') {
            None => match tok {
                "linear" => FnBase::Linear,
                "quad" => FnBase::Quadratic,
                other => {
                    return Err(DmpError::InvalidArgument(format!(
                        "unknown local function '{other}' (want linear, quad or log:<c>)"
                    )))
                }
            },
            Some(("log", c)) => {
                let c: f64 = c.parse().map_err(|_| {
                    DmpError::InvalidArgument(format!("bad log shift in '{tok}'"))
                })?;
                if ab.0 + ab.1 >= c {
                    return Err(DmpError::InvalidArgument(format!(
                        "cutoff reach {} enters the log branch at {c}",
                        ab.0 + ab.1
                    )));
                }
                FnBase::LogShift { c }
            }
            Some((other, _)) => {
                return Err(DmpError::InvalidArgument(format!(
                    "unknown local function '{other}'"
                )))
            }
        };
        // location and window scale do not enter the local limit
        names.push(tok.to_string());
        fns.push(TestFunctionSpec::new(base, 0.0, 1.0, Some(ab))?);
    }
    if fns.is_empty() {
        return Err(DmpError::InvalidArgument("no functions given".into()));
    }
    let lim = match a.at.as_str() {
        "edge-upper" => clt::local_limit_edge(&fns, true)?,
        "edge-lower" => clt::local_limit_edge(&fns, false)?,
        "bulk" => clt::local_limit_bulk(&fns)?,
        other => {
            return Err(DmpError::InvalidArgument(format!(
                "unknown location '{other}' (want edge-upper, edge-lower or bulk)"
            )))
        }
    };

    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        at: String,
        cutoff: [f64; 2],
        fns: Vec<String>,
        means: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    }
    emit(&Out {
        command: "limit-local",
        at: a.at,
        cutoff: [ab.0, ab.1],
        fns: names,
        means: lim.means,
        covariance: lim.covariance,
    })
}

// ---------------------------------------------------------------------------
// test command
// ---------------------------------------------------------------------------

fn read_csv_matrix(path: &Path, skip_header: bool) -> Result<(Vec<f64>, usize, usize)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DmpError::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    let mut data = Vec::new();
    let mut ncols = 0usize;
    let mut nrows = 0usize;
    for (li, line) in text
        .lines()
        .enumerate()
        .skip(if skip_header { 1 } else { 0 })
    {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = 0usize;
        for (ci, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                DmpError::InvalidArgument(format!(
                    "{} row {}, column {}: invalid number '{}'",
                    path.display(),
                    li + 1,
                    ci + 1,
                    cell.trim()
                ))
            })?;
            data.push(v);
            cols += 1;
        }
        if nrows == 0 {
            ncols = cols;
        } else if cols != ncols {
            return Err(DmpError::InvalidArgument(format!(
                "{} row {}: {} columns, expected {}",
                path.display(),
                li + 1,
                cols,
                ncols
            )));
        }
        nrows += 1;
    }
    if nrows == 0 {
        return Err(DmpError::InvalidArgument(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok((data, nrows, ncols))
}

#[derive(Serialize)]
struct ReportOut {
    kind: &'static str,
    raw: f64,
    z_value: f64,
    p_value: f64,
    reject: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa4_used: Option<f64>,
}

fn run_tests(a: TestArgs) -> Result<()> {
    let rows_are_variables = match a.rows.as_str() {
        "vars" => true,
        "samples" => false,
        other => {
            return Err(DmpError::InvalidArgument(format!(
                "unknown orientation '{other}' (want vars or samples)"
            )))
        }
    };
    let (data, nrows, ncols) = read_csv_matrix(&a.input, a.header)?;
    let eigs = stats::gram_eigenvalues(&data, nrows, ncols, rows_are_variables)?;
    let n = eigs.len();
    let p = if rows_are_variables { nrows } else { ncols };
    let phi = p as f64 / n as f64;
    let mut params = TestParams::defaults(n);
    params.c = a.c;
    params.t = a.t;
    params.t4g_literal = a.t4g_literal;
    if let Some(e) = a.eta0 {
        params.eta0 = e;
    }
    let kinds: Vec<TestKind> = if a.stat == "all" {
        TestKind::ALL.to_vec()
    } else {
        a.stat
            .split(',')
            .map(TestKind::parse)
            .collect::<Result<_>>()?
    };
    let mut results = Vec::with_capacity(kinds.len());
    for &kind in &kinds {
        let rep = stats::run_test(&eigs, kind, phi, a.kappa4, a.alpha, &params)?;
        results.push(ReportOut {
            kind: kind.name(),
            raw: rep.raw,
            z_value: rep.z,
            p_value: rep.p_value,
            reject: rep.reject,
            kappa4_used: rep.kappa4_used,
        });
    }

    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        input: String,
        n: usize,
        p: usize,
        phi: f64,
        alpha: f64,
        results: Vec<ReportOut>,
    }
    emit(&Out {
        command: "test",
        input: a.input.display().to_string(),
        n,
        p,
        phi,
        alpha: a.alpha,
        results,
    })
}

// ---------------------------------------------------------------------------
// simulate commands
// ---------------------------------------------------------------------------

fn parse_kinds(text: &str) -> Result<Vec<TestKind>> {
    if text.trim() == "all" {
        return Ok(TestKind::ALL.to_vec());
    }
    text.split(',').map(TestKind::parse).collect()
}

fn build_config(common: &SimCommonArgs) -> Result<(EnsembleConfig, TestParams)> {
    let (n, phi, reps) = common.resolve();
    let cfg = EnsembleConfig {
        n,
        phi,
        sigma: SigmaSpec::Identity,
        dist: EntryLaw::parse(&common.dist)?,
        seed: common.seed,
        reps,
    };
    cfg.p()?;
    let params = TestParams::defaults(n);
    Ok((cfg, params))
}

fn simulate_ecdf(a: SimEcdfArgs) -> Result<()> {
    let (cfg, params) = build_config(&a.common)?;
    let kinds = parse_kinds(&a.common.stats)?;
    let results = sim::ecdf_experiment(&cfg, &kinds, &params)?;

    let cross = match &a.dist2 {
        Some(d2) => {
            let mut cfg2 = cfg.clone();
            cfg2.dist = EntryLaw::parse(d2)?;
            let r2 = sim::ecdf_experiment(&cfg2, &kinds, &params)?;
            Some(
                results
                    .iter()
                    .zip(&r2)
                    .map(|(x, y)| CrossOut {
                        kind: x.kind.name(),
                        ks_two_sample: sim::ks_two_sample(&x.z, &y.z),
                    })
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };

    if let Some(path) = &a.common.out {
        let mut w = csv_writer(path)?;
        let header = std::iter::once("replicate".to_string())
            .chain(results.iter().map(|r| r.kind.name().to_string()))
            .collect::<Vec<_>>()
            .join(",");
        write_line(&mut w, &header)?;
        for r in 0..cfg.reps {
            let row = std::iter::once(r.to_string())
                .chain(results.iter().map(|res| res.z[r].to_string()))
                .collect::<Vec<_>>()
                .join(",");
            write_line(&mut w, &row)?;
        }
    }

    #[derive(Serialize)]
    struct KsOut {
        kind: &'static str,
        ks: f64,
    }
    #[derive(Serialize)]
    struct CrossOut {
        kind: &'static str,
        ks_two_sample: f64,
    }
    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        n: usize,
        phi: f64,
        dist: String,
        reps: usize,
        seed: u64,
        results: Vec<KsOut>,
        #[serde(skip_serializing_if = "Option::is_none")]
        cross: Option<Vec<CrossOut>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        out: Option<String>,
    }
    emit(&Out {
        command: "simulate-ecdf",
        n: cfg.n,
        phi: cfg.phi,
        dist: cfg.dist.name(),
        reps: cfg.reps,
        seed: cfg.seed,
        results: results
            .iter()
            .map(|r| KsOut {
                kind: r.kind.name(),
                ks: r.ks,
            })
            .collect(),
        cross,
        out: a.common.out.as_ref().map(|p| p.display().to_string()),
    })
}

fn simulate_power(a: SimPowerArgs) -> Result<()> {
    let (cfg, params) = build_config(&a.common)?;
    let kinds = parse_kinds(&a.common.stats)?;
    let eps: Vec<f64> = a
        .eps
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| DmpError::InvalidArgument(format!("bad eps value '{t}'")))
        })
        .collect::<Result<_>>()?;
    let alts: Vec<AlternativeSpec> = eps
        .iter()
        .map(|&e| a.alt.build(e))
        .collect::<Result<_>>()?;
    let rows = sim::power_experiment(&cfg, &alts, &kinds, a.alpha, &params)?;

    if let Some(path) = &a.common.out {
        let mut w = csv_writer(path)?;
        write_line(&mut w, "kind,epsilon,rejections,reps,power")?;
        for r in &rows {
            write_line(
                &mut w,
                &format!(
                    "{},{},{},{},{}",
                    r.kind.name(),
                    r.epsilon,
                    r.rejections,
                    r.reps,
                    r.rate
                ),
            )?;
        }
    }

    #[derive(Serialize)]
    struct RowOut {
        kind: &'static str,
        epsilon: f64,
        power: f64,
    }
    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        n: usize,
        phi: f64,
        dist: String,
        reps: usize,
        seed: u64,
        alpha: f64,
        alternative: String,
        results: Vec<RowOut>,
        #[serde(skip_serializing_if = "Option::is_none")]
        out: Option<String>,
    }
    emit(&Out {
        command: "simulate-power",
        n: cfg.n,
        phi: cfg.phi,
        dist: cfg.dist.name(),
        reps: cfg.reps,
        seed: cfg.seed,
        alpha: a.alpha,
        alternative: a.alt.alt.clone(),
        results: rows
            .iter()
            .map(|r| RowOut {
                kind: r.kind.name(),
                epsilon: r.epsilon,
                power: r.rate,
            })
            .collect(),
        out: a.common.out.as_ref().map(|p| p.display().to_string()),
    })
}

fn simulate_roc(a: SimRocArgs) -> Result<()> {
    let (null_cfg, params) = build_config(&a.common)?;
    let kinds = parse_kinds(&a.common.stats)?;
    let mut alt_cfg = null_cfg.clone();
    alt_cfg.sigma = SigmaSpec::Alternative(a.alt.build(a.eps)?);
    alt_cfg.seed = null_cfg.seed.wrapping_add(1);
    let results = sim::roc_experiment(&null_cfg, &alt_cfg, &kinds, &params)?;

    if let Some(path) = &a.common.out {
        let mut w = csv_writer(path)?;
        write_line(&mut w, "kind,fpr,tpr")?;
        for r in &results {
            for (f, t) in r.fpr.iter().zip(&r.tpr) {
                write_line(&mut w, &format!("{},{},{}", r.kind.name(), f, t))?;
            }
        }
    }

    #[derive(Serialize)]
    struct AucOut {
        kind: &'static str,
        auc: f64,
    }
    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        n: usize,
        phi: f64,
        dist: String,
        reps: usize,
        seed: u64,
        epsilon: f64,
        alternative: String,
        results: Vec<AucOut>,
        #[serde(skip_serializing_if = "Option::is_none")]
        out: Option<String>,
    }
    emit(&Out {
        command: "simulate-roc",
        n: null_cfg.n,
        phi: null_cfg.phi,
        dist: null_cfg.dist.name(),
        reps: null_cfg.reps,
        seed: null_cfg.seed,
        epsilon: a.eps,
        alternative: a.alt.alt.clone(),
        results: results
            .iter()
            .map(|r| AucOut {
                kind: r.kind.name(),
                auc: r.auc,
            })
            .collect(),
        out: a.common.out.as_ref().map(|p| p.display().to_string()),
    })
}
