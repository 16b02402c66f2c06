//! Command-line front end. `run` never panics on bad input and never exits
//! the process itself; it returns the exit code:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O or other unexpected failure |
//! | 2 | an inequality or experiment assertion failed |
//! | 3 | a solver did not converge |
//! | 4 | configuration error |
//!
//! Every failure is also reported as one line of JSON on stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::eigen1::{dense_oracle_p2, solve_lambda1, SolverParams};
use crate::eigen2::{solve_lambda2, StringParams};
use crate::energy::{Discretization, EnergyContext};
use crate::error::Error;
use crate::experiments::{
    drift_experiment, faber_krahn_sweep, hks_check, nodal_weight_sweep, polya_szego_sweep, svg_line_chart, write_csv,
    ExperimentRow, Setup,
};
use crate::grid::DomainSpec;
use crate::kernel::KernelSpec;
use crate::lemmas::{run_trials, Lemma, LemmaRow};

#[derive(Debug, Parser)]
#[command(name = "mixplap", version, about = "Eigenvalues of the mixed local/nonlocal p-Laplacian")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// First eigenpair.
    Eig1(Common),
    /// Second eigenvalue by the mountain-pass string.
    Eig2(Common),
    /// Dense p = 2 eigenvalues.
    Oracle(Common),
    /// λ1 over equal-measure shapes; the ball must win.
    FaberKrahn(Common),
    /// λ2(Ω) against λ1 of the half-measure ball.
    Hks(Common),
    /// Two balls moving apart.
    Drift(Common),
    /// Nodal margins while the kernel weight fades out.
    Nodal(Common),
    /// Rearrangement energy defects under grid refinement.
    PolyaSzego(Common),
    /// Randomized lemma checks.
    Check(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags below override its scalars.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    p: Option<f64>,
    /// Cells across the longest side of the domain.
    #[arg(long, short = 'n')]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Lemma for `check` (g, sigma, cp_i, cp_ii, picone); all when omitted.
    #[arg(long)]
    lemma: Option<String>,
    /// Randomized trials for `check` and `polya-szego`.
    #[arg(long)]
    samples: Option<usize>,
    /// Cap on worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Fill the `seconds` column.
    #[arg(long)]
    timings: bool,
    /// Write eigenfunctions (and the relaxed path for `eig2`) as CSV.
    #[arg(long)]
    dump_fields: bool,
    /// Write an SVG chart where the subcommand has one.
    #[arg(long)]
    svg: bool,
}

/// Everything a run can be configured with. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub p: f64,
    pub kernel: KernelSpec,
    pub domain: DomainSpec,
    /// Shapes for `faber-krahn`, ball first.
    pub shapes: Option<Vec<DomainSpec>>,
    pub resolution: usize,
    /// Resolutions for `faber-krahn` and `polya-szego`.
    pub resolutions: Option<Vec<usize>>,
    pub solver: SolverParams,
    pub string: StringParams,
    pub seed: u64,
    pub ratios: Vec<f64>,
    pub radius: f64,
    pub separations: Vec<f64>,
    pub dimension: usize,
    /// Cells across one ball in `drift`.
    pub cells: usize,
    pub weights: Vec<f64>,
    pub samples: Option<usize>,
    pub lemma: Option<String>,
    /// Exponents for `check`; `p` alone when empty.
    pub lemma_p: Vec<f64>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            kernel: KernelSpec::tent(0.2),
            domain: DomainSpec::interval(0.0, 1.0),
            shapes: None,
            resolution: 100,
            resolutions: None,
            solver: SolverParams::default(),
            string: StringParams::default(),
            seed: 0,
            ratios: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            radius: 0.5,
            separations: vec![1.05, 1.1, 1.15, 1.2, 1.3, 1.45],
            dimension: 2,
            cells: 20,
            weights: vec![1.0, 0.8, 0.6, 0.4, 0.2, 0.0],
            samples: None,
            lemma: None,
            lemma_p: Vec::new(),
            output: PathBuf::from("results"),
        }
    }
}

/// Disk, square and 2:1 rectangle of area π.
pub fn default_shapes() -> Vec<DomainSpec> {
    let pi = std::f64::consts::PI;
    vec![
        DomainSpec::ball(&[0.0, 0.0], 1.0),
        DomainSpec::rect(&[0.0, 0.0], &[pi.sqrt(), pi.sqrt()]),
        DomainSpec::rect(&[0.0, 0.0], &[(2.0 * pi).sqrt(), (0.5 * pi).sqrt()]),
    ]
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Lib(Error),
    Assertion(serde_json::Value),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 4,
            Failure::Assertion(_) => 2,
            Failure::Lib(e) => match e {
                Error::NotConverged { .. } | Error::ResidualTooLarge { .. } | Error::CollapsedPath { .. } => 3,
                Error::Io(_) => 1,
                _ => 4,
            },
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            Failure::Config(m) => json!({"error": "config", "message": m, "exit_code": 4}),
            Failure::Assertion(v) => json!({"error": "assertion", "detail": v, "exit_code": 2}),
            Failure::Lib(e) => json!({"error": kind(e), "message": e.to_string(), "exit_code": self.code()}),
        }
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::NotConverged { .. } | Error::ResidualTooLarge { .. } | Error::CollapsedPath { .. } => "not_converged",
        Error::Io(_) => "io",
        _ => "config",
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let f = Failure::Config(e.to_string().lines().next().unwrap_or("bad arguments").to_string());
            eprintln!("{}", f.to_json());
            return f.code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{}", f.to_json());
            f.code()
        }
    }
}

fn load_config(c: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(p) = c.p {
        cfg.p = p;
    }
    if let Some(n) = c.resolution {
        cfg.resolution = n;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.tol {
        cfg.solver.tol = t;
    }
    if let Some(m) = c.max_iter {
        cfg.solver.max_iter = m;
    }
    if let Some(l) = &c.lemma {
        cfg.lemma = Some(l.clone());
    }
    if let Some(s) = c.samples {
        cfg.samples = Some(s);
    }
    if let Some(o) = &c.out {
        cfg.output = o.clone();
    }
    cfg.solver.seed = cfg.seed;
    cfg.solver.validate()?;
    if !(cfg.p > 1.0 && cfg.p.is_finite()) {
        return Err(Failure::Config(format!("p must lie in (1, ∞), got {}", cfg.p)));
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Outcome {
    let (name, common) = match &cli.command {
        Command::Eig1(c) => ("eig1", c),
        Command::Eig2(c) => ("eig2", c),
        Command::Oracle(c) => ("oracle", c),
        Command::FaberKrahn(c) => ("faber-krahn", c),
        Command::Hks(c) => ("hks", c),
        Command::Drift(c) => ("drift", c),
        Command::Nodal(c) => ("nodal", c),
        Command::PolyaSzego(c) => ("polya-szego", c),
        Command::Check(c) => ("check", c),
    };
    let cfg = load_config(common)?;
    // validate the cheap parts before any output appears
    if name == "check" {
        lemma_list(&cfg)?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = common.workers {
        if k == 0 {
            return Err(Failure::Config("--workers must be positive".into()));
        }
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| Failure::Config(e.to_string()))?;
    pool.install(|| execute(name, common, &cfg))
}

struct Output<'a> {
    dir: &'a Path,
    timings: bool,
}

impl Output<'_> {
    fn create(&self) -> crate::error::Result<()> {
        Ok(fs::create_dir_all(self.dir)?)
    }

    fn rows(&self, rows: &[ExperimentRow], report: serde_json::Value, cfg: &RunConfig) -> crate::error::Result<()> {
        self.create()?;
        let mut csv = Vec::new();
        write_csv(rows, self.timings, &mut csv)?;
        fs::write(self.dir.join("results.csv"), csv)?;
        let mut rows_json = serde_json::to_value(rows)?;
        if !self.timings {
            if let Some(arr) = rows_json.as_array_mut() {
                arr.iter_mut().for_each(|r| r["seconds"] = serde_json::Value::Null);
            }
        }
        let doc = json!({"config": cfg, "rows": rows_json, "report": report});
        fs::write(self.dir.join("results.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }
}

fn verdict(passed: bool, detail: serde_json::Value) -> Outcome {
    if passed {
        Ok(())
    } else {
        Err(Failure::Assertion(detail))
    }
}

fn setup(cfg: &RunConfig) -> Setup {
    Setup { kernel: cfg.kernel.clone(), p: cfg.p, solver: cfg.solver.clone(), string: cfg.string.clone() }
}

fn context(cfg: &RunConfig) -> crate::error::Result<EnergyContext> {
    Discretization::new(cfg.kernel.clone(), cfg.p, cfg.resolution).build(&cfg.domain)
}

fn strip_times(v: &mut serde_json::Value, timings: bool) {
    if timings {
        return;
    }
    match v {
        serde_json::Value::Object(m) => {
            if m.contains_key("seconds") {
                m.insert("seconds".into(), serde_json::Value::Null);
            }
            m.values_mut().for_each(|x| strip_times(x, timings));
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(|x| strip_times(x, timings)),
        _ => {}
    }
}

fn execute(name: &str, common: &Common, cfg: &RunConfig) -> Outcome {
    let out = Output { dir: &cfg.output, timings: common.timings };
    let report = |r: &dyn ReportJson| -> serde_json::Value {
        let mut v = r.to_json();
        strip_times(&mut v, common.timings);
        v
    };
    match name {
        "eig1" => {
            let ctx = context(cfg)?;
            let t0 = std::time::Instant::now();
            let res = solve_lambda1(&ctx, &cfg.solver)?;
            let mut row = row_for("eig1", cfg, &ctx);
            row.lambda1 = Some(res.lambda);
            row.oracle1 = small_oracle(&ctx).map(|o| o.0);
            row.seconds = Some(t0.elapsed().as_secs_f64());
            out.rows(&[row], serde_json::to_value(res.summary()).map_err(Error::from)?, cfg)?;
            if common.dump_fields {
                write_field(&out, "eigenfunction1.csv", &res.eigenfunction)?;
            }
            if !res.converged {
                return Err(Error::NotConverged { iterations: res.iterations, best: res.lambda }.into());
            }
            Ok(())
        }
        "eig2" => {
            let ctx = context(cfg)?;
            let t0 = std::time::Instant::now();
            let (e1, m) = solve_lambda2(&ctx, &cfg.solver, &cfg.string)?;
            let mut row = row_for("eig2", cfg, &ctx);
            row.lambda1 = Some(e1.lambda);
            row.lambda2 = Some(m.eigen.lambda);
            if let Some((o1, o2)) = small_oracle(&ctx) {
                row.oracle1 = Some(o1);
                row.oracle2 = Some(o2);
            }
            row.margin = Some(m.eigen.lambda - e1.lambda);
            row.seconds = Some(t0.elapsed().as_secs_f64());
            let detail = json!({
                "lambda1": e1.summary(),
                "lambda2": m.eigen.summary(),
                "path_max": m.path_max,
                "sweeps": m.sweeps,
                "stop": m.stop,
            });
            out.rows(&[row], detail, cfg)?;
            if common.dump_fields {
                write_field(&out, "eigenfunction1.csv", &e1.eigenfunction)?;
                write_field(&out, "eigenfunction2.csv", &m.eigen.eigenfunction)?;
                m.path.dump(&ctx, &out.dir.join("path"), m.sweeps)?;
            }
            if !m.eigen.converged {
                return Err(Error::NotConverged { iterations: m.eigen.iterations, best: m.eigen.lambda }.into());
            }
            Ok(())
        }
        "oracle" => {
            let ctx = context(cfg)?;
            let o = dense_oracle_p2(&ctx)?;
            let mut row = row_for("oracle", cfg, &ctx);
            row.oracle1 = Some(o.lambda1);
            row.oracle2 = Some(o.lambda2);
            out.rows(&[row], json!({"lambda1": o.lambda1, "lambda2": o.lambda2}), cfg)?;
            if common.dump_fields {
                write_field(&out, "oracle1.csv", &o.eigvec1)?;
                write_field(&out, "oracle2.csv", &o.eigvec2)?;
            }
            Ok(())
        }
        "faber-krahn" => {
            let shapes = cfg.shapes.clone().unwrap_or_else(default_shapes);
            let res = cfg.resolutions.clone().unwrap_or_else(|| vec![60, 80]);
            let r = faber_krahn_sweep(&shapes, &setup(cfg), &res)?;
            let v = report(&r);
            out.rows(&r.rows, v.clone(), cfg)?;
            verdict(r.passed, v)
        }
        "hks" => {
            let r = hks_check(&cfg.domain, &setup(cfg), cfg.resolution, &cfg.ratios)?;
            let v = report(&r);
            out.rows(&r.rows, v.clone(), cfg)?;
            verdict(r.passed, v)
        }
        "drift" => {
            let r = drift_experiment(cfg.radius, &cfg.separations, cfg.dimension, cfg.cells, &setup(cfg))?;
            let v = report(&r);
            out.rows(&r.rows, v.clone(), cfg)?;
            if common.svg {
                let pts: Vec<(f64, f64)> = r.points.iter().map(|q| (q.separation, q.lambda2)).collect();
                let svg = svg_line_chart("λ2 of two balls", "center separation", "λ2", &pts, Some((r.lambda1_ball, "λ1(B_R)")));
                fs::write(out.dir.join("drift.svg"), svg).map_err(Error::from)?;
            }
            verdict(r.passed, v)
        }
        "nodal" => {
            let r = nodal_weight_sweep(&cfg.domain, &setup(cfg), cfg.resolution, &cfg.weights)?;
            let v = report(&r);
            out.rows(&r.rows, v.clone(), cfg)?;
            if common.svg {
                let pts: Vec<(f64, f64)> = r.points.iter().map(|q| (q.weight, q.margin)).collect();
                let svg = svg_line_chart("nodal margin", "kernel weight", "margin", &pts, Some((0.0, "0")));
                fs::write(out.dir.join("nodal.svg"), svg).map_err(Error::from)?;
            }
            verdict(r.passed, v)
        }
        "polya-szego" => {
            let res = cfg.resolutions.clone().unwrap_or_else(|| vec![100, 200, 400]);
            let r = polya_szego_sweep(&setup(cfg), &res, cfg.samples.unwrap_or(200), cfg.seed)?;
            let v = report(&r);
            out.rows(&r.rows, v.clone(), cfg)?;
            verdict(r.passed, v)
        }
        "check" => run_check(cfg, &out),
        _ => unreachable!("subcommands are enumerated by clap"),
    }
}

fn row_for(experiment: &str, cfg: &RunConfig, ctx: &EnergyContext) -> ExperimentRow {
    ExperimentRow {
        experiment: experiment.into(),
        domain: cfg.domain.descriptor(),
        p: cfg.p,
        kernel: ctx.kernel().descriptor(),
        n: cfg.resolution,
        lambda1: None,
        lambda2: None,
        oracle1: None,
        oracle2: None,
        margin: None,
        seconds: None,
    }
}

fn small_oracle(ctx: &EnergyContext) -> Option<(f64, f64)> {
    if ctx.p() == 2.0 && ctx.len() <= 2500 {
        dense_oracle_p2(ctx).ok().map(|o| (o.lambda1, o.lambda2))
    } else {
        None
    }
}

fn write_field(out: &Output, name: &str, f: &crate::grid::Field) -> crate::error::Result<()> {
    out.create()?;
    let file = fs::File::create(out.dir.join(name))?;
    let mut w = std::io::BufWriter::new(file);
    f.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn lemma_list(cfg: &RunConfig) -> std::result::Result<Vec<Lemma>, Failure> {
    match &cfg.lemma {
        Some(name) => Ok(vec![name.parse().map_err(|e: Error| Failure::Config(e.to_string()))?]),
        None => Ok(Lemma::ALL.to_vec()),
    }
}

pub const LEMMA_CSV_HEADER: &str = "lemma,p,trials,violations,max_defect,equality_error,passed";

fn run_check(cfg: &RunConfig, out: &Output) -> Outcome {
    let lemmas = lemma_list(cfg)?;
    let ps = if cfg.lemma_p.is_empty() { vec![cfg.p] } else { cfg.lemma_p.clone() };
    let samples = cfg.samples.unwrap_or(100_000);
    let mut rows: Vec<LemmaRow> = Vec::new();
    for &p in &ps {
        for &l in &lemmas {
            rows.push(run_trials(l, p, samples, cfg.seed)?);
        }
    }
    let mut csv = String::from(LEMMA_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{:?},{:?},{}\n",
            r.lemma,
            r.p,
            r.trials,
            r.violations,
            r.max_defect,
            r.equality_error,
            if r.passed() { "pass" } else { "fail" }
        ));
    }
    print!("{csv}");
    out.create()?;
    fs::write(out.dir.join("results.csv"), &csv).map_err(Error::from)?;
    let doc = json!({"config": cfg, "rows": rows});
    fs::write(out.dir.join("results.json"), serde_json::to_string_pretty(&doc).map_err(Error::from)? + "\n")
        .map_err(Error::from)?;
    let failed: Vec<&LemmaRow> = rows.iter().filter(|r| !r.passed()).collect();
    verdict(
        failed.is_empty(),
        json!(failed
            .iter()
            .map(|r| json!({"lemma": r.lemma, "p": r.p, "violations": r.violations, "worst_input": r.worst}))
            .collect::<Vec<_>>()),
    )
}

/// Object-safe serialization of the experiment reports.
trait ReportJson {
    fn to_json(&self) -> serde_json::Value;
}

impl<T: Serialize> ReportJson for T {
    fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}
