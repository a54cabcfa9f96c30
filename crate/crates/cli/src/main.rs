mod config;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparse_kernel::combitech::{predicted_rate, weight_strategy, CombinationPlan, WeightStrategy, WeightVector};
use sparse_kernel::functions::TestFunction;
use sparse_kernel::geometry::{build_hierarchy_in, read_points, PointSet};
use sparse_kernel::interpolant::{compute, DataSource, SparseGridInterpolant, ValueTable};
use sparse_kernel::metrics::{default_panels, l2_error, rms_error_on_grids, ConvergenceRecord};
use sparse_kernel::studies::{run_config, StudyConfig, StudyReport, STUDY_NAMES};
use sparse_kernel::{Error, Result};

use crate::config::{apply_kernel_spec, parse_levels, parse_list, DirectionConfig, RunConfig};

const THREADS_ENV: &str = "SGK_THREADS";
const RUN_FILE: &str = "run.json";

#[derive(Parser)]
#[command(name = "sgk", version, about = "Sparse-grid kernel interpolation on product domains")]
struct Cli {
    /// Worker threads (default: $SGK_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a nested hierarchy from a points file.
    Subsample(SubsampleArgs),
    /// Compute and store a sparse-grid interpolant.
    Interpolate(RunArgs),
    /// Evaluate a stored interpolant.
    Eval(EvalArgs),
    /// Error and order per level.
    Convergence(RunArgs),
    /// Weight vectors and predicted rates.
    Weights(WeightsArgs),
    /// Library defaults, or a summary of a stored interpolant.
    Info(InfoArgs),
    /// Run a reproduction study and print a Markdown report.
    Study(StudyArgs),
}

#[derive(Args)]
struct SubsampleArgs {
    #[arg(long)]
    points: PathBuf,
    #[arg(short = 'J', long = "levels")]
    levels: usize,
    #[arg(long)]
    out: PathBuf,
    /// Tie-breaking seed; without it the first of equally central points is kept.
    #[arg(long)]
    seed: Option<u64>,
    /// Lay the cuboids over the unit cube instead of the bounding box.
    #[arg(long)]
    unit_box: bool,
}

#[derive(Args, Default)]
struct RunArgs {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Direction `KIND[,key=value...]` with KIND grid, points, random or sphere (repeatable).
    #[arg(long = "direction")]
    directions: Vec<String>,
    /// Points file of one direction (repeatable, after any --direction).
    #[arg(long)]
    points: Vec<PathBuf>,
    /// Level `J`, or a range `a..b` for convergence runs.
    #[arg(short = 'J', long = "levels")]
    levels: Option<String>,
    /// `beta=...,sigma=...`; once for all directions or once per direction.
    #[arg(long)]
    kernel: Vec<String>,
    /// accuracy, dof, cost-benefit or an explicit list `w1,w2,...`.
    #[arg(long)]
    weights: Option<String>,
    /// Rate gains per direction for the weight strategies.
    #[arg(long)]
    gains: Option<String>,
    #[arg(long)]
    function: Option<String>,
    /// Data values: lines of per-direction point indices followed by the value.
    #[arg(long)]
    values: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalFlags,
    /// Quadrature panels per coordinate.
    #[arg(long)]
    panels: Option<usize>,
    /// Largest admissible number of quadrature points.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the combination plan.
    #[arg(long)]
    dump_plan: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dump_defaults: bool,
}

#[derive(Args, Default)]
struct EvalFlags {
    /// Tensor grid with this many points per axis in every direction.
    #[arg(long)]
    eval_grid: Option<usize>,
    /// This many random points per direction, evaluated on their product.
    #[arg(long)]
    eval_random: Option<usize>,
    /// File of full-dimensional evaluation points.
    #[arg(long)]
    eval_points: Option<PathBuf>,
    /// Distance of evaluation points from the region boundary, relative to its extent.
    #[arg(long)]
    inset: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `interpolate`.
    #[arg(long)]
    interpolant: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct WeightsArgs {
    /// Dimension per direction, e.g. `1,2,3`.
    #[arg(long)]
    dims: String,
    /// Rate gain per direction (default 25/8 each).
    #[arg(long)]
    gains: Option<String>,
    /// accuracy, dof, cost-benefit, all, or an explicit list.
    #[arg(long, default_value = "all")]
    weights: String,
}

#[derive(Args)]
struct InfoArgs {
    /// Interpolant directory to summarize.
    dir: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    /// Study name, or `all`.
    name: Option<String>,
    /// JSON study configuration (overrides the name).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the Markdown report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the default configuration of the study and exit.
    #[arg(long)]
    dump_defaults: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()));
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot start {t} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Subsample(a) => cmd_subsample(a),
        Command::Interpolate(a) => cmd_interpolate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Convergence(a) => cmd_convergence(a),
        Command::Weights(a) => cmd_weights(a),
        Command::Info(a) => cmd_info(a),
        Command::Study(a) => cmd_study(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn warn(msg: String) {
    eprintln!("warning: {msg}");
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes to `out` when given, otherwise to stdout.
fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, contents),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(contents.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn cmd_subsample(a: SubsampleArgs) -> Result<ExitCode> {
    let x = read_points(&a.points).map_err(|e| e.context("geometry: reading points"))?;
    let (lo, hi) = (vec![0.0; x.dim()], vec![1.0; x.dim()]);
    let bounds = a.unit_box.then_some((lo.as_slice(), hi.as_slice()));
    let h = build_hierarchy_in(&x, a.levels, a.seed, bounds)
        .map_err(|e| e.context(format!("geometry: subsampling {}", a.points.display())))?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut stats = String::from("level,count,q,h\n");
    for j in 0..=a.levels {
        let mut lines = String::new();
        for i in h.level_indices(j) {
            let _ = writeln!(lines, "{i}");
        }
        write_file(&a.out.join(format!("level_{j}.txt")), &lines)?;
        let s = h.stats()[j];
        let q = s.separation_radius.map(|q| format!("{q:.6e}")).unwrap_or_default();
        let _ = writeln!(stats, "{j},{},{q},{:.6e}", s.count, s.fill_distance);
    }
    write_file(&a.out.join("stats.csv"), &stats)?;
    let _ = writeln!(stats, "fingerprint {}", h.fingerprint());
    print!("{stats}");
    Ok(ExitCode::SUCCESS)
}

/// Configuration from `--config` (or `base`) with the flags applied on top.
fn resolve(args: &RunArgs, base: Option<RunConfig>) -> Result<RunConfig> {
    let mut c = match (&args.config, base) {
        (Some(p), _) => RunConfig::read(p)?,
        (None, Some(b)) => b,
        (None, None) => RunConfig::default(),
    };
    if !args.directions.is_empty() || !args.points.is_empty() {
        c.directions = args
            .directions
            .iter()
            .map(|s| DirectionConfig::parse(s))
            .collect::<Result<Vec<_>>>()?;
        c.directions
            .extend(args.points.iter().cloned().map(DirectionConfig::points_file));
    }
    match args.kernel.len() {
        0 => {}
        1 => {
            for d in &mut c.directions {
                apply_kernel_spec(d, &args.kernel[0])?;
            }
        }
        n if n == c.directions.len() => {
            for (d, k) in c.directions.iter_mut().zip(&args.kernel) {
                apply_kernel_spec(d, k)?;
            }
        }
        n => {
            return Err(Error::invalid(format!(
                "{n} --kernel options for {} directions (give one, or one per direction)",
                c.directions.len()
            )))
        }
    }
    if let Some(l) = &args.levels {
        let (lo, hi) = parse_levels(l)?;
        c.min_level = lo;
        c.level = hi;
    }
    if let Some(w) = &args.weights {
        c.weights = w.clone();
    }
    if let Some(g) = &args.gains {
        c.gains = Some(parse_list(g)?);
    }
    if let Some(f) = &args.function {
        c.function = f.clone();
        c.values = None;
    }
    if let Some(v) = &args.values {
        c.values = Some(v.clone());
    }
    let e = &args.eval;
    if e.eval_grid.is_some() || e.eval_random.is_some() || e.eval_points.is_some() {
        c.eval.grid = e.eval_grid;
        c.eval.random = e.eval_random;
        c.eval.points = e.eval_points.clone();
    }
    if let Some(i) = e.inset {
        c.eval.inset = i;
    }
    if let Some(s) = e.seed {
        c.eval.seed = s;
    }
    if let Some(p) = args.panels {
        c.panels = Some(p);
    }
    if let Some(b) = args.budget {
        c.budget = b;
    }
    if let Some(o) = &args.out {
        c.out = Some(o.clone());
    }
    Ok(c)
}

/// Absolute paths, so the stored configuration works from any directory.
fn absolutize(c: &mut RunConfig) -> Result<()> {
    let fix = |p: &mut PathBuf| -> Result<()> {
        *p = std::fs::canonicalize(&*p).map_err(|e| Error::io(&*p, e))?;
        Ok(())
    };
    for d in &mut c.directions {
        if let Some(p) = d.path.as_mut() {
            fix(p)?;
        }
    }
    if let Some(v) = c.values.as_mut() {
        fix(v)?;
    }
    Ok(())
}

enum Data {
    Function(TestFunction),
    Table(ValueTable),
}

fn load_data(c: &RunConfig) -> Result<Data> {
    match &c.values {
        Some(p) => Ok(Data::Table(
            ValueTable::read(p).map_err(|e| e.context("interpolant: reading data values"))?,
        )),
        None => Ok(Data::Function(c.function.parse()?)),
    }
}

fn cmd_interpolate(a: RunArgs) -> Result<ExitCode> {
    let mut c = resolve(&a, None)?;
    if a.dump_defaults {
        println!("{}", c.to_json());
        return Ok(ExitCode::SUCCESS);
    }
    let out = c
        .out
        .clone()
        .ok_or_else(|| Error::invalid("interpolate needs --out DIR"))?;
    absolutize(&mut c)?;
    let p = c.problem(&mut warn)?;
    if a.dump_plan {
        print!("{}", CombinationPlan::new(p.dims.len(), c.level, p.weights.clone())?.to_text());
    }
    let data = load_data(&c)?;
    let f;
    let source = match &data {
        Data::Function(t) => {
            let t = *t;
            f = move |x: &[f64]| t.eval(x);
            DataSource::Function(&f)
        }
        Data::Table(t) => DataSource::Table(t),
    };
    let interp = compute(&p.kernel, &p.hierarchies, &source, p.weights.clone(), c.level)?;
    interp.save(&out).map_err(|e| e.context("interpolant: saving"))?;
    write_file(&out.join(RUN_FILE), &format!("{}\n", c.to_json()))?;
    let r = interp.report().expect("fresh interpolant");
    println!("weights: {}", p.weights);
    println!("level: {}", c.level);
    println!("plan entries: {}", r.plan_entries);
    println!("sparse-grid points N: {}", r.degrees_of_freedom);
    println!("factorizations: {}", r.factorizations);
    println!("max unit residual: {:.3e}", r.max_unit_residual);
    println!("max jitter: {:.3e}", r.max_jitter);
    println!("max condition estimate: {:.3e}", r.max_condition_estimate);
    Ok(ExitCode::SUCCESS)
}

fn format_row(out: &mut String, x: &[f64], value: f64) {
    for v in x {
        let _ = write!(out, "{v},");
    }
    let _ = writeln!(out, "{value}");
}

fn eval_grids(c: &RunConfig, dims: &[usize], n: usize, random: bool) -> Result<Vec<PointSet>> {
    c.directions
        .iter()
        .zip(dims)
        .enumerate()
        .map(|(i, (d, &dim))| d.eval_points(dim, n, random, c.eval.inset, c.eval.seed.wrapping_add(i as u64)))
        .collect()
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let stored = RunConfig::read(&a.interpolant.join(RUN_FILE))?;
    let mut c = resolve(&a.run, Some(stored))?;
    c.out = a.run.out.clone();
    if a.run.dump_defaults {
        println!("{}", c.to_json());
        return Ok(ExitCode::SUCCESS);
    }
    let p = c.problem(&mut warn)?;
    let interp = SparseGridInterpolant::load(&a.interpolant, &p.hierarchies)?;
    let total: usize = p.dims.iter().sum();
    let mut csv = String::new();
    let header: Vec<String> = (1..=total).map(|k| format!("x{k}")).collect();
    let _ = writeln!(csv, "{},value", header.join(","));
    if let Some(path) = &c.eval.points {
        let pts = read_points(path).map_err(|e| e.context("interpolant: reading evaluation points"))?;
        let values = interp.evaluate_at_points(&pts)?;
        for (x, v) in pts.iter().zip(values) {
            format_row(&mut csv, x, v);
        }
    } else {
        let (n, random) = match (c.eval.grid, c.eval.random) {
            (Some(n), None) => (n, false),
            (None, Some(n)) => (n, true),
            (None, None) => return Err(Error::invalid("eval needs --eval-grid, --eval-random or --eval-points")),
            (Some(_), Some(_)) => return Err(Error::invalid("give either --eval-grid or --eval-random")),
        };
        let grids = eval_grids(&c, &p.dims, n, random)?;
        let u = interp.evaluate(&grids)?;
        let extents = u.shape().extents().to_vec();
        let mut x = Vec::with_capacity(total);
        for (flat, &v) in u.data().iter().enumerate() {
            let mut rest = flat;
            let mut k = vec![0; extents.len()];
            for i in (0..extents.len()).rev() {
                k[i] = rest % extents[i];
                rest /= extents[i];
            }
            x.clear();
            for (g, &ki) in grids.iter().zip(&k) {
                x.extend_from_slice(g.point(ki));
            }
            format_row(&mut csv, &x, v);
        }
    }
    emit(c.out.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_convergence(a: RunArgs) -> Result<ExitCode> {
    let c = resolve(&a, None)?;
    if a.dump_defaults {
        println!("{}", c.to_json());
        return Ok(ExitCode::SUCCESS);
    }
    if c.values.is_some() {
        return Err(Error::invalid(
            "convergence runs need a test function; data values cannot be compared away from the nodes",
        ));
    }
    let t: TestFunction = c.function.parse()?;
    let f = move |x: &[f64]| t.eval(x);
    let p = c.problem(&mut warn)?;
    if a.dump_plan {
        print!("{}", CombinationPlan::new(p.dims.len(), c.level, p.weights.clone())?.to_text());
    }
    let rms_grids = match (c.eval.random, c.eval.grid) {
        (Some(n), _) => Some(eval_grids(&c, &p.dims, n, true)?),
        (None, Some(n)) => Some(eval_grids(&c, &p.dims, n, false)?),
        (None, None) => {
            if let Some(i) = c.directions.iter().position(|d| !d.is_unit_cube()) {
                return Err(Error::invalid(format!(
                    "metrics: direction {} is not a unit cube, so L2 quadrature does not apply; use --eval-random N",
                    i + 1
                )));
            }
            None
        }
    };
    let panels = c.panels.unwrap_or_else(|| default_panels(p.dims.iter().sum()));
    let mut record = ConvergenceRecord::new();
    for level in c.min_level..=c.level {
        let interp = compute(&p.kernel, &p.hierarchies, &DataSource::Function(&f), p.weights.clone(), level)
            .map_err(|e| e.context(format!("level {level}")))?;
        let n = interp.report().expect("fresh interpolant").degrees_of_freedom;
        let err = match &rms_grids {
            Some(g) => rms_error_on_grids(&interp, &f, g)?,
            None => l2_error(&interp, &f, panels, c.budget).map_err(|e| e.context("metrics: L2 error"))?,
        };
        record.push(level, n, err)?;
    }
    emit(c.out.as_deref(), &record.to_csv())?;
    if record.len() >= 2 {
        let fit = sparse_kernel::metrics::fit_order(&record, record.len())?;
        eprintln!("fitted order over J={}..{}: {:.4}", c.min_level, c.level, fit.slope);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_weights(a: WeightsArgs) -> Result<ExitCode> {
    let dims: Vec<usize> = a
        .dims
        .split(',')
        .map(|d| {
            d.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("invalid dimension {d:?}")))
        })
        .collect::<Result<_>>()?;
    let gains = match &a.gains {
        Some(g) => parse_list(g)?,
        None => vec![2.0 * config::DEFAULT_SMOOTHNESS; dims.len()],
    };
    let mut rows: Vec<(String, WeightVector)> = Vec::new();
    if a.weights == "all" {
        for kind in WeightStrategy::ALL {
            rows.push((kind.name().into(), weight_strategy(kind, &dims, &gains)?));
        }
    } else if let Ok(kind) = a.weights.parse::<WeightStrategy>() {
        rows.push((kind.name().into(), weight_strategy(kind, &dims, &gains)?));
    } else {
        let (w, changed) = WeightVector::normalized(&parse_list(&a.weights)?)?;
        if changed {
            warn(format!("weights {:?} normalized to {w}", a.weights));
        }
        rows.push(("explicit".into(), w));
    }
    for (name, w) in rows {
        let r = predicted_rate(&dims, &gains, &w)?;
        println!(
            "{name}: w = {w}, beta = {:.6}, P = {}, R = {}, beta* = {:.6}, optimal band: {}",
            r.beta,
            r.p,
            r.r,
            r.beta_star,
            if r.in_optimal_band { "yes" } else { "no" }
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_info(a: InfoArgs) -> Result<ExitCode> {
    match a.dir {
        None => {
            println!("sgk {}", env!("CARGO_PKG_VERSION"));
            println!("threads: {}", rayon::current_num_threads());
            println!(
                "functions: {}",
                TestFunction::ALL.map(|t| t.name()).join(", ")
            );
            println!("weight strategies: {}", WeightStrategy::ALL.map(|w| w.name()).join(", "));
            println!("studies: {}", STUDY_NAMES.join(", "));
        }
        Some(dir) => {
            let c = RunConfig::read(&dir.join(RUN_FILE))?;
            let p = c.problem(&mut warn)?;
            let interp = SparseGridInterpolant::load(&dir, &p.hierarchies)?;
            println!("level: {}", interp.plan().level());
            println!("weights: {}", interp.plan().weights());
            println!("plan entries: {}", interp.plan().len());
            for (i, k) in interp.kernel().factors().iter().enumerate() {
                println!(
                    "direction {}: dim {}, beta {}, sigma {}, {} base points, fingerprint {}",
                    i + 1,
                    k.dim(),
                    k.beta(),
                    k.sigma(),
                    p.hierarchies[i].base().len(),
                    &p.hierarchies[i].fingerprint()[..16]
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_study(a: StudyArgs) -> Result<ExitCode> {
    let configs: Vec<StudyConfig> = match (&a.config, a.name.as_deref()) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            vec![StudyConfig::from_json(&text)?]
        }
        (None, Some("all")) => STUDY_NAMES
            .iter()
            .map(|n| StudyConfig::default_for(n))
            .collect::<Result<_>>()?,
        (None, Some(name)) => vec![StudyConfig::default_for(name)?],
        (None, None) => return Err(Error::invalid(format!("name a study: {} or all", STUDY_NAMES.join(", ")))),
    };
    if a.dump_defaults {
        for c in &configs {
            println!("{}", c.to_json());
        }
        return Ok(ExitCode::SUCCESS);
    }
    let mut markdown = String::new();
    let mut all_passed = true;
    for c in &configs {
        let report: StudyReport = run_config(c)?;
        all_passed &= report.passed();
        let md = report.to_markdown();
        print!("{md}");
        markdown.push_str(&md);
        markdown.push('\n');
    }
    if let Some(out) = &a.out {
        write_file(out, &markdown)?;
    }
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
