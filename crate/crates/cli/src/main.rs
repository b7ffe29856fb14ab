//! `sctm` command-line harness: simulation, threshold calibration, rule
//! comparison, response grids and level-set estimation, all writing CSV plus a
//! run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use sctm::active::{grid_2d, run_active_learning, sandwich_sets, DesignBox, IterationReport, LevelSetEstimate, PointRecord};
use sctm::evaluation::{calibrate_threshold, UtilityFn};
use sctm::scenario::{bundled_source, mean_and_se, RuleConfig, Scenario, ScenarioConfig, ScenarioSimulator};
use sctm::{parallel, Error};

#[derive(Parser, Debug)]
#[command(name = "sctm", version, about = "Stochastic cell transmission simulation and acceptable-design estimation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file, or the name of a bundled scenario (`urban`, `highway`).
    #[arg(long, global = true)]
    config: Option<String>,
    /// Master seed; defaults to the scenario's own.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replicates (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Named scenario variant, e.g. `open` for the highway.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Performance measure by name (default: the first one in the scenario).
    #[arg(long, global = true)]
    measure: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run replicates at one design and write the statistic of each.
    Simulate(SimulateArgs),
    /// Run the active-learning loop of the scenario's learning block.
    EstimateLevelset(LevelsetArgs),
    /// Compute benchmark thresholds for every utility.
    Calibrate,
    /// Compare interaction rules at one or more designs.
    BenchmarkCompare(CompareArgs),
    /// Mean statistic on a regular grid over two design parameters.
    ExportGrid(GridArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Comma-separated design vector (default: the scenario default).
    #[arg(long, value_parser = parse_design)]
    design: Option<Design>,
    #[arg(long, default_value_t = 1)]
    reps: u64,
    #[arg(long)]
    rule: Option<String>,
    /// Switch all sources and sinks off.
    #[arg(long)]
    closed: bool,
    /// Also write the density and flow series of replicate 0.
    #[arg(long)]
    trajectory: bool,
}

#[derive(Args, Debug)]
struct LevelsetArgs {
    /// Override the threshold.
    #[arg(long)]
    gamma: Option<f64>,
    /// Run only the first `n` iterations of the schedule.
    #[arg(long)]
    iterations: Option<usize>,
    /// Raster resolution per axis.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Design vector; repeat for several rows (default: the scenario default).
    #[arg(long, value_parser = parse_design)]
    design: Vec<Design>,
    #[arg(long, default_value_t = 500)]
    reps: u64,
    /// Rules to compare, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "dpf,cooperative")]
    rules: Vec<String>,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// The two design parameters spanning the grid, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1, required = true)]
    axes: Vec<String>,
    /// Points per axis.
    #[arg(long, default_value_t = 11)]
    res: usize,
    #[arg(long, default_value_t = 50)]
    reps: u64,
    /// Values of the remaining coordinates (default: the scenario default).
    #[arg(long, value_parser = parse_design)]
    design: Option<Design>,
    #[arg(long)]
    rule: Option<String>,
}

#[derive(Clone, Debug)]
struct Design(Vec<f64>);

fn parse_design(s: &str) -> std::result::Result<Design, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad design coordinate `{t}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(Design)
}

/// Failure with its exit code: 2 for configuration problems, 3 for everything
/// that goes wrong while computing or writing results.
#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Runtime(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(format!("json: {e}"))
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let workers = cli.common.workers;
    match parallel::with_workers(workers, || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("sctm: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Res<()> {
    let mut ctx = Context::new(&cli.common)?;
    match &cli.command {
        Command::Simulate(a) => simulate(&mut ctx, a),
        Command::EstimateLevelset(a) => estimate_levelset(&mut ctx, a),
        Command::Calibrate => calibrate(&mut ctx),
        Command::BenchmarkCompare(a) => benchmark_compare(&mut ctx, a),
        Command::ExportGrid(a) => export_grid(&mut ctx, a),
    }
}

fn load_config(spec: &str) -> Res<ScenarioConfig> {
    let path = Path::new(spec);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {spec}: {e}")))?
    } else if let Some(t) = bundled_source(spec) {
        t.to_string()
    } else {
        return Err(Failure::Config(format!("`{spec}` is neither a file nor a bundled scenario")));
    };
    ScenarioConfig::from_json(&text).map_err(|e| Failure::Config(format!("{spec}: {e}")))
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    iteration: Option<usize>,
}

#[derive(Serialize)]
struct Timing {
    stage: String,
    seconds: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    status: &'a str,
    software_version: &'static str,
    config_sha256: &'a str,
    seed: u64,
    variant: Option<&'a str>,
    measure: Option<&'a str>,
    workers: usize,
    arguments: Vec<String>,
    files: &'a [FileEntry],
    timings: &'a [Timing],
}

/// Shared state of one invocation: resolved config, output directory and the
/// growing file index of the manifest.
struct Context {
    config: ScenarioConfig,
    config_hash: String,
    seed: u64,
    variant: Option<String>,
    measure: Option<String>,
    out: PathBuf,
    files: Vec<FileEntry>,
    timings: Vec<Timing>,
    started: Instant,
}

impl Context {
    fn new(c: &Common) -> Res<Self> {
        let spec = c.config.as_deref().ok_or_else(|| Failure::Config("--config is required".into()))?;
        let mut config = load_config(spec)?;
        if let Some(s) = c.seed {
            config.seed = s;
        }
        let seed = config.seed;
        fs::create_dir_all(&c.out_dir)?;
        Ok(Context {
            config,
            config_hash: String::new(),
            seed,
            variant: c.variant.clone(),
            measure: c.measure.clone(),
            out: c.out_dir.clone(),
            files: Vec::new(),
            timings: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Freezes the configuration: writes it next to the results and hashes it.
    fn freeze(&mut self) -> Res<()> {
        let text = self.config.to_json()?;
        self.config_hash = sha256(text.as_bytes());
        self.write_file("config.json", text.as_bytes(), None)
    }

    fn scenario(&self) -> Res<Scenario> {
        Ok(Scenario::new(self.config.clone(), self.variant.as_deref())?)
    }

    fn write_file(&mut self, name: &str, bytes: &[u8], iteration: Option<usize>) -> Res<()> {
        fs::write(self.out.join(name), bytes)?;
        let entry = FileEntry { name: name.to_string(), sha256: sha256(bytes), iteration };
        match self.files.iter_mut().find(|f| f.name == name) {
            Some(f) => *f = entry,
            None => self.files.push(entry),
        }
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>], iteration: Option<usize>) -> Res<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::Runtime(format!("csv: {e}")))?;
        self.write_file(name, &bytes, iteration)
    }

    fn lap(&mut self, stage: impl Into<String>, since: Instant) {
        self.timings.push(Timing { stage: stage.into(), seconds: since.elapsed().as_secs_f64() });
    }

    fn manifest(&mut self, command: &str, status: &str) -> Res<()> {
        let total = self.started.elapsed().as_secs_f64();
        let mut timings: Vec<Timing> = self.timings.iter().map(|t| Timing { stage: t.stage.clone(), seconds: t.seconds }).collect();
        timings.push(Timing { stage: "total".into(), seconds: total });
        let m = Manifest {
            command,
            status,
            software_version: env!("CARGO_PKG_VERSION"),
            config_sha256: &self.config_hash,
            seed: self.seed,
            variant: self.variant.as_deref(),
            measure: self.measure.as_deref(),
            workers: parallel::workers(),
            arguments: std::env::args().skip(1).collect(),
            files: &self.files,
            timings: &timings,
        };
        fs::write(self.out.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }
}

fn sha256(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn design_or_default(d: Option<&Design>, s: &Scenario) -> Res<Vec<f64>> {
    let k = d.map(|d| d.0.clone()).unwrap_or_else(|| s.design().default.clone());
    check_design(&k, s)?;
    Ok(k)
}

fn check_design(k: &[f64], s: &Scenario) -> Res<()> {
    let d = s.design();
    if k.len() != d.dim() {
        return Err(Failure::Config(format!("design has {} coordinates, expected {} ({})", k.len(), d.dim(), d.names.join(","))));
    }
    if !d.contains(k) {
        return Err(Failure::Config(format!("design {k:?} lies outside the design space")));
    }
    Ok(())
}

fn rule_or_default(name: Option<&str>, cfg: &ScenarioConfig) -> Res<RuleConfig> {
    Ok(match name {
        Some(n) => RuleConfig::parse(n)?,
        None => cfg.run.rule,
    })
}

fn simulate(ctx: &mut Context, a: &SimulateArgs) -> Res<()> {
    if a.reps == 0 {
        return Err(Failure::Config("--reps must be at least 1".into()));
    }
    ctx.freeze()?;
    let mut scenario = ctx.scenario()?;
    if a.closed {
        scenario = scenario.closed();
    }
    let k = design_or_default(a.design.as_ref(), &scenario)?;
    let rule_cfg = rule_or_default(a.rule.as_deref(), &ctx.config)?;
    let rule = rule_cfg.build(scenario.network());
    let measure = ctx.config.measure(ctx.measure.as_deref())?.clone();
    let t = Instant::now();
    let outcomes = scenario.replicates(&k, &rule, &measure.measure, ctx.seed, a.reps)?;
    ctx.lap("replicates", t);

    let header: Vec<String> = ["replicate", &measure.name, "initial_mass", "final_mass", "net_exchange", "conservation_residual"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            vec![
                o.replicate.to_string(),
                num(o.statistic),
                num(o.initial_mass),
                num(o.final_mass),
                num(o.net_exchange),
                num(o.conservation_residual()),
            ]
        })
        .collect();
    ctx.write_csv("replicates.csv", &header, &rows, None)?;

    if a.trajectory {
        let (_, traj) = scenario.run(&k, &rule, &measure.measure, ctx.seed, 0, true)?;
        let traj = traj.ok_or_else(|| Failure::Runtime("trajectory was not recorded".into()))?;
        let net = scenario.network();
        let header: Vec<String> =
            ["t", "from", "via", "to", "density", "q_in", "q_out", "q_net"].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (t, state) in traj.states.iter().enumerate() {
            for (r, route) in net.routes().iter().enumerate() {
                let f = traj.flows.get(t);
                let flow = |v: Option<&Vec<f64>>| v.map(|x| num(x[r])).unwrap_or_default();
                rows.push(vec![
                    t.to_string(),
                    net.label(route.from).to_string(),
                    net.label(route.via).to_string(),
                    net.label(route.to).to_string(),
                    num(state.rho[r]),
                    flow(f.map(|f| &f.q_in)),
                    flow(f.map(|f| &f.q_out)),
                    flow(f.map(|f| &f.q_net)),
                ]);
            }
        }
        ctx.write_csv("trajectory.csv", &header, &rows, None)?;
    }

    let stats: Vec<f64> = outcomes.iter().map(|o| o.statistic).collect();
    let (mean, se) = mean_and_se(&stats);
    let residual = outcomes.iter().map(|o| o.conservation_residual().abs()).fold(0.0, f64::max);
    println!(
        "{} = {mean:.4} ± {se:.4} (rule {}, {} replicates, max conservation residual {residual:.3e})",
        measure.name,
        rule_name(rule_cfg),
        a.reps
    );
    ctx.manifest("simulate", "complete")
}

fn rule_name(r: RuleConfig) -> String {
    serde_json::to_value(r).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn utility_label(u: &UtilityFn) -> String {
    match *u {
        UtilityFn::Identity | UtilityFn::SquareRoot => u.name().to_string(),
        UtilityFn::Polynomial { c, alpha } | UtilityFn::Expectile { c, alpha } => format!("{}(c={c};alpha={alpha})", u.name()),
    }
}

fn calibrate(ctx: &mut Context) -> Res<()> {
    ctx.freeze()?;
    let ev = &ctx.config.evaluation;
    if ev.benchmarks.is_empty() {
        return Err(Failure::Config("scenario has no benchmarks to calibrate".into()));
    }
    let utilities = if ev.utilities.is_empty() { vec![UtilityFn::Identity] } else { ev.utilities.clone() };
    let header: Vec<String> =
        ["utility_index", "utility", "benchmark", "e", "sigma", "beta", "gamma"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (ui, u) in utilities.iter().enumerate() {
        for (bi, b) in ev.benchmarks.iter().enumerate() {
            let gamma = calibrate_threshold(b, u)?;
            println!("{:<36} benchmark {bi}: gamma = {gamma:.6}", utility_label(u));
            rows.push(vec![ui.to_string(), utility_label(u), bi.to_string(), num(b.e), num(b.sigma), num(b.beta()?), num(gamma)]);
        }
    }
    ctx.write_csv("thresholds.csv", &header, &rows, None)?;
    ctx.manifest("calibrate", "complete")
}

fn benchmark_compare(ctx: &mut Context, a: &CompareArgs) -> Res<()> {
    if a.reps == 0 || a.rules.is_empty() {
        return Err(Failure::Config("need --reps >= 1 and at least one rule".into()));
    }
    ctx.freeze()?;
    let scenario = ctx.scenario()?;
    let designs = if a.design.is_empty() { vec![design_or_default(None, &scenario)?] } else { a.design.iter().map(|d| d.0.clone()).collect() };
    for k in &designs {
        check_design(k, &scenario)?;
    }
    let rules = a.rules.iter().map(|r| RuleConfig::parse(r)).collect::<sctm::Result<Vec<_>>>()?;
    let measure = ctx.config.measure(ctx.measure.as_deref())?.clone();
    let mut header: Vec<String> = scenario.design().names.clone();
    for r in &rules {
        header.push(format!("{}_mean", rule_name(*r)));
        header.push(format!("{}_se", rule_name(*r)));
    }
    header.push("reps".into());
    let mut rows = Vec::new();
    for k in &designs {
        let mut row: Vec<String> = k.iter().map(|&x| num(x)).collect();
        let mut line = format!("{k:?}:");
        for r in &rules {
            let t = Instant::now();
            let built = r.build(scenario.network());
            let out = scenario.replicates(k, &built, &measure.measure, ctx.seed, a.reps)?;
            ctx.lap(format!("{} {k:?}", rule_name(*r)), t);
            let stats: Vec<f64> = out.iter().map(|o| o.statistic).collect();
            let (m, se) = mean_and_se(&stats);
            line.push_str(&format!("  {} {m:.3} ± {se:.3}", rule_name(*r)));
            row.push(num(m));
            row.push(num(se));
        }
        row.push(a.reps.to_string());
        println!("{line}");
        rows.push(row);
    }
    ctx.write_csv("compare.csv", &header, &rows, None)?;
    ctx.manifest("benchmark-compare", "complete")
}

fn export_grid(ctx: &mut Context, a: &GridArgs) -> Res<()> {
    if a.axes.len() != 2 || a.res < 2 || a.reps == 0 {
        return Err(Failure::Config("need exactly two --axes, --res >= 2 and --reps >= 1".into()));
    }
    ctx.freeze()?;
    let scenario = ctx.scenario()?;
    let measure = ctx.config.measure(ctx.measure.as_deref())?.clone();
    let design = ctx.config.design_for(&measure)?;
    let base = design_or_default(a.design.as_ref(), &scenario)?;
    let axes = (design.index_of(&a.axes[0])?, design.index_of(&a.axes[1])?);
    let space = DesignBox::new(design.lower.clone(), design.upper.clone())?;
    let points = grid_2d(&space, axes, &base, a.res)?;
    let rule = rule_or_default(a.rule.as_deref(), &ctx.config)?.build(scenario.network());
    let t = Instant::now();
    let mut rows = Vec::with_capacity(points.len());
    for k in &points {
        // common random numbers: every cell sees replicates 0..reps of the same seed
        let out = scenario.replicates(k, &rule, &measure.measure, ctx.seed, a.reps)?;
        let stats: Vec<f64> = out.iter().map(|o| o.statistic).collect();
        let (m, se) = mean_and_se(&stats);
        rows.push(vec![num(k[axes.0]), num(k[axes.1]), num(m), num(se), a.reps.to_string()]);
    }
    ctx.lap("grid", t);
    let header = vec![a.axes[0].clone(), a.axes[1].clone(), format!("{}_mean", measure.name), format!("{}_se", measure.name), "reps".into()];
    ctx.write_csv("grid.csv", &header, &rows, None)?;
    println!("wrote {} grid cells to {}", rows.len(), ctx.out.join("grid.csv").display());
    ctx.manifest("export-grid", "complete")
}

fn estimate_levelset(ctx: &mut Context, a: &LevelsetArgs) -> Res<()> {
    {
        let lc = ctx.config.learning.as_mut().ok_or_else(|| Failure::Config("scenario has no learning block".into()))?;
        if let Some(m) = &ctx.measure {
            lc.measure = Some(m.clone());
        }
        if let Some(g) = a.gamma {
            lc.gamma = Some(g);
        }
        if let Some(n) = a.iterations {
            if n == 0 || n > lc.iterations {
                return Err(Failure::Config(format!("--iterations must lie in 1..={}", lc.iterations)));
            }
            lc.iterations = n;
            lc.tau_fractions.truncate(n);
            lc.n_max.truncate(n);
        }
        if let Some(g) = a.grid {
            lc.grid = g;
        }
    }
    ctx.freeze()?;
    let scenario = ctx.scenario()?;
    let learning = ctx.config.resolve_learning()?;
    let names: Vec<String> = learning.active.iter().map(|&i| scenario.design().names[i].clone()).collect();
    let seed = ctx.seed;
    let sim = ScenarioSimulator::new(&scenario, &learning, seed);
    let raster = raster_points(&learning.space, learning.grid)?;
    println!(
        "learning {} over ({}) with gamma = {:.6}, {} iterations",
        learning.measure.name,
        names.join(", "),
        learning.gamma,
        learning.loop_config.iterations
    );

    let mut summary: Vec<Vec<String>> = Vec::new();
    let mut last = Instant::now();
    let mut persist = |r: &IterationReport<'_>| -> sctm::Result<()> {
        let it = r.estimate.iteration;
        let res = (|| -> Res<()> {
            ctx.lap(format!("iteration {it}"), last);
            write_dataset(ctx, &names, r.records, it)?;
            write_raster(ctx, &names, &raster, r.estimate, it)?;
            if it == 0 {
                let hyper = serde_json::json!({ "kernel": r.kernel, "standardization": r.standardization });
                ctx.write_file("hyperparameters.json", serde_json::to_string_pretty(&hyper)?.as_bytes(), None)?;
            }
            summary.push(vec![
                it.to_string(),
                r.estimate.dataset_size.to_string(),
                r.estimate.proposed.to_string(),
                num(r.estimate.error_bound),
            ]);
            let header: Vec<String> = ["iteration", "dataset_size", "proposed", "error_bound"].iter().map(|s| s.to_string()).collect();
            ctx.write_csv("iterations.csv", &header, &summary, None)?;
            ctx.manifest("estimate-levelset", "running")?;
            println!(
                "iteration {it}: {} points, error bound {:.4e}",
                r.estimate.dataset_size, r.estimate.error_bound
            );
            Ok(())
        })();
        last = Instant::now();
        res.map_err(|f| Error::Simulation(format!("persisting iteration {it}: {f}")))
    };
    let result = run_active_learning(
        &learning.loop_config,
        &learning.space,
        &sim,
        &learning.utility,
        learning.gamma,
        seed,
        &mut persist,
    );
    match result {
        Ok(_) => ctx.manifest("estimate-levelset", "complete"),
        Err(e) => {
            ctx.manifest("estimate-levelset", "failed")?;
            Err(e.into())
        }
    }
}

/// Raster of the learned box: a line in 1D, otherwise a slice through the
/// first two axes with the others at the box centre.
fn raster_points(space: &DesignBox, res: usize) -> Res<Vec<Vec<f64>>> {
    if space.dim() == 1 {
        return Ok((0..res)
            .map(|i| vec![space.lower[0] + (space.upper[0] - space.lower[0]) * i as f64 / (res - 1) as f64])
            .collect());
    }
    let centre: Vec<f64> = space.lower.iter().zip(&space.upper).map(|(l, u)| 0.5 * (l + u)).collect();
    Ok(grid_2d(space, (0, 1), &centre, res)?)
}

fn write_dataset(ctx: &mut Context, names: &[String], records: &[PointRecord], it: usize) -> Res<()> {
    let mut header = vec!["iteration".to_string(), "point".to_string()];
    header.extend(names.iter().cloned());
    header.extend(["mu_hat", "tau_sq", "n", "discarded"].iter().map(|s| s.to_string()));
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|p| {
            let mut row = vec![p.iteration.to_string(), p.point.to_string()];
            row.extend(p.k.iter().map(|&x| num(x)));
            row.extend([num(p.mu_hat), num(p.tau_sq), p.n.to_string(), p.discarded.to_string()]);
            row
        })
        .collect();
    ctx.write_csv(&format!("dataset_{it}.csv"), &header, &rows, Some(it))
}

fn write_raster(ctx: &mut Context, names: &[String], raster: &[Vec<f64>], est: &LevelSetEstimate, it: usize) -> Res<()> {
    let band = est.band()?;
    let sets = sandwich_sets(&band, est.gamma);
    let rows = parallel::map_slice(raster, |k| -> sctm::Result<Vec<String>> {
        let (m, s) = est.posterior.predict(k)?;
        let (inner, outer) = sets.membership(k)?;
        let mut row: Vec<String> = k.iter().map(|&x| num(x)).collect();
        row.extend([num(m), num(s), u8::from(m >= est.gamma).to_string(), u8::from(inner).to_string(), u8::from(outer).to_string()]);
        Ok(row)
    })
    .into_iter()
    .collect::<sctm::Result<Vec<_>>>()?;
    let mut header: Vec<String> = names.iter().take(raster.first().map_or(0, Vec::len)).cloned().collect();
    header.extend(["mean", "sd", "in_estimate", "in_inner", "in_outer"].iter().map(|s| s.to_string()));
    ctx.write_csv(&format!("grid_{it}.csv"), &header, &rows, Some(it))
}
