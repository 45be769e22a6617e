use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cachefair_core::crp::{build_instance, SoftLimit, UtilityDefaults};
use cachefair_core::policies::{closest_available, closest_available_per_cell, fair, unsplittable};
use cachefair_core::{extract_regions, run_distributed, CrpInstance, NetworkInstance, PolicyKind, RoutingVector, RegionMap};
use cachefair::emit::{self, Chart};
use cachefair::experiment::{self, ClosestMode, Metric, ScenarioConfig, ScenarioKind, SolverSettings, WarmStartSetting};
use cachefair::format::{self, InstanceFile, MessageStatsDto, NetworkFile, ReportFile, SolverSummary};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;

#[derive(Parser)]
#[command(name = "cachefair", version, about = "Fair routing of cache-related traffic among base stations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random network and write it as JSON.
    Gen(GenArgs),
    /// Extract coverage regions from a network and write the routing instance.
    Build(BuildArgs),
    /// Route an instance under one policy and write a report.
    Solve(SolveArgs),
    /// Run a Monte-Carlo scenario and write CSV and SVG files.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    SingleTier,
    TwoTier,
}

impl From<KindArg> for ScenarioKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::SingleTier => ScenarioKind::SingleTier,
            KindArg::TwoTier => ScenarioKind::TwoTier,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "single-tier")]
    kind: KindArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stations per km^2 (large tier for two-tier networks).
    #[arg(long, default_value_t = 8.0)]
    density: f64,
    /// Window side in km.
    #[arg(long, default_value_t = 2.5)]
    window: f64,
    /// Coverage radius in km (single-tier).
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    #[arg(long, default_value_t = 2)]
    cache_size: usize,
    #[arg(long, default_value_t = 6)]
    files: usize,
    #[arg(long, default_value_t = 1.0)]
    zipf: f64,
    /// Small stations per large station (two-tier).
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    #[arg(long, default_value_t = 0.1875)]
    large_radius: f64,
    #[arg(long, default_value_t = 0.0625)]
    small_radius: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct InstanceArgs {
    /// Grid cells per km for region extraction.
    #[arg(long, default_value_t = 400.0)]
    resolution: f64,
    /// Users per km^2.
    #[arg(long, default_value_t = 100.0)]
    user_density: f64,
    #[arg(long, default_value_t = 1.0)]
    weight: f64,
    /// Fixed utility soft limit; default is total demand over station count.
    #[arg(long)]
    soft_limit: Option<f64>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    network: PathBuf,
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Centralized,
    Distributed,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Fair,
    Closest,
    Unsplittable,
}

#[derive(Clone, Copy, ValueEnum)]
enum WarmArg {
    Zero,
    EvenSplit,
    Random,
}

#[derive(Args)]
struct SolverArgs {
    /// Absolute penalty (overrides --rho-scale).
    #[arg(long)]
    rho: Option<f64>,
    /// Penalty as a multiple of the instance's curvature scale.
    #[arg(long)]
    rho_scale: Option<f64>,
    /// Fixed Jacobi relaxation; default min(1/2, 1/largest eligible set).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eps_inner: Option<f64>,
    #[arg(long)]
    eps_outer: Option<f64>,
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Start from zero prices instead of the owners' marginal utilities.
    #[arg(long)]
    zero_prices: bool,
    #[arg(long, value_enum)]
    warm_start: Option<WarmArg>,
}

impl SolverArgs {
    fn apply(&self, s: &mut SolverSettings) {
        if self.rho.is_some() {
            s.rho = self.rho;
        }
        if let Some(c) = self.rho_scale {
            s.rho_scale = c;
        }
        if self.alpha.is_some() {
            s.alpha = self.alpha;
        }
        s.eps_inner = self.eps_inner.unwrap_or(s.eps_inner);
        s.eps_outer = self.eps_outer.unwrap_or(s.eps_outer);
        s.max_inner = self.max_inner.unwrap_or(s.max_inner);
        s.max_outer = self.max_outer.unwrap_or(s.max_outer);
        s.zero_prices |= self.zero_prices;
        if let Some(w) = self.warm_start {
            s.warm_start = match w {
                WarmArg::Zero => WarmStartSetting::Zero,
                WarmArg::EvenSplit => WarmStartSetting::EvenSplit,
                WarmArg::Random => WarmStartSetting::Random,
            };
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Network JSON; regions are extracted with the instance options.
    #[arg(long, conflicts_with = "instance", required_unless_present = "instance")]
    network: Option<PathBuf>,
    /// Instance JSON (the closest policy needs --network instead).
    #[arg(long)]
    instance: Option<PathBuf>,
    #[command(flatten)]
    build: InstanceArgs,
    #[arg(long, value_enum, default_value = "centralized")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "fair")]
    policy: PolicyArg,
    /// Closest policy per grid cell instead of per region centroid.
    #[arg(long)]
    per_cell: bool,
    /// Seeds the random warm start and the unsplittable draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write every message as JSON lines (distributed mode).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    kind: KindArg,
    /// Scenario config JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated radii in km (single-tier).
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// Comma-separated small:large density ratios (two-tier).
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    per_cell: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Build(a) => build(a),
        Command::Solve(a) => solve(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn emit_json<T: serde::Serialize>(output: Option<&Path>, value: &T) -> anyhow::Result<()> {
    match output {
        Some(path) => format::write_json(path, value)?,
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, value)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn gen(a: GenArgs) -> anyhow::Result<()> {
    let kind = ScenarioKind::from(a.kind);
    let cfg = ScenarioConfig {
        density: a.density,
        window: a.window,
        file_count: a.files,
        zipf_s: a.zipf,
        cache_size: a.cache_size,
        radii: vec![a.radius],
        ratios: vec![a.ratio],
        large_radius: a.large_radius,
        small_radius: a.small_radius,
        ..ScenarioConfig::for_kind(kind)
    };
    cfg.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let net = cfg.network(cfg.sweep()[0], &mut rng)?;
    emit_json(a.output.as_deref(), &NetworkFile::from(&net))
}

fn load_network(path: &Path) -> anyhow::Result<NetworkInstance> {
    let file: NetworkFile = format::read_json(path)?;
    NetworkInstance::try_from(file).with_context(|| format!("{}", path.display()))
}

fn instance_from_network(net: &NetworkInstance, a: &InstanceArgs) -> anyhow::Result<(RegionMap, CrpInstance)> {
    let regions = extract_regions(&net.stations, net.window, a.resolution)?;
    let defaults = UtilityDefaults {
        weight: a.weight,
        soft_limit: a.soft_limit.map_or(SoftLimit::FairShare, SoftLimit::Fixed),
    };
    let inst = build_instance(net, &regions, a.user_density, defaults)?;
    Ok((regions, inst))
}

fn build(a: BuildArgs) -> anyhow::Result<()> {
    let net = load_network(&a.network)?;
    let (_, inst) = instance_from_network(&net, &a.instance)?;
    emit_json(a.output.as_deref(), &InstanceFile::from(&inst))
}

fn solve(a: SolveArgs) -> anyhow::Result<()> {
    let (network, inst) = match (&a.network, &a.instance) {
        (Some(path), _) => {
            let net = load_network(path)?;
            let (regions, inst) = instance_from_network(&net, &a.build)?;
            (Some((net, regions)), inst)
        }
        (None, Some(path)) => {
            let file: InstanceFile = format::read_json(path)?;
            (None, CrpInstance::try_from(file).with_context(|| format!("{}", path.display()))?)
        }
        (None, None) => bail!("either --network or --instance is required"),
    };
    if a.trace.is_some() && a.mode != Mode::Distributed {
        bail!("--trace needs --mode distributed");
    }
    let mut settings = SolverSettings { seed: a.seed, ..SolverSettings::default() };
    a.solver.apply(&mut settings);
    let cfg = settings.to_config()?;

    let policy = match a.policy {
        PolicyArg::Fair => PolicyKind::Fair,
        PolicyArg::Closest => PolicyKind::ClosestAvailable,
        PolicyArg::Unsplittable => PolicyKind::Unsplittable,
    };
    let started = std::time::Instant::now();
    let (routing, converged, solver, messages): (RoutingVector, bool, _, _) = match policy {
        PolicyKind::Fair if a.mode == Mode::Distributed => {
            let out = run_distributed(&inst, &cfg, a.trace.is_some())?;
            if let (Some(path), Some(trace)) = (&a.trace, &out.trace) {
                format::write_trace(path, trace)?;
            }
            let mut y = out.report.routing.clone();
            y.complete(&inst);
            let stats = MessageStatsDto::new(&out.stats, a.trace.is_some());
            (y, out.report.converged, Some(SolverSummary::from(&out.report)), Some(stats))
        }
        PolicyKind::Fair => {
            let out = fair(&inst, &cfg)?;
            (out.routing, out.report.converged, Some(SolverSummary::from(&out.report)), None)
        }
        PolicyKind::ClosestAvailable => {
            let Some((net, regions)) = &network else {
                bail!("the closest policy needs --network for station and region positions");
            };
            let y = if a.per_cell {
                closest_available_per_cell(&inst, net, a.build.resolution)?
            } else {
                closest_available(&inst, net, regions)?
            };
            (y, true, None, None)
        }
        PolicyKind::Unsplittable => (unsplittable(&inst, a.seed), true, None, None),
    };
    let mode = match a.mode {
        Mode::Centralized => "centralized",
        Mode::Distributed => "distributed",
    };
    eprintln!("{policy} ({mode}) in {:.3} s", started.elapsed().as_secs_f64());
    if !converged {
        eprintln!("warning: the solver stopped at its iteration cap without converging");
    }
    let report = ReportFile {
        policy: policy.name().into(),
        mode: mode.into(),
        converged,
        objective: cachefair_core::crp::objective(&inst, &routing),
        total_routed: routing.as_slice().iter().sum(),
        solver,
        routing: format::routes(&inst, &routing),
        messages,
    };
    emit_json(a.output.as_deref(), &report)
}

fn experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let kind = ScenarioKind::from(a.kind);
    let mut cfg = match &a.config {
        Some(path) => {
            let cfg: ScenarioConfig = format::read_json(path)?;
            if cfg.kind != kind {
                bail!("{} describes a {} scenario", path.display(), cfg.kind.name());
            }
            cfg
        }
        None => ScenarioConfig::for_kind(kind),
    };
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = a.radii {
        cfg.radii = r;
    }
    if let Some(r) = a.ratios {
        cfg.ratios = r;
    }
    if a.per_cell {
        cfg.closest = ClosestMode::PerCell;
    }
    a.solver.apply(&mut cfg.solver);
    cfg.validate()?;

    let threads = experiment::threads_from_env()?;
    let started = std::time::Instant::now();
    let outcome = experiment::run_scenario(&cfg, threads)?;
    for s in &outcome.summaries {
        eprintln!(
            "sweep {} (x = {:.4}): {} runs, {} skipped, {} not converged",
            s.sweep_value, s.axis_value, s.completed, s.skipped, s.unconverged
        );
    }
    eprintln!("{} runs on {threads} threads in {:.1} s", outcome.records.len(), started.elapsed().as_secs_f64());

    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("{}", a.out_dir.display()))?;
    let name = kind.name();
    emit::write_csv(&a.out_dir.join(format!("{name}.csv")), &outcome.rows)?;
    match kind {
        ScenarioKind::SingleTier => {
            let chart = Chart {
                title: "Minimum and maximum load share of a station",
                x_label: "mean coverage",
                y_label: "load share",
                metrics: &[Metric::MaxShare, Metric::MinShare],
            };
            emit::write_svg(&a.out_dir.join(format!("{name}-load-share.svg")), &outcome.rows, &chart)?;
        }
        ScenarioKind::TwoTier => {
            let large = Chart {
                title: "Aggregate traffic share of large stations",
                x_label: "small stations per large station",
                y_label: "large-tier share",
                metrics: &[Metric::LargeShare],
            };
            let small = Chart {
                title: "Minimum and maximum load share of a small station",
                x_label: "small stations per large station",
                y_label: "load share",
                metrics: &[Metric::MaxShare, Metric::MinShare],
            };
            emit::write_svg(&a.out_dir.join(format!("{name}-large-share.svg")), &outcome.rows, &large)?;
            emit::write_svg(&a.out_dir.join(format!("{name}-small-load-share.svg")), &outcome.rows, &small)?;
        }
    }
    Ok(())
}
