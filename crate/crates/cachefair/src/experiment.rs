//! Monte-Carlo scenarios: single-tier radius sweeps and two-tier density
//! ratio sweeps, each run under all three policies.

use cachefair_core::crp::{build_instance, UtilityDefaults};
use cachefair_core::netgen::{generate_single_tier, generate_two_tier, TwoTierLayout};
use cachefair_core::policies::{closest_available, closest_available_per_cell, fair, unsplittable, PolicyKind};
use cachefair_core::{
    aggregate_share, extract_regions, load_shares, mean_coverage, share_extremes, Catalog, CrpInstance,
    InitialPrices, NetworkInstance, Penalty, Relaxation, RoutingVector, SolverConfig, StationId, Tier, WarmStart,
    Window,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest disagreement in total routed volume tolerated between policies.
pub const CONSERVATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    SingleTier,
    TwoTier,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::SingleTier => "single-tier",
            ScenarioKind::TwoTier => "two-tier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosestMode {
    /// Whole region-file to the station nearest the region centroid.
    Centroid,
    /// Per grid cell, then aggregated.
    PerCell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmStartSetting {
    Zero,
    EvenSplit,
    Random,
}

/// Solver settings as they appear in config files and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Absolute penalty. When absent, `rho_scale` times the instance's
    /// curvature scale is used.
    pub rho: Option<f64>,
    pub rho_scale: f64,
    /// Fixed relaxation. When absent, `min(1/2, 1/k)` with `k` the largest
    /// eligible set.
    pub alpha: Option<f64>,
    pub eps_inner: f64,
    pub eps_outer: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub zero_prices: bool,
    pub warm_start: WarmStartSetting,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverConfig::default();
        let rho_scale = match d.rho {
            Penalty::Relative(c) => c,
            Penalty::Absolute(_) => unreachable!("the default penalty is relative"),
        };
        Self {
            rho: None,
            rho_scale,
            alpha: None,
            eps_inner: d.eps_inner,
            eps_outer: d.eps_outer,
            max_inner: d.max_inner,
            max_outer: d.max_outer,
            zero_prices: d.initial_prices == InitialPrices::Zero,
            warm_start: match d.warm_start {
                WarmStart::Zero => WarmStartSetting::Zero,
                WarmStart::EvenSplit => WarmStartSetting::EvenSplit,
                WarmStart::Random => WarmStartSetting::Random,
            },
            seed: d.seed,
        }
    }
}

impl SolverSettings {
    pub fn to_config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            rho: self.rho.map_or(Penalty::Relative(self.rho_scale), Penalty::Absolute),
            alpha: self.alpha.map_or(Relaxation::InverseMaxEligible, Relaxation::Fixed),
            initial_prices: if self.zero_prices { InitialPrices::Zero } else { InitialPrices::OwnerMarginal },
            warm_start: match self.warm_start {
                WarmStartSetting::Zero => WarmStart::Zero,
                WarmStartSetting::EvenSplit => WarmStart::EvenSplit,
                WarmStartSetting::Random => WarmStart::Random,
            },
            eps_inner: self.eps_inner,
            eps_outer: self.eps_outer,
            max_inner: self.max_inner,
            max_outer: self.max_outer,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub runs: usize,
    pub base_seed: u64,
    /// Stations per km^2 (the large tier in two-tier runs).
    pub density: f64,
    /// Side of the square window in km.
    pub window: f64,
    pub file_count: usize,
    pub zipf_s: f64,
    /// Files per station cache in single-tier runs.
    pub cache_size: usize,
    /// Coverage radii in km (single-tier sweep).
    pub radii: Vec<f64>,
    /// Small-per-large station density ratios (two-tier sweep).
    pub ratios: Vec<f64>,
    pub large_radius: f64,
    pub small_radius: f64,
    /// Users per km^2.
    pub user_density: f64,
    /// Grid cells per km.
    pub resolution: f64,
    pub closest: ClosestMode,
    pub solver: SolverSettings,
}

impl ScenarioConfig {
    pub fn single_tier() -> Self {
        Self {
            kind: ScenarioKind::SingleTier,
            runs: 100,
            base_seed: 1,
            density: 8.0,
            window: 2.5,
            file_count: 6,
            zipf_s: 1.0,
            cache_size: 2,
            radii: vec![0.0625, 0.125, 0.1875, 0.25, 0.3125, 0.375, 0.4375, 0.5],
            ratios: vec![],
            large_radius: 0.1875,
            small_radius: 0.0625,
            user_density: 100.0,
            resolution: 400.0,
            closest: ClosestMode::Centroid,
            solver: SolverSettings::default(),
        }
    }

    pub fn two_tier() -> Self {
        Self { kind: ScenarioKind::TwoTier, radii: vec![], ratios: vec![0.5, 1.0, 2.0, 4.0, 8.0], ..Self::single_tier() }
    }

    pub fn for_kind(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::SingleTier => Self::single_tier(),
            ScenarioKind::TwoTier => Self::two_tier(),
        }
    }

    pub fn sweep(&self) -> &[f64] {
        match self.kind {
            ScenarioKind::SingleTier => &self.radii,
            ScenarioKind::TwoTier => &self.ratios,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.sweep().is_empty() {
            return bad(format!("the {} sweep is empty", self.kind.name()));
        }
        if let Some(v) = self.sweep().iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return bad(format!("sweep value {v} is not positive"));
        }
        for (name, v) in [
            ("density", self.density),
            ("window", self.window),
            ("user density", self.user_density),
            ("resolution", self.resolution),
            ("large radius", self.large_radius),
            ("small radius", self.small_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if self.file_count == 0 || (self.kind == ScenarioKind::SingleTier && self.cache_size == 0) {
            return bad("file count and cache size must be at least 1".into());
        }
        self.solver.to_config()?;
        Ok(())
    }

    /// Seed of run `run`; the same at every sweep point.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }

    /// x-axis value of a sweep point: mean coverage for radii, the ratio
    /// itself for two-tier runs.
    pub fn axis_value(&self, sweep_value: f64) -> f64 {
        match self.kind {
            ScenarioKind::SingleTier => mean_coverage(self.density, sweep_value),
            ScenarioKind::TwoTier => sweep_value,
        }
    }

    pub fn network(&self, sweep_value: f64, rng: &mut ChaCha8Rng) -> Result<NetworkInstance> {
        let window = Window::square(self.window)?;
        let catalog = Catalog::zipf(self.file_count, self.zipf_s)?;
        Ok(match self.kind {
            ScenarioKind::SingleTier => {
                generate_single_tier(rng, window, self.density, sweep_value, catalog, self.cache_size)?
            }
            ScenarioKind::TwoTier => {
                let layout = TwoTierLayout {
                    large_density: self.density,
                    small_density: self.density * sweep_value,
                    large_radius: self.large_radius,
                    small_radius: self.small_radius,
                };
                generate_two_tier(rng, window, layout, catalog)?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Largest load share (among small stations in two-tier runs).
    MaxShare,
    /// Smallest load share (among small stations in two-tier runs).
    MinShare,
    /// Summed share of the large tier.
    LargeShare,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::MaxShare, Metric::MinShare, Metric::LargeShare];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MaxShare => "max_share",
            Metric::MinShare => "min_share",
            Metric::LargeShare => "large_share",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Metrics of one policy in one run; `None` where a metric is undefined
/// (no small stations, or a single-tier run for the large-tier share).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub max_share: Option<f64>,
    pub min_share: Option<f64>,
    pub large_share: Option<f64>,
    pub total_routed: f64,
}

impl PolicyMetrics {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::MaxShare => self.max_share,
            Metric::MinShare => self.min_share,
            Metric::LargeShare => self.large_share,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sweep_index: usize,
    pub run: usize,
    pub seed: u64,
    pub stations: usize,
    pub region_files: usize,
    pub fair_converged: bool,
    pub fair_outer_iterations: usize,
    /// In [`PolicyKind::ALL`] order.
    pub policies: [PolicyMetrics; 3],
}

/// One aggregated line of the CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub sweep: f64,
    pub policy: PolicyKind,
    pub metric: Metric,
    pub mean: f64,
    pub stderr: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub sweep_value: f64,
    pub axis_value: f64,
    pub completed: usize,
    /// Runs without stations or region-files.
    pub skipped: usize,
    pub unconverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub rows: Vec<MetricRow>,
    pub records: Vec<RunRecord>,
    pub summaries: Vec<SweepSummary>,
}

/// Number of worker threads: `CACHEFAIR_THREADS` if set, else all cores.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("CACHEFAIR_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("CACHEFAIR_THREADS = {v:?} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Run every (sweep point, run) pair on `threads` workers. Results are
/// gathered in (sweep point, run) order, so the outcome does not depend on
/// the thread count.
pub fn run_scenario(cfg: &ScenarioConfig, threads: usize) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let solver = cfg.solver.to_config()?;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.sweep().len()).flat_map(|p| (0..cfg.runs).map(move |r| (p, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<Option<RunRecord>>> =
        pool.install(|| jobs.par_iter().map(|&(p, r)| run_once(cfg, &solver, p, r)).collect());

    let mut records = Vec::new();
    let mut summaries: Vec<SweepSummary> = cfg
        .sweep()
        .iter()
        .map(|&v| SweepSummary { sweep_value: v, axis_value: cfg.axis_value(v), completed: 0, skipped: 0, unconverged: 0 })
        .collect();
    for ((p, _), result) in jobs.iter().zip(results) {
        match result? {
            Some(record) => {
                summaries[*p].completed += 1;
                summaries[*p].unconverged += usize::from(!record.fair_converged);
                records.push(record);
            }
            None => summaries[*p].skipped += 1,
        }
    }
    let rows = aggregate(cfg, &summaries, &records);
    Ok(ScenarioOutcome { rows, records, summaries })
}

/// One run at one sweep point. `None` for a degenerate network.
pub fn run_once(cfg: &ScenarioConfig, solver: &SolverConfig, sweep_index: usize, run: usize) -> Result<Option<RunRecord>> {
    let seed = cfg.run_seed(run);
    let fail = |what: String| Error::Run { run, seed, what };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = cfg.network(cfg.sweep()[sweep_index], &mut rng)?;
    let pick_seed = rng.next_u64();
    if net.stations.is_empty() {
        return Ok(None);
    }
    let regions = extract_regions(&net.stations, net.window, cfg.resolution)?;
    let inst = build_instance(&net, &regions, cfg.user_density, UtilityDefaults::default())?;
    if inst.is_empty() {
        return Ok(None);
    }

    let fair = fair(&inst, solver)?;
    let closest = match cfg.closest {
        ClosestMode::Centroid => closest_available(&inst, &net, &regions)?,
        ClosestMode::PerCell => closest_available_per_cell(&inst, &net, cfg.resolution)?,
    };
    let random = unsplittable(&inst, pick_seed);
    let tiers: Vec<(StationId, Tier)> = net.stations.iter().map(|s| (s.id, s.tier)).collect();
    let policies = [&fair.routing, &closest, &random].map(|y| policy_metrics(cfg.kind, &inst, y, &tiers));

    let reference = policies[0].total_routed;
    for (kind, m) in PolicyKind::ALL.iter().zip(&policies) {
        if (m.total_routed - reference).abs() > CONSERVATION_TOLERANCE {
            return Err(fail(format!("{kind} routes {} but fair routes {reference}", m.total_routed)));
        }
    }
    Ok(Some(RunRecord {
        sweep_index,
        run,
        seed,
        stations: inst.station_count(),
        region_files: inst.region_file_count(),
        fair_converged: fair.report.converged,
        fair_outer_iterations: fair.report.outer_iterations,
        policies,
    }))
}

fn policy_metrics(kind: ScenarioKind, inst: &CrpInstance, y: &RoutingVector, tiers: &[(StationId, Tier)]) -> PolicyMetrics {
    let shares = load_shares(inst, y);
    let total_routed = y.as_slice().iter().sum();
    let tier_of = |id: StationId| tiers.binary_search_by_key(&id, |t| t.0).map(|k| tiers[k].1).ok();
    match kind {
        ScenarioKind::SingleTier => {
            let extremes = share_extremes(&shares, |_| true);
            PolicyMetrics {
                max_share: extremes.map(|e| e.1),
                min_share: extremes.map(|e| e.0),
                large_share: None,
                total_routed,
            }
        }
        ScenarioKind::TwoTier => {
            let extremes = share_extremes(&shares, |id| tier_of(id) == Some(Tier::Small));
            PolicyMetrics {
                max_share: extremes.map(|e| e.1),
                min_share: extremes.map(|e| e.0),
                large_share: (!shares.is_empty()).then(|| aggregate_share(&shares, |id| tier_of(id) == Some(Tier::Large))),
                total_routed,
            }
        }
    }
}

/// Mean and standard error (sample deviation over `sqrt(n)`); the error is
/// zero for a single value.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Rows in (sweep point, policy, metric) order. Metrics without any defined
/// value at a sweep point are left out.
pub fn aggregate(cfg: &ScenarioConfig, summaries: &[SweepSummary], records: &[RunRecord]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (p, summary) in summaries.iter().enumerate() {
        for (k, &policy) in PolicyKind::ALL.iter().enumerate() {
            for metric in Metric::ALL {
                if metric == Metric::LargeShare && cfg.kind == ScenarioKind::SingleTier {
                    continue;
                }
                let values: Vec<f64> =
                    records.iter().filter(|r| r.sweep_index == p).filter_map(|r| r.policies[k].get(metric)).collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, stderr) = mean_stderr(&values);
                rows.push(MetricRow { sweep: summary.axis_value, policy, metric, mean, stderr, runs: values.len() });
            }
        }
    }
    rows
}
