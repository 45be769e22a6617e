//! JSON file formats. Core types stay free of serde; these DTOs mirror them
//! and convert both ways.

use std::fs;
use std::path::Path;

use cachefair_core::agents::{Message, MessageKind, MessageStats, Phase};
use cachefair_core::crp::{RegionFile, StationSpec};
use cachefair_core::{
    Catalog, CrpInstance, DualVector, FileId, NetworkInstance, Point, RoutingVector, SolveReport, Station, StationId,
    Tier, UtilitySpec, Window,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), cause: e })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("DTOs always serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TierDto {
    Large,
    Small,
    SingleTier,
}

impl From<Tier> for TierDto {
    fn from(t: Tier) -> Self {
        match t {
            Tier::Large => TierDto::Large,
            Tier::Small => TierDto::Small,
            Tier::SingleTier => TierDto::SingleTier,
        }
    }
}

impl From<TierDto> for Tier {
    fn from(t: TierDto) -> Self {
        match t {
            TierDto::Large => Tier::Large,
            TierDto::Small => Tier::Small,
            TierDto::SingleTier => Tier::SingleTier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationDto {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub tier: TierDto,
    pub cache: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub width: f64,
    pub height: f64,
    pub popularity: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zipf_s: Option<f64>,
    pub stations: Vec<StationDto>,
}

impl From<&NetworkInstance> for NetworkFile {
    fn from(net: &NetworkInstance) -> Self {
        Self {
            width: net.window.width(),
            height: net.window.height(),
            popularity: net.catalog.popularity().to_vec(),
            zipf_s: net.catalog.zipf_s(),
            stations: net
                .stations
                .iter()
                .map(|s| StationDto {
                    id: s.id.0,
                    x: s.position.x,
                    y: s.position.y,
                    radius: s.radius,
                    tier: s.tier.into(),
                    cache: s.cached_files().iter().map(|f| f.0).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<NetworkFile> for NetworkInstance {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        let window = Window::new(file.width, file.height)?;
        let catalog = Catalog::from_popularity(file.popularity, file.zipf_s)?;
        let stations = file
            .stations
            .into_iter()
            .map(|s| {
                Station::new(StationId(s.id), Point::new(s.x, s.y), s.radius, s.tier.into(), s.cache.into_iter().map(FileId).collect())
            })
            .collect::<cachefair_core::Result<Vec<_>>>()?;
        Ok(NetworkInstance::new(window, stations, catalog)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationUtilityDto {
    pub id: u32,
    pub weight: f64,
    pub soft_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFileDto {
    pub region: Vec<u32>,
    pub file: u32,
    pub demand: f64,
    pub eligible: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub stations: Vec<StationUtilityDto>,
    pub region_files: Vec<RegionFileDto>,
}

impl From<&CrpInstance> for InstanceFile {
    fn from(inst: &CrpInstance) -> Self {
        let ids = |v: &[StationId]| v.iter().map(|s| s.0).collect();
        Self {
            stations: inst
                .stations()
                .iter()
                .map(|s| StationUtilityDto { id: s.id.0, weight: s.utility.weight(), soft_limit: s.utility.soft_limit() })
                .collect(),
            region_files: inst
                .region_files()
                .iter()
                .map(|rf| RegionFileDto { region: ids(&rf.region), file: rf.file.0, demand: rf.demand, eligible: ids(&rf.eligible) })
                .collect(),
        }
    }
}

impl TryFrom<InstanceFile> for CrpInstance {
    type Error = Error;

    fn try_from(file: InstanceFile) -> Result<Self> {
        let ids = |v: Vec<u32>| v.into_iter().map(StationId).collect();
        let stations = file
            .stations
            .into_iter()
            .map(|s| Ok(StationSpec { id: StationId(s.id), utility: UtilitySpec::weighted_log(s.weight, s.soft_limit)? }))
            .collect::<Result<Vec<_>>>()?;
        let region_files = file
            .region_files
            .into_iter()
            .map(|rf| RegionFile { region: ids(rf.region), file: FileId(rf.file), demand: rf.demand, eligible: ids(rf.eligible) })
            .collect();
        Ok(CrpInstance::new(stations, region_files)?)
    }
}

/// One routed volume `y_{m,q}`; `region_file` indexes the instance's list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteDto {
    pub station: u32,
    pub region_file: usize,
    pub value: f64,
}

pub fn routes(inst: &CrpInstance, y: &RoutingVector) -> Vec<RouteDto> {
    y.triplets(inst).into_iter().map(|(s, q, value)| RouteDto { station: s.0, region_file: q, value }).collect()
}

pub fn routing_from_routes(inst: &CrpInstance, routes: &[RouteDto]) -> Result<RoutingVector> {
    let triplets: Vec<(StationId, usize, f64)> = routes.iter().map(|r| (StationId(r.station), r.region_file, r.value)).collect();
    Ok(RoutingVector::from_triplets(inst, &triplets)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCountsDto {
    pub primal_share: u64,
    pub price_update: u64,
    pub inner_norm: u64,
    pub control: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseDto {
    Setup,
    Sweep,
    Prices,
    Gather,
    Broadcast,
}

impl From<Phase> for PhaseDto {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Setup => PhaseDto::Setup,
            Phase::Sweep => PhaseDto::Sweep,
            Phase::Prices => PhaseDto::Prices,
            Phase::Gather => PhaseDto::Gather,
            Phase::Broadcast => PhaseDto::Broadcast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundDto {
    pub round: u64,
    pub phase: PhaseDto,
    pub counts: KindCountsDto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageStatsDto {
    pub totals: KindCountsDto,
    pub total: u64,
    /// Per delivery round; only kept when a trace was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<Vec<RoundDto>>,
}

impl MessageStatsDto {
    pub fn new(stats: &MessageStats, with_rounds: bool) -> Self {
        let counts = |c: &cachefair_core::agents::KindCounts| KindCountsDto {
            primal_share: c.primal_share,
            price_update: c.price_update,
            inner_norm: c.inner_norm,
            control: c.control,
        };
        Self {
            totals: counts(&stats.totals),
            total: stats.totals.total(),
            rounds: with_rounds.then(|| {
                stats.rounds.iter().map(|r| RoundDto { round: r.round, phase: r.phase.into(), counts: counts(&r.counts) }).collect()
            }),
        }
    }
}

/// Output of `cachefair solve`. Deliberately free of wall-clock data so that
/// reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub policy: String,
    pub mode: String,
    pub converged: bool,
    pub objective: f64,
    pub total_routed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSummary>,
    pub routing: Vec<RouteDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub messages: Option<MessageStatsDto>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub rho: f64,
    pub alpha: f64,
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    pub inner_cap_hits: usize,
    pub residual_history: Vec<f64>,
    pub duals: Vec<f64>,
}

impl From<&SolveReport> for SolverSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            rho: r.rho,
            alpha: r.alpha,
            outer_iterations: r.outer_iterations,
            inner_iterations_total: r.inner_iterations_total,
            inner_cap_hits: r.inner_cap_hits,
            residual_history: r.residual_history.clone(),
            duals: dual_values(&r.duals),
        }
    }
}

fn dual_values(d: &DualVector) -> Vec<f64> {
    d.as_slice().to_vec()
}

/// One line of a message trace (JSON lines).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MessageLine {
    pub round: u64,
    pub sender: u32,
    pub receiver: u32,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region_file: Option<usize>,
    pub values: [f64; 3],
}

impl From<&Message> for MessageLine {
    fn from(m: &Message) -> Self {
        let (kind, region_file, values) = match m.kind {
            MessageKind::PrimalShare { q, value } => ("primal-share", Some(q), [value, 0.0, 0.0]),
            MessageKind::PriceUpdate { q, value } => ("price-update", Some(q), [value, 0.0, 0.0]),
            MessageKind::InnerNorm { value } => ("inner-norm", None, [value, 0.0, 0.0]),
            MessageKind::Control { price_change, residual, stationarity } => {
                ("control", None, [price_change, residual, stationarity])
            }
        };
        Self { round: m.round, sender: m.sender.0, receiver: m.receiver.0, kind, region_file, values }
    }
}

pub fn write_trace(path: &Path, messages: &[Message]) -> Result<()> {
    let mut text = String::new();
    for m in messages {
        text.push_str(&serde_json::to_string(&MessageLine::from(m)).expect("trace lines serialize"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
