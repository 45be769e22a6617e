//! The fair policy and the two baselines it is compared with.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crp::{CrpInstance, RoutingVector};
use crate::error::{Error, Result};
use crate::netgen::{for_each_covered_run, Grid, NetworkInstance, Point, RegionMap, StationId};
use crate::solver::{solve_crp, SolveReport, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    Fair,
    ClosestAvailable,
    Unsplittable,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Fair, PolicyKind::ClosestAvailable, PolicyKind::Unsplittable];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Fair => "fair",
            PolicyKind::ClosestAvailable => "closest",
            PolicyKind::Unsplittable => "unsplittable",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?} (expected fair, closest or unsplittable)")))
    }
}

/// Fair routing: the solver's routing with every region-file rescaled to its
/// exact demand (see [`RoutingVector::complete`]), so that all policies route
/// the same total. The rescaling moves each entry by at most the solver's
/// residual.
#[derive(Debug, Clone, PartialEq)]
pub struct FairOutcome {
    pub routing: RoutingVector,
    pub report: SolveReport,
}

pub fn fair(instance: &CrpInstance, cfg: &SolverConfig) -> Result<FairOutcome> {
    let report = solve_crp(instance, cfg)?;
    let mut routing = report.routing.clone();
    routing.complete(instance);
    Ok(FairOutcome { routing, report })
}

/// All demand of each region-file to the eligible station nearest the
/// region's centroid; ties go to the lowest id.
pub fn closest_available(instance: &CrpInstance, network: &NetworkInstance, regions: &RegionMap) -> Result<RoutingVector> {
    let positions = station_positions(instance, network)?;
    let mut y = RoutingVector::zeros(instance);
    for (q, rf) in instance.region_files().iter().enumerate() {
        let region = regions
            .get(&rf.region)
            .ok_or_else(|| Error::InvalidInstance(format!("region-file {q} has no region in the map")))?;
        let arc = nearest(instance, q, &positions, region.centroid);
        y.as_mut_slice()[arc] = instance.demand(q);
    }
    Ok(y)
}

/// Per-cell closest-available: every covered grid cell sends its share of a
/// region-file's demand to the eligible station nearest the cell center.
/// Region-files then split their demand in proportion to the cell counts.
pub fn closest_available_per_cell(
    instance: &CrpInstance,
    network: &NetworkInstance,
    resolution: f64,
) -> Result<RoutingVector> {
    let positions = station_positions(instance, network)?;
    let grid = Grid::new(network.window, resolution)?;
    let mut by_region: BTreeMap<&[StationId], Vec<usize>> = BTreeMap::new();
    for (q, rf) in instance.region_files().iter().enumerate() {
        by_region.entry(rf.region.as_slice()).or_default().push(q);
    }
    let mut counts = alloc::vec![0u64; instance.arc_count()];
    let mut key = Vec::new();
    for_each_covered_run(&network.stations, &grid, |run| {
        key.clear();
        key.extend(run.covering.iter().map(|&k| network.stations[k].id));
        let Some(qs) = by_region.get(key.as_slice()) else { return };
        for i in run.start..run.end {
            let center = grid.center(i, run.row);
            for &q in qs {
                counts[nearest(instance, q, &positions, center)] += 1;
            }
        }
    });
    let mut y = RoutingVector::zeros(instance);
    for q in 0..instance.region_file_count() {
        let entries = instance.eligible(q);
        let total: u64 = entries.iter().map(|&(_, arc)| counts[arc]).sum();
        if total == 0 {
            return Err(Error::InvalidInstance(format!("region-file {q} covers no grid cell at this resolution")));
        }
        for &(_, arc) in entries {
            y.as_mut_slice()[arc] = instance.demand(q) * counts[arc] as f64 / total as f64;
        }
    }
    Ok(y)
}

/// All demand of each region-file to one eligible station drawn uniformly.
pub fn unsplittable(instance: &CrpInstance, seed: u64) -> RoutingVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = RoutingVector::zeros(instance);
    for q in 0..instance.region_file_count() {
        let entries = instance.eligible(q);
        let (_, arc) = entries[rng.random_range(0..entries.len())];
        y.as_mut_slice()[arc] = instance.demand(q);
    }
    y
}

fn station_positions(instance: &CrpInstance, network: &NetworkInstance) -> Result<Vec<Point>> {
    instance
        .stations()
        .iter()
        .map(|s| {
            network
                .station(s.id)
                .map(|st| st.position)
                .ok_or_else(|| Error::InvalidInstance(format!("station {} missing from the network", s.id)))
        })
        .collect()
}

/// Arc of the eligible station of `q` nearest to `p`; the first (lowest id)
/// wins ties.
fn nearest(instance: &CrpInstance, q: usize, positions: &[Point], p: Point) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for &(m, arc) in instance.eligible(q) {
        let d = positions[m].distance_sq(&p);
        if d < best.0 {
            best = (d, arc);
        }
    }
    best.1
}
