//! The cache routing problem: region-files with expected demand, the stations
//! allowed to serve them, and the routing/price vectors the solvers work on.
//!
//! Stations are kept sorted by id, so a station's position in
//! [`CrpInstance::stations`] (its *index*) orders the same way as its id.
//! Routing variables are stored per *arc*, one arc per pair `(m, q)` with
//! `q` in `Q(m)`; arcs of a station are contiguous and ordered by `q`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::netgen::{FileId, NetworkInstance, RegionMap, StationId};
use crate::utility::{check_concavity, Utility, UtilitySpec};

/// Region-files whose demand falls below this are dropped.
pub const MIN_DEMAND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationSpec {
    pub id: StationId,
    pub utility: UtilitySpec,
}

/// A (region, file) pair servable from at least one covering cache.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFile {
    /// Stations covering the region (sorted); empty when unknown.
    pub region: Vec<StationId>,
    pub file: FileId,
    /// Expected number of requests.
    pub demand: f64,
    /// Covering stations caching the file (sorted, nonempty).
    pub eligible: Vec<StationId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrpInstance {
    stations: Vec<StationSpec>,
    region_files: Vec<RegionFile>,
    /// Arcs of station index `m` are `arc_start[m]..arc_start[m + 1]`.
    arc_start: Vec<usize>,
    arc_rf: Vec<usize>,
    arc_station: Vec<usize>,
    /// Eligible `(station index, arc)` pairs of region-file `q` are
    /// `rf_entries[rf_start[q]..rf_start[q + 1]]`, by ascending station.
    rf_start: Vec<usize>,
    rf_entries: Vec<(usize, usize)>,
}

impl CrpInstance {
    pub fn new(mut stations: Vec<StationSpec>, region_files: Vec<RegionFile>) -> Result<Self> {
        stations.sort_by_key(|s| s.id);
        if stations.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidInstance("duplicate station id".into()));
        }
        let max_demand = region_files.iter().map(|r| r.demand).fold(0.0, f64::max);
        for s in &stations {
            check_concavity(&s.utility, max_demand.max(1.0) * 1e3)?;
        }
        let index_of = |id: StationId| stations.binary_search_by_key(&id, |s| s.id).ok();

        let mut served: Vec<Vec<usize>> = alloc::vec![Vec::new(); stations.len()];
        let mut rf_station_lists: Vec<Vec<usize>> = Vec::with_capacity(region_files.len());
        for (q, rf) in region_files.iter().enumerate() {
            if !(rf.demand >= 0.0 && rf.demand.is_finite()) {
                return Err(Error::InvalidInstance(format!("region-file {q} has demand {}", rf.demand)));
            }
            if rf.eligible.is_empty() {
                return Err(Error::InvalidInstance(format!("region-file {q} has no eligible station")));
            }
            if rf.eligible.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidInstance(format!("region-file {q}: eligible set not sorted/unique")));
            }
            if !rf.region.is_empty() && rf.eligible.iter().any(|m| rf.region.binary_search(m).is_err()) {
                return Err(Error::InvalidInstance(format!("region-file {q}: eligible station outside its region")));
            }
            let mut list = Vec::with_capacity(rf.eligible.len());
            for &id in &rf.eligible {
                let m = index_of(id)
                    .ok_or_else(|| Error::InvalidInstance(format!("region-file {q} names unknown station {id}")))?;
                served[m].push(q);
                list.push(m);
            }
            rf_station_lists.push(list);
        }

        let mut arc_start = Vec::with_capacity(stations.len() + 1);
        let mut arc_rf = Vec::new();
        let mut arc_station = Vec::new();
        arc_start.push(0);
        for (m, qs) in served.iter().enumerate() {
            arc_rf.extend_from_slice(qs);
            arc_station.extend(core::iter::repeat_n(m, qs.len()));
            arc_start.push(arc_rf.len());
        }

        let mut rf_start = Vec::with_capacity(region_files.len() + 1);
        let mut rf_entries = Vec::with_capacity(arc_rf.len());
        rf_start.push(0);
        for (q, list) in rf_station_lists.iter().enumerate() {
            for &m in list {
                let arcs = arc_start[m]..arc_start[m + 1];
                let offset = arc_rf[arcs.clone()].binary_search(&q).expect("arc registered above");
                rf_entries.push((m, arcs.start + offset));
            }
            rf_start.push(rf_entries.len());
        }

        Ok(Self { stations, region_files, arc_start, arc_rf, arc_station, rf_start, rf_entries })
    }

    pub fn stations(&self) -> &[StationSpec] {
        &self.stations
    }

    pub fn region_files(&self) -> &[RegionFile] {
        &self.region_files
    }

    pub fn station_count(&self) -> usize {
        self.stations.len()
    }

    pub fn region_file_count(&self) -> usize {
        self.region_files.len()
    }

    pub fn arc_count(&self) -> usize {
        self.arc_rf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region_files.is_empty()
    }

    pub fn station_index(&self, id: StationId) -> Option<usize> {
        self.stations.binary_search_by_key(&id, |s| s.id).ok()
    }

    pub fn demand(&self, q: usize) -> f64 {
        self.region_files[q].demand
    }

    pub fn max_demand(&self) -> f64 {
        self.region_files.iter().map(|r| r.demand).fold(0.0, f64::max)
    }

    pub fn total_demand(&self) -> f64 {
        self.region_files.iter().map(|r| r.demand).sum()
    }

    /// Arc range of station index `m`.
    pub fn arcs(&self, m: usize) -> Range<usize> {
        self.arc_start[m]..self.arc_start[m + 1]
    }

    /// `Q(m)`: region-files station index `m` can serve, ascending.
    pub fn served(&self, m: usize) -> &[usize] {
        &self.arc_rf[self.arcs(m)]
    }

    pub fn arc_region_file(&self, arc: usize) -> usize {
        self.arc_rf[arc]
    }

    pub fn arc_station(&self, arc: usize) -> usize {
        self.arc_station[arc]
    }

    /// `(station index, arc)` for every eligible station of `q`, ascending.
    pub fn eligible(&self, q: usize) -> &[(usize, usize)] {
        &self.rf_entries[self.rf_start[q]..self.rf_start[q + 1]]
    }

    pub fn arc(&self, m: usize, q: usize) -> Option<usize> {
        let arcs = self.arcs(m);
        self.arc_rf[arcs.clone()].binary_search(&q).ok().map(|k| arcs.start + k)
    }
}

/// How the per-station log utilities are parameterized when building an
/// instance from a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityDefaults {
    pub weight: f64,
    pub soft_limit: SoftLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SoftLimit {
    /// Total cache-related demand divided by the number of stations.
    FairShare,
    Fixed(f64),
}

impl Default for UtilityDefaults {
    fn default() -> Self {
        Self { weight: 1.0, soft_limit: SoftLimit::FairShare }
    }
}

/// Turn a network and its coverage regions into a routing instance with
/// demand `area * user_density * popularity` per region-file.
pub fn build_instance(
    network: &NetworkInstance,
    regions: &RegionMap,
    user_density: f64,
    defaults: UtilityDefaults,
) -> Result<CrpInstance> {
    if !(user_density > 0.0 && user_density.is_finite()) {
        return Err(Error::param("user density", format!("{user_density}")));
    }
    let by_id: BTreeMap<StationId, usize> = network.stations.iter().enumerate().map(|(k, s)| (s.id, k)).collect();
    let popularity = network.catalog.popularity();
    let mut region_files = Vec::new();
    for (key, region) in regions.iter() {
        for (f, &p) in popularity.iter().enumerate() {
            let file = FileId(f as u32);
            let mut eligible = Vec::new();
            for id in key {
                let k = *by_id
                    .get(id)
                    .ok_or_else(|| Error::InvalidInstance(format!("region names unknown station {id}")))?;
                if network.stations[k].caches(file) {
                    eligible.push(*id);
                }
            }
            let demand = region.area * user_density * p;
            if eligible.is_empty() || demand < MIN_DEMAND {
                continue;
            }
            region_files.push(RegionFile { region: key.to_vec(), file, demand, eligible });
        }
    }
    let soft_limit = match defaults.soft_limit {
        SoftLimit::Fixed(v) => v,
        SoftLimit::FairShare => {
            let total: f64 = region_files.iter().map(|r| r.demand).sum();
            if network.stations.is_empty() || total <= 0.0 {
                1.0
            } else {
                total / network.stations.len() as f64
            }
        }
    };
    let utility = UtilitySpec::weighted_log(defaults.weight, soft_limit)?;
    let stations = network.stations.iter().map(|s| StationSpec { id: s.id, utility }).collect();
    CrpInstance::new(stations, region_files)
}

/// Sparse routing `y_{m,q}`, stored per arc of an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingVector {
    values: Vec<f64>,
}

impl RoutingVector {
    pub fn zeros(instance: &CrpInstance) -> Self {
        Self { values: alloc::vec![0.0; instance.arc_count()] }
    }

    /// Demand of every region-file split evenly among its eligible stations.
    pub fn even_split(instance: &CrpInstance) -> Self {
        let mut y = Self::zeros(instance);
        for q in 0..instance.region_file_count() {
            let entries = instance.eligible(q);
            let share = instance.demand(q) / entries.len() as f64;
            for &(_, arc) in entries {
                y.values[arc] = share;
            }
        }
        y
    }

    pub fn from_arc_values(instance: &CrpInstance, values: Vec<f64>) -> Result<Self> {
        if values.len() != instance.arc_count() {
            return Err(Error::InvalidInstance(format!(
                "routing has {} entries, instance has {} arcs",
                values.len(),
                instance.arc_count()
            )));
        }
        Ok(Self { values })
    }

    /// Build from `(station, region-file, volume)` triplets; missing pairs are 0.
    pub fn from_triplets(instance: &CrpInstance, triplets: &[(StationId, usize, f64)]) -> Result<Self> {
        let mut y = Self::zeros(instance);
        for &(id, q, v) in triplets {
            let m = instance
                .station_index(id)
                .ok_or_else(|| Error::InvalidInstance(format!("routing names unknown station {id}")))?;
            let arc = instance
                .arc(m, q)
                .ok_or_else(|| Error::InvalidInstance(format!("station {id} cannot serve region-file {q}")))?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInstance(format!("routing volume {v} on ({id}, {q})")));
            }
            y.values[arc] = v;
        }
        Ok(y)
    }

    pub fn triplets(&self, instance: &CrpInstance) -> Vec<(StationId, usize, f64)> {
        let mut out = Vec::with_capacity(self.values.len());
        for (m, spec) in instance.stations().iter().enumerate() {
            for arc in instance.arcs(m) {
                out.push((spec.id, instance.arc_region_file(arc), self.values[arc]));
            }
        }
        out
    }

    pub fn get(&self, instance: &CrpInstance, m: usize, q: usize) -> Option<f64> {
        instance.arc(m, q).map(|arc| self.values[arc])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs_diff(&self, other: &RoutingVector) -> f64 {
        max_abs_diff(&self.values, &other.values)
    }

    /// Rescale each region-file's routing so it sums to the demand exactly;
    /// an all-zero split falls back to an even one.
    pub fn complete(&mut self, instance: &CrpInstance) {
        for q in 0..instance.region_file_count() {
            let entries = instance.eligible(q);
            let routed = routed_volume(instance, self, q);
            let demand = instance.demand(q);
            if routed > 0.0 {
                let scale = demand / routed;
                for &(_, arc) in entries {
                    self.values[arc] = (self.values[arc] * scale).min(demand);
                }
            } else {
                for &(_, arc) in entries {
                    self.values[arc] = demand / entries.len() as f64;
                }
            }
        }
    }
}

/// Prices `lambda_q`, one per region-file.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    values: Vec<f64>,
}

impl DualVector {
    pub fn zeros(instance: &CrpInstance) -> Self {
        Self { values: alloc::vec![0.0; instance.region_file_count()] }
    }

    pub fn from_values(instance: &CrpInstance, values: Vec<f64>) -> Result<Self> {
        if values.len() != instance.region_file_count() {
            return Err(Error::InvalidInstance("dual vector length differs from region-file count".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("dual vector has a non-finite entry".into()));
        }
        Ok(Self { values })
    }

    pub fn get(&self, q: usize) -> f64 {
        self.values[q]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_abs_diff(&self, other: &DualVector) -> f64 {
        max_abs_diff(&self.values, &other.values)
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `sum_m y_{m,q}` over the eligible stations of `q`, in ascending station order.
pub fn routed_volume(instance: &CrpInstance, y: &RoutingVector, q: usize) -> f64 {
    instance.eligible(q).iter().map(|&(_, arc)| y.values[arc]).sum()
}

/// `v_m`: total volume routed to station index `m`.
pub fn total_volume(instance: &CrpInstance, y: &RoutingVector, m: usize) -> f64 {
    y.values[instance.arcs(m)].iter().sum()
}

pub fn objective(instance: &CrpInstance, y: &RoutingVector) -> f64 {
    instance
        .stations()
        .iter()
        .enumerate()
        .map(|(m, s)| s.utility.value(total_volume(instance, y, m)))
        .sum()
}

/// `max_q |N_q - sum_m y_{m,q}|`.
pub fn feasibility_residual(instance: &CrpInstance, y: &RoutingVector) -> f64 {
    (0..instance.region_file_count())
        .map(|q| (instance.demand(q) - routed_volume(instance, y, q)).abs())
        .fold(0.0, f64::max)
}

pub fn augmented_lagrangian(instance: &CrpInstance, y: &RoutingVector, lambda: &DualVector, rho: f64) -> f64 {
    let mut value = objective(instance, y);
    for q in 0..instance.region_file_count() {
        let r = instance.demand(q) - routed_volume(instance, y, q);
        value -= lambda.values[q] * r + 0.5 * rho * r * r;
    }
    value
}
