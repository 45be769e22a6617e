//! Load shares of stations under a routing.

use alloc::collections::BTreeMap;

use crate::crp::{total_volume, CrpInstance, RoutingVector};
use crate::netgen::StationId;

/// `v_m / sum v` for every station. Empty when nothing is routed.
pub fn load_shares(instance: &CrpInstance, y: &RoutingVector) -> BTreeMap<StationId, f64> {
    let volumes: alloc::vec::Vec<f64> = (0..instance.station_count()).map(|m| total_volume(instance, y, m)).collect();
    let total: f64 = volumes.iter().sum();
    if !(total > 0.0) {
        return BTreeMap::new();
    }
    instance.stations().iter().zip(&volumes).map(|(s, &v)| (s.id, v / total)).collect()
}

/// Smallest and largest share among stations accepted by `select`.
pub fn share_extremes(shares: &BTreeMap<StationId, f64>, select: impl Fn(StationId) -> bool) -> Option<(f64, f64)> {
    shares
        .iter()
        .filter(|(&id, _)| select(id))
        .map(|(_, &s)| s)
        .fold(None, |acc, s| match acc {
            None => Some((s, s)),
            Some((lo, hi)) => Some((lo.min(s), hi.max(s))),
        })
}

/// Summed share of the stations accepted by `select`.
pub fn aggregate_share(shares: &BTreeMap<StationId, f64>, select: impl Fn(StationId) -> bool) -> f64 {
    shares.iter().filter(|(&id, _)| select(id)).map(|(_, &s)| s).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crp::{RegionFile, StationSpec};
    use crate::netgen::FileId;
    use crate::utility::UtilitySpec;
    use alloc::vec;

    fn inst(n: u32) -> CrpInstance {
        let u = UtilitySpec::weighted_log(1.0, 1.0).unwrap();
        CrpInstance::new(
            (0..n).map(|i| StationSpec { id: StationId(i), utility: u }).collect(),
            (0..n)
                .map(|i| RegionFile { region: vec![], file: FileId(i), demand: 1.0, eligible: vec![StationId(i)] })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn shares_examples() {
        let i = inst(2);
        let y = RoutingVector::from_arc_values(&i, vec![3.0, 1.0]).unwrap();
        let s = load_shares(&i, &y);
        assert_eq!(s[&StationId(0)], 0.75);
        assert_eq!(s[&StationId(1)], 0.25);
        assert_eq!(share_extremes(&s, |_| true), Some((0.25, 0.75)));
        assert_eq!(aggregate_share(&s, |id| id == StationId(1)), 0.25);

        let i = inst(7);
        let s = load_shares(&i, &RoutingVector::from_arc_values(&i, vec![2.0; 7]).unwrap());
        assert!(s.values().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
        assert!((s.values().sum::<f64>() - 1.0).abs() < 1e-12);

        assert!(load_shares(&i, &RoutingVector::zeros(&i)).is_empty());
        assert_eq!(share_extremes(&BTreeMap::new(), |_| true), None);
    }
}
