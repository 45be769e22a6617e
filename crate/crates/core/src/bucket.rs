//! Exact solver for the per-station subproblem
//!
//! ```text
//! maximize  g(y) = U(sum_q y_q) - sum_q (rho/2 y_q^2 - a_q y_q)   over 0 <= y <= N
//! ```
//!
//! Bucket `q` sits with its bottom at depth `(a_max - a_q) / rho` and holds
//! `N_q`. A common water level `w` rises from 0; bucket `q` holds
//! `clamp(w - bottom_q, 0, N_q)`. Every interior bucket then satisfies
//! `rho y_q - a_q = rho w - a_max`, so stationarity of all of them reduces to
//! the scalar equation `U'(V(w)) = rho w - a_max`, whose left side falls and
//! right side rises in `w`. Between consecutive activation/saturation events
//! `V(w)` is linear, and the sweep stops in the first segment where the
//! equation changes sign. Sorting dominates: `O(|Q| log |Q|)`.

use alloc::format;
use alloc::vec::Vec;

use crate::crp::{CrpInstance, DualVector, RoutingVector};
use crate::error::{Error, Result};
use crate::utility::Utility;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    pub region_file: usize,
    /// `a_q = lambda_q + rho * Nbar_q`.
    pub coefficient: f64,
    /// `N_q`.
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketFillResult {
    /// `y*_q`, aligned with the input buckets.
    pub allocation: Vec<f64>,
    /// Final water level; `None` when there was nothing to fill.
    pub water_level: Option<f64>,
    /// Region-files of buckets activated but not full when the sweep stopped.
    pub active_at_termination: Vec<usize>,
}

/// One step of the sweep, for auditing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FillEvent {
    Activate { region_file: usize, level: f64 },
    Saturate { region_file: usize, level: f64 },
    /// Gradient already nonpositive at an empty allocation.
    Idle,
    /// Stationarity reached inside a segment.
    Stationary { level: f64 },
    /// Every bucket is full and the gradient is still positive.
    AllFull { level: f64 },
}

/// Buckets for station index `m`: `Nbar_q = N_q - sum_{other eligible} ytilde`.
/// `Nbar_q` may be negative; that just lowers `a_q`.
pub fn local_coefficients(
    instance: &CrpInstance,
    m: usize,
    shared: &RoutingVector,
    prices: &DualVector,
    rho: f64,
) -> Vec<Bucket> {
    let mut out = Vec::with_capacity(instance.arcs(m).len());
    local_coefficients_into(instance, m, shared.as_slice(), prices.as_slice(), rho, &mut out);
    out
}

pub(crate) fn local_coefficients_into(
    instance: &CrpInstance,
    m: usize,
    shared: &[f64],
    prices: &[f64],
    rho: f64,
    out: &mut Vec<Bucket>,
) {
    out.clear();
    for &q in instance.served(m) {
        let others: f64 = instance.eligible(q).iter().filter(|e| e.0 != m).map(|&(_, arc)| shared[arc]).sum();
        let capacity = instance.demand(q);
        out.push(Bucket { region_file: q, coefficient: prices[q] + rho * (capacity - others), capacity });
    }
}

/// Solve the subproblem exactly.
pub fn bucket_fill<U: Utility + ?Sized>(buckets: &[Bucket], utility: &U, rho: f64) -> Result<BucketFillResult> {
    let mut filler = BucketFiller::default();
    let mut allocation = alloc::vec![0.0; buckets.len()];
    let water_level = filler.fill(buckets, utility, rho, &mut allocation, None)?;
    Ok(filler.result(buckets, allocation, water_level))
}

/// [`bucket_fill`] that also records the event sequence.
pub fn bucket_fill_traced<U: Utility + ?Sized>(
    buckets: &[Bucket],
    utility: &U,
    rho: f64,
) -> Result<(BucketFillResult, Vec<FillEvent>)> {
    let mut filler = BucketFiller::default();
    let mut allocation = alloc::vec![0.0; buckets.len()];
    let mut trace = Vec::new();
    let water_level = filler.fill(buckets, utility, rho, &mut allocation, Some(&mut trace))?;
    Ok((filler.result(buckets, allocation, water_level), trace))
}

/// Reusable scratch space for repeated fills.
#[derive(Debug, Clone, Default)]
pub struct BucketFiller {
    /// `(a_q, index)` of the nonempty buckets, contiguous so the sort stays
    /// in cache.
    order: Vec<(f64, usize)>,
    /// `(bottom + N_q, index)` ascending. A bucket's saturation level is
    /// above its bottom, so it is always active by the time it comes up.
    saturation: Vec<(f64, usize)>,
}

impl BucketFiller {
    /// Write `y*` into `out` (aligned with `buckets`); returns the water level.
    pub fn fill<U: Utility + ?Sized>(
        &mut self,
        buckets: &[Bucket],
        utility: &U,
        rho: f64,
        out: &mut [f64],
        mut trace: Option<&mut Vec<FillEvent>>,
    ) -> Result<Option<f64>> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::param("rho", format!("{rho} is not a positive penalty")));
        }
        if out.len() != buckets.len() {
            return Err(Error::param("output", "length differs from the bucket count"));
        }
        for b in buckets {
            if !b.coefficient.is_finite() || !(b.capacity >= 0.0 && b.capacity.is_finite()) {
                return Err(Error::param(
                    "bucket",
                    format!("region-file {}: a={}, N={}", b.region_file, b.coefficient, b.capacity),
                ));
            }
        }
        out.fill(0.0);

        let order = &mut self.order;
        order.clear();
        order.extend(buckets.iter().enumerate().filter(|(_, b)| b.capacity > 0.0).map(|(i, b)| (b.coefficient, i)));
        if order.is_empty() {
            return Ok(None);
        }
        order.sort_unstable_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let a_max = order[0].0;
        let bottom = |i: usize| (a_max - buckets[i].coefficient) / rho;
        let excess = |w: f64, slope: f64, intercept: f64| utility.derivative(slope * w + intercept) - rho * w + a_max;

        let mut record = |e: FillEvent| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(e);
            }
        };

        if utility.derivative(0.0) + a_max <= 0.0 {
            record(FillEvent::Idle);
            return Ok(Some(0.0));
        }

        let saturations = &mut self.saturation;
        saturations.clear();
        saturations.extend(order.iter().map(|&(_, i)| (bottom(i) + buckets[i].capacity, i)));
        saturations.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut saturated = 0;
        let mut level = 0.0_f64;
        let mut next = 0;
        // V(w) = active * w + (full - bottoms) on the current segment.
        let mut active = 0usize;
        let mut bottoms = 0.0_f64;
        let mut full = 0.0_f64;

        let water = loop {
            while next < order.len() && (a_max - order[next].0) / rho <= level {
                let i = order[next].1;
                let b = bottom(i);
                active += 1;
                bottoms += b;
                record(FillEvent::Activate { region_file: buckets[i].region_file, level });
                next += 1;
            }
            let activation = order.get(next).map(|&(a, _)| (a_max - a) / rho);
            let saturation = saturations.get(saturated).map(|s| s.0);
            let event = match (activation, saturation) {
                (Some(a), Some(s)) => a.min(s),
                (Some(a), None) => a,
                (None, Some(s)) => s,
                (None, None) => {
                    record(FillEvent::AllFull { level });
                    break level;
                }
            };
            let slope = active as f64;
            let intercept = full - bottoms;
            if excess(event, slope, intercept) <= 0.0 {
                let w = utility.level_on_segment(slope, intercept, rho, a_max, level, event);
                record(FillEvent::Stationary { level: w });
                break w;
            }
            level = event;
            while let Some(&(at, i)) = saturations.get(saturated) {
                if at > level {
                    break;
                }
                saturated += 1;
                active -= 1;
                bottoms -= bottom(i);
                full += buckets[i].capacity;
                record(FillEvent::Saturate { region_file: buckets[i].region_file, level });
            }
        };

        for &(_, i) in order.iter() {
            out[i] = (water - bottom(i)).clamp(0.0, buckets[i].capacity);
        }
        Ok(Some(water))
    }

    fn result(&self, buckets: &[Bucket], allocation: Vec<f64>, water_level: Option<f64>) -> BucketFillResult {
        let active_at_termination = buckets
            .iter()
            .zip(&allocation)
            .filter(|(b, &y)| y > 0.0 && y < b.capacity)
            .map(|(b, _)| b.region_file)
            .collect();
        BucketFillResult { allocation, water_level, active_at_termination }
    }
}

/// Root of `U'(V(w)) - rho w + a_max` on `[lo, hi]` for nondecreasing `V`.
/// `None` when the sign does not change over the bracket.
pub fn water_level_root<U, V>(volume: V, utility: &U, rho: f64, a_max: f64, lo: f64, hi: f64) -> Result<Option<f64>>
where
    U: Utility + ?Sized,
    V: Fn(f64) -> f64,
{
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::param("bracket", format!("[{lo}, {hi}]")));
    }
    let f = |w: f64| utility.derivative(volume(w)) - rho * w + a_max;
    if f(lo) < 0.0 || f(hi) > 0.0 {
        return Ok(None);
    }
    Ok(Some(bisect_decreasing(f, lo, hi)))
}

/// Bisection to float resolution for a decreasing `f` with `f(lo) >= 0 >= f(hi)`.
pub(crate) fn bisect_decreasing<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..2100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if f(lo).abs() <= f(hi).abs() {
        lo
    } else {
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crp::{RegionFile, StationSpec};
    use crate::netgen::{FileId, StationId};
    use crate::utility::UtilitySpec;
    use alloc::vec;

    fn ln1p() -> UtilitySpec {
        UtilitySpec::weighted_log(1.0, 1.0).unwrap()
    }

    fn buckets(spec: &[(f64, f64)]) -> Vec<Bucket> {
        spec.iter().enumerate().map(|(q, &(a, n))| Bucket { region_file: q, coefficient: a, capacity: n }).collect()
    }

    #[test]
    fn corner_at_zero() {
        let r = bucket_fill(&buckets(&[(-2.0, 5.0)]), &ln1p(), 1.0).unwrap();
        assert_eq!(r.allocation, vec![0.0]);
        assert!(r.active_at_termination.is_empty());
    }

    #[test]
    fn saturation_corner() {
        let (r, trace) = bucket_fill_traced(&buckets(&[(100.0, 1.0)]), &ln1p(), 1.0).unwrap();
        assert_eq!(r.allocation, vec![1.0]);
        assert!(matches!(trace.last(), Some(FillEvent::AllFull { .. })));
    }

    #[test]
    fn two_interior_buckets() {
        let r = bucket_fill(&buckets(&[(2.0, 10.0), (1.0, 10.0)]), &ln1p(), 1.0).unwrap();
        let y2 = 1.5f64.sqrt();
        assert!((r.allocation[1] - y2).abs() < 1e-12);
        assert!((r.allocation[0] - (y2 + 1.0)).abs() < 1e-12);
        // U'(y1 + y2) = rho * y2 - a2
        let v = r.allocation[0] + r.allocation[1];
        assert!((1.0 / (1.0 + v) - (r.allocation[1] - 1.0)).abs() < 1e-12);
        assert_eq!(r.active_at_termination, vec![0, 1]);
    }

    #[test]
    fn empty_and_zero_capacity() {
        let r = bucket_fill(&[], &ln1p(), 1.0).unwrap();
        assert!(r.allocation.is_empty() && r.water_level.is_none());
        let r = bucket_fill(&buckets(&[(3.0, 0.0), (1.0, 2.0)]), &ln1p(), 1.0).unwrap();
        assert_eq!(r.allocation[0], 0.0);
        assert!(r.allocation[1] > 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(bucket_fill(&buckets(&[(1.0, 1.0)]), &ln1p(), 0.0).is_err());
        assert!(bucket_fill(&buckets(&[(f64::NAN, 1.0)]), &ln1p(), 1.0).is_err());
        assert!(bucket_fill(&buckets(&[(1.0, -1.0)]), &ln1p(), 1.0).is_err());
    }

    #[test]
    fn equal_coefficients_fill_equally() {
        let r = bucket_fill(&buckets(&[(1.0, 10.0), (1.0, 10.0), (1.0, 0.2)]), &ln1p(), 1.0).unwrap();
        assert_eq!(r.allocation[0], r.allocation[1]);
        assert_eq!(r.allocation[2], 0.2);
    }

    #[test]
    fn activation_order_follows_coefficients() {
        let bs = buckets(&[(0.5, 1.0), (3.0, 0.5), (-1.0, 2.0), (2.0, 4.0), (2.0, 0.1)]);
        let (_, trace) = bucket_fill_traced(&bs, &UtilitySpec::weighted_log(20.0, 1.0).unwrap(), 1.0).unwrap();
        let order: Vec<f64> = trace
            .iter()
            .filter_map(|e| match e {
                FillEvent::Activate { region_file, .. } => Some(bs[*region_file].coefficient),
                _ => None,
            })
            .collect();
        assert_eq!(order[0], 3.0);
        assert!(order.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn water_level_root_quadratic() {
        // 1 / (1 + 2w) = w - 1  <=>  2w^2 - w - 2 = 0
        let u = ln1p();
        let w = water_level_root(|w| 2.0 * w, &u, 1.0, 1.0, 0.0, 10.0).unwrap().unwrap();
        let closed = (1.0 + 17f64.sqrt()) / 4.0;
        assert!((w - closed).abs() < 1e-12);
        assert!((u.derivative(2.0 * w) - w + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn water_level_root_no_sign_change() {
        let u = ln1p();
        // F(lo) < 0: the sweep would have stopped earlier.
        assert_eq!(water_level_root(|w| 2.0 * w, &u, 1.0, 1.0, 3.0, 10.0).unwrap(), None);
        assert!(water_level_root(|w| w, &u, 1.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn water_level_root_decreases_with_rho() {
        // (rho w - 1)(1 + 2w) = 1  <=>  2 rho w^2 + (rho - 2) w - 2 = 0
        let u = ln1p();
        let closed = |rho: f64| {
            let (a, b, c) = (2.0 * rho, rho - 2.0, -2.0);
            (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
        };
        let mut prev = f64::INFINITY;
        for rho in [1.0, 4.0, 16.0, 64.0] {
            let w = water_level_root(|w| 2.0 * w, &u, rho, 1.0, 0.0, 10.0).unwrap().unwrap();
            assert!((w - closed(rho)).abs() < 1e-12);
            assert!(w < prev && w > 1.0 / rho);
            prev = w;
        }
        let w = water_level_root(|w| 2.0 * w, &u, 1e4, 1.0, 0.0, 10.0).unwrap().unwrap();
        // Stiff limit: w -> 2 / rho.
        assert!((w - 2e-4).abs() < 1e-7);
    }

    fn shared_instance() -> CrpInstance {
        let u = ln1p();
        let specs = vec![StationSpec { id: StationId(1), utility: u }, StationSpec { id: StationId(2), utility: u }];
        let rfs = vec![
            RegionFile { region: vec![], file: FileId(0), demand: 3.0, eligible: vec![StationId(1), StationId(2)] },
            RegionFile { region: vec![], file: FileId(1), demand: 2.0, eligible: vec![StationId(1)] },
        ];
        CrpInstance::new(specs, rfs).unwrap()
    }

    #[test]
    fn local_coefficients_examples() {
        let inst = shared_instance();
        let lambda = DualVector::from_values(&inst, vec![1.0, 0.5]).unwrap();
        // ytilde: station 2 takes 1 of region-file 0.
        let y = RoutingVector::from_triplets(&inst, &[(StationId(2), 0, 1.0), (StationId(1), 0, 9.0)]).unwrap();
        let b = local_coefficients(&inst, 0, &y, &lambda, 2.0);
        assert_eq!(b[0], Bucket { region_file: 0, coefficient: 1.0 + 2.0 * 2.0, capacity: 3.0 });
        // Sole eligible station: Nbar = N.
        assert_eq!(b[1], Bucket { region_file: 1, coefficient: 0.5 + 2.0 * 2.0, capacity: 2.0 });
        // Competitor already routes everything: a = lambda.
        let y = RoutingVector::from_triplets(&inst, &[(StationId(1), 0, 3.0)]).unwrap();
        let b = local_coefficients(&inst, 1, &y, &lambda, 2.0);
        assert_eq!(b[0].coefficient, 1.0);
    }
}
