//! Independent reference solvers and random instance generators shared by the
//! integration tests. Nothing here calls the bucket-fill or Jacobi code.

#![allow(dead_code)]

use cachefair_core::crp::{RegionFile, StationSpec};
use cachefair_core::{Bucket, CrpInstance, FileId, RoutingVector, StationId, Utility, UtilitySpec};
use rand::Rng;

fn curvature_bound(u: &UtilitySpec) -> f64 {
    // |U''| of the weighted log is largest at zero: w / V^2.
    u.weight() / (u.soft_limit() * u.soft_limit())
}

/// `g(y) = U(sum y) + sum_q (a_q y_q - rho/2 y_q^2)`.
pub fn subproblem_value(buckets: &[Bucket], u: &UtilitySpec, rho: f64, y: &[f64]) -> f64 {
    let v: f64 = y.iter().sum();
    u.value(v) + buckets.iter().zip(y).map(|(b, &x)| b.coefficient * x - 0.5 * rho * x * x).sum::<f64>()
}

/// Maximize `g` over the box with accelerated projected gradient (constant
/// momentum for a `rho`-strongly concave objective).
pub fn subproblem_oracle(buckets: &[Bucket], u: &UtilitySpec, rho: f64) -> Vec<f64> {
    let n = buckets.len();
    let lipschitz = rho + n as f64 * curvature_bound(u);
    let step = 1.0 / lipschitz;
    let kappa = (rho / lipschitz).sqrt();
    let momentum = (1.0 - kappa) / (1.0 + kappa);
    let project = |x: f64, b: &Bucket| x.clamp(0.0, b.capacity);
    let mut y = vec![0.0; n];
    let mut z = y.clone();
    for _ in 0..2_000_000 {
        let v: f64 = z.iter().sum();
        let du = u.derivative(v);
        let next: Vec<f64> =
            buckets.iter().zip(&z).map(|(b, &x)| project(x + step * (du + b.coefficient - rho * x), b)).collect();
        let change = next.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        for k in 0..n {
            z[k] = next[k] + momentum * (next[k] - y[k]);
        }
        y = next;
        if change < 1e-15 {
            break;
        }
    }
    y
}

/// Largest violation of the subproblem's KKT conditions:
/// `dg/dy_q = 0` inside, `<= 0` at zero, `>= 0` at capacity.
pub fn subproblem_kkt_violation(buckets: &[Bucket], u: &UtilitySpec, rho: f64, y: &[f64], slack: f64) -> f64 {
    let du = u.derivative(y.iter().sum());
    let mut worst = 0.0_f64;
    for (b, &x) in buckets.iter().zip(y) {
        if x < -slack || x > b.capacity + slack {
            worst = worst.max(f64::INFINITY);
        }
        let grad = du + b.coefficient - rho * x;
        let at_zero = x <= slack;
        let at_cap = x >= b.capacity - slack;
        let v = match (at_zero, at_cap) {
            (true, true) => 0.0,
            (true, false) => grad.max(0.0),
            (false, true) => (-grad).max(0.0),
            (false, false) => grad.abs(),
        };
        worst = worst.max(v);
    }
    worst
}

pub fn random_utility<R: Rng>(rng: &mut R) -> UtilitySpec {
    UtilitySpec::weighted_log(rng.random_range(0.5..2.0), rng.random_range(0.5..5.0)).unwrap()
}

pub fn random_buckets<R: Rng>(rng: &mut R, max_len: usize) -> Vec<Bucket> {
    let n = rng.random_range(1..=max_len);
    (0..n)
        .map(|q| Bucket {
            region_file: q,
            coefficient: rng.random_range(-3.0..3.0),
            capacity: if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.05..5.0) },
        })
        .collect()
}

/// Euclidean projection onto `{x >= 0, sum x = total}`.
pub fn project_simplex(x: &mut [f64], total: f64) {
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumulative += s;
        let t = (cumulative - total) / (k + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    for v in x.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

/// Arcs as `(station index, region-file)` pairs in the instance's arc order.
fn arc_list(inst: &CrpInstance) -> Vec<(usize, usize)> {
    (0..inst.arc_count()).map(|a| (inst.arc_station(a), inst.arc_region_file(a))).collect()
}

pub fn volumes(inst: &CrpInstance, y: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; inst.station_count()];
    for (a, (m, _)) in arc_list(inst).into_iter().enumerate() {
        v[m] += y[a];
    }
    v
}

/// Maximize `sum_m U_m(v_m)` over the product of demand simplices with
/// accelerated projected gradient and adaptive restart.
pub fn crp_oracle(inst: &CrpInstance) -> Vec<f64> {
    let arcs = arc_list(inst);
    let utilities: Vec<UtilitySpec> = inst.stations().iter().map(|s| s.utility).collect();
    let max_arcs = (0..inst.station_count()).map(|m| inst.arcs(m).len()).max().unwrap_or(1) as f64;
    let lipschitz = utilities.iter().map(curvature_bound).fold(0.0, f64::max) * max_arcs;
    let step = 1.0 / lipschitz;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); inst.region_file_count()];
    for (a, &(_, q)) in arcs.iter().enumerate() {
        groups[q].push(a);
    }
    let project = |x: &mut Vec<f64>| {
        for (q, g) in groups.iter().enumerate() {
            let mut part: Vec<f64> = g.iter().map(|&a| x[a]).collect();
            project_simplex(&mut part, inst.demand(q));
            for (&a, v) in g.iter().zip(part) {
                x[a] = v;
            }
        }
    };
    let objective = |x: &[f64]| -> f64 { volumes(inst, x).iter().zip(&utilities).map(|(&v, u)| u.value(v)).sum() };

    let mut y: Vec<f64> = vec![0.0; arcs.len()];
    for (q, g) in groups.iter().enumerate() {
        for &a in g {
            y[a] = inst.demand(q) / g.len() as f64;
        }
    }
    let mut z = y.clone();
    let mut t = 1.0_f64;
    let mut best = objective(&y);
    for _ in 0..400_000 {
        let v = volumes(inst, &z);
        let mut next: Vec<f64> = arcs.iter().zip(&z).map(|(&(m, _), &x)| x + step * utilities[m].derivative(v[m])).collect();
        project(&mut next);
        let value = objective(&next);
        let change = next.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if value < best {
            // Restart momentum when the objective drops.
            t = 1.0;
            z = y.clone();
            continue;
        }
        best = value;
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        for a in 0..arcs.len() {
            z[a] = next[a] + (t - 1.0) / t_next * (next[a] - y[a]);
        }
        t = t_next;
        y = next;
        if change < 1e-14 {
            break;
        }
    }
    y
}

/// Largest KKT violation of a routing for the CRP: on every region-file the
/// stations carrying traffic (above `support`) have the largest marginal
/// utility among the eligible ones.
pub fn crp_kkt_violation(inst: &CrpInstance, y: &RoutingVector, support: f64) -> f64 {
    let v = volumes(inst, y.as_slice());
    let marginal: Vec<f64> = inst.stations().iter().zip(&v).map(|(s, &x)| s.utility.derivative(x)).collect();
    let mut worst = 0.0_f64;
    for q in 0..inst.region_file_count() {
        let entries = inst.eligible(q);
        let top = entries.iter().map(|&(m, _)| marginal[m]).fold(f64::NEG_INFINITY, f64::max);
        for &(m, arc) in entries {
            if y.as_slice()[arc] > support {
                worst = worst.max(top - marginal[m]);
            }
        }
    }
    worst
}

/// Random instance with up to `max_stations` stations and `max_rfs`
/// region-files. With `forest`, the station/region-file incidence graph has
/// no cycle, so the optimal routing is unique.
pub fn random_instance<R: Rng>(rng: &mut R, max_stations: usize, max_rfs: usize, forest: bool) -> CrpInstance {
    let n = rng.random_range(1..=max_stations);
    let nq = rng.random_range(1..=max_rfs);
    let ids: Vec<u32> = {
        let mut pool: Vec<u32> = (0..(3 * n as u32)).collect();
        for k in 0..n {
            let j = rng.random_range(k..pool.len());
            pool.swap(k, j);
        }
        let mut ids = pool[..n].to_vec();
        ids.sort_unstable();
        ids
    };
    let stations: Vec<StationSpec> = ids.iter().map(|&i| StationSpec { id: StationId(i), utility: random_utility(rng) }).collect();
    let mut component: Vec<usize> = (0..n).collect();
    let mut rfs = Vec::new();
    for f in 0..nq {
        let want = rng.random_range(1..=n.min(4));
        let mut chosen: Vec<usize> = Vec::new();
        let mut order: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let j = rng.random_range(k..n);
            order.swap(k, j);
        }
        for &m in &order {
            if chosen.len() == want {
                break;
            }
            if forest && chosen.iter().any(|&c| component[c] == component[m]) {
                continue;
            }
            chosen.push(m);
        }
        if forest {
            let target = component[chosen[0]];
            let merged: Vec<usize> = chosen.iter().map(|&c| component[c]).collect();
            for c in component.iter_mut() {
                if merged.contains(c) {
                    *c = target;
                }
            }
        }
        chosen.sort_unstable();
        rfs.push(RegionFile {
            region: vec![],
            file: FileId(f as u32),
            demand: rng.random_range(0.1..10.0),
            eligible: chosen.iter().map(|&m| StationId(ids[m])).collect(),
        });
    }
    CrpInstance::new(stations, rfs).unwrap()
}
