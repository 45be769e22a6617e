//! Centralized solve: Augmented-Lagrangian dual ascent (outer loop) around a
//! relaxed nonlinear Jacobi decomposition (inner loop) whose per-station
//! steps are exact bucket fills.
//!
//! A config holds rules rather than raw numbers for the penalty, the
//! relaxation and the starting prices; [`SolverConfig::resolve`] turns them
//! into numbers for one instance. Both the centralized solver and the agent
//! runtime run on the resolved values.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bucket::{local_coefficients_into, Bucket, BucketFiller};
use crate::crp::{self, max_abs_diff, CrpInstance, DualVector, RoutingVector};
use crate::error::{Error, Result};
use crate::netgen::StationId;
use crate::utility::Utility;

/// Penalty weight `rho`, which is also the dual step length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Absolute(f64),
    /// Multiple of the instance's curvature scale: the harmonic mean over
    /// stations of `-U''(v)` at the loads of the even split.
    Relative(f64),
}

/// Jacobi relaxation `alpha` in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Relaxation {
    Fixed(f64),
    /// `min(1/2, 1 / k)` with `k` the largest eligible set. Larger steps let
    /// the stations sharing a region-file overshoot it together.
    InverseMaxEligible,
}

/// Prices of the first outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPrices {
    Zero,
    /// `lambda_q = -U'(v)` of the owner of `q` (its lowest-id eligible
    /// station) at the mean load `v`.
    OwnerMarginal,
}

/// First primal iterate of the first outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmStart {
    Zero,
    /// Every region-file split evenly among its eligible stations.
    EvenSplit,
    /// Uniform in the box, drawn from `SolverConfig::seed` on one random
    /// stream per station.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub rho: Penalty,
    pub alpha: Relaxation,
    pub initial_prices: InitialPrices,
    pub warm_start: WarmStart,
    pub eps_inner: f64,
    pub eps_outer: f64,
    /// Jacobi sweeps per outer iteration at most.
    pub max_inner: usize,
    pub max_outer: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: Penalty::Relative(11.0),
            alpha: Relaxation::InverseMaxEligible,
            initial_prices: InitialPrices::OwnerMarginal,
            warm_start: WarmStart::EvenSplit,
            eps_inner: 1e-6,
            eps_outer: 1e-6,
            max_inner: 1,
            max_outer: 100_000,
            seed: 0,
        }
    }
}

/// Numeric parameters of one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub rho: f64,
    pub alpha: f64,
    pub eps_inner: f64,
    pub eps_outer: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Largest feasibility residual a converged solve may leave:
    /// `eps_outer * (1 + max_q N_q)`.
    pub residual_tolerance: f64,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        match self.rho {
            Penalty::Absolute(r) | Penalty::Relative(r) if !(r > 0.0 && r.is_finite()) => {
                return Err(Error::Config(format!("rho = {r} must be positive")));
            }
            _ => {}
        }
        if let Relaxation::Fixed(a) = self.alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config(format!("alpha = {a} must lie in (0, 1]")));
            }
        }
        if !(self.eps_inner > 0.0 && self.eps_outer > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, instance: &CrpInstance) -> Result<Resolved> {
        self.validate()?;
        if instance.is_empty() {
            return Err(Error::InvalidInstance("no region-files to route".into()));
        }
        let rho = match self.rho {
            Penalty::Absolute(r) => r,
            Penalty::Relative(c) => c * curvature_scale(instance),
        };
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("resolved rho = {rho} is not a positive number")));
        }
        let alpha = match self.alpha {
            Relaxation::Fixed(a) => a,
            Relaxation::InverseMaxEligible => {
                let k = (0..instance.region_file_count()).map(|q| instance.eligible(q).len()).max().unwrap_or(1);
                (1.0 / k as f64).min(0.5)
            }
        };
        Ok(Resolved {
            rho,
            alpha,
            eps_inner: self.eps_inner,
            eps_outer: self.eps_outer,
            max_inner: self.max_inner,
            max_outer: self.max_outer,
            residual_tolerance: self.eps_outer * (1.0 + instance.max_demand()),
        })
    }

    pub fn initial_routing(&self, instance: &CrpInstance) -> RoutingVector {
        match self.warm_start {
            WarmStart::Zero => RoutingVector::zeros(instance),
            WarmStart::EvenSplit => RoutingVector::even_split(instance),
            WarmStart::Random => {
                let mut y = RoutingVector::zeros(instance);
                for m in 0..instance.station_count() {
                    let arcs = instance.arcs(m);
                    let values = &mut y.as_mut_slice()[arcs.clone()];
                    random_slice(self.seed, instance.stations()[m].id, arcs.map(|a| instance.demand(instance.arc_region_file(a))), values);
                }
                y
            }
        }
    }

    pub fn initial_prices(&self, instance: &CrpInstance) -> DualVector {
        let mut prices = DualVector::zeros(instance);
        if self.initial_prices == InitialPrices::OwnerMarginal {
            let load = mean_load(instance);
            for (q, price) in prices.as_mut_slice().iter_mut().enumerate() {
                let owner = instance.eligible(q)[0].0;
                *price = -instance.stations()[owner].utility.derivative(load);
            }
        }
        prices
    }
}

/// Random warm start of one station: its own ChaCha stream, one draw per
/// served region-file in ascending order.
pub(crate) fn random_slice(seed: u64, station: StationId, demands: impl Iterator<Item = f64>, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(station.0));
    for (v, demand) in out.iter_mut().zip(demands) {
        *v = rng.random::<f64>() * demand;
    }
}

/// Total demand divided by the number of stations.
pub fn mean_load(instance: &CrpInstance) -> f64 {
    instance.total_demand() / instance.station_count().max(1) as f64
}

/// Harmonic mean of `-U''` over stations, each at its load under the even
/// split. Heavily loaded stations have flat utilities and pull the scale down.
pub fn curvature_scale(instance: &CrpInstance) -> f64 {
    let even = RoutingVector::even_split(instance);
    let n = instance.station_count().max(1) as f64;
    let inverse: f64 = instance
        .stations()
        .iter()
        .enumerate()
        .map(|(m, s)| 1.0 / s.utility.curvature(crp::total_volume(instance, &even, m)))
        .sum();
    n / inverse
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOutcome {
    pub iterations: usize,
    /// False when `max_inner` stopped the loop.
    pub converged: bool,
    pub last_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub routing: RoutingVector,
    pub duals: DualVector,
    pub rho: f64,
    pub alpha: f64,
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    /// Outer iterations whose inner loop stopped at `max_inner` with the last
    /// change still above `eps_inner`.
    pub inner_cap_hits: usize,
    /// Feasibility residual of the primal iterate after each outer iteration.
    pub residual_history: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
}

/// Scratch buffers for per-station steps.
#[derive(Debug, Default)]
pub(crate) struct Sweeper {
    filler: BucketFiller,
    buckets: Vec<Bucket>,
    targets: Vec<f64>,
}

impl Sweeper {
    /// Relaxed best response of station index `m` to the iterate `shared`.
    /// Writes the station's new arc values into `out` and returns the largest
    /// change.
    pub(crate) fn station_step(
        &mut self,
        instance: &CrpInstance,
        m: usize,
        shared: &[f64],
        prices: &[f64],
        params: &Resolved,
        out: &mut [f64],
    ) -> Result<f64> {
        local_coefficients_into(instance, m, shared, prices, params.rho, &mut self.buckets);
        self.targets.clear();
        self.targets.resize(self.buckets.len(), 0.0);
        let utility = &instance.stations()[m].utility;
        self.filler.fill(&self.buckets, utility, params.rho, &mut self.targets, None)?;
        let mut change = 0.0_f64;
        for ((slot, &old), &target) in out.iter_mut().zip(&shared[instance.arcs(m)]).zip(&self.targets) {
            let new = relax(old, target, params.alpha);
            change = change.max((new - old).abs());
            *slot = new;
        }
        Ok(change)
    }

    /// One synchronous sweep over all stations; returns `max |next - shared|`.
    fn sweep(
        &mut self,
        instance: &CrpInstance,
        shared: &[f64],
        prices: &[f64],
        params: &Resolved,
        next: &mut [f64],
    ) -> Result<f64> {
        let mut change = 0.0_f64;
        for m in 0..instance.station_count() {
            let arcs = instance.arcs(m);
            let step = self.station_step(instance, m, shared, prices, params, &mut next[arcs])?;
            change = change.max(step);
        }
        Ok(change)
    }
}

#[inline]
pub(crate) fn relax(old: f64, target: f64, alpha: f64) -> f64 {
    old + alpha * (target - old)
}

/// Inner loop: Jacobi iterates from `warm_start` until the sup-norm change
/// drops to `eps_inner` or `max_inner` sweeps have run.
pub fn dqa_solve_primal(
    instance: &CrpInstance,
    prices: &DualVector,
    params: &Resolved,
    warm_start: &RoutingVector,
) -> Result<(RoutingVector, InnerOutcome)> {
    if warm_start.as_slice().len() != instance.arc_count() || prices.as_slice().len() != instance.region_file_count() {
        return Err(Error::InvalidInstance("warm start or prices do not match the instance".into()));
    }
    let mut sweeper = Sweeper::default();
    let mut current = warm_start.as_slice().to_vec();
    let mut next = current.clone();
    let outcome = inner_loop(&mut sweeper, instance, prices.as_slice(), params, &mut current, &mut next)?;
    Ok((RoutingVector::from_arc_values(instance, current)?, outcome))
}

fn inner_loop(
    sweeper: &mut Sweeper,
    instance: &CrpInstance,
    prices: &[f64],
    params: &Resolved,
    current: &mut Vec<f64>,
    next: &mut Vec<f64>,
) -> Result<InnerOutcome> {
    let mut change = f64::INFINITY;
    for iteration in 1..=params.max_inner {
        change = sweeper.sweep(instance, current, prices, params, next)?;
        core::mem::swap(current, next);
        if change <= params.eps_inner {
            return Ok(InnerOutcome { iterations: iteration, converged: true, last_change: change });
        }
    }
    Ok(InnerOutcome { iterations: params.max_inner, converged: false, last_change: change })
}

/// `lambda'_q = lambda_q + rho (N_q - sum_m y_{m,q})`.
pub fn dual_step(prices: &DualVector, routing: &RoutingVector, instance: &CrpInstance, rho: f64) -> DualVector {
    let mut next = prices.clone();
    for (q, price) in next.as_mut_slice().iter_mut().enumerate() {
        *price = price_update(*price, instance.demand(q), crp::routed_volume(instance, routing, q), rho);
    }
    next
}

#[inline]
pub(crate) fn price_update(price: f64, demand: f64, routed: f64, rho: f64) -> f64 {
    price + rho * (demand - routed)
}

/// KKT violation of a routing under a price vector on the box `[0, N]`:
/// the largest `|y - clamp(y + U'_m(v_m) + lambda_q, 0, N_q)|` over all arcs.
/// Zero together with a zero residual certifies an optimal routing (a
/// station at its cap then carries the whole region-file alone).
pub fn stationarity(instance: &CrpInstance, routing: &RoutingVector, prices: &DualVector) -> f64 {
    let y = routing.as_slice();
    let mut worst = 0.0_f64;
    for m in 0..instance.station_count() {
        let arcs = instance.arcs(m);
        let marginal = instance.stations()[m].utility.derivative(y[arcs.clone()].iter().sum());
        worst = worst.max(station_stationarity(
            marginal,
            arcs.map(|a| {
                let q = instance.arc_region_file(a);
                (y[a], prices.get(q), instance.demand(q))
            }),
        ));
    }
    worst
}

/// The same measure over one station's `(y, price, capacity)` triples.
#[inline]
pub(crate) fn station_stationarity(marginal: f64, arcs: impl Iterator<Item = (f64, f64, f64)>) -> f64 {
    arcs.map(|(y, price, cap)| (y - (y + marginal + price).clamp(0.0, cap)).abs()).fold(0.0, f64::max)
}

/// Outer stopping test: prices settled, the residual within tolerance and
/// complementary slackness within `eps_outer`. Prices and residual alone
/// cannot see traffic still shifting between stations that share a
/// region-file.
#[inline]
pub(crate) fn outer_done(price_change: f64, residual: f64, stationarity: f64, params: &Resolved) -> bool {
    price_change <= params.eps_outer && residual <= params.residual_tolerance && stationarity <= params.eps_outer
}

/// Full solve. Each inner loop starts from the previous primal iterate.
pub fn solve_crp(instance: &CrpInstance, cfg: &SolverConfig) -> Result<SolveReport> {
    let params = cfg.resolve(instance)?;
    let mut sweeper = Sweeper::default();
    let mut prices = cfg.initial_prices(instance);
    let mut current = cfg.initial_routing(instance).as_slice().to_vec();
    let mut next = current.clone();
    let mut residual_history = Vec::new();
    let mut inner_total = 0;
    let mut cap_hits = 0;
    let mut converged = false;
    let mut outer = 0;

    while outer < params.max_outer {
        outer += 1;
        let inner = inner_loop(&mut sweeper, instance, prices.as_slice(), &params, &mut current, &mut next)?;
        inner_total += inner.iterations;
        cap_hits += usize::from(!inner.converged);
        let routing = RoutingVector::from_arc_values(instance, core::mem::take(&mut current))?;
        let updated = dual_step(&prices, &routing, instance, params.rho);
        let residual = crp::feasibility_residual(instance, &routing);
        residual_history.push(residual);
        let change = max_abs_diff(updated.as_slice(), prices.as_slice());
        let gap = stationarity(instance, &routing, &updated);
        prices = updated;
        current = routing.into_values();
        if outer_done(change, residual, gap, &params) {
            converged = true;
            break;
        }
    }

    let routing = RoutingVector::from_arc_values(instance, current)?;
    Ok(SolveReport {
        objective: crp::objective(instance, &routing),
        routing,
        duals: prices,
        rho: params.rho,
        alpha: params.alpha,
        outer_iterations: outer,
        inner_iterations_total: inner_total,
        inner_cap_hits: cap_hits,
        residual_history,
        converged,
    })
}
