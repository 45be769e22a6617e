//! The solver run as round-synchronous message passing between stations.
//!
//! Every station is an agent holding only its own utility, the demands of the
//! region-files it can serve, the last shares its neighbors reported for
//! those region-files, and their prices. Neighbors are stations sharing at
//! least one region-file. The price of a region-file is kept by its owner,
//! the lowest-id eligible station.
//!
//! Global stopping tests are all-reduces through the lowest-id station (a
//! gather followed by a broadcast). They are the only messages allowed between
//! non-neighbors, and they are counted like every other message.
//!
//! The resolved numeric parameters (penalty, relaxation, tolerances) and the
//! mean load used for starting prices are handed to all agents at setup, the
//! same way the utilities' soft limits are.
//!
//! Agents perform exactly the arithmetic of [`solve_crp`](crate::solve_crp)
//! in the same order, so both produce bit-identical iterates.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use crate::bucket::{Bucket, BucketFiller};
use crate::crp::{self, CrpInstance, DualVector, RoutingVector};
use crate::error::{Error, Result};
use crate::netgen::StationId;
use crate::solver::{self, price_update, relax, InitialPrices, Resolved, SolveReport, SolverConfig, WarmStart};
use crate::utility::{Utility, UtilitySpec};

/// Neighbor graph and price ownership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    /// Sorted neighbor lists, aligned with the instance's station order.
    neighbors: Vec<Vec<StationId>>,
    ids: Vec<StationId>,
    /// Owner of every region-file.
    owners: Vec<StationId>,
}

impl Topology {
    pub fn neighbors(&self, station: StationId) -> &[StationId] {
        match self.ids.binary_search(&station) {
            Ok(m) => &self.neighbors[m],
            Err(_) => &[],
        }
    }

    pub fn owner(&self, q: usize) -> StationId {
        self.owners[q]
    }

    /// Edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(StationId, StationId)> {
        let mut out = Vec::new();
        for (m, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&n| n > self.ids[m]).map(|&n| (self.ids[m], n)));
        }
        out
    }

    pub fn are_neighbors(&self, a: StationId, b: StationId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }
}

pub fn build_topology(instance: &CrpInstance) -> Topology {
    let ids: Vec<StationId> = instance.stations().iter().map(|s| s.id).collect();
    let mut sets: Vec<BTreeSet<StationId>> = alloc::vec![BTreeSet::new(); ids.len()];
    let mut owners = Vec::with_capacity(instance.region_file_count());
    for q in 0..instance.region_file_count() {
        let eligible = instance.eligible(q);
        owners.push(ids[eligible[0].0]);
        for &(a, _) in eligible {
            for &(b, _) in eligible {
                if a != b {
                    sets[a].insert(ids[b]);
                }
            }
        }
    }
    Topology { neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(), ids, owners }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MessageKind {
    /// The sender's routed volume for region-file `q`.
    PrimalShare { q: usize, value: f64 },
    /// The owner's price of region-file `q`.
    PriceUpdate { q: usize, value: f64 },
    /// Largest local change of the last Jacobi sweep (all-reduce).
    InnerNorm { value: f64 },
    /// Largest local price change, residual and complementary-slackness
    /// violation after a dual step (all-reduce).
    Control { price_change: f64, residual: f64, stationarity: f64 },
}

impl MessageKind {
    fn region_file(&self) -> Option<usize> {
        match *self {
            MessageKind::PrimalShare { q, .. } | MessageKind::PriceUpdate { q, .. } => Some(q),
            _ => None,
        }
    }

    fn slot(&self) -> usize {
        match self {
            MessageKind::PrimalShare { .. } => 0,
            MessageKind::PriceUpdate { .. } => 1,
            MessageKind::InnerNorm { .. } => 2,
            MessageKind::Control { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub sender: StationId,
    pub receiver: StationId,
    pub round: u64,
    pub kind: MessageKind,
}

/// What a delivery round was for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    /// Starting shares and prices.
    Setup,
    /// Shares after one Jacobi sweep.
    Sweep,
    /// Prices after a dual step.
    Prices,
    Gather,
    Broadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KindCounts {
    pub primal_share: u64,
    pub price_update: u64,
    pub inner_norm: u64,
    pub control: u64,
}

impl KindCounts {
    fn bump(&mut self, kind: &MessageKind) {
        match kind.slot() {
            0 => self.primal_share += 1,
            1 => self.price_update += 1,
            2 => self.inner_norm += 1,
            _ => self.control += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.primal_share + self.price_update + self.inner_norm + self.control
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundStats {
    pub round: u64,
    pub phase: Phase,
    pub counts: KindCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MessageStats {
    pub totals: KindCounts,
    pub rounds: Vec<RoundStats>,
}

/// Round-synchronous bus. Messages sent during a round are validated on
/// send, then handed out at the barrier sorted by `(sender, receiver, q)`.
#[derive(Debug)]
pub struct MessageBus<'a> {
    instance: &'a CrpInstance,
    topology: &'a Topology,
    round: u64,
    outbox: Vec<Message>,
    stats: MessageStats,
    trace: Option<Vec<Message>>,
}

impl<'a> MessageBus<'a> {
    pub fn new(instance: &'a CrpInstance, topology: &'a Topology, record: bool) -> Self {
        Self { instance, topology, round: 0, outbox: Vec::new(), stats: MessageStats::default(), trace: record.then(Vec::new) }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Queue a message for the current round.
    ///
    /// Shares travel only between stations eligible for the same region-file,
    /// prices only from a region-file's owner to its other eligible stations.
    /// Norm and control messages belong to the all-reduce and go between any
    /// two distinct stations.
    pub fn send(&mut self, sender: StationId, receiver: StationId, kind: MessageKind) -> Result<()> {
        let refuse = |why: &str| Err(Error::InvalidInstance(format!("message {sender} -> {receiver} refused: {why}")));
        if sender == receiver {
            return refuse("sender and receiver coincide");
        }
        if let Some(q) = kind.region_file() {
            if q >= self.instance.region_file_count() {
                return refuse("unknown region-file");
            }
            let eligible = |id: StationId| self.instance.eligible(q).iter().any(|&(m, _)| self.instance.stations()[m].id == id);
            if !eligible(sender) || !eligible(receiver) {
                return refuse("both ends must be eligible for the region-file");
            }
            if matches!(kind, MessageKind::PriceUpdate { .. }) && self.topology.owner(q) != sender {
                return refuse("only the owner sends prices");
            }
        } else if self.instance.station_index(sender).is_none() || self.instance.station_index(receiver).is_none() {
            return refuse("unknown station");
        }
        self.outbox.push(Message { sender, receiver, round: self.round, kind });
        Ok(())
    }

    /// Close the round: returns its messages in delivery order.
    pub fn deliver(&mut self, phase: Phase) -> Vec<Message> {
        let mut batch = core::mem::take(&mut self.outbox);
        batch.sort_by_key(|m| (m.sender, m.receiver, m.kind.region_file()));
        let mut counts = KindCounts::default();
        for m in &batch {
            counts.bump(&m.kind);
            self.stats.totals.bump(&m.kind);
        }
        self.stats.rounds.push(RoundStats { round: self.round, phase, counts });
        if let Some(trace) = self.trace.as_mut() {
            trace.extend_from_slice(&batch);
        }
        self.round += 1;
        batch
    }
}

/// Everything one station knows.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: StationId,
    utility: UtilitySpec,
    /// Region-files this station may serve, ascending.
    served: Vec<usize>,
    demand: Vec<f64>,
    /// Per served region-file: eligible station ids (ascending), the last
    /// share reported by each, and this station's position among them.
    peers: Vec<Vec<StationId>>,
    shares: Vec<Vec<f64>>,
    me: Vec<usize>,
    prices: Vec<f64>,
    owned: Vec<bool>,
    filler: BucketFiller,
    buckets: Vec<Bucket>,
    targets: Vec<f64>,
}

impl AgentState {
    /// Extract station index `m`'s local view of the instance.
    pub fn new(instance: &CrpInstance, m: usize) -> Self {
        let station = instance.stations()[m];
        let served = instance.served(m).to_vec();
        let mut peers = Vec::with_capacity(served.len());
        let mut me = Vec::with_capacity(served.len());
        for &q in &served {
            let ids: Vec<StationId> = instance.eligible(q).iter().map(|&(i, _)| instance.stations()[i].id).collect();
            me.push(ids.binary_search(&station.id).expect("served region-files list the station"));
            peers.push(ids);
        }
        let owned = peers.iter().map(|p| p[0] == station.id).collect();
        Self {
            id: station.id,
            utility: station.utility,
            demand: served.iter().map(|&q| instance.demand(q)).collect(),
            shares: peers.iter().map(|p| alloc::vec![0.0; p.len()]).collect(),
            prices: alloc::vec![0.0; served.len()],
            served,
            peers,
            me,
            owned,
            filler: BucketFiller::default(),
            buckets: Vec::new(),
            targets: Vec::new(),
        }
    }

    /// Stations whose data this agent holds, itself excluded.
    pub fn known_stations(&self) -> BTreeSet<StationId> {
        self.peers.iter().flatten().copied().filter(|&s| s != self.id).collect()
    }

    fn local(&self, q: usize) -> Option<usize> {
        self.served.binary_search(&q).ok()
    }

    fn own_share(&self, k: usize) -> f64 {
        self.shares[k][self.me[k]]
    }

    fn set_start(&mut self, warm: WarmStart, seed: u64) {
        let values: Vec<f64> = match warm {
            WarmStart::Zero => alloc::vec![0.0; self.served.len()],
            WarmStart::EvenSplit => (0..self.served.len()).map(|k| self.demand[k] / self.peers[k].len() as f64).collect(),
            WarmStart::Random => {
                let mut out = alloc::vec![0.0; self.served.len()];
                solver::random_slice(seed, self.id, self.demand.iter().copied(), &mut out);
                out
            }
        };
        for (k, v) in values.into_iter().enumerate() {
            let me = self.me[k];
            self.shares[k][me] = v;
        }
    }

    fn share_all(&self, bus: &mut MessageBus) -> Result<()> {
        for (k, &q) in self.served.iter().enumerate() {
            let value = self.own_share(k);
            for &peer in self.peers[k].iter().filter(|&&p| p != self.id) {
                bus.send(self.id, peer, MessageKind::PrimalShare { q, value })?;
            }
        }
        Ok(())
    }

    fn send_prices(&self, bus: &mut MessageBus) -> Result<()> {
        for (k, &q) in self.served.iter().enumerate().filter(|(k, _)| self.owned[*k]) {
            for &peer in &self.peers[k][1..] {
                bus.send(self.id, peer, MessageKind::PriceUpdate { q, value: self.prices[k] })?;
            }
        }
        Ok(())
    }

    /// Relaxed bucket-fill step on the current view; returns the local change.
    fn sweep(&mut self, params: &Resolved) -> Result<f64> {
        self.buckets.clear();
        for (k, &q) in self.served.iter().enumerate() {
            let me = self.me[k];
            let others: f64 = self.shares[k].iter().enumerate().filter(|&(i, _)| i != me).map(|(_, &v)| v).sum();
            let capacity = self.demand[k];
            self.buckets.push(Bucket { region_file: q, coefficient: self.prices[k] + params.rho * (capacity - others), capacity });
        }
        self.targets.clear();
        self.targets.resize(self.buckets.len(), 0.0);
        self.filler.fill(&self.buckets, &self.utility, params.rho, &mut self.targets, None)?;
        let mut change = 0.0_f64;
        for k in 0..self.served.len() {
            let me = self.me[k];
            let old = self.shares[k][me];
            let new = relax(old, self.targets[k], params.alpha);
            change = change.max((new - old).abs());
            self.shares[k][me] = new;
        }
        Ok(change)
    }

    /// Dual step for owned region-files; returns the max price change and
    /// max residual, with a zero slot for the stationarity filled in later.
    fn dual_step(&mut self, rho: f64) -> [f64; 3] {
        let (mut change, mut residual) = (0.0_f64, 0.0_f64);
        for k in (0..self.served.len()).filter(|&k| self.owned[k]) {
            let routed: f64 = self.shares[k].iter().sum();
            let price = price_update(self.prices[k], self.demand[k], routed, rho);
            change = change.max((price - self.prices[k]).abs());
            residual = residual.max((self.demand[k] - routed).abs());
            self.prices[k] = price;
        }
        [change, residual, 0.0]
    }

    /// Local complementary-slackness violation under the current prices.
    fn stationarity(&self) -> f64 {
        let volume: f64 = (0..self.served.len()).map(|k| self.own_share(k)).sum();
        let marginal = self.utility.derivative(volume);
        solver::station_stationarity(marginal, (0..self.served.len()).map(|k| (self.own_share(k), self.prices[k], self.demand[k])))
    }

    fn receive(&mut self, msg: &Message) -> Result<()> {
        let q = msg.kind.region_file().expect("only region-file messages are routed to agents");
        let k = self.local(q).ok_or_else(|| Error::InvalidInstance(format!("{} got a message for foreign q {q}", self.id)))?;
        match msg.kind {
            MessageKind::PrimalShare { value, .. } => {
                let pos = self.peers[k].binary_search(&msg.sender).map_err(|_| {
                    Error::InvalidInstance(format!("{} got a share from non-neighbor {}", self.id, msg.sender))
                })?;
                self.shares[k][pos] = value;
            }
            MessageKind::PriceUpdate { value, .. } => self.prices[k] = value,
            _ => unreachable!(),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedReport {
    pub report: SolveReport,
    pub stats: MessageStats,
    pub trace: Option<Vec<Message>>,
}

/// Run the solver as message passing. With `record_trace` every message is
/// kept in delivery order.
pub fn run_distributed(instance: &CrpInstance, cfg: &SolverConfig, record_trace: bool) -> Result<DistributedReport> {
    let params = cfg.resolve(instance)?;
    let topology = build_topology(instance);
    let mut bus = MessageBus::new(instance, &topology, record_trace);
    let mut agents: Vec<AgentState> = (0..instance.station_count()).map(|m| AgentState::new(instance, m)).collect();
    let load = solver::mean_load(instance);

    for agent in agents.iter_mut() {
        agent.set_start(cfg.warm_start, cfg.seed);
        if cfg.initial_prices == InitialPrices::OwnerMarginal {
            let start = -agent.utility.derivative(load);
            for k in (0..agent.served.len()).filter(|&k| agent.owned[k]) {
                agent.prices[k] = start;
            }
        }
    }
    for agent in &agents {
        agent.share_all(&mut bus)?;
        agent.send_prices(&mut bus)?;
    }
    dispatch(&mut agents, bus.deliver(Phase::Setup))?;

    let mut residual_history = Vec::new();
    let mut inner_total = 0;
    let mut cap_hits = 0;
    let mut converged = false;
    let mut outer = 0;
    while outer < params.max_outer {
        outer += 1;
        let mut inner_converged = false;
        let mut sweeps = 0;
        while sweeps < params.max_inner {
            sweeps += 1;
            let mut local = Vec::with_capacity(agents.len());
            for agent in agents.iter_mut() {
                local.push(agent.sweep(&params)?);
            }
            for agent in &agents {
                agent.share_all(&mut bus)?;
            }
            dispatch(&mut agents, bus.deliver(Phase::Sweep))?;
            let change = all_reduce(&mut bus, &agents, &local, |v| MessageKind::InnerNorm { value: v[0] }, |v| [v, 0.0, 0.0])?[0];
            if change <= params.eps_inner {
                inner_converged = true;
                break;
            }
        }
        inner_total += sweeps;
        cap_hits += usize::from(!inner_converged);

        let mut local = Vec::with_capacity(agents.len());
        for agent in agents.iter_mut() {
            local.push(agent.dual_step(params.rho));
        }
        for agent in &agents {
            agent.send_prices(&mut bus)?;
        }
        dispatch(&mut agents, bus.deliver(Phase::Prices))?;
        for (agent, v) in agents.iter().zip(local.iter_mut()) {
            v[2] = agent.stationarity();
        }
        let [change, residual, gap] = all_reduce(
            &mut bus,
            &agents,
            &local,
            |v| MessageKind::Control { price_change: v[0], residual: v[1], stationarity: v[2] },
            |v| v,
        )?;
        residual_history.push(residual);
        if solver::outer_done(change, residual, gap, &params) {
            converged = true;
            break;
        }
    }

    let mut routing = RoutingVector::zeros(instance);
    let mut duals = DualVector::zeros(instance);
    for (m, agent) in agents.iter().enumerate() {
        for (k, arc) in instance.arcs(m).enumerate() {
            routing.as_mut_slice()[arc] = agent.own_share(k);
            if agent.owned[k] {
                duals.as_mut_slice()[agent.served[k]] = agent.prices[k];
            }
        }
    }
    let report = SolveReport {
        objective: crp::objective(instance, &routing),
        routing,
        duals,
        rho: params.rho,
        alpha: params.alpha,
        outer_iterations: outer,
        inner_iterations_total: inner_total,
        inner_cap_hits: cap_hits,
        residual_history,
        converged,
    };
    let stats = core::mem::take(&mut bus.stats);
    Ok(DistributedReport { report, stats, trace: bus.trace.take() })
}

fn dispatch(agents: &mut [AgentState], batch: Vec<Message>) -> Result<()> {
    for msg in &batch {
        let m = agents.binary_search_by_key(&msg.receiver, |a| a.id).expect("bus validated the receiver");
        agents[m].receive(msg)?;
    }
    Ok(())
}

/// Elementwise max-reduce: every agent sends its local values to the
/// lowest-id agent, which broadcasts the maxima back.
fn all_reduce<T: Copy>(
    bus: &mut MessageBus,
    agents: &[AgentState],
    local: &[T],
    wrap: impl Fn([f64; 3]) -> MessageKind,
    values: impl Fn(T) -> [f64; 3],
) -> Result<[f64; 3]> {
    let leader = agents[0].id;
    let mut global = values(local[0]);
    for (agent, &value) in agents.iter().zip(local).skip(1) {
        bus.send(agent.id, leader, wrap(values(value)))?;
    }
    for msg in bus.deliver(Phase::Gather) {
        for (g, v) in global.iter_mut().zip(unwrap_values(&msg.kind)) {
            *g = g.max(v);
        }
    }
    for agent in &agents[1..] {
        bus.send(leader, agent.id, wrap(global))?;
    }
    let received = bus.deliver(Phase::Broadcast);
    debug_assert!(received.iter().all(|m| unwrap_values(&m.kind) == global));
    Ok(global)
}

fn unwrap_values(kind: &MessageKind) -> [f64; 3] {
    match *kind {
        MessageKind::InnerNorm { value } => [value, 0.0, 0.0],
        MessageKind::Control { price_change, residual, stationarity } => [price_change, residual, stationarity],
        _ => unreachable!("all-reduce carries norms only"),
    }
}

/// PrimalShare messages one sweep sends: `sum_q |E(q)| (|E(q)| - 1)`.
pub fn shares_per_sweep(instance: &CrpInstance) -> u64 {
    (0..instance.region_file_count())
        .map(|q| {
            let k = instance.eligible(q).len() as u64;
            k * (k - 1)
        })
        .sum()
}
