//! Trade dynamics: exchange rates, agent energies, the capital floor,
//! collapse cascades and the event-time loop.
//!
//! Each step opens `q` new contracts between a preferentially drawn producer
//! and consumer. A consumer whose capital drops below `c_th` collapses: it
//! keeps only its newest consumption link, and every producer that lost a
//! link is checked in turn (FIFO). A collapsed agent re-enters as a fresh
//! agent: it drops its production links and takes one new preferential
//! production link (more if that alone leaves it below the floor).

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{check_floor, SimConfig, TurnoverMode};
use crate::error::{Error, Result};
use crate::graph::{AgentId, Direction, EconomyNetwork, Edge};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeParams {
    pub alpha_max: f64,
    pub delta: f64,
    pub c_th: f64,
    pub q: f64,
    pub w: f64,
    pub turnover_mode: TurnoverMode,
}

impl Default for TradeParams {
    fn default() -> Self {
        Self::from(&SimConfig::default())
    }
}

impl From<&SimConfig> for TradeParams {
    fn from(c: &SimConfig) -> Self {
        Self {
            alpha_max: c.alpha_max,
            delta: c.delta,
            c_th: c.c_th,
            q: c.q,
            w: c.w,
            turnover_mode: c.turnover_mode,
        }
    }
}

/// `alpha_max / (1 + exp(-(k_out_i - k_in_j) / delta))`.
pub fn exchange_rate(k_out_i: usize, k_in_j: usize, p: &TradeParams) -> f64 {
    rate_for_difference(k_out_i as f64 - k_in_j as f64, p)
}

#[inline]
fn rate_for_difference(d: f64, p: &TradeParams) -> f64 {
    p.alpha_max / (1.0 + (-d / p.delta).exp())
}

const TABLE_HALF_WIDTH: i64 = 4096;

/// Exchange rates for integer degree differences in `[-4096, 4096]`, filled
/// by [`exchange_rate`] itself; values outside fall back to the formula.
#[derive(Debug, Clone)]
struct RateTable {
    rates: Vec<f64>,
    params: TradeParams,
}

impl RateTable {
    fn new(params: TradeParams) -> Self {
        let rates = (-TABLE_HALF_WIDTH..=TABLE_HALF_WIDTH)
            .map(|d| rate_for_difference(d as f64, &params))
            .collect();
        Self { rates, params }
    }

    #[inline]
    fn rate(&self, k_out_i: usize, k_in_j: usize) -> f64 {
        let d = k_out_i as i64 - k_in_j as i64;
        if d.abs() <= TABLE_HALF_WIDTH {
            self.rates[(d + TABLE_HALF_WIDTH) as usize]
        } else {
            rate_for_difference(d as f64, &self.params)
        }
    }
}

/// Net labor balance of agent `i` with exact exchange rates.
pub fn agent_energy_exact(net: &EconomyNetwork, i: AgentId, p: &TradeParams) -> f64 {
    let k_out_i = net.k_out(i);
    let k_in_i = net.k_in(i);
    let produced: f64 = net
        .consumers_of(i)
        .map(|j| p.w * (1.0 - exchange_rate(k_out_i, net.k_in(j), p)))
        .sum();
    let consumed: f64 = net
        .producers_of(i)
        .map(|m| p.w * (exchange_rate(net.k_out(m), k_in_i, p) - 1.0))
        .sum();
    produced + consumed
}

/// Mean-field balance `beta (k_out - k_in)`.
pub fn agent_energy_meanfield(k_out: usize, k_in: usize, beta: f64) -> f64 {
    beta * (k_out as f64 - k_in as f64)
}

/// Degree-based capital ratio.
pub fn capital(k_out: usize, k_in: usize, mode: TurnoverMode) -> Result<f64> {
    if k_in == 0 {
        return Err(Error::UndefinedCapital);
    }
    let (o, i) = (k_out as f64, k_in as f64);
    Ok(match mode {
        TurnoverMode::InOnly => o / i - 1.0,
        TurnoverMode::Total => (o - i) / (o + i),
    })
}

/// True iff agent `i` has at least one consumption link and its capital is
/// below the floor. Agents without consumption links have no leverage to
/// lose and never collapse.
pub fn collapse_check(net: &EconomyNetwork, i: AgentId, p: &TradeParams) -> bool {
    match capital(net.k_out(i), net.k_in(i), p.turnover_mode) {
        Ok(c) => c < p.c_th,
        Err(_) => false,
    }
}

/// Overall product `U_T = sum over edges of W (1 - alpha)`.
pub fn total_energy(net: &EconomyNetwork, p: &TradeParams) -> f64 {
    net.edges()
        .map(|e| p.w * (1.0 - exchange_rate(net.k_out(e.producer), net.k_in(e.consumer), p)))
        .sum()
}

/// Mean exchange rate over all edges; `beta = 1 - mean`.
pub fn mean_exchange_rate(net: &EconomyNetwork, p: &TradeParams) -> f64 {
    if net.n_edges() == 0 {
        return 1.0;
    }
    let sum: f64 = net
        .edges()
        .map(|e| exchange_rate(net.k_out(e.producer), net.k_in(e.consumer), p))
        .sum();
    sum / net.n_edges() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentEnergy {
    pub u_exact: f64,
    pub u_meanfield: f64,
    /// `None` while the agent has no consumption links.
    pub capital: Option<f64>,
    pub turnover: f64,
}

pub fn agent_energies(net: &EconomyNetwork, p: &TradeParams) -> Vec<AgentEnergy> {
    let beta = 1.0 - mean_exchange_rate(net, p);
    net.agents()
        .map(|i| {
            let (ko, ki) = (net.k_out(i), net.k_in(i));
            AgentEnergy {
                u_exact: agent_energy_exact(net, i, p),
                u_meanfield: agent_energy_meanfield(ko, ki, beta),
                capital: capital(ko, ki, p.turnover_mode).ok(),
                turnover: match p.turnover_mode {
                    TurnoverMode::InOnly => ki as f64,
                    TurnoverMode::Total => (ko + ki) as f64,
                },
            }
        })
        .collect()
}

/// One collapse chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvalancheRecord {
    /// Event-time step at which the chain started.
    pub t: usize,
    /// Agents collapsed (`r`).
    pub agents_lost: usize,
    /// Consumption links removed (`K_T`).
    pub links_destroyed: usize,
    /// Production links given to re-entering agents.
    pub links_created: usize,
    /// Production links dropped by collapsed agents on re-entry.
    pub links_retired: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mark {
    Untouched,
    Queued,
    Collapsed,
}

/// Runs the collapse chain started by `seed_agent` to completion.
///
/// On return no agent violates the capital floor. Each agent collapses at
/// most once per chain.
pub fn cascade<R: Rng + ?Sized>(
    net: &mut EconomyNetwork,
    seed_agent: AgentId,
    p: &TradeParams,
    rng: &mut R,
) -> AvalancheRecord {
    let mut marks = vec![Mark::Untouched; net.n_agents()];
    let mut queue = VecDeque::new();
    let mut rec = AvalancheRecord {
        t: 0,
        agents_lost: 0,
        links_destroyed: 0,
        links_created: 0,
        links_retired: 0,
    };
    if collapse_check(net, seed_agent, p) {
        marks[seed_agent.0] = Mark::Queued;
        queue.push_back(seed_agent);
    }
    // Collapsed agents whose capital must be restored, with whether they
    // are owed a fresh production link.
    let mut repair: Vec<(AgentId, bool)> = Vec::new();
    while let Some(i) = queue.pop_front() {
        marks[i.0] = Mark::Collapsed;
        rec.agents_lost += 1;
        let removed = net.remove_incoming(i, 1);
        rec.links_destroyed += removed.len();
        for e in removed {
            touch(net, e.producer, p, &mut marks, &mut queue, &mut repair);
        }
        rec.links_retired += net.remove_outgoing(i).len();
        repair.push((i, true));
        while let Some((a, fresh)) = repair.pop() {
            let mut first = fresh;
            while first || collapse_check(net, a, p) {
                first = false;
                let Some(c) = draw_consumer(net, a, &marks, rng) else {
                    break;
                };
                net.add_edge(a, c).expect("distinct agents");
                rec.links_created += 1;
                touch(net, c, p, &mut marks, &mut queue, &mut repair);
            }
        }
    }
    rec
}

/// Re-examines an agent whose degrees changed during a chain: untouched
/// violators join the queue, collapsed ones go back for repair.
fn touch(
    net: &EconomyNetwork,
    j: AgentId,
    p: &TradeParams,
    marks: &mut [Mark],
    queue: &mut VecDeque<AgentId>,
    repair: &mut Vec<(AgentId, bool)>,
) {
    match marks[j.0] {
        Mark::Untouched if collapse_check(net, j, p) => {
            marks[j.0] = Mark::Queued;
            queue.push_back(j);
        }
        Mark::Collapsed if collapse_check(net, j, p) => repair.push((j, false)),
        _ => {}
    }
}

fn draw_consumer<R: Rng + ?Sized>(
    net: &EconomyNetwork,
    producer: AgentId,
    marks: &[Mark],
    rng: &mut R,
) -> Option<AgentId> {
    let untouched = |a: AgentId| a != producer && marks[a.0] == Mark::Untouched;
    for _ in 0..64 {
        let a = net.sample_preferential(Direction::ByIn, rng);
        if untouched(a) {
            return Some(a);
        }
    }
    // Nearly everyone is caught up in the chain: weighted draw over the
    // untouched agents, or over everyone else once none are left.
    let mut eligible: Vec<AgentId> = net.agents().filter(|&a| untouched(a)).collect();
    if eligible.is_empty() {
        eligible = net.agents().filter(|&a| a != producer).collect();
    }
    let total: u64 = eligible
        .iter()
        .map(|&a| net.weight(a, Direction::ByIn))
        .sum();
    if total == 0 {
        return None;
    }
    let mut target = rng.random_range(0..total);
    for a in eligible {
        let w = net.weight(a, Direction::ByIn);
        if target < w {
            return Some(a);
        }
        target -= w;
    }
    None
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    pub links_added: usize,
    pub avalanches: Vec<AvalancheRecord>,
    pub u_total: f64,
}

/// A running simulation: network, parameters and RNG stream.
#[derive(Debug, Clone)]
pub struct Simulation {
    net: EconomyNetwork,
    params: TradeParams,
    table: RateTable,
    rng: ChaCha8Rng,
    t: usize,
    /// Per-edge `W (1 - alpha)`, indexed by edge id.
    contrib: Vec<f64>,
    u_total: f64,
    seen: Vec<usize>,
}

/// Steps between full recomputations of the running `U_T` sum.
const RESYNC_EVERY: usize = 4096;

impl Simulation {
    /// Builds the initial network and settles any agent that starts below
    /// the floor.
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = EconomyNetwork::init_with_rng(config.n, config.k0, &mut rng)?;
        Self::from_network(net, TradeParams::from(config), rng)
    }

    pub fn from_network(net: EconomyNetwork, params: TradeParams, rng: ChaCha8Rng) -> Result<Self> {
        check_floor(params.c_th)?;
        let mut sim = Self {
            net,
            table: RateTable::new(params),
            params,
            rng,
            t: 0,
            contrib: Vec::new(),
            u_total: 0.0,
            seen: Vec::new(),
        };
        sim.settle();
        sim.net.enable_journal();
        sim.resync_energy();
        Ok(sim)
    }

    fn edge_contribution(&self, e: Edge) -> f64 {
        self.params.w
            * (1.0
                - self
                    .table
                    .rate(self.net.k_out(e.producer), self.net.k_in(e.consumer)))
    }

    fn resync_energy(&mut self) {
        self.net.take_journal();
        self.contrib = vec![0.0; self.net.edge_id_bound()];
        self.seen = vec![usize::MAX; self.net.n_agents()];
        let mut total = 0.0;
        for (id, e) in self.net.edges_with_ids() {
            let c = self.edge_contribution(e);
            self.contrib[id] = c;
            total += c;
        }
        self.u_total = total;
    }

    /// Folds the network's change journal into the running `U_T`.
    fn update_energy(&mut self) {
        let journal = self.net.take_journal();
        if self.contrib.len() < self.net.edge_id_bound() {
            self.contrib.resize(self.net.edge_id_bound(), 0.0);
        }
        for id in journal.removed {
            self.u_total -= self.contrib[id];
            self.contrib[id] = 0.0;
        }
        for a in journal.touched {
            if self.seen[a.0] == self.t {
                continue;
            }
            self.seen[a.0] = self.t;
            let mut delta = 0.0;
            for (id, e) in self.net.incident_edges(a) {
                let c = self.edge_contribution(e);
                delta += c - self.contrib[id];
                self.contrib[id] = c;
            }
            self.u_total += delta;
        }
    }

    fn settle(&mut self) {
        loop {
            let violators: Vec<AgentId> = self
                .net
                .agents()
                .filter(|&a| collapse_check(&self.net, a, &self.params))
                .collect();
            if violators.is_empty() {
                return;
            }
            for a in violators {
                cascade(&mut self.net, a, &self.params, &mut self.rng);
            }
        }
    }

    pub fn network(&self) -> &EconomyNetwork {
        &self.net
    }

    pub fn params(&self) -> &TradeParams {
        &self.params
    }

    /// Steps taken so far.
    pub fn time(&self) -> usize {
        self.t
    }

    /// Running `U_T`; equal to [`total_energy`] up to rounding.
    pub fn total_energy(&self) -> f64 {
        self.u_total
    }

    fn links_this_step(&mut self) -> usize {
        let q = self.params.q;
        let whole = q.floor();
        let extra = usize::from(self.rng.random::<f64>() < q - whole);
        whole as usize + extra
    }

    /// One event-time step.
    pub fn step(&mut self) -> StepOutcome {
        let t = self.t;
        let n_links = self.links_this_step();
        let mut avalanches = Vec::new();
        for _ in 0..n_links {
            let producer = self
                .net
                .sample_preferential(Direction::ByOut, &mut self.rng);
            let consumer = self
                .net
                .sample_excluding(Direction::ByIn, producer, &mut self.rng);
            self.net
                .add_edge(producer, consumer)
                .expect("distinct agents");
            if collapse_check(&self.net, consumer, &self.params) {
                let mut rec = cascade(&mut self.net, consumer, &self.params, &mut self.rng);
                rec.t = t;
                avalanches.push(rec);
            }
        }
        if (t + 1).is_multiple_of(RESYNC_EVERY) {
            self.resync_energy();
        } else {
            self.update_energy();
        }
        self.t += 1;
        StepOutcome {
            links_added: n_links,
            avalanches,
            u_total: self.total_energy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub config: SimConfig,
    pub seed: u64,
    /// `U_T` after each recorded step.
    pub u_total: Vec<f64>,
    /// Relative changes of `U_T`; NaN where the previous value is zero.
    pub returns: Vec<f64>,
    pub avalanches: Vec<AvalancheRecord>,
    pub hist_in: BTreeMap<usize, usize>,
    pub hist_out: BTreeMap<usize, usize>,
    pub final_edges: usize,
}

impl SimulationOutput {
    /// Link counts of avalanches that destroyed at least one link.
    pub fn avalanche_link_sizes(&self) -> Vec<f64> {
        self.avalanches
            .iter()
            .filter(|a| a.links_destroyed > 0)
            .map(|a| a.links_destroyed as f64)
            .collect()
    }

    /// Secondary collapses per collapsed agent, pooled over all chains.
    pub fn branching_ratio(&self) -> f64 {
        branching_ratio(&self.avalanches)
    }
}

pub fn branching_ratio(avalanches: &[AvalancheRecord]) -> f64 {
    let total: usize = avalanches.iter().map(|a| a.agents_lost).sum();
    if total == 0 {
        return 0.0;
    }
    (total - avalanches.len()) as f64 / total as f64
}

/// `(U(t) - U(t-1)) / U(t-1)` for consecutive values.
pub fn relative_returns(u: &[f64]) -> Vec<f64> {
    u.windows(2)
        .map(|w| {
            if w[0] != 0.0 {
                (w[1] - w[0]) / w[0]
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Runs a full simulation and records everything after warmup.
pub fn run(config: &SimConfig) -> Result<SimulationOutput> {
    run_with_network(config).map(|(out, _)| out)
}

/// [`run`], also handing back the final network.
pub fn run_with_network(config: &SimConfig) -> Result<(SimulationOutput, EconomyNetwork)> {
    let mut sim = Simulation::new(config)?;
    let warmup = config.warmup_steps();
    for _ in 0..warmup {
        sim.step();
    }
    let recorded = config.recorded_steps();
    let mut u_total = Vec::with_capacity(recorded);
    let mut avalanches = Vec::new();
    for _ in 0..recorded {
        let out = sim.step();
        u_total.push(out.u_total);
        avalanches.extend(out.avalanches);
    }
    let mut net = sim.net;
    net.disable_journal();
    let out = SimulationOutput {
        config: config.clone(),
        seed: config.seed,
        returns: relative_returns(&u_total),
        u_total,
        avalanches,
        hist_in: net.degree_histogram(Direction::ByIn),
        hist_out: net.degree_histogram(Direction::ByOut),
        final_edges: net.n_edges(),
    };
    Ok((out, net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criticality::threshold_to_omega;
    use proptest::prelude::*;

    fn params(c_th: f64) -> TradeParams {
        TradeParams {
            c_th,
            ..TradeParams::default()
        }
    }

    #[test]
    fn exchange_rate_values() {
        let p = TradeParams::default();
        assert_eq!(exchange_rate(3, 3, &p), 1.0);
        let oracle = 2.0 / (1.0 + (-1.0f64).exp());
        assert!((exchange_rate(2, 1, &p) - oracle).abs() < 1e-15);
        assert!((oracle - 1.462_117).abs() < 1e-6);
        assert!(exchange_rate(0, 10_000, &p) >= 0.0);
        assert!(exchange_rate(10_000, 0, &p) <= 2.0);
    }

    #[test]
    fn exchange_rate_sharp_limit() {
        let p = TradeParams {
            delta: 1e-3,
            ..TradeParams::default()
        };
        assert!((exchange_rate(5, 4, &p) - 2.0).abs() < 1e-12);
        assert!(exchange_rate(4, 5, &p).abs() < 1e-12);
        assert_eq!(exchange_rate(4, 4, &p), 1.0);
    }

    #[test]
    fn table_matches_formula() {
        let p = TradeParams::default();
        let t = RateTable::new(p);
        for (o, i) in [(0, 0), (7, 2), (2, 7), (5000, 1), (1, 5000), (4096, 0)] {
            assert_eq!(t.rate(o, i), exchange_rate(o, i, &p));
        }
    }

    #[test]
    fn symmetric_pair_has_zero_energy() {
        let mut net = EconomyNetwork::empty(2);
        net.add_edge(AgentId(0), AgentId(1)).unwrap();
        let p = TradeParams::default();
        assert_eq!(agent_energy_exact(&net, AgentId(0), &p), 0.0);
        assert_eq!(total_energy(&net, &p), 0.0);
    }

    #[test]
    fn chain_energies_match_edge_oracle() {
        // 0 -> 1 -> 2: degrees k_out = [1, 1, 0], k_in = [0, 1, 1].
        let mut net = EconomyNetwork::empty(3);
        net.add_edge(AgentId(0), AgentId(1)).unwrap();
        net.add_edge(AgentId(1), AgentId(2)).unwrap();
        let p = TradeParams::default();
        let a01 = 2.0 / (1.0 + (-(1.0f64 - 1.0)).exp()); // k_out(0) - k_in(1) = 0
        let a12 = 2.0 / (1.0 + (-(1.0f64 - 1.0)).exp()); // k_out(1) - k_in(2) = 0
        let expect = [1.0 - a01, (a01 - 1.0) + (1.0 - a12), a12 - 1.0];
        for (i, e) in expect.iter().enumerate() {
            assert!((agent_energy_exact(&net, AgentId(i), &p) - e).abs() < 1e-15);
        }

        // Unbalanced star into agent 2: 0 -> 2 (x2), 1 -> 2.
        let mut net = EconomyNetwork::empty(3);
        net.add_edge(AgentId(0), AgentId(2)).unwrap();
        net.add_edge(AgentId(0), AgentId(2)).unwrap();
        net.add_edge(AgentId(1), AgentId(2)).unwrap();
        let rate = |d: f64| 2.0 / (1.0 + (-d).exp());
        let a0 = rate(2.0 - 3.0);
        let a1 = rate(1.0 - 3.0);
        let expect = [2.0 * (1.0 - a0), 1.0 - a1, 2.0 * (a0 - 1.0) + (a1 - 1.0)];
        for (i, e) in expect.iter().enumerate() {
            assert!((agent_energy_exact(&net, AgentId(i), &p) - e).abs() < 1e-14);
        }
        assert!((total_energy(&net, &p) - (expect[0] + expect[1])).abs() < 1e-14);
    }

    #[test]
    fn single_unbalanced_edge_contribution() {
        // producer 0 has k_out = 2 (second edge to 2), consumer 1 has k_in = 1.
        let mut net = EconomyNetwork::empty(4);
        net.add_edge(AgentId(0), AgentId(1)).unwrap();
        net.add_edge(AgentId(0), AgentId(2)).unwrap();
        let p = TradeParams::default();
        let oracle = 1.0 - 2.0 / (1.0 + (-1.0f64).exp());
        assert!((oracle - (1.0 - 1.462_117)).abs() < 1e-6);
        assert!((total_energy(&net, &p) - 2.0 * oracle).abs() < 1e-14);
    }

    #[test]
    fn capital_modes() {
        assert_eq!(capital(3, 3, TurnoverMode::InOnly).unwrap(), 0.0);
        assert_eq!(capital(3, 3, TurnoverMode::Total).unwrap(), 0.0);
        assert_eq!(capital(2, 1, TurnoverMode::InOnly).unwrap(), 1.0);
        assert!((capital(2, 1, TurnoverMode::Total).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(capital(1, 0, TurnoverMode::Total).is_err());
        let c = capital(1, 1_000_000, TurnoverMode::InOnly).unwrap();
        assert!((c + 1.0).abs() < 1e-5);
        let c = capital(1, 1_000_000, TurnoverMode::Total).unwrap();
        assert!((c + 1.0).abs() < 1e-5);
    }

    #[test]
    fn meanfield_balance() {
        assert_eq!(agent_energy_meanfield(4, 4, 0.3), 0.0);
        assert_eq!(agent_energy_meanfield(5, 2, 1.0), 3.0);
    }

    #[test]
    fn minimal_collapse() {
        // Agent 0 has k_in = 1 and k_out = 0: capital -1 under any floor.
        let mut net = EconomyNetwork::empty(12);
        net.add_edge(AgentId(1), AgentId(0)).unwrap();
        for a in 2..12 {
            net.add_edge(AgentId(a), AgentId(1)).unwrap();
            net.add_edge(AgentId(1), AgentId(a)).unwrap();
        }
        let p = params(-0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(collapse_check(&net, AgentId(0), &p));
        let rec = cascade(&mut net, AgentId(0), &p, &mut rng);
        assert_eq!(rec.agents_lost, 1);
        assert_eq!(rec.links_destroyed, 0);
        assert_eq!(rec.links_created, 1);
        assert!(!collapse_check(&net, AgentId(0), &p));
    }

    /// Hand-built six-agent fixture. Center 0 consumes from leaves 1..=5.
    /// Leaves 1 and 2 are marginal: each produces only for the center and
    /// consumes once, so losing the center contract leaves them with
    /// `k_out = 0`. Leaves 3..=5 produce for two other agents besides the
    /// center and stay solvent.
    #[test]
    fn star_cascade_drags_two_marginal_leaves() {
        let mut net = EconomyNetwork::empty(6);
        // Older center contracts first; the newest (from leaf 5) survives.
        for leaf in [1, 2, 3, 4, 5] {
            net.add_edge(AgentId(leaf), AgentId(0)).unwrap();
        }
        // Center production: one link keeps k_out(0) = 1.
        net.add_edge(AgentId(0), AgentId(3)).unwrap();
        // Marginal leaves consume once each.
        net.add_edge(AgentId(3), AgentId(1)).unwrap();
        net.add_edge(AgentId(4), AgentId(2)).unwrap();
        // Solvent leaves produce for two more agents and consume once.
        net.add_edge(AgentId(3), AgentId(4)).unwrap();
        net.add_edge(AgentId(4), AgentId(5)).unwrap();
        net.add_edge(AgentId(5), AgentId(4)).unwrap();
        net.add_edge(AgentId(5), AgentId(3)).unwrap();
        net.add_edge(AgentId(4), AgentId(3)).unwrap();
        net.add_edge(AgentId(3), AgentId(5)).unwrap();
        let p = params(-0.5);
        // Hand simulation, total turnover, floor -1/2:
        //   center: k_out 1, k_in 5 -> (1-5)/6 = -0.667 < -0.5, collapses;
        //   leaves 1..=4 each lose their center contract:
        //   leaf 1: k_out 1 -> 0, k_in 1 -> -1, collapses;
        //   leaf 2: same, collapses;
        //   leaf 3: k_out 4 -> 3, and the center drops its own contract
        //   with leaf 3 on re-entry, k_in 3 -> 2, capital 0.2, fine;
        //   leaf 4: k_out 4 -> 3, k_in 2 -> 0.2, fine.
        for a in [1, 2, 3, 4, 5] {
            assert!(
                !collapse_check(&net, AgentId(a), &p),
                "agent {a} starts solvent"
            );
        }
        assert!(collapse_check(&net, AgentId(0), &p));
        let before = net.n_edges();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = cascade(&mut net, AgentId(0), &p, &mut rng);
        assert_eq!(rec.agents_lost, 3);
        assert_eq!(rec.links_destroyed, 4);
        assert_eq!(rec.links_retired, 1);
        assert_eq!(
            net.n_edges(),
            before - 4 - rec.links_retired + rec.links_created
        );
        assert_eq!(net.k_in(AgentId(0)), 1);
        assert_eq!(net.producers_of(AgentId(0)).next(), Some(AgentId(5)));
        for a in net.agents() {
            assert!(!collapse_check(&net, a, &p), "agent {a} left below floor");
        }
        assert!(net.is_consistent());
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = SimConfig {
            n: 200,
            steps: 3000,
            warmup: Some(1000),
            seed: 17,
            ..SimConfig::default()
        };
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.u_total.len(), 2000);
        assert_eq!(a.returns.len(), 1999);
    }

    #[test]
    fn fractional_q_mean() {
        let cfg = SimConfig {
            n: 100,
            q: 1.25,
            steps: 4000,
            warmup: Some(0),
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(&cfg).unwrap();
        let added: usize = (0..4000).map(|_| sim.step().links_added).sum();
        assert!((added as f64 / 4000.0 - 1.25).abs() < 0.03);
    }

    #[test]
    fn invariants_hold_during_run() {
        for mode in [TurnoverMode::Total, TurnoverMode::InOnly] {
            let cfg = SimConfig {
                n: 300,
                steps: 5000,
                warmup: Some(0),
                turnover_mode: mode,
                c_th: -0.6,
                ..SimConfig::default()
            };
            let mut sim = Simulation::new(&cfg).unwrap();
            for s in 0..5000 {
                let out = sim.step();
                let net = sim.network();
                for a in net.agents() {
                    assert!(!collapse_check(net, a, sim.params()));
                }
                for av in &out.avalanches {
                    assert!(av.agents_lost >= 1);
                }
                if s % 250 == 0 {
                    assert!(net.is_consistent());
                    let e = agent_energies(net, sim.params());
                    let exact: f64 = e.iter().map(|x| x.u_exact).sum();
                    let mf: f64 = e.iter().map(|x| x.u_meanfield).sum();
                    let tol = 1e-9 * net.n_edges().max(1) as f64;
                    assert!(exact.abs() <= tol && mf.abs() <= tol);
                    assert!((out.u_total - total_energy(net, sim.params())).abs() <= tol);
                }
            }
        }
    }

    #[test]
    fn long_chains_fit_in_a_small_stack() {
        // A floor just below zero makes nearly every agent collapse in long
        // chains.
        let handle = std::thread::Builder::new()
            .stack_size(64 * 1024)
            .spawn(|| {
                let cfg = SimConfig {
                    n: 300,
                    c_th: -0.3,
                    steps: 2000,
                    warmup: Some(0),
                    seed: 4,
                    ..SimConfig::default()
                };
                let mut sim = Simulation::new(&cfg).unwrap();
                for _ in 0..cfg.steps {
                    sim.step();
                }
                let net = sim.network();
                net.agents().all(|i| !collapse_check(net, i, sim.params()))
            })
            .unwrap();
        assert!(handle.join().unwrap());
    }

    #[test]
    fn running_energy_tracks_full_sum() {
        for c_th in [-0.71, -0.45] {
            let cfg = SimConfig {
                n: 200,
                steps: 6000,
                warmup: Some(0),
                c_th,
                ..SimConfig::default()
            };
            let mut sim = Simulation::new(&cfg).unwrap();
            for _ in 0..6000 {
                let out = sim.step();
                let full = total_energy(sim.network(), sim.params());
                let tol = 1e-9 * sim.network().n_edges().max(1) as f64;
                assert!(
                    (out.u_total - full).abs() <= tol,
                    "{} vs {full}",
                    out.u_total
                );
            }
        }
    }

    #[test]
    fn returns_follow_definition() {
        let u = [2.0, 3.0, 0.0, 5.0];
        let r = relative_returns(&u);
        assert_eq!(r[0], 0.5);
        assert_eq!(r[1], -1.0);
        assert!(r[2].is_nan());
    }

    proptest! {
        #[test]
        fn total_mode_threshold_is_leverage_boundary(
            k_out in 0usize..=200,
            k_in in 1usize..=200,
            c_th in -0.95f64..0.95,
        ) {
            let omega = threshold_to_omega(c_th).unwrap();
            let c = capital(k_out, k_in, TurnoverMode::Total).unwrap();
            let lhs = c < c_th;
            let rhs = (k_out as f64) < omega * k_in as f64;
            // The two forms differ only within rounding of the boundary.
            let margin = (k_out as f64 - omega * k_in as f64).abs();
            prop_assume!(margin > 1e-9 * (k_out + k_in) as f64);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn exchange_rate_monotone(a in 0usize..300, b in 0usize..300, c in 0usize..300) {
            let p = TradeParams::default();
            let r1 = exchange_rate(a, c, &p);
            let r2 = exchange_rate(b, c, &p);
            if a < b { prop_assert!(r1 <= r2); }
            prop_assert!(r1 > 0.0 && r1 <= 2.0);
        }
    }
}
