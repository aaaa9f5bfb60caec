//! Directed trade multigraph.
//!
//! An edge `producer -> consumer` is one labor contract: outgoing (production)
//! for the producer, incoming (consumption) for the consumer. Parallel edges
//! are allowed, self-loops are not. Two Fenwick trees hold the smoothed
//! preferential weights `k + 1` so that draws and degree updates are both
//! `O(log n)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub usize);

impl AgentId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which degree drives a preferential draw or a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ByIn,
    ByOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub producer: AgentId,
    pub consumer: AgentId,
}

/// Binary indexed tree over non-negative integer weights.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<u64>,
    total: u64,
}

impl Fenwick {
    fn with_uniform(n: usize, w: u64) -> Self {
        let mut tree = vec![0u64; n + 1];
        for i in 1..=n {
            tree[i] += w;
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i];
            }
        }
        Self {
            tree,
            total: w * n as u64,
        }
    }

    fn add(&mut self, idx: usize, delta: i64) {
        let n = self.tree.len() - 1;
        let mut i = idx + 1;
        while i <= n {
            self.tree[i] = self.tree[i].wrapping_add(delta as u64);
            i += i & i.wrapping_neg();
        }
        self.total = self.total.wrapping_add(delta as u64);
    }

    /// Smallest index whose prefix sum exceeds `target`.
    fn find(&self, mut target: u64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0usize;
        let mut step = if n == 0 {
            0
        } else {
            1usize << (usize::BITS - 1 - n.leading_zeros())
        };
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos
    }
}

#[derive(Debug, Clone, Copy)]
struct EdgeSlot {
    producer: usize,
    consumer: usize,
    /// Position of this edge in the producer's outgoing list.
    out_pos: usize,
}

/// Directed trade multigraph with cached degrees and a preferential sampling
/// index.
#[derive(Debug, Clone)]
pub struct EconomyNetwork {
    n_agents: usize,
    slots: Vec<Option<EdgeSlot>>,
    free: Vec<usize>,
    n_edges: usize,
    /// Incoming edge ids per agent, oldest first.
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    in_index: Fenwick,
    out_index: Fenwick,
    journal: Option<ChangeJournal>,
}

/// Mutations recorded since the journal was last drained: freed edge ids and
/// agents whose degrees changed (with repeats).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChangeJournal {
    pub removed: Vec<usize>,
    pub touched: Vec<AgentId>,
}

impl EconomyNetwork {
    /// Network of `n` agents with no connections.
    pub fn empty(n: usize) -> Self {
        Self {
            n_agents: n,
            slots: Vec::new(),
            free: Vec::new(),
            n_edges: 0,
            in_edges: vec![Vec::new(); n],
            out_edges: vec![Vec::new(); n],
            in_index: Fenwick::with_uniform(n, 1),
            out_index: Fenwick::with_uniform(n, 1),
            journal: None,
        }
    }

    /// Every agent gets exactly `k0` production links; each consumer is drawn
    /// preferentially on the current in-degree.
    pub fn init(n: usize, k0: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(n, k0, &mut rng)
    }

    pub fn init_with_rng<R: Rng + ?Sized>(n: usize, k0: usize, rng: &mut R) -> Result<Self> {
        if n < 10 {
            return Err(Error::InvalidParameter(format!(
                "n = {n} must be at least 10"
            )));
        }
        if k0 == 0 || k0 >= n {
            return Err(Error::InvalidParameter(format!(
                "k0 = {k0} must lie in [1, n)"
            )));
        }
        let mut net = Self::empty(n);
        for producer in 0..n {
            for _ in 0..k0 {
                let consumer = net.sample_excluding(Direction::ByIn, AgentId(producer), rng);
                net.add_edge(AgentId(producer), consumer)?;
            }
        }
        Ok(net)
    }

    #[inline]
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    #[inline]
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    #[inline]
    pub fn k_in(&self, a: AgentId) -> usize {
        self.in_edges[a.0].len()
    }

    #[inline]
    pub fn k_out(&self, a: AgentId) -> usize {
        self.out_edges[a.0].len()
    }

    pub fn degree(&self, a: AgentId, direction: Direction) -> usize {
        match direction {
            Direction::ByIn => self.k_in(a),
            Direction::ByOut => self.k_out(a),
        }
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentId> {
        (0..self.n_agents).map(AgentId)
    }

    /// All live edges in slot order.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.slots.iter().flatten().map(|s| Edge {
            producer: AgentId(s.producer),
            consumer: AgentId(s.consumer),
        })
    }

    /// Agents this agent produces for (one entry per edge).
    pub fn consumers_of(&self, a: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        self.out_edges[a.0]
            .iter()
            .map(move |&e| AgentId(self.slot(e).consumer))
    }

    /// Agents producing for this agent (one entry per edge), oldest first.
    pub fn producers_of(&self, a: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        self.in_edges[a.0]
            .iter()
            .map(move |&e| AgentId(self.slot(e).producer))
    }

    /// Upper bound (exclusive) on edge ids.
    pub fn edge_id_bound(&self) -> usize {
        self.slots.len()
    }

    /// Edge ids and endpoints of every edge touching `a`, outgoing first.
    pub fn incident_edges(&self, a: AgentId) -> impl Iterator<Item = (usize, Edge)> + '_ {
        self.out_edges[a.0]
            .iter()
            .chain(self.in_edges[a.0].iter())
            .map(move |&id| {
                let s = self.slot(id);
                let e = Edge {
                    producer: AgentId(s.producer),
                    consumer: AgentId(s.consumer),
                };
                (id, e)
            })
    }

    /// Live edges with their ids.
    pub fn edges_with_ids(&self) -> impl Iterator<Item = (usize, Edge)> + '_ {
        self.slots.iter().enumerate().filter_map(|(id, s)| {
            s.map(|s| {
                let e = Edge {
                    producer: AgentId(s.producer),
                    consumer: AgentId(s.consumer),
                };
                (id, e)
            })
        })
    }

    /// Starts recording mutations; see [`EconomyNetwork::take_journal`].
    pub fn enable_journal(&mut self) {
        self.journal.get_or_insert_with(ChangeJournal::default);
    }

    pub fn disable_journal(&mut self) {
        self.journal = None;
    }

    /// Drains the journal, leaving recording on if it was on.
    pub fn take_journal(&mut self) -> ChangeJournal {
        self.journal
            .as_mut()
            .map(std::mem::take)
            .unwrap_or_default()
    }

    fn note(&mut self, removed: Option<usize>, touched: [usize; 2]) {
        if let Some(j) = self.journal.as_mut() {
            j.removed.extend(removed);
            j.touched.extend(touched.map(AgentId));
        }
    }

    #[inline]
    fn slot(&self, id: usize) -> &EdgeSlot {
        self.slots[id].as_ref().expect("live edge id")
    }

    fn index_mut(&mut self, direction: Direction) -> &mut Fenwick {
        match direction {
            Direction::ByIn => &mut self.in_index,
            Direction::ByOut => &mut self.out_index,
        }
    }

    /// Smoothed preferential weight `k + 1`.
    pub fn weight(&self, a: AgentId, direction: Direction) -> u64 {
        self.degree(a, direction) as u64 + 1
    }

    pub fn total_weight(&self, direction: Direction) -> u64 {
        match direction {
            Direction::ByIn => self.in_index.total,
            Direction::ByOut => self.out_index.total,
        }
    }

    /// Draw an agent with probability `(k + 1) / sum(k + 1)`.
    pub fn sample_preferential<R: Rng + ?Sized>(
        &self,
        direction: Direction,
        rng: &mut R,
    ) -> AgentId {
        let index = match direction {
            Direction::ByIn => &self.in_index,
            Direction::ByOut => &self.out_index,
        };
        let target = rng.random_range(0..index.total);
        AgentId(index.find(target))
    }

    /// Preferential draw conditioned on not returning `exclude`.
    pub fn sample_excluding<R: Rng + ?Sized>(
        &self,
        direction: Direction,
        exclude: AgentId,
        rng: &mut R,
    ) -> AgentId {
        loop {
            let a = self.sample_preferential(direction, rng);
            if a != exclude {
                return a;
            }
        }
    }

    pub fn add_edge(&mut self, producer: AgentId, consumer: AgentId) -> Result<()> {
        if producer == consumer {
            return Err(Error::SelfLoopRejected(producer.0));
        }
        if producer.0 >= self.n_agents || consumer.0 >= self.n_agents {
            return Err(Error::InvalidParameter(format!(
                "edge {producer}->{consumer} outside {} agents",
                self.n_agents
            )));
        }
        let slot = EdgeSlot {
            producer: producer.0,
            consumer: consumer.0,
            out_pos: self.out_edges[producer.0].len(),
        };
        let id = match self.free.pop() {
            Some(id) => {
                self.slots[id] = Some(slot);
                id
            }
            None => {
                self.slots.push(Some(slot));
                self.slots.len() - 1
            }
        };
        self.out_edges[producer.0].push(id);
        self.in_edges[consumer.0].push(id);
        self.out_index.add(producer.0, 1);
        self.in_index.add(consumer.0, 1);
        self.n_edges += 1;
        self.note(None, [producer.0, consumer.0]);
        Ok(())
    }

    /// Removes the oldest incoming edges of `agent` until at most `keep`
    /// remain. The newest contracts survive.
    pub fn remove_incoming(&mut self, agent: AgentId, keep: usize) -> Vec<Edge> {
        let k_in = self.in_edges[agent.0].len();
        if keep >= k_in {
            return Vec::new();
        }
        let doomed: Vec<usize> = self.in_edges[agent.0].drain(..k_in - keep).collect();
        self.index_mut(Direction::ByIn)
            .add(agent.0, -((k_in - keep) as i64));
        let mut removed = Vec::with_capacity(doomed.len());
        for id in doomed {
            let slot = self.slots[id].take().expect("live edge id");
            self.detach_out(slot);
            self.free.push(id);
            self.n_edges -= 1;
            self.note(Some(id), [slot.producer, slot.consumer]);
            removed.push(Edge {
                producer: AgentId(slot.producer),
                consumer: AgentId(slot.consumer),
            });
        }
        removed
    }

    /// Removes every outgoing edge of `agent`.
    pub fn remove_outgoing(&mut self, agent: AgentId) -> Vec<Edge> {
        let doomed = std::mem::take(&mut self.out_edges[agent.0]);
        self.out_index.add(agent.0, -(doomed.len() as i64));
        let mut removed = Vec::with_capacity(doomed.len());
        for id in doomed {
            let slot = self.slots[id].take().expect("live edge id");
            let list = &mut self.in_edges[slot.consumer];
            let pos = list
                .iter()
                .position(|&e| e == id)
                .expect("edge in consumer list");
            list.remove(pos);
            self.in_index.add(slot.consumer, -1);
            self.free.push(id);
            self.n_edges -= 1;
            self.note(Some(id), [slot.producer, slot.consumer]);
            removed.push(Edge {
                producer: agent,
                consumer: AgentId(slot.consumer),
            });
        }
        removed
    }

    fn detach_out(&mut self, slot: EdgeSlot) {
        let list = &mut self.out_edges[slot.producer];
        list.swap_remove(slot.out_pos);
        if let Some(&moved) = list.get(slot.out_pos) {
            self.slots[moved].as_mut().expect("live edge id").out_pos = slot.out_pos;
        }
        self.out_index.add(slot.producer, -1);
    }

    /// Map `degree -> number of agents`, covering every agent.
    pub fn degree_histogram(&self, direction: Direction) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for a in self.agents() {
            *hist.entry(self.degree(a, direction)).or_insert(0) += 1;
        }
        hist
    }

    /// Recount degrees from the edge multiset and compare with the cached
    /// lists and sampling weights.
    pub fn is_consistent(&self) -> bool {
        let mut k_in = vec![0usize; self.n_agents];
        let mut k_out = vec![0usize; self.n_agents];
        let mut count = 0;
        for e in self.edges() {
            if e.producer == e.consumer {
                return false;
            }
            k_out[e.producer.0] += 1;
            k_in[e.consumer.0] += 1;
            count += 1;
        }
        if count != self.n_edges {
            return false;
        }
        let weights_ok = |dir: Direction, k: &[usize]| {
            let idx = match dir {
                Direction::ByIn => &self.in_index,
                Direction::ByOut => &self.out_index,
            };
            let total: u64 = k.iter().map(|&d| d as u64 + 1).sum();
            total == idx.total
        };
        self.agents()
            .all(|a| self.k_in(a) == k_in[a.0] && self.k_out(a) == k_out[a.0])
            && self.slots.iter().enumerate().all(|(id, s)| match s {
                Some(s) => self.out_edges[s.producer][s.out_pos] == id,
                None => true,
            })
            && weights_ok(Direction::ByIn, &k_in)
            && weights_ok(Direction::ByOut, &k_out)
    }

    /// Edge dump: header `producer,consumer`, one edge per line.
    pub fn write_edges_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "producer,consumer")?;
        for e in self.edges() {
            writeln!(w, "{},{}", e.producer, e.consumer)?;
        }
        Ok(())
    }

    /// Reads an edge dump. The agent count is one past the largest index
    /// unless `n_agents` is given.
    pub fn read_edges_csv<R: BufRead>(r: R, n_agents: Option<usize>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("producer")) {
                continue;
            }
            let (p, c) = line.split_once(',').ok_or_else(|| {
                Error::Parse(format!("line {}: expected producer,consumer", lineno + 1))
            })?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            pairs.push((parse(p)?, parse(c)?));
        }
        let max = pairs.iter().map(|&(p, c)| p.max(c) + 1).max().unwrap_or(0);
        let n = n_agents.unwrap_or(max).max(max);
        let mut net = Self::empty(n);
        for (p, c) in pairs {
            net.add_edge(AgentId(p), AgentId(c))?;
        }
        Ok(net)
    }
}

/// Histogram dump: header `degree,count`.
pub fn write_histogram_csv<W: Write>(hist: &BTreeMap<usize, usize>, mut w: W) -> Result<()> {
    writeln!(w, "degree,count")?;
    for (k, c) in hist {
        writeln!(w, "{k},{c}")?;
    }
    Ok(())
}
