//! Box-covering fractal dimensions of a trade network and the geometric
//! degree exponent `gamma = 1 + ell * d_B / d_k`.
//!
//! Distances are hop counts on the undirected simple projection. A box of
//! size `l_B` holds nodes whose pairwise distance is below `l_B`; boxes are
//! found by greedy coloring over a random node order, keeping the best of
//! several orders.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EconomyNetwork;

/// Randomized orderings tried per box size.
pub const RESTARTS: usize = 10;
/// Smallest component accepted by [`box_cover`] and [`fractal_dimensions`].
pub const MIN_COMPONENT: usize = 100;
/// Box sizes used by the dimension regressions.
pub const L_B_RANGE: std::ops::RangeInclusive<usize> = 2..=8;

/// Simple undirected graph (no parallel links, no self-loops).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    adj: Vec<Vec<usize>>,
}

impl UndirectedGraph {
    pub fn from_edges<I: IntoIterator<Item = (usize, usize)>>(n: usize, edges: I) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (a, b) in edges {
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Self { adj }
    }

    /// Undirected projection of the trade multigraph.
    pub fn projection(net: &EconomyNetwork) -> Self {
        Self::from_edges(
            net.n_agents(),
            net.edges().map(|e| (e.producer.0, e.consumer.0)),
        )
    }

    pub fn path(n: usize) -> Self {
        Self::from_edges(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn complete(n: usize) -> Self {
        Self::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn n_links(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    /// Connected components, largest first.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n_nodes();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut comp = vec![s];
            label[s] = id;
            let mut head = 0;
            while head < comp.len() {
                let v = comp[head];
                head += 1;
                for &w in &self.adj[v] {
                    if label[w] == usize::MAX {
                        label[w] = id;
                        comp.push(w);
                    }
                }
            }
            comps.push(comp);
        }
        comps.sort_by_key(|c| std::cmp::Reverse(c.len()));
        comps
    }

    /// Induced subgraph on `nodes`, relabelled `0..nodes.len()` in order.
    pub fn subgraph(&self, nodes: &[usize]) -> Self {
        let mut index = vec![usize::MAX; self.n_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            index[v] = i;
        }
        let adj = nodes
            .iter()
            .map(|&v| {
                self.adj[v]
                    .iter()
                    .filter_map(|&w| (index[w] != usize::MAX).then_some(index[w]))
                    .collect()
            })
            .collect();
        Self { adj }
    }

    pub fn largest_component(&self) -> Self {
        match self.components().first() {
            Some(c) => self.subgraph(c),
            None => self.clone(),
        }
    }

    /// All-pairs hop distances; `u32::MAX` marks unreachable pairs.
    pub fn distances(&self) -> DistanceMatrix {
        let n = self.n_nodes();
        let mut d = vec![u32::MAX; n * n];
        d.par_chunks_mut(n.max(1)).enumerate().for_each(|(s, row)| {
            let mut queue = std::collections::VecDeque::from([s]);
            row[s] = 0;
            while let Some(v) = queue.pop_front() {
                for &w in &self.adj[v] {
                    if row[w] == u32::MAX {
                        row[w] = row[v] + 1;
                        queue.push_back(w);
                    }
                }
            }
        });
        DistanceMatrix { n, d }
    }
}

#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<u32>,
}

impl DistanceMatrix {
    #[inline]
    pub fn get(&self, a: usize, b: usize) -> u32 {
        self.d[a * self.n + b]
    }

    /// Largest finite distance.
    pub fn diameter(&self) -> u32 {
        self.d
            .iter()
            .copied()
            .filter(|&x| x != u32::MAX)
            .max()
            .unwrap_or(0)
    }
}

/// One greedy covering: box label per node for a given node order.
pub fn greedy_boxes(dist: &DistanceMatrix, l_b: usize, order: &[usize]) -> Vec<usize> {
    let n = dist.n;
    let mut color = vec![usize::MAX; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let l_b = l_b as u32;
    for &v in order {
        let fits = |box_nodes: &Vec<usize>| box_nodes.iter().all(|&u| dist.get(u, v) < l_b);
        match members.iter().position(fits) {
            Some(c) => {
                color[v] = c;
                members[c].push(v);
            }
            None => {
                color[v] = members.len();
                members.push(vec![v]);
            }
        }
    }
    color
}

fn n_boxes(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1)
}

/// Best of `restarts` randomized greedy coverings: (box count, labels).
pub fn best_covering<R: Rng + ?Sized>(
    dist: &DistanceMatrix,
    l_b: usize,
    restarts: usize,
    rng: &mut R,
) -> (usize, Vec<usize>) {
    let seeds: Vec<u64> = (0..restarts.max(1)).map(|_| rng.random()).collect();
    seeds
        .par_iter()
        .map(|&seed| {
            let mut order: Vec<usize> = (0..dist.n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let labels = greedy_boxes(dist, l_b, &order);
            (n_boxes(&labels), labels)
        })
        .min_by_key(|(count, _)| *count)
        .expect("at least one restart")
}

/// Coverings for increasing box sizes. A covering valid at one size is
/// valid at every larger size, so the best one found so far carries over and
/// counts never increase.
pub fn coverings<R: Rng + ?Sized>(
    dist: &DistanceMatrix,
    sizes: impl IntoIterator<Item = usize>,
    rng: &mut R,
) -> Vec<(usize, usize, Vec<usize>)> {
    let mut out: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for l_b in sizes {
        let (mut count, mut labels) = best_covering(dist, l_b, RESTARTS, rng);
        if let Some((_, prev_count, prev_labels)) = out.last() {
            if *prev_count < count {
                count = *prev_count;
                labels = prev_labels.clone();
            }
        }
        out.push((l_b, count, labels));
    }
    out
}

/// Box count of an arbitrary graph at size `l_b`.
pub fn box_cover_graph<R: Rng + ?Sized>(
    g: &UndirectedGraph,
    l_b: usize,
    rng: &mut R,
) -> Result<usize> {
    if l_b == 0 {
        return Err(Error::InvalidParameter("l_B must be at least 1".into()));
    }
    Ok(best_covering(&g.distances(), l_b, RESTARTS, rng).0)
}

fn giant_component(net: &EconomyNetwork) -> Result<UndirectedGraph> {
    let g = UndirectedGraph::projection(net).largest_component();
    if g.n_nodes() < MIN_COMPONENT {
        return Err(Error::DisconnectedInput {
            needed: MIN_COMPONENT,
            largest: g.n_nodes(),
        });
    }
    Ok(g)
}

/// Box count of the network's largest weakly connected component.
pub fn box_cover<R: Rng + ?Sized>(net: &EconomyNetwork, l_b: usize, rng: &mut R) -> Result<usize> {
    box_cover_graph(&giant_component(net)?, l_b, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractalEstimate {
    #[serde(rename = "d_B")]
    pub d_b: f64,
    pub d_k: f64,
    /// 1 for directed, 2 for undirected.
    pub ell: u32,
    pub gamma_geo: f64,
    /// Worse of the two regression fits.
    pub r2: f64,
    /// `(l_B, box count)` pairs.
    pub boxes: Vec<(usize, usize)>,
}

impl FractalEstimate {
    fn new(d_b: f64, d_k: f64, ell: u32, r2: f64, boxes: Vec<(usize, usize)>) -> Result<Self> {
        if !(d_b > 0.0 && d_k > 0.0) {
            return Err(Error::Domain(format!(
                "non-positive dimensions d_B = {d_b}, d_k = {d_k}"
            )));
        }
        Ok(Self {
            d_b,
            d_k,
            ell,
            gamma_geo: geometric_gamma(d_b, d_k, ell),
            r2,
            boxes,
        })
    }
}

pub fn geometric_gamma(d_b: f64, d_k: f64, ell: u32) -> f64 {
    1.0 + ell as f64 * d_b / d_k
}

fn check_ell(ell: u32) -> Result<()> {
    match ell {
        1 | 2 => Ok(()),
        _ => Err(Error::InvalidParameter(format!(
            "ell = {ell} must be 1 or 2"
        ))),
    }
}

/// Ordinary least squares: (slope, intercept, r2).
fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, my - slope * mx, r2)
}

/// Mean over boxes of (distinct neighbouring boxes) / (degree of the box hub).
fn hub_degree_ratio(g: &UndirectedGraph, labels: &[usize]) -> f64 {
    let nb = n_boxes(labels);
    let mut hub_degree = vec![0usize; nb];
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); nb];
    for v in 0..g.n_nodes() {
        let b = labels[v];
        hub_degree[b] = hub_degree[b].max(g.degree(v));
        neighbours[b].extend(
            g.neighbors(v)
                .iter()
                .map(|&w| labels[w])
                .filter(|&c| c != b),
        );
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (b, list) in neighbours.iter_mut().enumerate() {
        if hub_degree[b] == 0 {
            continue;
        }
        list.sort_unstable();
        list.dedup();
        sum += list.len() as f64 / hub_degree[b] as f64;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Links of the renormalized network: distinct pairs of adjacent boxes.
fn renormalized_links(g: &UndirectedGraph, labels: &[usize]) -> usize {
    let mut pairs: Vec<(usize, usize)> = (0..g.n_nodes())
        .flat_map(|v| g.neighbors(v).iter().map(move |&w| (labels[v], labels[w])))
        .filter(|(a, b)| a < b)
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs.len()
}

/// How `d_k` is read off the renormalized network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkScaling {
    /// Links between boxes fall as `l_B^-d_k`.
    #[default]
    LinkCount,
    /// Box degree over hub degree falls as `l_B^-d_k`.
    HubDegree,
}

impl std::str::FromStr for LinkScaling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "link_count" => Ok(LinkScaling::LinkCount),
            "hub_degree" => Ok(LinkScaling::HubDegree),
            other => Err(Error::Parse(format!("unknown d_k method {other:?}"))),
        }
    }
}

/// `d_B` from box counts and `d_k` from link renormalization over `l_B` in
/// [2, 8]. Box sizes that cover everything with one box carry no scaling
/// information and are left out of both regressions.
pub fn fractal_dimensions_graph<R: Rng + ?Sized>(
    g: &UndirectedGraph,
    ell: u32,
    method: LinkScaling,
    rng: &mut R,
) -> Result<FractalEstimate> {
    check_ell(ell)?;
    let dist = g.distances();
    let mut boxes = Vec::new();
    let mut count_pts = Vec::new();
    let mut ratio_pts = Vec::new();
    for (l_b, count, labels) in coverings(&dist, L_B_RANGE, rng) {
        boxes.push((l_b, count));
        if count < 2 {
            continue;
        }
        let x = (l_b as f64).ln();
        count_pts.push((x, (count as f64).ln()));
        let s = match method {
            LinkScaling::LinkCount => renormalized_links(g, &labels) as f64,
            LinkScaling::HubDegree => hub_degree_ratio(g, &labels),
        };
        if s > 0.0 {
            ratio_pts.push((x, s.ln()));
        }
    }
    if count_pts.len() < 2 || ratio_pts.len() < 2 {
        return Err(Error::Domain(format!(
            "only {} box sizes leave more than one box; diameter {}",
            count_pts.len(),
            dist.diameter()
        )));
    }
    let (slope_b, _, r2_b) = linear_fit(&count_pts);
    let (slope_k, _, r2_k) = linear_fit(&ratio_pts);
    FractalEstimate::new(-slope_b, -slope_k, ell, r2_b.min(r2_k), boxes)
}

/// Fractal dimensions of the network's largest weakly connected component.
pub fn fractal_dimensions<R: Rng + ?Sized>(
    net: &EconomyNetwork,
    ell: u32,
    method: LinkScaling,
    rng: &mut R,
) -> Result<FractalEstimate> {
    fractal_dimensions_graph(&giant_component(net)?, ell, method, rng)
}

/// Dimensions from a family of graphs of growing size: node count sets the
/// scale (`d_B = 1`) and `d_k` is the slope of ln(links) against ln(nodes).
/// `boxes` lists `(nodes, links)` per member.
pub fn mass_scaling_dimensions(family: &[UndirectedGraph], ell: u32) -> Result<FractalEstimate> {
    check_ell(ell)?;
    let pts: Vec<(f64, f64)> = family
        .iter()
        .filter(|g| g.n_links() > 0)
        .map(|g| ((g.n_nodes() as f64).ln(), (g.n_links() as f64).ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Domain("need at least two non-empty graphs".into()));
    }
    let (slope, _, r2) = linear_fit(&pts);
    let boxes = family.iter().map(|g| (g.n_nodes(), g.n_links())).collect();
    FractalEstimate::new(1.0, slope, ell, r2, boxes)
}
