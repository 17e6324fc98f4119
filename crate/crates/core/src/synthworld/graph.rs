use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use diffcore::RngStream;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadClass {
    Arterial,
    Collector,
    Local,
}

impl RoadClass {
    pub const ALL: [RoadClass; 3] = [RoadClass::Arterial, RoadClass::Collector, RoadClass::Local];

    pub fn index(self) -> usize {
        match self {
            RoadClass::Arterial => 0,
            RoadClass::Collector => 1,
            RoadClass::Local => 2,
        }
    }

    /// Free-flow speed in km/h.
    pub fn free_flow_speed(self) -> f64 {
        match self {
            RoadClass::Arterial => 50.0,
            RoadClass::Collector => 40.0,
            RoadClass::Local => 30.0,
        }
    }

    /// Per-lane capacity in vehicles per 15-minute interval.
    pub fn lane_capacity(self) -> f64 {
        match self {
            RoadClass::Arterial => 250.0,
            RoadClass::Collector => 180.0,
            RoadClass::Local => 120.0,
        }
    }

    /// Typical per-lane flow in vehicles per 15-minute interval.
    pub fn base_lane_flow(self) -> f64 {
        match self {
            RoadClass::Arterial => 110.0,
            RoadClass::Collector => 60.0,
            RoadClass::Local => 30.0,
        }
    }
}

impl fmt::Display for RoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoadClass::Arterial => "arterial",
            RoadClass::Collector => "collector",
            RoadClass::Local => "local",
        })
    }
}

impl FromStr for RoadClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arterial" => Ok(RoadClass::Arterial),
            "collector" => Ok(RoadClass::Collector),
            "local" => Ok(RoadClass::Local),
            other => Err(format!("unknown road class `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub id: u32,
    pub class: RoadClass,
    pub lanes: u8,
    pub length_m: f64,
}

/// Directed segment-level road network with exact centrality scores.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadGraph {
    segments: Vec<Segment>,
    edges: Vec<(usize, usize)>,
    out: Vec<Vec<usize>>,
    betweenness: Vec<f64>,
    closeness: Vec<f64>,
}

impl RoadGraph {
    /// Build from segments and directed edges (indices into `segments`),
    /// computing betweenness and closeness.
    pub fn from_edges(segments: Vec<Segment>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let out = adjacency_lists(segments.len(), &edges)?;
        let (betweenness, closeness) = centrality(&out);
        let graph = Self {
            segments,
            edges,
            out,
            betweenness,
            closeness,
        };
        graph.check_connected()?;
        Ok(graph)
    }

    /// Build with centrality scores supplied externally (e.g. from a file).
    pub fn with_scores(
        segments: Vec<Segment>,
        edges: Vec<(usize, usize)>,
        betweenness: Vec<f64>,
        closeness: Vec<f64>,
    ) -> Result<Self> {
        let n = segments.len();
        if betweenness.len() != n || closeness.len() != n {
            return Err(Error::Integrity("centrality length mismatch".into()));
        }
        let out = adjacency_lists(n, &edges)?;
        Ok(Self {
            segments,
            edges,
            out,
            betweenness,
            closeness,
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, i: usize) -> &Segment {
        &self.segments[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.out[i]
    }

    pub fn betweenness(&self) -> &[f64] {
        &self.betweenness
    }

    pub fn closeness(&self) -> &[f64] {
        &self.closeness
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.segments.iter().position(|s| s.id == id)
    }

    /// Hop distances from `src` along directed edges (`usize::MAX` if unreachable).
    pub fn hop_distances(&self, src: usize) -> Vec<usize> {
        bfs(&self.out, src).0
    }

    fn check_connected(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config("empty road graph".into()));
        }
        // Weak connectivity over the undirected version.
        let n = self.len();
        let mut und = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            und[a].push(b);
            und[b].push(a);
        }
        let (dist, _) = bfs(&und, 0);
        if dist.contains(&usize::MAX) {
            return Err(Error::Config("road graph is not connected".into()));
        }
        Ok(())
    }

    /// Stable FNV-1a hash of ids, attributes, edges and scores.
    pub fn stable_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for s in &self.segments {
            eat(&s.id.to_le_bytes());
            eat(&[s.class.index() as u8, s.lanes]);
            eat(&s.length_m.to_le_bytes());
        }
        for &(a, b) in &self.edges {
            eat(&(a as u64).to_le_bytes());
            eat(&(b as u64).to_le_bytes());
        }
        for v in self.betweenness.iter().chain(&self.closeness) {
            eat(&v.to_le_bytes());
        }
        h
    }

    /// Repeated neighbour averaging: `x ← (1-α)x + α·mean(neighbours)`.
    pub fn diffuse(&self, values: &[f64], alpha: f64, iterations: usize) -> Vec<f64> {
        let mut x = values.to_vec();
        for _ in 0..iterations {
            let prev = x.clone();
            for (i, xi) in x.iter_mut().enumerate() {
                let nb = &self.out[i];
                if nb.is_empty() {
                    continue;
                }
                let m = nb.iter().map(|&j| prev[j]).sum::<f64>() / nb.len() as f64;
                *xi = (1.0 - alpha) * prev[i] + alpha * m;
            }
        }
        x
    }
}

fn adjacency_lists(n: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::Integrity(format!("edge ({a},{b}) out of range")));
        }
        if a != b && !out[a].contains(&b) {
            out[a].push(b);
        }
    }
    for l in &mut out {
        l.sort_unstable();
    }
    Ok(out)
}

/// BFS returning distances and the visit order.
fn bfs(out: &[Vec<usize>], src: usize) -> (Vec<usize>, Vec<usize>) {
    let mut dist = vec![usize::MAX; out.len()];
    let mut order = Vec::with_capacity(out.len());
    let mut queue = VecDeque::new();
    dist[src] = 0;
    queue.push_back(src);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in &out[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    (dist, order)
}

/// Exact betweenness (Brandes, unweighted, directed, unnormalised) and
/// closeness (`(r-1)/Σd` over the `r` reachable nodes).
fn centrality(out: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>) {
    let n = out.len();
    let mut betweenness = vec![0.0; n];
    let mut closeness = vec![0.0; n];
    for s in 0..n {
        let mut sigma = vec![0.0f64; n];
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut dist = vec![usize::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::new();
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &out[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let reach = order.len();
        let total: usize = order.iter().map(|&v| dist[v]).sum();
        closeness[s] = if total > 0 {
            (reach - 1) as f64 / total as f64
        } else {
            0.0
        };
        let mut delta = vec![0.0f64; n];
        for &w in order.iter().rev() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                betweenness[w] += delta[w];
            }
        }
    }
    (betweenness, closeness)
}

/// Random geometric road network: segments placed in the unit square, each
/// linked both ways to its nearest neighbours, components bridged until
/// connected. Arterials concentrate near the centre.
pub fn generate_graph(n_segments: usize, seed: u64) -> Result<RoadGraph> {
    if n_segments < 4 {
        return Err(Error::Config(format!(
            "n_segments must be >= 4, got {n_segments}"
        )));
    }
    let mut rng = RngStream::new(seed, super::STREAM_GRAPH);
    let pos: Vec<(f64, f64)> = (0..n_segments)
        .map(|_| (rng.uniform(), rng.uniform()))
        .collect();
    let d2 = |a: usize, b: usize| {
        let (dx, dy) = (pos[a].0 - pos[b].0, pos[a].1 - pos[b].1);
        dx * dx + dy * dy
    };

    let k = 3.min(n_segments - 1);
    let mut und: Vec<(usize, usize)> = Vec::new();
    for i in 0..n_segments {
        let mut others: Vec<usize> = (0..n_segments).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| d2(i, a).total_cmp(&d2(i, b)));
        for &j in others.iter().take(k) {
            let e = (i.min(j), i.max(j));
            if !und.contains(&e) {
                und.push(e);
            }
        }
    }
    // Bridge components through their closest pair.
    loop {
        let comp = components(n_segments, &und);
        let n_comp = comp.iter().max().map_or(0, |&c| c + 1);
        if n_comp <= 1 {
            break;
        }
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..n_segments {
            for b in 0..n_segments {
                if comp[a] == 0 && comp[b] != 0 && d2(a, b) < best.0 {
                    best = (d2(a, b), a, b);
                }
            }
        }
        und.push((best.1.min(best.2), best.1.max(best.2)));
    }
    und.sort_unstable();

    let mut segments = Vec::with_capacity(n_segments);
    for (i, &(x, y)) in pos.iter().enumerate() {
        let centre = ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt();
        let u = rng.uniform();
        let class = if u < 0.30 - 0.3 * centre {
            RoadClass::Arterial
        } else if u < 0.62 - 0.3 * centre {
            RoadClass::Collector
        } else {
            RoadClass::Local
        };
        let lanes = match class {
            RoadClass::Arterial => 2 + rng.below(3),
            RoadClass::Collector => 1 + rng.below(3),
            RoadClass::Local => 1 + rng.below(2),
        } as u8;
        let length_m = match class {
            RoadClass::Arterial => rng.uniform_range(300.0, 1200.0),
            RoadClass::Collector => rng.uniform_range(200.0, 800.0),
            RoadClass::Local => rng.uniform_range(80.0, 400.0),
        };
        segments.push(Segment {
            id: i as u32,
            class,
            lanes,
            length_m: (length_m * 10.0).round() / 10.0,
        });
    }
    let edges = und.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    RoadGraph::from_edges(segments, edges)
}

fn components(n: usize, und: &[(usize, usize)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in und {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let (dist, _) = bfs(&adj, s);
        for (v, d) in dist.iter().enumerate() {
            if *d != usize::MAX {
                comp[v] = next;
            }
        }
        next += 1;
    }
    comp
}
