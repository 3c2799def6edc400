//! Network topologies: explicit simple graphs (generated or loaded from an
//! edge list) and implicitly indexed infinite regular trees.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of an honest server.
///
/// For generated graphs the broadcast source is node 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(v: usize) -> Self {
        NodeId(v as u64)
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("degree must be at least 2, got {0}")]
    DegreeTooSmall(usize),
    #[error("root degree must be at least 1, got {0}")]
    RootDegreeTooSmall(usize),
    #[error("no simple {d}-regular graph on {n} nodes (need n*d even and d < n)")]
    InfeasibleRegular { n: usize, d: usize },
    #[error("random regular generation failed after {attempts} attempts (n={n}, d={d})")]
    GenerationFailed { n: usize, d: usize, attempts: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: self-loop on node {node}")]
    SelfLoop { line: usize, node: u64 },
    #[error("edge list contains no edges")]
    Empty,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("input is not a tree: {0}")]
    NotATree(String),
    #[error("tree index space exhausted below node {0}")]
    IndexOverflow(NodeId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Finite simple undirected graph with dense node ids `0..n`.
#[derive(Clone, Debug)]
pub struct ExplicitGraph {
    adj: Vec<Vec<NodeId>>,
    /// Original labels from an ingested file, indexed by dense id.
    labels: Option<Vec<u64>>,
}

impl ExplicitGraph {
    /// Builds a graph from an edge iterator over dense ids. Duplicate edges
    /// are collapsed; self-loops are rejected.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        let mut sets: Vec<std::collections::BTreeSet<u64>> = vec![Default::default(); n];
        for (a, b) in edges {
            if a >= n {
                return Err(GraphError::UnknownNode(NodeId::from(a)));
            }
            if b >= n {
                return Err(GraphError::UnknownNode(NodeId::from(b)));
            }
            if a == b {
                return Err(GraphError::SelfLoop { line: 0, node: a as u64 });
            }
            sets[a].insert(b as u64);
            sets[b].insert(a as u64);
        }
        let adj = sets
            .into_iter()
            .map(|s| s.into_iter().map(NodeId).collect())
            .collect();
        Ok(ExplicitGraph { adj, labels: None })
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.index() < self.adj.len()
    }

    pub fn adjacency(&self, v: NodeId) -> Result<&[NodeId], GraphError> {
        self.adj
            .get(v.index())
            .map(Vec::as_slice)
            .ok_or(GraphError::UnknownNode(v))
    }

    /// Original file label of a dense node id, if the graph was ingested.
    pub fn label(&self, v: NodeId) -> Option<u64> {
        self.labels.as_ref().and_then(|l| l.get(v.index()).copied())
    }

    pub fn labels(&self) -> Option<&[u64]> {
        self.labels.as_deref()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adj.iter().enumerate().flat_map(|(a, ns)| {
            ns.iter()
                .filter(move |b| b.index() > a)
                .map(move |&b| (NodeId::from(a), b))
        })
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of connected components.
    pub fn component_count(&self) -> usize {
        let n = self.adj.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                for w in &self.adj[v] {
                    if !seen[w.index()] {
                        seen[w.index()] = true;
                        stack.push(w.index());
                    }
                }
            }
        }
        count
    }
}

/// Infinite tree where the root has `root_degree` neighbors and every other
/// node has `degree` neighbors.
///
/// Nodes are numbered in breadth-first order, so the structure is a pure
/// function of the id: nothing is stored and "materializing" a node is just
/// computing its neighbor ids. The first `k` levels coincide with
/// [`build_regular_tree`] of the same degree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegularTree {
    degree: usize,
    root_degree: usize,
}

impl RegularTree {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn root_degree(&self) -> usize {
        self.root_degree
    }

    fn branching(&self) -> u64 {
        (self.degree - 1) as u64
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        let r = self.root_degree as u64;
        match v.0 {
            0 => None,
            u if u <= r => Some(NodeId::ROOT),
            u => Some(NodeId((u - r - 1) / self.branching() + 1)),
        }
    }

    pub fn children(&self, v: NodeId) -> Result<Vec<NodeId>, GraphError> {
        if v.0 == 0 {
            return Ok((1..=self.root_degree as u64).map(NodeId).collect());
        }
        let b = self.branching();
        let first = (v.0 - 1)
            .checked_mul(b)
            .and_then(|x| x.checked_add(self.root_degree as u64 + 1))
            .and_then(|x| x.checked_add(b).map(|_| x))
            .ok_or(GraphError::IndexOverflow(v))?;
        Ok((first..first + b).map(NodeId).collect())
    }

    pub fn depth(&self, v: NodeId) -> usize {
        let mut depth = 0;
        let mut cur = v;
        while let Some(p) = self.parent(cur) {
            depth += 1;
            cur = p;
        }
        depth
    }

    /// Hop distance via the lowest common ancestor.
    pub fn distance(&self, u: NodeId, v: NodeId) -> usize {
        let (mut a, mut b) = (u, v);
        let (mut da, mut db) = (self.depth(a), self.depth(b));
        let mut hops = 0;
        while da > db {
            a = self.parent(a).unwrap();
            da -= 1;
            hops += 1;
        }
        while db > da {
            b = self.parent(b).unwrap();
            db -= 1;
            hops += 1;
        }
        while a != b {
            a = self.parent(a).unwrap();
            b = self.parent(b).unwrap();
            hops += 2;
        }
        hops
    }

    /// Nodes on the path from `u` to `v`, both endpoints included.
    pub fn path(&self, u: NodeId, v: NodeId) -> Vec<NodeId> {
        let (mut a, mut b) = (u, v);
        let (mut da, mut db) = (self.depth(a), self.depth(b));
        let mut left = vec![a];
        let mut right = vec![b];
        while da > db {
            a = self.parent(a).unwrap();
            da -= 1;
            left.push(a);
        }
        while db > da {
            b = self.parent(b).unwrap();
            db -= 1;
            right.push(b);
        }
        while a != b {
            a = self.parent(a).unwrap();
            b = self.parent(b).unwrap();
            left.push(a);
            right.push(b);
        }
        right.pop();
        left.extend(right.into_iter().rev());
        left
    }
}

/// A network of honest servers.
#[derive(Clone, Debug)]
pub enum Graph {
    Explicit(ExplicitGraph),
    Tree(RegularTree),
}

impl Graph {
    pub fn neighbors(&self, v: NodeId) -> Result<Vec<NodeId>, GraphError> {
        match self {
            Graph::Explicit(g) => g.adjacency(v).map(<[NodeId]>::to_vec),
            Graph::Tree(t) => {
                let mut out = Vec::with_capacity(t.degree);
                if let Some(p) = t.parent(v) {
                    out.push(p);
                }
                out.extend(t.children(v)?);
                Ok(out)
            }
        }
    }

    pub fn degree(&self, v: NodeId) -> Result<usize, GraphError> {
        match self {
            Graph::Explicit(g) => g.adjacency(v).map(<[NodeId]>::len),
            Graph::Tree(t) => Ok(if v.0 == 0 { t.root_degree } else { t.degree }),
        }
    }

    pub fn contains(&self, v: NodeId) -> bool {
        match self {
            Graph::Explicit(g) => g.contains(v),
            Graph::Tree(_) => true,
        }
    }

    /// Node count for finite graphs; `None` for infinite trees.
    pub fn node_count(&self) -> Option<usize> {
        match self {
            Graph::Explicit(g) => Some(g.node_count()),
            Graph::Tree(_) => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Graph::Explicit(_))
    }

    pub fn as_explicit(&self) -> Option<&ExplicitGraph> {
        match self {
            Graph::Explicit(g) => Some(g),
            Graph::Tree(_) => None,
        }
    }

    pub fn as_tree(&self) -> Option<&RegularTree> {
        match self {
            Graph::Tree(t) => Some(t),
            Graph::Explicit(_) => None,
        }
    }

    /// Largest node degree (the regular degree for trees).
    pub fn max_degree(&self) -> usize {
        match self {
            Graph::Explicit(g) => g.max_degree(),
            Graph::Tree(t) => t.degree.max(t.root_degree),
        }
    }

    /// Breadth-first ball of radius `radius` around `center`, with hop counts.
    pub fn ball(&self, center: NodeId, radius: usize) -> Result<HashMap<NodeId, usize>, GraphError> {
        if !self.contains(center) {
            return Err(GraphError::UnknownNode(center));
        }
        let mut dist = HashMap::from([(center, 0usize)]);
        let mut queue = VecDeque::from([center]);
        while let Some(v) = queue.pop_front() {
            let dv = dist[&v];
            if dv == radius {
                continue;
            }
            for w in self.neighbors(v)? {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(dv + 1);
                    queue.push_back(w);
                }
            }
        }
        Ok(dist)
    }

    /// Unique path between two nodes of a tree-shaped region, endpoints
    /// included. On explicit graphs this is a BFS shortest path.
    pub fn path(&self, u: NodeId, v: NodeId) -> Result<Option<Vec<NodeId>>, GraphError> {
        match self {
            Graph::Tree(t) => Ok(Some(t.path(u, v))),
            Graph::Explicit(g) => {
                g.adjacency(u)?;
                g.adjacency(v)?;
                let mut prev: HashMap<NodeId, NodeId> = HashMap::from([(u, u)]);
                let mut queue = VecDeque::from([u]);
                while let Some(x) = queue.pop_front() {
                    if x == v {
                        break;
                    }
                    for &w in g.adjacency(x)? {
                        if let std::collections::hash_map::Entry::Vacant(e) = prev.entry(w) {
                            e.insert(x);
                            queue.push_back(w);
                        }
                    }
                }
                if !prev.contains_key(&v) {
                    return Ok(None);
                }
                let mut out = vec![v];
                let mut cur = v;
                while cur != u {
                    cur = prev[&cur];
                    out.push(cur);
                }
                out.reverse();
                Ok(Some(out))
            }
        }
    }
}

/// Distance between two nodes; [`Hops::Unreachable`] when disconnected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Hops {
    Finite(usize),
    Unreachable,
}

impl Hops {
    pub fn finite(self) -> Option<usize> {
        match self {
            Hops::Finite(h) => Some(h),
            Hops::Unreachable => None,
        }
    }
}

pub fn build_regular_tree(d: usize, depth: usize) -> Result<Graph, GraphError> {
    if d < 2 {
        return Err(GraphError::DegreeTooSmall(d));
    }
    let tree = RegularTree { degree: d, root_degree: d };
    let mut edges = Vec::new();
    let mut frontier = vec![NodeId::ROOT];
    let mut n = 1usize;
    for _ in 0..depth {
        let mut next = Vec::new();
        for v in frontier {
            for c in tree.children(v)? {
                edges.push((v.index(), c.index()));
                next.push(c);
                n += 1;
            }
        }
        frontier = next;
    }
    Ok(Graph::Explicit(ExplicitGraph::from_edges(n, edges)?))
}

pub fn lazy_regular_tree(d: usize) -> Result<Graph, GraphError> {
    lazy_tree_with_root_degree(d, d)
}

/// Infinite tree whose root has `root_degree` neighbors and every other node
/// `d`. With `root_degree = d - 2` this is the topology under which the
/// closed-form diffusion first-timestamp probability is exact.
pub fn lazy_tree_with_root_degree(d: usize, root_degree: usize) -> Result<Graph, GraphError> {
    if d < 2 {
        return Err(GraphError::DegreeTooSmall(d));
    }
    if root_degree < 1 {
        return Err(GraphError::RootDegreeTooSmall(root_degree));
    }
    Ok(Graph::Tree(RegularTree { degree: d, root_degree }))
}

const RANDOM_REGULAR_ATTEMPTS: usize = 100;

/// Uniform-ish simple `d`-regular graph on `n` nodes.
///
/// Stubs are paired at random and a pairing that would create a self-loop or
/// a repeated edge is put back; when no admissible pair remains the attempt
/// restarts. Deterministic for a fixed seed.
pub fn build_random_regular(n: usize, d: usize, seed: u64) -> Result<Graph, GraphError> {
    if d >= n || (n * d) % 2 != 0 {
        return Err(GraphError::InfeasibleRegular { n, d });
    }
    if d == 0 {
        return Ok(Graph::Explicit(ExplicitGraph::from_edges(n, [])?));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_REGULAR_ATTEMPTS {
        if let Some(edges) = try_pairing(n, d, &mut rng) {
            return Ok(Graph::Explicit(ExplicitGraph::from_edges(n, edges)?));
        }
    }
    Err(GraphError::GenerationFailed { n, d, attempts: RANDOM_REGULAR_ATTEMPTS })
}

fn try_pairing(n: usize, d: usize, rng: &mut impl Rng) -> Option<Vec<(usize, usize)>> {
    let key = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    let mut edges: HashSet<(usize, usize)> = HashSet::with_capacity(n * d / 2);
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();

    while !stubs.is_empty() {
        // stub multiplicities of nodes that still need edges
        let mut remaining: BTreeMap<usize, usize> = BTreeMap::new();
        stubs.shuffle(rng);
        let mut it = stubs.chunks_exact(2);
        for pair in &mut it {
            let (a, b) = (pair[0], pair[1]);
            if a != b && !edges.contains(&key(a, b)) {
                edges.insert(key(a, b));
            } else {
                *remaining.entry(a).or_default() += 1;
                *remaining.entry(b).or_default() += 1;
            }
        }
        if !admissible_pair_exists(&remaining, &edges, key) {
            return None;
        }
        stubs = remaining
            .into_iter()
            .flat_map(|(v, c)| std::iter::repeat_n(v, c))
            .collect();
    }
    let mut out: Vec<(usize, usize)> = edges.into_iter().collect();
    out.sort_unstable();
    Some(out)
}

fn admissible_pair_exists(
    remaining: &BTreeMap<usize, usize>,
    edges: &HashSet<(usize, usize)>,
    key: impl Fn(usize, usize) -> (usize, usize),
) -> bool {
    if remaining.is_empty() {
        return true;
    }
    let nodes: Vec<usize> = remaining.keys().copied().collect();
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            if !edges.contains(&key(a, b)) {
                return true;
            }
        }
    }
    false
}

/// Parses a whitespace-separated edge list. Node labels may be sparse; they
/// are remapped to dense ids in order of first appearance and the original
/// labels are kept on the graph.
pub fn parse_edge_list(reader: impl BufRead) -> Result<Graph, GraphError> {
    let mut dense: HashMap<u64, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let mut next_id = |what: &str| -> Result<u64, GraphError> {
            let tok = fields.next().ok_or_else(|| GraphError::Parse {
                line: line_no,
                msg: format!("missing {what} endpoint"),
            })?;
            tok.parse::<u64>().map_err(|_| GraphError::Parse {
                line: line_no,
                msg: format!("invalid node id {tok:?}"),
            })
        };
        let a = next_id("first")?;
        let b = next_id("second")?;
        if let Some(extra) = fields.next() {
            return Err(GraphError::Parse {
                line: line_no,
                msg: format!("unexpected trailing field {extra:?}"),
            });
        }
        if a == b {
            return Err(GraphError::SelfLoop { line: line_no, node: a });
        }
        let mut intern = |x: u64| {
            *dense.entry(x).or_insert_with(|| {
                labels.push(x);
                labels.len() - 1
            })
        };
        let (da, db) = (intern(a), intern(b));
        edges.push((da, db));
    }
    if edges.is_empty() {
        return Err(GraphError::Empty);
    }
    let mut g = ExplicitGraph::from_edges(labels.len(), edges)?;
    g.labels = Some(labels);
    Ok(Graph::Explicit(g))
}

pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph, GraphError> {
    let file = std::fs::File::open(path)?;
    parse_edge_list(std::io::BufReader::new(file))
}

pub fn hop_distance(g: &Graph, u: NodeId, v: NodeId) -> Result<Hops, GraphError> {
    if !g.contains(u) {
        return Err(GraphError::UnknownNode(u));
    }
    if !g.contains(v) {
        return Err(GraphError::UnknownNode(v));
    }
    match g {
        Graph::Tree(t) => Ok(Hops::Finite(t.distance(u, v))),
        Graph::Explicit(_) => Ok(match g.path(u, v)? {
            Some(p) => Hops::Finite(p.len() - 1),
            None => Hops::Unreachable,
        }),
    }
}

/// Labels every node of `nodes` other than `root` with the neighbor of
/// `root` through which it is reached. The subgraph induced by `nodes` must
/// be a tree containing `root`.
pub fn subtree_partition(
    g: &Graph,
    nodes: &HashSet<NodeId>,
    root: NodeId,
) -> Result<HashMap<NodeId, NodeId>, GraphError> {
    if !nodes.contains(&root) {
        return Err(GraphError::NotATree(format!("root {root} not among supplied nodes")));
    }
    let mut label: HashMap<NodeId, NodeId> = HashMap::with_capacity(nodes.len());
    let mut parent: HashMap<NodeId, NodeId> = HashMap::from([(root, root)]);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for w in g.neighbors(v)? {
            if !nodes.contains(&w) || parent.get(&v) == Some(&w) {
                continue;
            }
            if parent.contains_key(&w) {
                return Err(GraphError::NotATree(format!("cycle through edge {v}-{w}")));
            }
            parent.insert(w, v);
            let l = if v == root { w } else { label[&v] };
            label.insert(w, l);
            queue.push_back(w);
        }
    }
    if parent.len() != nodes.len() {
        return Err(GraphError::NotATree(format!(
            "{} of {} nodes unreachable from root",
            nodes.len() - parent.len(),
            nodes.len()
        )));
    }
    Ok(label)
}
