//! Source estimators and an exact enumeration oracle for small instances.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{EavesdropperView, Observation};
use crate::graph::{Graph, GraphError, NodeId};
use crate::spreading::{Protocol, SpreadParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FirstTimestamp,
    BallCentrality,
    TimestampRumorCentrality,
    ReportingCentrality,
    RumorCenter,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::FirstTimestamp => "first-timestamp",
            Method::BallCentrality => "ball-centrality",
            Method::TimestampRumorCentrality => "timestamp-rumor-centrality",
            Method::ReportingCentrality => "reporting-centrality",
            Method::RumorCenter => "rumor-center",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub chosen: NodeId,
    /// Tied or feasible nodes before the uniform tie-break, sorted.
    pub candidates: Vec<NodeId>,
    pub scores: Option<BTreeMap<NodeId, f64>>,
    pub method: Method,
}

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("no reports yet")]
    NoReports,
    #[error("{method} cannot use a {got} observation")]
    WrongObservation { method: Method, got: &'static str },
    #[error("no node is consistent with the observed timestamps")]
    EmptyIntersection,
    #[error("no reporting center")]
    NoReportingCenter,
    #[error("observation time {t} is below the required {min}")]
    HorizonTooShort { t: f64, min: u64 },
    #[error("all report times are needed for theta > 1; observe with keep_all")]
    MissingAllReports,
    #[error("max degree {degree} exceeds the limit {limit}")]
    DegreeTooLarge { degree: usize, limit: usize },
    #[error("enumeration exceeded {cap} histories")]
    CapExceeded { cap: u64 },
    #[error("history count overflowed")]
    Overflow,
    #[error("timestamp {0} is not a positive integer step")]
    NonIntegerTime(f64),
    #[error("trickle parameters required")]
    NotTrickle,
    #[error("an explicit graph is required")]
    NeedsExplicit,
    #[error("empty node set")]
    Empty,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn pick(candidates: &[NodeId], rng: &mut impl Rng) -> NodeId {
    candidates[rng.random_range(0..candidates.len())]
}

fn eavesdropper(obs: &Observation, method: Method) -> Result<&EavesdropperView, EstimateError> {
    match obs {
        Observation::Eavesdropper(e) => Ok(e),
        other => Err(EstimateError::WrongObservation { method, got: other.kind() }),
    }
}

/// Earliest reporter. For a spy observation this is the node that relayed
/// the message to the earliest spy.
pub fn first_timestamp(obs: &Observation, rng: &mut impl Rng) -> Result<EstimateResult, EstimateError> {
    let times: Vec<(NodeId, f64)> = match obs {
        Observation::Eavesdropper(e) => e.first.iter().map(|(v, t)| (*v, *t)).collect(),
        Observation::Spy(s) => s
            .spies
            .values()
            .filter_map(|r| r.relayed_from.map(|p| (p, r.time)))
            .collect(),
        Observation::Snapshot(_) => {
            return Err(EstimateError::WrongObservation { method: Method::FirstTimestamp, got: "snapshot" })
        }
    };
    let best = times.iter().map(|x| x.1).min_by(f64::total_cmp).ok_or(EstimateError::NoReports)?;
    let candidates: Vec<NodeId> = times
        .iter()
        .filter(|x| x.1 == best)
        .map(|x| x.0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(EstimateResult {
        chosen: pick(&candidates, rng),
        candidates,
        scores: None,
        method: Method::FirstTimestamp,
    })
}

fn step(t: f64) -> Result<u64, EstimateError> {
    if t >= 1.0 && t.fract() == 0.0 && t < 1e15 {
        Ok(t as u64)
    } else {
        Err(EstimateError::NonIntegerTime(t))
    }
}

/// Nodes within `tau_w - 1` hops of every reporter `w`.
pub fn ball_centrality(
    obs: &Observation,
    g: &Graph,
    rng: &mut impl Rng,
) -> Result<EstimateResult, EstimateError> {
    let e = eavesdropper(obs, Method::BallCentrality)?;
    let mut reporters: Vec<(NodeId, usize)> = e
        .first
        .iter()
        .map(|(v, t)| Ok((*v, step(*t)? as usize - 1)))
        .collect::<Result<_, EstimateError>>()?;
    reporters.sort_by_key(|&(v, r)| (r, v));
    let (&(w0, r0), rest) = reporters.split_first().ok_or(EstimateError::NoReports)?;
    let mut candidates: Vec<NodeId> = g.ball(w0, r0)?.into_keys().collect();
    for &(w, r) in rest {
        match g {
            Graph::Tree(t) => candidates.retain(|&c| t.distance(c, w) <= r),
            Graph::Explicit(_) => {
                let ball = g.ball(w, r)?;
                candidates.retain(|c| ball.contains_key(c));
            }
        }
        if candidates.is_empty() {
            return Err(EstimateError::EmptyIntersection);
        }
    }
    candidates.sort();
    Ok(EstimateResult {
        chosen: pick(&candidates, rng),
        candidates,
        scores: None,
        method: Method::BallCentrality,
    })
}

/// Largest weight found in any branch hanging off each node of a tree.
struct BranchWeights {
    max_branch: BTreeMap<NodeId, u64>,
    total: u64,
}

fn branch_weights(
    g: &Graph,
    nodes: &BTreeSet<NodeId>,
    weight: impl Fn(NodeId) -> u64,
) -> Result<BranchWeights, EstimateError> {
    let &root = nodes.first().ok_or(EstimateError::Empty)?;
    let mut parent: HashMap<NodeId, Option<NodeId>> = HashMap::from([(root, None)]);
    let mut order = vec![root];
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for w in g.neighbors(v)? {
            if !nodes.contains(&w) || parent[&v] == Some(w) {
                continue;
            }
            if parent.contains_key(&w) {
                return Err(GraphError::NotATree(format!("cycle through edge {v}-{w}")).into());
            }
            parent.insert(w, Some(v));
            order.push(w);
            queue.push_back(w);
        }
    }
    if order.len() != nodes.len() {
        return Err(GraphError::NotATree("node set is not connected".into()).into());
    }
    let mut below: HashMap<NodeId, u64> = nodes.iter().map(|&v| (v, weight(v))).collect();
    let mut heaviest_child: HashMap<NodeId, u64> = HashMap::new();
    for &v in order.iter().rev() {
        if let Some(p) = parent[&v] {
            let bv = below[&v];
            *below.get_mut(&p).unwrap() += bv;
            let h = heaviest_child.entry(p).or_default();
            *h = (*h).max(bv);
        }
    }
    let total = below[&root];
    let max_branch = order
        .iter()
        .map(|&v| {
            let up = total - below[&v];
            (v, up.max(heaviest_child.get(&v).copied().unwrap_or(0)))
        })
        .collect();
    Ok(BranchWeights { max_branch, total })
}

/// Union of the tree paths joining all `terminals`.
fn connecting_subtree(g: &Graph, terminals: &BTreeSet<NodeId>) -> Result<BTreeSet<NodeId>, EstimateError> {
    let &root = terminals.first().ok_or(EstimateError::NoReports)?;
    let mut out = BTreeSet::from([root]);
    match g {
        Graph::Tree(t) => {
            for &w in terminals {
                out.extend(t.path(root, w));
            }
        }
        Graph::Explicit(x) => {
            let mut prev: HashMap<NodeId, NodeId> = HashMap::from([(root, root)]);
            let mut queue = VecDeque::from([root]);
            let mut missing = terminals.len() - 1;
            while let Some(v) = queue.pop_front() {
                if missing == 0 {
                    break;
                }
                for &w in x.adjacency(v)? {
                    if let std::collections::hash_map::Entry::Vacant(e) = prev.entry(w) {
                        e.insert(v);
                        if terminals.contains(&w) {
                            missing -= 1;
                        }
                        queue.push_back(w);
                    }
                }
            }
            for &w in terminals {
                let mut cur = w;
                if !prev.contains_key(&cur) {
                    return Err(GraphError::NotATree(format!("{w} is disconnected from {root}")).into());
                }
                while out.insert(cur) {
                    cur = prev[&cur];
                }
            }
        }
    }
    Ok(out)
}

/// Nodes whose every adjacent subtree holds strictly fewer than half of the
/// reporting nodes. At most one node qualifies; the result may be empty.
pub fn reporting_centers(obs: &Observation, g: &Graph) -> Result<Vec<NodeId>, EstimateError> {
    if let Observation::Snapshot(_) = obs {
        return Err(EstimateError::WrongObservation { method: Method::ReportingCentrality, got: "snapshot" });
    }
    let reporters = obs.reporting_set();
    if reporters.is_empty() {
        return Err(EstimateError::NoReports);
    }
    let region = connecting_subtree(g, &reporters)?;
    let bw = branch_weights(g, &region, |v| reporters.contains(&v) as u64)?;
    Ok(bw
        .max_branch
        .into_iter()
        .filter(|&(_, m)| 2 * m < bw.total)
        .map(|(v, _)| v)
        .collect())
}

/// Reporting centrality estimate. An empty center set is returned as
/// [`EstimateError::NoReportingCenter`].
pub fn reporting_centrality(
    obs: &Observation,
    g: &Graph,
    rng: &mut impl Rng,
) -> Result<EstimateResult, EstimateError> {
    let candidates = reporting_centers(obs, g)?;
    if candidates.is_empty() {
        return Err(EstimateError::NoReportingCenter);
    }
    Ok(EstimateResult {
        chosen: pick(&candidates, rng),
        candidates,
        scores: None,
        method: Method::ReportingCentrality,
    })
}

/// Rumor centers of a tree-shaped node set: nodes whose adjacent subtrees
/// each hold at most half of the nodes.
pub fn rumor_centers(g: &Graph, nodes: &BTreeSet<NodeId>) -> Result<Vec<NodeId>, EstimateError> {
    let bw = branch_weights(g, nodes, |_| 1)?;
    Ok(bw
        .max_branch
        .into_iter()
        .filter(|&(_, m)| 2 * m <= bw.total)
        .map(|(v, _)| v)
        .collect())
}

/// Rumor-center estimate from a snapshot of the infected set.
pub fn rumor_center_estimate(
    obs: &Observation,
    g: &Graph,
    rng: &mut impl Rng,
) -> Result<EstimateResult, EstimateError> {
    let Observation::Snapshot(s) = obs else {
        return Err(EstimateError::WrongObservation { method: Method::RumorCenter, got: obs.kind() });
    };
    let candidates = rumor_centers(g, &s.infected)?;
    Ok(EstimateResult {
        chosen: pick(&candidates, rng),
        candidates,
        scores: None,
        method: Method::RumorCenter,
    })
}

/// Integer report times per node, taken from an eavesdropper observation.
pub type ReportLog = BTreeMap<NodeId, Vec<u64>>;

fn report_log(e: &EavesdropperView, theta: usize) -> Result<ReportLog, EstimateError> {
    let raw: BTreeMap<NodeId, Vec<f64>> = match (&e.all, theta) {
        (Some(all), _) => all.clone(),
        (None, 1) => e.first.iter().map(|(v, t)| (*v, vec![*t])).collect(),
        (None, _) => return Err(EstimateError::MissingAllReports),
    };
    raw.into_iter()
        .map(|(v, ts)| Ok((v, ts.into_iter().map(step).collect::<Result<Vec<_>, _>>()?)))
        .collect()
}

/// Builds an eavesdropper observation that keeps every report time.
pub fn observation_from_log(log: &ReportLog, t: u64) -> Observation {
    Observation::Eavesdropper(EavesdropperView {
        first: log.iter().map(|(v, ts)| (*v, ts[0] as f64)).collect(),
        all: Some(log.iter().map(|(v, ts)| (*v, ts.iter().map(|&x| x as f64).collect())).collect()),
        observed_until: t as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrcOptions {
    /// Refuse graphs whose max degree exceeds this; the cost is exponential
    /// in the degree.
    pub max_degree: usize,
}

impl Default for TrcOptions {
    fn default() -> Self {
        TrcOptions { max_degree: 6 }
    }
}

struct TrcCounter<'a> {
    g: &'a Graph,
    theta: usize,
    t: u64,
    log: &'a ReportLog,
    marked: HashSet<NodeId>,
    /// Keyed by node; valid for one candidate.
    memo: HashMap<(NodeId, u64), u128>,
    /// Unmarked subtrees of a uniform tree depend only on shape and time.
    shape_memo: HashMap<(usize, u64), u128>,
    uniform: bool,
}

impl TrcCounter<'_> {
    /// Number of relay orderings inside `v`'s subtree consistent with the
    /// log, given that `v` is infected at step `x` by `parent`.
    fn count(&mut self, v: NodeId, parent: Option<NodeId>, x: u64) -> Result<u128, EstimateError> {
        let marked = self.marked.contains(&v);
        let children: Vec<NodeId> =
            self.g.neighbors(v)?.into_iter().filter(|&w| Some(w) != parent).collect();
        if !marked && self.uniform {
            if let Some(&c) = self.shape_memo.get(&(children.len(), x)) {
                return Ok(c);
            }
        } else if let Some(&c) = self.memo.get(&(v, x)) {
            return Ok(c);
        }
        let result = self.count_uncached(v, &children, x)?;
        if !marked && self.uniform {
            self.shape_memo.insert((children.len(), x), result);
        } else {
            self.memo.insert((v, x), result);
        }
        Ok(result)
    }

    fn count_uncached(&mut self, v: NodeId, children: &[NodeId], x: u64) -> Result<u128, EstimateError> {
        let slots = children.len() + self.theta;
        let window = ((self.t - x) as usize).min(slots);
        let taps: Vec<usize> = self
            .log
            .get(&v)
            .map(|ts| ts.iter().map(|&r| r as i64 - x as i64).map(|p| p as usize).collect())
            .unwrap_or_default();
        if taps.len() > self.theta || taps.iter().any(|&p| p < 1 || p > window) {
            return Ok(0);
        }
        let free: Vec<usize> = (1..=window).filter(|p| !taps.contains(p)).collect();
        if free.len() > children.len() {
            return Ok(0);
        }
        let full = (1usize << free.len()) - 1;
        let mut dp = vec![0u128; full + 1];
        dp[0] = 1;
        for &c in children {
            let stay_clean = !self.marked.contains(&c);
            let mut vals = Vec::with_capacity(free.len());
            for &p in &free {
                vals.push(self.count(c, Some(v), x + p as u64)?);
            }
            let mut next = vec![0u128; full + 1];
            for (mask, &ways) in dp.iter().enumerate() {
                if ways == 0 {
                    continue;
                }
                if stay_clean {
                    next[mask] = next[mask].checked_add(ways).ok_or(EstimateError::Overflow)?;
                }
                for (i, &val) in vals.iter().enumerate() {
                    if mask & (1 << i) != 0 || val == 0 {
                        continue;
                    }
                    let add = ways.checked_mul(val).ok_or(EstimateError::Overflow)?;
                    let slot = &mut next[mask | (1 << i)];
                    *slot = slot.checked_add(add).ok_or(EstimateError::Overflow)?;
                }
            }
            dp = next;
        }
        Ok(dp[full])
    }
}

fn check_tree(g: &Graph) -> Result<(), EstimateError> {
    if let Graph::Explicit(x) = g {
        if x.edge_count() + x.component_count() != x.node_count() {
            return Err(GraphError::NotATree("graph has a cycle".into()).into());
        }
    }
    Ok(())
}

/// Number of trickle relay orderings consistent with every report up to the
/// observation time, for each plausible source (a node whose first report
/// is at most its degree plus one). Each consistent ordering is equally
/// likely, so the counts are proportional to the likelihood.
pub fn trc_counts(
    obs: &Observation,
    g: &Graph,
    theta: usize,
    opts: TrcOptions,
) -> Result<BTreeMap<NodeId, u128>, EstimateError> {
    let e = eavesdropper(obs, Method::TimestampRumorCentrality)?;
    if theta < 1 {
        return Err(EstimateError::NotTrickle);
    }
    let degree = g.max_degree();
    if degree > opts.max_degree {
        return Err(EstimateError::DegreeTooLarge { degree, limit: opts.max_degree });
    }
    let min = degree as u64 + 1;
    if !(e.observed_until >= min as f64) || e.observed_until.fract() != 0.0 || !e.observed_until.is_finite() {
        return Err(EstimateError::HorizonTooShort { t: e.observed_until, min });
    }
    check_tree(g)?;
    let t = e.observed_until as u64;
    let log = report_log(e, theta)?;
    if log.is_empty() {
        return Err(EstimateError::NoReports);
    }
    let uniform = matches!(g, Graph::Tree(tr) if tr.degree() == tr.root_degree());
    let mut counter = TrcCounter {
        g,
        theta,
        t,
        log: &log,
        marked: HashSet::new(),
        memo: HashMap::new(),
        shape_memo: HashMap::new(),
        uniform,
    };
    let mut out = BTreeMap::new();
    for (&s, ts) in &log {
        if ts[0] > g.degree(s)? as u64 + 1 {
            continue;
        }
        let mut marked = HashSet::new();
        let mut reachable = true;
        for &w in log.keys() {
            match g.path(s, w)? {
                Some(p) => marked.extend(p),
                None => reachable = false,
            }
        }
        let count = if !reachable {
            0
        } else {
            counter.marked = marked;
            counter.memo.clear();
            counter.count(s, None, 0)?
        };
        out.insert(s, count);
    }
    Ok(out)
}

/// Maximum-likelihood trickle estimate by counting consistent orderings.
pub fn timestamp_rumor_centrality(
    obs: &Observation,
    g: &Graph,
    theta: usize,
    opts: TrcOptions,
    rng: &mut impl Rng,
) -> Result<EstimateResult, EstimateError> {
    let counts = trc_counts(obs, g, theta, opts)?;
    let best = counts.values().copied().max().unwrap_or(0);
    if best == 0 {
        return Err(EstimateError::EmptyIntersection);
    }
    let candidates: Vec<NodeId> = counts.iter().filter(|(_, &c)| c == best).map(|(v, _)| *v).collect();
    Ok(EstimateResult {
        chosen: pick(&candidates, rng),
        candidates,
        scores: Some(counts.into_iter().map(|(v, c)| (v, c as f64)).collect()),
        method: Method::TimestampRumorCentrality,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BruteForceOptions {
    /// Maximum number of complete histories enumerated per call.
    pub cap: u64,
}

impl Default for BruteForceOptions {
    fn default() -> Self {
        BruteForceOptions { cap: 10_000_000 }
    }
}

/// Exact likelihood of one observation under one source.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceLikelihood {
    pub total: BigRational,
    /// Probability of every consistent history, in enumeration order.
    pub histories: Vec<BigRational>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub likelihood: BTreeMap<NodeId, SourceLikelihood>,
}

impl Posterior {
    /// Sources attaining the largest nonzero likelihood.
    pub fn argmax(&self) -> Vec<NodeId> {
        let Some(best) = self.likelihood.values().map(|l| &l.total).max() else {
            return Vec::new();
        };
        if best.is_zero() {
            return Vec::new();
        }
        self.likelihood
            .iter()
            .filter(|(_, l)| &l.total == best)
            .map(|(v, _)| *v)
            .collect()
    }

    /// Posterior over sources under a uniform prior; `None` when the
    /// observation is impossible for every source.
    pub fn normalized(&self) -> Option<BTreeMap<NodeId, BigRational>> {
        let evidence: BigRational = self.likelihood.values().map(|l| l.total.clone()).sum();
        if evidence.is_zero() {
            return None;
        }
        Some(self.likelihood.iter().map(|(v, l)| (*v, &l.total / &evidence)).collect())
    }
}

#[derive(Clone)]
struct Active {
    node: NodeId,
    slots: Vec<NodeId>,
    taps: usize,
}

#[derive(Clone)]
struct Branch {
    infected: Vec<bool>,
    active: Vec<Active>,
    fresh: Vec<(NodeId, u64)>,
    prob: BigRational,
    reported_now: usize,
    log: Vec<(NodeId, u64)>,
}

struct Enumerator<'a, F: FnMut(&BigRational, &[(NodeId, u64)])> {
    g: &'a crate::graph::ExplicitGraph,
    theta: usize,
    t: u64,
    /// When set, only histories producing exactly this log are followed.
    target: Option<&'a HashMap<u64, BTreeSet<NodeId>>>,
    cap: u64,
    seen: u64,
    sink: F,
}

impl<F: FnMut(&BigRational, &[(NodeId, u64)])> Enumerator<'_, F> {
    fn start(&mut self, source: NodeId) -> Result<(), EstimateError> {
        let mut infected = vec![false; self.g.node_count()];
        infected[source.index()] = true;
        let b = Branch {
            infected,
            active: vec![Active { node: source, slots: self.g.adjacency(source)?.to_vec(), taps: self.theta }],
            fresh: Vec::new(),
            prob: BigRational::one(),
            reported_now: 0,
            log: Vec::new(),
        };
        if self.t == 0 {
            return self.emit(&b);
        }
        self.go(1, 0, b)
    }

    fn emit(&mut self, b: &Branch) -> Result<(), EstimateError> {
        self.seen += 1;
        if self.seen > self.cap {
            return Err(EstimateError::CapExceeded { cap: self.cap });
        }
        (self.sink)(&b.prob, &b.log);
        Ok(())
    }

    fn must_report(&self, v: NodeId, j: u64) -> Option<bool> {
        self.target.map(|t| t.get(&j).is_some_and(|s| s.contains(&v)))
    }

    fn go(&mut self, j: u64, idx: usize, mut b: Branch) -> Result<(), EstimateError> {
        if idx == b.active.len() {
            if let Some(t) = self.target {
                if b.reported_now != t.get(&j).map_or(0, BTreeSet::len) {
                    return Ok(());
                }
            }
            for &(w, _) in &b.fresh {
                b.infected[w.index()] = true;
            }
            for (w, _) in std::mem::take(&mut b.fresh) {
                let slots = self
                    .g
                    .adjacency(w)?
                    .iter()
                    .copied()
                    .filter(|u| !b.infected[u.index()])
                    .collect();
                b.active.push(Active { node: w, slots, taps: self.theta });
            }
            b.active.retain(|a| a.taps + a.slots.len() > 0);
            b.reported_now = 0;
            if j == self.t {
                return self.emit(&b);
            }
            return self.go(j + 1, 0, b);
        }
        let a = b.active[idx].clone();
        let remaining = a.slots.len() + a.taps;
        let denom = BigInt::from(remaining);
        let forced = self.must_report(a.node, j);
        if a.taps > 0 && forced != Some(false) {
            let mut nb = b.clone();
            nb.prob *= BigRational::new(BigInt::from(a.taps), denom.clone());
            nb.active[idx].taps -= 1;
            nb.reported_now += 1;
            nb.log.push((a.node, j));
            self.go(j, idx + 1, nb)?;
        }
        if forced == Some(true) {
            return Ok(());
        }
        for i in 0..a.slots.len() {
            let mut nb = b.clone();
            nb.prob *= BigRational::new(BigInt::one(), denom.clone());
            let target = nb.active[idx].slots.remove(i);
            if !nb.infected[target.index()] && !nb.fresh.iter().any(|&(w, _)| w == target) {
                nb.fresh.push((target, j));
            }
            self.go(j, idx + 1, nb)?;
        }
        Ok(())
    }
}

fn trickle_theta(params: &SpreadParams) -> Result<usize, EstimateError> {
    if params.protocol != Protocol::Trickle {
        return Err(EstimateError::NotTrickle);
    }
    params.taps().map_err(|_| EstimateError::NotTrickle)
}

/// Exact `P(observation | source = v)` for every node of a small explicit
/// graph, by enumerating every trickle history up to step `t` whose
/// reports match the observation exactly. Only reports at or before `t`
/// are compared.
pub fn brute_force_posterior(
    g: &Graph,
    params: &SpreadParams,
    obs: &Observation,
    t: u64,
    opts: BruteForceOptions,
) -> Result<Posterior, EstimateError> {
    let theta = trickle_theta(params)?;
    let x = g.as_explicit().ok_or(EstimateError::NeedsExplicit)?;
    let e = eavesdropper(obs, Method::TimestampRumorCentrality)?;
    let log = report_log(e, theta)?;
    let mut by_step: HashMap<u64, BTreeSet<NodeId>> = HashMap::new();
    for (v, ts) in &log {
        for &r in ts.iter().filter(|&&r| r <= t) {
            by_step.entry(r).or_default().insert(*v);
        }
    }
    let mut likelihood = BTreeMap::new();
    let mut seen = 0;
    for i in 0..x.node_count() {
        let mut histories = Vec::new();
        let mut en = Enumerator {
            g: x,
            theta,
            t,
            target: Some(&by_step),
            cap: opts.cap - seen.min(opts.cap),
            seen: 0,
            sink: |p: &BigRational, _: &[(NodeId, u64)]| histories.push(p.clone()),
        };
        en.start(NodeId::from(i))?;
        seen += en.seen;
        let total = histories.iter().sum();
        likelihood.insert(NodeId::from(i), SourceLikelihood { total, histories });
    }
    Ok(Posterior { likelihood })
}

/// Every distinct report log that a trickle run from `source` can produce
/// up to step `t`, with its exact probability.
pub fn enumerate_observations(
    g: &Graph,
    params: &SpreadParams,
    source: NodeId,
    t: u64,
    opts: BruteForceOptions,
) -> Result<Vec<(ReportLog, BigRational)>, EstimateError> {
    let theta = trickle_theta(params)?;
    let x = g.as_explicit().ok_or(EstimateError::NeedsExplicit)?;
    x.adjacency(source)?;
    let mut found: BTreeMap<Vec<(NodeId, u64)>, BigRational> = BTreeMap::new();
    let mut en = Enumerator {
        g: x,
        theta,
        t,
        target: None,
        cap: opts.cap,
        seen: 0,
        sink: |p: &BigRational, log: &[(NodeId, u64)]| {
            let mut key = log.to_vec();
            key.sort();
            *found.entry(key).or_insert_with(BigRational::zero) += p;
        },
    };
    en.start(source)?;
    Ok(found
        .into_iter()
        .map(|(entries, p)| {
            let mut log = ReportLog::new();
            for (v, r) in entries {
                log.entry(v).or_default().push(r);
            }
            (log, p)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{SnapshotView, SpyReport, SpyView};
    use crate::graph::{build_regular_tree, lazy_regular_tree, parse_edge_list};
    use crate::spreading::Horizon;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn eaves(pairs: &[(u64, f64)], t: f64) -> Observation {
        Observation::Eavesdropper(EavesdropperView {
            first: pairs.iter().map(|&(v, x)| (NodeId(v), x)).collect(),
            all: None,
            observed_until: t,
        })
    }

    fn edges(text: &str) -> Graph {
        parse_edge_list(text.as_bytes()).unwrap()
    }

    #[test]
    fn first_timestamp_picks_minimum() {
        let obs = eaves(&[(1, 1.0), (2, 3.0)], 10.0);
        let r = first_timestamp(&obs, &mut rng()).unwrap();
        assert_eq!((r.chosen, r.candidates), (NodeId(1), vec![NodeId(1)]));
        assert!(matches!(first_timestamp(&eaves(&[], 1.0), &mut rng()), Err(EstimateError::NoReports)));
    }

    #[test]
    fn first_timestamp_tie_break_is_uniform() {
        let obs = eaves(&[(1, 2.0), (2, 2.0)], 10.0);
        let mut r = rng();
        let hits = (0..10_000).filter(|_| first_timestamp(&obs, &mut r).unwrap().chosen == NodeId(1)).count();
        assert!((hits as f64 / 1e4 - 0.5).abs() < 0.015);
    }

    #[test]
    fn first_timestamp_on_spies_names_the_sender() {
        let spies = BTreeMap::from([
            (NodeId(4), SpyReport { time: 0.7, relayed_from: Some(NodeId(1)) }),
            (NodeId(2), SpyReport { time: 0.3, relayed_from: Some(NodeId(0)) }),
        ]);
        let obs = Observation::Spy(SpyView { spies, observed_until: 1.0 });
        assert_eq!(first_timestamp(&obs, &mut rng()).unwrap().chosen, NodeId(0));
    }

    #[test]
    fn ball_of_radius_zero() {
        let g = lazy_regular_tree(3).unwrap();
        let obs = eaves(&[(5, 1.0), (0, 3.0)], 4.0);
        let r = ball_centrality(&obs, &g, &mut rng()).unwrap();
        assert_eq!(r.candidates, vec![NodeId(5)]);
    }

    #[test]
    fn ball_on_a_line_keeps_two() {
        // line ... 3 - 1 - 0 - 2 - 4 ...; reports at hop distance 1 both ways
        let g = lazy_regular_tree(2).unwrap();
        let obs = eaves(&[(3, 3.0), (2, 3.0)], 4.0);
        let r = ball_centrality(&obs, &g, &mut rng()).unwrap();
        assert_eq!(r.candidates, vec![NodeId(0), NodeId(1)]);
        let explicit = build_regular_tree(2, 6).unwrap();
        let r2 = ball_centrality(&obs, &explicit, &mut rng()).unwrap();
        assert_eq!(r2.candidates, r.candidates);
    }

    #[test]
    fn ball_rejects_inconsistent_input() {
        let g = lazy_regular_tree(3).unwrap();
        let obs = eaves(&[(1, 1.0), (2, 1.0)], 4.0);
        assert!(matches!(ball_centrality(&obs, &g, &mut rng()), Err(EstimateError::EmptyIntersection)));
        let obs = eaves(&[(1, 1.5)], 4.0);
        assert!(matches!(ball_centrality(&obs, &g, &mut rng()), Err(EstimateError::NonIntegerTime(_))));
    }

    fn small_tree() -> Graph {
        // 0 with children 1, 2, 3; grandchildren 4 (of 1), 5 (of 2), 6 (of 3)
        edges("0 1\n0 2\n0 3\n1 4\n2 5\n3 6\n")
    }

    #[test]
    fn reporting_center_example() {
        let g = small_tree();
        let obs = eaves(&[(1, 1.0), (4, 2.0), (2, 1.0), (5, 2.0), (3, 2.0)], 3.0);
        assert_eq!(reporting_centers(&obs, &g).unwrap(), vec![NodeId(0)]);
        // all reporters behind one neighbor of 0
        let obs = eaves(&[(1, 1.0), (4, 2.0)], 3.0);
        assert!(!reporting_centers(&obs, &g).unwrap().contains(&NodeId(0)));
    }

    #[test]
    fn reporting_center_can_be_missing() {
        let g = edges("0 1\n1 2\n2 3\n");
        let obs = eaves(&[(1, 1.0), (2, 1.0)], 3.0);
        assert!(reporting_centers(&obs, &g).unwrap().is_empty());
        assert!(matches!(reporting_centrality(&obs, &g, &mut rng()), Err(EstimateError::NoReportingCenter)));
        assert!(matches!(reporting_centers(&eaves(&[], 1.0), &g), Err(EstimateError::NoReports)));
    }

    #[test]
    fn reporting_center_on_lazy_tree_matches_explicit() {
        let lazy = lazy_regular_tree(3).unwrap();
        let explicit = build_regular_tree(3, 5).unwrap();
        let obs = eaves(&[(7, 1.0), (15, 1.0), (9, 1.0), (3, 1.0)], 3.0);
        assert_eq!(reporting_centers(&obs, &lazy).unwrap(), reporting_centers(&obs, &explicit).unwrap());
    }

    #[test]
    fn rumor_center_cases() {
        let single = edges("0 1\n");
        assert_eq!(rumor_centers(&single, &BTreeSet::from([NodeId(0)])).unwrap(), vec![NodeId(0)]);
        let path = edges("0 1\n1 2\n2 3\n");
        let all: BTreeSet<NodeId> = (0..4).map(NodeId).collect();
        assert_eq!(rumor_centers(&path, &all).unwrap(), vec![NodeId(1), NodeId(2)]);
        let star = edges("0 1\n0 2\n0 3\n0 4\n0 5\n");
        let all: BTreeSet<NodeId> = (0..6).map(NodeId).collect();
        assert_eq!(rumor_centers(&star, &all).unwrap(), vec![NodeId(0)]);
        assert!(matches!(rumor_centers(&star, &BTreeSet::new()), Err(EstimateError::Empty)));
        let tri = edges("0 1\n1 2\n2 0\n");
        assert!(rumor_centers(&tri, &(0..3).map(NodeId).collect()).is_err());
        let snap = Observation::Snapshot(SnapshotView { infected: (0..6).map(NodeId).collect(), at: 1.0 });
        assert_eq!(rumor_center_estimate(&snap, &star, &mut rng()).unwrap().chosen, NodeId(0));
    }

    #[test]
    fn trc_source_only() {
        let g = lazy_regular_tree(2).unwrap();
        let obs = eaves(&[(0, 1.0)], 3.0);
        let counts = trc_counts(&obs, &g, 1, TrcOptions::default()).unwrap();
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), vec![NodeId(0)]);
        assert!(counts[&NodeId(0)] > 0);
    }

    #[test]
    fn trc_guards() {
        let g = lazy_regular_tree(4).unwrap();
        let obs = eaves(&[(0, 1.0)], 4.0);
        assert!(matches!(
            trc_counts(&obs, &g, 1, TrcOptions::default()),
            Err(EstimateError::HorizonTooShort { .. })
        ));
        let g = lazy_regular_tree(7).unwrap();
        let obs = eaves(&[(0, 1.0)], 8.0);
        assert!(matches!(
            trc_counts(&obs, &g, 1, TrcOptions::default()),
            Err(EstimateError::DegreeTooLarge { .. })
        ));
        let g = lazy_regular_tree(3).unwrap();
        let obs = eaves(&[(0, 1.0)], 4.0);
        assert!(matches!(trc_counts(&obs, &g, 2, TrcOptions::default()), Err(EstimateError::MissingAllReports)));
    }

    #[test]
    fn trc_matches_brute_force_on_a_small_tree() {
        // 3-regular window deep enough that nothing reaches the leaves by t=4
        let g = build_regular_tree(3, 6).unwrap();
        let params = SpreadParams::trickle(1, Horizon::MaxTime(4.0));
        let opts = BruteForceOptions::default();
        let observations = enumerate_observations(&g, &params, NodeId::ROOT, 4, opts).unwrap();
        assert!(observations.len() > 5);
        for (log, _) in observations.iter().take(25) {
            let obs = observation_from_log(log, 4);
            let counts = trc_counts(&obs, &g, 1, TrcOptions::default()).unwrap();
            let post = brute_force_posterior(&g, &params, &obs, 4, opts).unwrap();
            for (v, c) in &counts {
                assert_eq!(*c as usize, post.likelihood[v].histories.len(), "node {v} log {log:?}");
            }
        }
    }

    #[test]
    fn enumerated_observations_sum_to_one() {
        let g = build_regular_tree(2, 5).unwrap();
        let params = SpreadParams::trickle(1, Horizon::MaxTime(4.0));
        let obs = enumerate_observations(&g, &params, NodeId::ROOT, 4, BruteForceOptions::default()).unwrap();
        let total: BigRational = obs.iter().map(|(_, p)| p.clone()).sum();
        assert!(total.is_one());
    }

    #[test]
    fn brute_force_impossible_observation() {
        let g = build_regular_tree(2, 4).unwrap();
        let params = SpreadParams::trickle(1, Horizon::MaxTime(3.0));
        // two nodes four hops apart cannot both report at step 1
        let obs = eaves(&[(7, 1.0), (8, 1.0)], 3.0);
        let post = brute_force_posterior(&g, &params, &obs, 3, BruteForceOptions::default()).unwrap();
        assert!(post.argmax().is_empty());
        assert!(post.normalized().is_none());
        assert!(post.likelihood.values().all(|l| l.total.is_zero()));
    }

    #[test]
    fn brute_force_cap() {
        let g = build_regular_tree(3, 4).unwrap();
        let params = SpreadParams::trickle(1, Horizon::MaxTime(4.0));
        let r = enumerate_observations(&g, &params, NodeId::ROOT, 4, BruteForceOptions { cap: 10 });
        assert!(matches!(r, Err(EstimateError::CapExceeded { cap: 10 })));
    }
}
