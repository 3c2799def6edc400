//! Forward simulation of trickle (discrete time) and diffusion (continuous
//! time) broadcasts, recording true infection times and the times at which
//! each server relays the message over its adversarial connections.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Trickle,
    Diffusion,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Trickle => "trickle",
            Protocol::Diffusion => "diffusion",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trickle" => Ok(Protocol::Trickle),
            "diffusion" => Ok(Protocol::Diffusion),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

/// When a simulation stops.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Horizon {
    /// Run until nothing is left to happen; only valid on finite graphs.
    Unbounded,
    /// Process infections at times `<= t`.
    MaxTime(f64),
    /// Stop at the K-th infection (the source counts as the first).
    MaxInfections(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadParams {
    pub protocol: Protocol,
    /// Adversarial connections per server (trickle, a positive integer) or
    /// the report rate (diffusion, a positive real).
    pub theta: f64,
    /// Honest relay rate for diffusion.
    pub lambda: f64,
    pub horizon: Horizon,
    pub source: NodeId,
}

impl SpreadParams {
    pub fn trickle(theta: usize, horizon: Horizon) -> Self {
        SpreadParams {
            protocol: Protocol::Trickle,
            theta: theta as f64,
            lambda: 1.0,
            horizon,
            source: NodeId::ROOT,
        }
    }

    pub fn diffusion(theta: f64, horizon: Horizon) -> Self {
        SpreadParams {
            protocol: Protocol::Diffusion,
            theta,
            lambda: 1.0,
            horizon,
            source: NodeId::ROOT,
        }
    }

    pub fn with_source(mut self, source: NodeId) -> Self {
        self.source = source;
        self
    }

    /// Integer tap count for trickle.
    pub fn taps(&self) -> Result<usize, SpreadError> {
        if self.theta >= 1.0 && self.theta.fract() == 0.0 && self.theta.is_finite() {
            Ok(self.theta as usize)
        } else {
            Err(SpreadError::NonIntegerTheta(self.theta))
        }
    }
}

#[derive(Debug, Error)]
pub enum SpreadError {
    #[error("expected {expected} parameters, got {got}")]
    WrongProtocol { expected: &'static str, got: &'static str },
    #[error("trickle needs an integer theta >= 1, got {0}")]
    NonIntegerTheta(f64),
    #[error("rates must be positive (theta={theta}, lambda={lambda})")]
    NonPositiveRate { theta: f64, lambda: f64 },
    #[error("unbounded horizon on an infinite graph never terminates")]
    UnboundedOnInfinite,
    #[error("invalid horizon: {0}")]
    BadHorizon(String),
    #[error("source {0} is not in the graph")]
    UnknownSource(NodeId),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Ground truth for one infected server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node: NodeId,
    pub infected_at: f64,
    pub parent: Option<NodeId>,
    /// Adversary report times in increasing order. These are fixed at
    /// infection time and may lie beyond the trace's stop time.
    pub reports: Vec<f64>,
}

impl NodeRecord {
    pub fn first_report(&self) -> Option<f64> {
        self.reports.first().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadTrace {
    pub protocol: Protocol,
    pub source: NodeId,
    /// Records in infection order.
    pub records: Vec<NodeRecord>,
    pub stop_time: f64,
    #[serde(skip)]
    index: HashMap<NodeId, usize>,
}

impl SpreadTrace {
    fn new(protocol: Protocol, source: NodeId) -> Self {
        SpreadTrace {
            protocol,
            source,
            records: Vec::new(),
            stop_time: 0.0,
            index: HashMap::new(),
        }
    }

    fn push(&mut self, rec: NodeRecord) {
        self.index.insert(rec.node, self.records.len());
        self.records.push(rec);
    }

    pub fn get(&self, v: NodeId) -> Option<&NodeRecord> {
        self.index.get(&v).map(|&i| &self.records[i])
    }

    pub fn is_infected(&self, v: NodeId) -> bool {
        self.index.contains_key(&v)
    }

    pub fn infection_time(&self, v: NodeId) -> Option<f64> {
        self.get(v).map(|r| r.infected_at)
    }

    pub fn infected_count(&self) -> usize {
        self.records.len()
    }

    pub fn infected_order(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.records.iter().map(|r| r.node)
    }

    /// Earliest report time over all infected nodes and every node
    /// attaining it.
    pub fn first_reporters(&self) -> Option<(f64, Vec<NodeId>)> {
        let best = self
            .records
            .iter()
            .filter_map(NodeRecord::first_report)
            .min_by(f64::total_cmp)?;
        let nodes = self
            .records
            .iter()
            .filter(|r| r.first_report() == Some(best))
            .map(|r| r.node)
            .collect();
        Some((best, nodes))
    }

    /// Writes one CSV row per infected node: node, infection time, first
    /// report time and parent. Trickle times are printed as integers,
    /// diffusion times with 9 significant digits.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "node,X,first_report_time,parent")?;
        let fmt = |x: f64| match self.protocol {
            Protocol::Trickle => format!("{}", x as i64),
            Protocol::Diffusion => format_sig(x, 9),
        };
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{}",
                r.node,
                fmt(r.infected_at),
                r.first_report().map(fmt).unwrap_or_default(),
                r.parent.map(|p| p.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let s = format!("{:.*e}", digits - 1, x);
    // re-render through f64 to drop trailing zeros from the mantissa
    s.parse::<f64>().map(|v| v.to_string()).unwrap_or(s)
}

/// Earliest adversary report in a run.
#[derive(Clone, Debug, PartialEq)]
pub enum FirstReport {
    Reported { nodes: Vec<NodeId>, time: f64 },
    /// The horizon was reached before anyone reported.
    NoReport,
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Horizon,
    FirstReport,
}

/// Min-heap entry ordered by time, then insertion sequence.
struct Event {
    time: f64,
    seq: u64,
    from: NodeId,
    to: NodeId,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Queue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl Queue {
    fn new() -> Self {
        Queue { heap: BinaryHeap::new(), seq: 0 }
    }
    fn push(&mut self, time: f64, from: NodeId, to: NodeId) {
        self.seq += 1;
        self.heap.push(Event { time, seq: self.seq, from, to });
    }
    fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }
}

fn check_common(g: &Graph, params: &SpreadParams, mode: Mode) -> Result<(), SpreadError> {
    if !g.contains(params.source) {
        return Err(SpreadError::UnknownSource(params.source));
    }
    if mode == Mode::Horizon {
        match params.horizon {
            Horizon::Unbounded if !g.is_finite() => return Err(SpreadError::UnboundedOnInfinite),
            Horizon::MaxTime(t) if t.is_nan() || t < 0.0 => {
                return Err(SpreadError::BadHorizon(format!("max_time {t}")))
            }
            Horizon::MaxInfections(0) => {
                return Err(SpreadError::BadHorizon("max_infections 0".into()))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Discrete-time trickle spreading.
///
/// On infection each server shuffles its slots (uninfected honest neighbors
/// plus `theta` adversarial taps) and from the next step on serves one slot
/// per step. A slot pointing at a neighbor that was infected in the meantime
/// is spent without effect.
pub fn simulate_trickle(
    g: &Graph,
    params: &SpreadParams,
    rng: &mut impl Rng,
) -> Result<SpreadTrace, SpreadError> {
    run_trickle(g, params, rng, Mode::Horizon)
}

/// Continuous-time diffusion: every edge out of a newly infected server
/// fires after an independent Exp(lambda) delay and the server reports to
/// the adversary after an Exp(theta) delay.
pub fn simulate_diffusion(
    g: &Graph,
    params: &SpreadParams,
    rng: &mut impl Rng,
) -> Result<SpreadTrace, SpreadError> {
    run_diffusion(g, params, rng, Mode::Horizon)
}

pub fn simulate(
    g: &Graph,
    params: &SpreadParams,
    rng: &mut impl Rng,
) -> Result<SpreadTrace, SpreadError> {
    match params.protocol {
        Protocol::Trickle => simulate_trickle(g, params, rng),
        Protocol::Diffusion => simulate_diffusion(g, params, rng),
    }
}

/// Runs only until the earliest adversary report is settled and returns
/// every node attaining it. Later events cannot lower the minimum, so this
/// equals the first-timestamp outcome at `t = infinity`. The horizon is
/// still honoured; reaching it first yields [`FirstReport::NoReport`].
pub fn first_report_trial(
    g: &Graph,
    params: &SpreadParams,
    rng: &mut impl Rng,
) -> Result<FirstReport, SpreadError> {
    let trace = match params.protocol {
        Protocol::Trickle => run_trickle(g, params, rng, Mode::FirstReport)?,
        Protocol::Diffusion => run_diffusion(g, params, rng, Mode::FirstReport)?,
    };
    let limit = match params.horizon {
        Horizon::MaxTime(t) => t,
        // an early stop below K means the report came first
        Horizon::MaxInfections(k) if trace.infected_count() >= k => trace.stop_time,
        Horizon::MaxInfections(_) => f64::INFINITY,
        Horizon::Unbounded => f64::INFINITY,
    };
    Ok(match trace.first_reporters() {
        Some((time, nodes)) if time <= limit => FirstReport::Reported { nodes, time },
        _ => FirstReport::NoReport,
    })
}

/// Slot in a trickle node's relay order.
#[derive(Clone, Copy)]
enum Slot {
    Honest(NodeId),
    Tap,
}

fn run_trickle(
    g: &Graph,
    params: &SpreadParams,
    rng: &mut impl Rng,
    mode: Mode,
) -> Result<SpreadTrace, SpreadError> {
    if params.protocol != Protocol::Trickle {
        return Err(SpreadError::WrongProtocol { expected: "trickle", got: params.protocol.as_str() });
    }
    let taps = params.taps()?;
    check_common(g, params, mode)?;

    let (max_time, max_infections) = match (mode, params.horizon) {
        (_, Horizon::MaxTime(t)) => (t, usize::MAX),
        (_, Horizon::MaxInfections(k)) => (f64::INFINITY, k),
        (_, Horizon::Unbounded) => (f64::INFINITY, usize::MAX),
    };

    let mut trace = SpreadTrace::new(Protocol::Trickle, params.source);
    let mut queue = Queue::new();
    let mut best_report = f64::INFINITY;

    let arm = |v: NodeId,
                   x: f64,
                   trace: &SpreadTrace,
                   queue: &mut Queue,
                   rng: &mut dyn rand::RngCore|
     -> Result<Vec<f64>, SpreadError> {
        let mut slots: Vec<Slot> = g
            .neighbors(v)?
            .into_iter()
            .filter(|w| !trace.is_infected(*w))
            .map(Slot::Honest)
            .collect();
        slots.extend(std::iter::repeat_n(Slot::Tap, taps));
        slots.shuffle(rng);
        let mut reports = Vec::with_capacity(taps);
        for (k, slot) in slots.into_iter().enumerate() {
            let at = x + (k + 1) as f64;
            match slot {
                Slot::Tap => reports.push(at),
                Slot::Honest(w) => queue.push(at, v, w),
            }
        }
        Ok(reports)
    };

    let reports = arm(params.source, 0.0, &trace, &mut queue, rng)?;
    best_report = best_report.min(reports[0]);
    trace.push(NodeRecord { node: params.source, infected_at: 0.0, parent: None, reports });
    trace.stop_time = 0.0;

    'steps: while let Some(now) = queue.peek_time() {
        if now > max_time || (mode == Mode::FirstReport && now >= best_report) {
            break;
        }
        let mut fresh: Vec<(NodeId, NodeId)> = Vec::new();
        while queue.peek_time() == Some(now) {
            let ev = queue.heap.pop().unwrap();
            if trace.is_infected(ev.to) || fresh.iter().any(|(w, _)| *w == ev.to) {
                continue;
            }
            fresh.push((ev.to, ev.from));
            if trace.infected_count() + fresh.len() >= max_infections {
                break;
            }
        }
        if fresh.is_empty() {
            continue;
        }
        for &(w, from) in &fresh {
            trace.push(NodeRecord { node: w, infected_at: now, parent: Some(from), reports: Vec::new() });
        }
        trace.stop_time = now;
        for (w, _) in fresh {
            let reports = arm(w, now, &trace, &mut queue, rng)?;
            best_report = best_report.min(reports[0]);
            let i = trace.index[&w];
            trace.records[i].reports = reports;
        }
        if trace.infected_count() >= max_infections {
            break 'steps;
        }
    }
    if mode == Mode::Horizon {
        if let Horizon::MaxTime(t) = params.horizon {
            trace.stop_time = t;
        }
    }
    Ok(trace)
}

fn run_diffusion(
    g: &Graph,
    params: &SpreadParams,
    rng: &mut impl Rng,
    mode: Mode,
) -> Result<SpreadTrace, SpreadError> {
    if params.protocol != Protocol::Diffusion {
        return Err(SpreadError::WrongProtocol { expected: "diffusion", got: params.protocol.as_str() });
    }
    if !(params.theta > 0.0 && params.lambda > 0.0) || !params.theta.is_finite() || !params.lambda.is_finite() {
        return Err(SpreadError::NonPositiveRate { theta: params.theta, lambda: params.lambda });
    }
    check_common(g, params, mode)?;
    let report_delay = Exp::new(params.theta).expect("checked rate");
    let relay_delay = Exp::new(params.lambda).expect("checked rate");

    let (max_time, max_infections) = match params.horizon {
        Horizon::MaxTime(t) => (t, usize::MAX),
        Horizon::MaxInfections(k) => (f64::INFINITY, k),
        Horizon::Unbounded => (f64::INFINITY, usize::MAX),
    };

    let mut trace = SpreadTrace::new(Protocol::Diffusion, params.source);
    let mut queue = Queue::new();
    let mut best_report = f64::INFINITY;

    let infect = |v: NodeId,
                      parent: Option<NodeId>,
                      x: f64,
                      trace: &mut SpreadTrace,
                      queue: &mut Queue,
                      rng: &mut dyn rand::RngCore|
     -> Result<f64, SpreadError> {
        let report = x + report_delay.sample(rng);
        trace.push(NodeRecord { node: v, infected_at: x, parent, reports: vec![report] });
        trace.stop_time = x;
        for w in g.neighbors(v)? {
            if !trace.is_infected(w) {
                queue.push(x + relay_delay.sample(rng), v, w);
            }
        }
        Ok(report)
    };

    let r = infect(params.source, None, 0.0, &mut trace, &mut queue, rng)?;
    best_report = best_report.min(r);

    while trace.infected_count() < max_infections {
        let Some(ev) = queue.heap.pop() else { break };
        if ev.time > max_time || (mode == Mode::FirstReport && ev.time >= best_report) {
            break;
        }
        if trace.is_infected(ev.to) {
            continue;
        }
        let r = infect(ev.to, Some(ev.from), ev.time, &mut trace, &mut queue, rng)?;
        best_report = best_report.min(r);
    }
    if mode == Mode::Horizon {
        if let Horizon::MaxTime(t) = params.horizon {
            trace.stop_time = t;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_regular_tree, lazy_regular_tree, parse_edge_list};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn trickle_zero_horizon_keeps_only_source() {
        let g = lazy_regular_tree(3).unwrap();
        let p = SpreadParams::trickle(1, Horizon::MaxTime(0.0));
        let tr = simulate_trickle(&g, &p, &mut rng(1)).unwrap();
        assert_eq!(tr.infected_count(), 1);
        assert_eq!(tr.records[0].infected_at, 0.0);
        assert_eq!(tr.stop_time, 0.0);
    }

    #[test]
    fn trickle_on_line_steps_by_one_or_two() {
        let g = lazy_regular_tree(2).unwrap();
        let p = SpreadParams::trickle(1, Horizon::MaxTime(30.0));
        for seed in 0..50 {
            let tr = simulate_trickle(&g, &p, &mut rng(seed)).unwrap();
            for r in &tr.records[1..] {
                let px = tr.infection_time(r.parent.unwrap()).unwrap();
                let gap = r.infected_at - px;
                if r.parent == Some(NodeId::ROOT) {
                    assert!((1.0..=3.0).contains(&gap));
                } else {
                    assert!(gap == 1.0 || gap == 2.0, "gap {gap}");
                }
            }
        }
    }

    #[test]
    fn trickle_respects_slot_bounds() {
        let d = 4usize;
        let theta = 2usize;
        let g = lazy_regular_tree(d).unwrap();
        let p = SpreadParams::trickle(theta, Horizon::MaxTime(7.0));
        for seed in 0..30 {
            let tr = simulate_trickle(&g, &p, &mut rng(seed)).unwrap();
            for r in &tr.records {
                let honest = if r.node == NodeId::ROOT { d } else { d - 1 };
                assert_eq!(r.reports.len(), theta);
                let tau = r.first_report().unwrap();
                assert!(tau - r.infected_at >= 1.0);
                assert!(tau - r.infected_at <= (honest + 1) as f64);
                if let Some(p) = r.parent {
                    let gap = r.infected_at - tr.infection_time(p).unwrap();
                    let ph = if p == NodeId::ROOT { d } else { d - 1 };
                    assert!(gap >= 1.0 && gap <= (ph + theta) as f64);
                }
            }
        }
    }

    #[test]
    fn trickle_source_report_distribution() {
        // P(tau_0 = i) = C(N - i, theta - 1) / C(N, theta), N = d + theta
        let d = 3usize;
        let theta = 2usize;
        let n = d + theta;
        let binom = |a: usize, b: usize| -> f64 {
            if b > a {
                return 0.0;
            }
            (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64)
        };
        let g = lazy_regular_tree(d).unwrap();
        let p = SpreadParams::trickle(theta, Horizon::MaxTime(0.0));
        let trials = 40_000;
        let mut counts = vec![0usize; n + 2];
        let mut r = rng(7);
        for _ in 0..trials {
            let tr = simulate_trickle(&g, &p, &mut r).unwrap();
            counts[tr.records[0].first_report().unwrap() as usize] += 1;
        }
        for (i, &c) in counts.iter().enumerate().skip(1).take(d + 1) {
            let expect = binom(n - i, theta - 1) / binom(n, theta);
            let se = (expect * (1.0 - expect) / trials as f64).sqrt();
            let got = c as f64 / trials as f64;
            assert!((got - expect).abs() <= 3.0 * se + 1e-12, "i={i} got {got} expect {expect}");
        }
        assert_eq!(counts[d + 2..].iter().sum::<usize>(), 0);
    }

    #[test]
    fn trickle_transmissions_are_conserved() {
        // every infected node serves exactly one slot per step until its slots run out
        let g = lazy_regular_tree(3).unwrap();
        let p = SpreadParams::trickle(1, Horizon::MaxTime(6.0));
        let tr = simulate_trickle(&g, &p, &mut rng(3)).unwrap();
        let horizon = 6.0;
        let mut used: HashMap<NodeId, usize> = HashMap::new();
        for r in &tr.records {
            if let Some(par) = r.parent {
                *used.entry(par).or_default() += 1;
            }
            *used.entry(r.node).or_default() += r.reports.iter().filter(|&&t| t <= horizon).count();
        }
        for r in &tr.records {
            let slots = if r.node == NodeId::ROOT { 3 } else { 2 } + 1;
            let elapsed = (horizon - r.infected_at) as usize;
            assert_eq!(used.get(&r.node).copied().unwrap_or(0), elapsed.min(slots));
        }
    }

    #[test]
    fn trickle_on_cycle_spends_slot_on_infected_neighbor() {
        let g = parse_edge_list("0 1\n1 2\n2 0\n".as_bytes()).unwrap();
        let p = SpreadParams::trickle(1, Horizon::Unbounded);
        for seed in 0..20 {
            let tr = simulate_trickle(&g, &p, &mut rng(seed)).unwrap();
            assert_eq!(tr.infected_count(), 3);
            for r in &tr.records {
                assert!(r.reports.len() == 1);
            }
        }
    }

    #[test]
    fn trickle_rejects_bad_params() {
        let g = lazy_regular_tree(3).unwrap();
        let mut p = SpreadParams::trickle(1, Horizon::MaxTime(3.0));
        p.theta = 1.5;
        assert!(matches!(simulate_trickle(&g, &p, &mut rng(0)), Err(SpreadError::NonIntegerTheta(_))));
        let p = SpreadParams::diffusion(1.0, Horizon::MaxTime(3.0));
        assert!(matches!(simulate_trickle(&g, &p, &mut rng(0)), Err(SpreadError::WrongProtocol { .. })));
        let p = SpreadParams::trickle(1, Horizon::Unbounded);
        assert!(matches!(simulate_trickle(&g, &p, &mut rng(0)), Err(SpreadError::UnboundedOnInfinite)));
    }

    #[test]
    fn diffusion_single_infection_horizon() {
        let g = lazy_regular_tree(3).unwrap();
        let p = SpreadParams::diffusion(1.0, Horizon::MaxInfections(1));
        let tr = simulate_diffusion(&g, &p, &mut rng(0)).unwrap();
        assert_eq!(tr.infected_count(), 1);
        assert_eq!(tr.stop_time, 0.0);
    }

    #[test]
    fn diffusion_report_delay_mean() {
        let g = lazy_regular_tree(3).unwrap();
        let p = SpreadParams::diffusion(2.0, Horizon::MaxInfections(500));
        let mut r = rng(11);
        let (mut sum, mut n) = (0.0, 0usize);
        while n < 100_000 {
            let tr = simulate_diffusion(&g, &p, &mut r).unwrap();
            for rec in &tr.records {
                let delay = rec.first_report().unwrap() - rec.infected_at;
                assert!(delay > 0.0);
                sum += delay;
                n += 1;
            }
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn diffusion_growth_is_monotone_in_time() {
        let g = lazy_regular_tree(3).unwrap();
        let mut last = 0;
        for t in [0.5, 1.0, 2.0, 3.0, 4.0] {
            let p = SpreadParams::diffusion(1.0, Horizon::MaxTime(t));
            let tr = simulate_diffusion(&g, &p, &mut rng(5)).unwrap();
            assert!(tr.infected_count() >= last);
            last = tr.infected_count();
        }
        assert!(last > 20);
    }

    #[test]
    fn diffusion_paths_increase_and_events_are_ordered() {
        let g = lazy_regular_tree(4).unwrap();
        let p = SpreadParams::diffusion(1.0, Horizon::MaxInfections(300));
        let tr = simulate_diffusion(&g, &p, &mut rng(2)).unwrap();
        for w in tr.records.windows(2) {
            assert!(w[0].infected_at <= w[1].infected_at);
        }
        for r in &tr.records[1..] {
            assert!(r.infected_at > tr.infection_time(r.parent.unwrap()).unwrap());
        }
        assert_eq!(tr.stop_time, tr.records.last().unwrap().infected_at);
    }

    #[test]
    fn diffusion_rejects_bad_rates() {
        let g = lazy_regular_tree(3).unwrap();
        let p = SpreadParams::diffusion(0.0, Horizon::MaxTime(1.0));
        assert!(matches!(simulate_diffusion(&g, &p, &mut rng(0)), Err(SpreadError::NonPositiveRate { .. })));
    }

    #[test]
    fn runs_are_deterministic() {
        let g = lazy_regular_tree(4).unwrap();
        for p in [
            SpreadParams::trickle(2, Horizon::MaxTime(5.0)),
            SpreadParams::diffusion(1.0, Horizon::MaxInfections(200)),
        ] {
            let a = simulate(&g, &p, &mut rng(9)).unwrap();
            let b = simulate(&g, &p, &mut rng(9)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn first_report_matches_full_run() {
        let g = lazy_regular_tree(3).unwrap();
        for seed in 0..40 {
            for p in [
                SpreadParams::trickle(1, Horizon::MaxTime(12.0)),
                SpreadParams::diffusion(1.0, Horizon::MaxTime(6.0)),
            ] {
                let full = simulate(&g, &p, &mut rng(seed)).unwrap();
                let (time, mut nodes) = full.first_reporters().unwrap();
                nodes.sort();
                match first_report_trial(&g, &p, &mut rng(seed)).unwrap() {
                    FirstReport::Reported { nodes: mut n2, time: t2 } => {
                        n2.sort();
                        assert_eq!((t2, n2), (time, nodes));
                    }
                    FirstReport::NoReport => assert!(time > 6.0),
                }
            }
        }
    }

    #[test]
    fn first_report_large_theta_is_source() {
        let g = lazy_regular_tree(4).unwrap();
        let p = SpreadParams::diffusion(1000.0, Horizon::Unbounded);
        let mut r = rng(4);
        let hits = (0..2000)
            .filter(|_| {
                matches!(first_report_trial(&g, &p, &mut r).unwrap(),
                    FirstReport::Reported { ref nodes, .. } if nodes == &[NodeId::ROOT])
            })
            .count();
        assert!(hits > 1980);
    }

    #[test]
    fn first_report_horizon_without_report() {
        let g = build_regular_tree(3, 3).unwrap();
        let p = SpreadParams::trickle(1, Horizon::MaxTime(0.0));
        assert_eq!(first_report_trial(&g, &p, &mut rng(0)).unwrap(), FirstReport::NoReport);
    }

    #[test]
    fn trace_csv_dump() {
        let g = lazy_regular_tree(3).unwrap();
        let p = SpreadParams::trickle(1, Horizon::MaxTime(2.0));
        let tr = simulate_trickle(&g, &p, &mut rng(0)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("node,X,first_report_time,parent"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[1], "0");
        assert_eq!(first[3], "");
        assert_eq!(text.lines().count(), tr.infected_count() + 1);
        assert_eq!(format_sig(1.23456789012, 9), "1.23456789");
    }
}
