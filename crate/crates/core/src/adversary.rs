//! What each adversary model gets to see of a spreading run.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeId;
use crate::spreading::SpreadTrace;

#[derive(Debug, Error, PartialEq)]
pub enum ObserveError {
    #[error("spy probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("observation time {0} must be non-negative")]
    BadTime(f64),
}

/// Timestamps collected over adversarial connections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EavesdropperView {
    /// First report time of every node that reported by `observed_until`.
    pub first: BTreeMap<NodeId, f64>,
    /// Every report time up to `observed_until`, when requested.
    pub all: Option<BTreeMap<NodeId, Vec<f64>>>,
    pub observed_until: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpyReport {
    /// Exact infection time of the spy.
    pub time: f64,
    /// Neighbor the spy received the message from.
    pub relayed_from: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpyView {
    pub spies: BTreeMap<NodeId, SpyReport>,
    pub observed_until: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotView {
    pub infected: BTreeSet<NodeId>,
    pub at: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Eavesdropper(EavesdropperView),
    Spy(SpyView),
    Snapshot(SnapshotView),
}

impl Observation {
    pub fn kind(&self) -> &'static str {
        match self {
            Observation::Eavesdropper(_) => "eavesdropper",
            Observation::Spy(_) => "spy",
            Observation::Snapshot(_) => "snapshot",
        }
    }

    pub fn observed_until(&self) -> f64 {
        match self {
            Observation::Eavesdropper(e) => e.observed_until,
            Observation::Spy(s) => s.observed_until,
            Observation::Snapshot(s) => s.at,
        }
    }

    /// Nodes known to hold the message: reporters, spies, or the snapshot.
    pub fn reporting_set(&self) -> BTreeSet<NodeId> {
        match self {
            Observation::Eavesdropper(e) => e.first.keys().copied().collect(),
            Observation::Spy(s) => s.spies.keys().copied().collect(),
            Observation::Snapshot(s) => s.infected.clone(),
        }
    }
}

fn check_time(t: f64) -> Result<(), ObserveError> {
    if t.is_nan() || t < 0.0 {
        Err(ObserveError::BadTime(t))
    } else {
        Ok(())
    }
}

/// Keeps every report at or before `t`. With `keep_all` the full report
/// lists are retained as well as the first timestamps.
pub fn observe_eavesdropper(
    trace: &SpreadTrace,
    t: f64,
    keep_all: bool,
) -> Result<Observation, ObserveError> {
    check_time(t)?;
    let mut first = BTreeMap::new();
    let mut all = keep_all.then(BTreeMap::new);
    for rec in &trace.records {
        let seen: Vec<f64> = rec.reports.iter().copied().filter(|&r| r <= t).collect();
        if let Some(&tau) = seen.first() {
            first.insert(rec.node, tau);
            if let Some(all) = all.as_mut() {
                all.insert(rec.node, seen);
            }
        }
    }
    Ok(Observation::Eavesdropper(EavesdropperView { first, all, observed_until: t }))
}

/// Corrupts each infected non-source node independently with probability
/// `p`. One Bernoulli draw is consumed per non-source node, in infection
/// order, whether or not the node was infected by `t`.
pub fn observe_spy(
    trace: &SpreadTrace,
    p: f64,
    t: f64,
    rng: &mut impl Rng,
) -> Result<Observation, ObserveError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ObserveError::BadProbability(p));
    }
    check_time(t)?;
    let mut spies = BTreeMap::new();
    for rec in trace.records.iter().filter(|r| r.node != trace.source) {
        if rng.random_bool(p) && rec.infected_at <= t {
            spies.insert(rec.node, SpyReport { time: rec.infected_at, relayed_from: rec.parent });
        }
    }
    Ok(Observation::Spy(SpyView { spies, observed_until: t }))
}

/// The set of nodes infected at or before `at`.
pub fn observe_snapshot(trace: &SpreadTrace, at: f64) -> Result<Observation, ObserveError> {
    check_time(at)?;
    let infected = trace
        .records
        .iter()
        .filter(|r| r.infected_at <= at)
        .map(|r| r.node)
        .collect();
    Ok(Observation::Snapshot(SnapshotView { infected, at }))
}
