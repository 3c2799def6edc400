//! Monte Carlo experiments: run many independent trials, score an
//! estimator against the true source and summarise with a Wilson interval.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{observe_eavesdropper, observe_snapshot, observe_spy, Observation};
use crate::analytics::{self, FormulaId, TheoryValue};
use crate::estimators::{self, EstimateError, EstimateResult, TrcOptions};
use crate::graph::{self, Graph, GraphError, NodeId};
use crate::spreading::{first_report_trial, simulate, FirstReport, Horizon, Protocol, SpreadParams};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("unknown sweep axis {0:?}")]
    UnknownAxis(String),
    #[error("trial {index}: {source}")]
    Trial {
        index: usize,
        #[source]
        source: Box<crate::Error>,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    /// Infinite tree; `root_degree` overrides the source's degree.
    RegularTree { d: usize, root_degree: Option<usize> },
    RandomRegular { n: usize, d: usize, seed: u64 },
    EdgeList { path: PathBuf },
    /// A graph built by the caller; the source is node 0.
    #[serde(skip)]
    Prebuilt(Arc<Graph>),
}

impl GraphSpec {
    pub fn regular_tree(d: usize) -> Self {
        GraphSpec::RegularTree { d, root_degree: None }
    }

    pub fn degree(&self) -> Option<usize> {
        match self {
            GraphSpec::RegularTree { d, .. } | GraphSpec::RandomRegular { d, .. } => Some(*d),
            GraphSpec::EdgeList { .. } | GraphSpec::Prebuilt(_) => None,
        }
    }

    pub fn build(&self) -> Result<Arc<Graph>, GraphError> {
        Ok(match self {
            GraphSpec::RegularTree { d, root_degree } => {
                Arc::new(graph::lazy_tree_with_root_degree(*d, root_degree.unwrap_or(*d))?)
            }
            GraphSpec::RandomRegular { n, d, seed } => Arc::new(graph::build_random_regular(*n, *d, *seed)?),
            GraphSpec::EdgeList { path } => Arc::new(graph::load_edge_list(path)?),
            GraphSpec::Prebuilt(g) => Arc::clone(g),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum AdversarySpec {
    /// `t = None` observes up to the end of the run.
    Eavesdropper { t: Option<f64> },
    Spy { p: f64, t: Option<f64> },
    Snapshot { t: Option<f64> },
}

impl AdversarySpec {
    pub fn name(&self) -> &'static str {
        match self {
            AdversarySpec::Eavesdropper { .. } => "eavesdropper",
            AdversarySpec::Spy { .. } => "spy",
            AdversarySpec::Snapshot { .. } => "snapshot",
        }
    }

    fn time(&self) -> Option<f64> {
        match *self {
            AdversarySpec::Eavesdropper { t } | AdversarySpec::Spy { t, .. } | AdversarySpec::Snapshot { t } => t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    FirstTimestamp,
    BallCentrality,
    TimestampRumorCentrality,
    ReportingCentrality,
    RumorCenter,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::FirstTimestamp => "first-timestamp",
            EstimatorKind::BallCentrality => "ball-centrality",
            EstimatorKind::TimestampRumorCentrality => "timestamp-rumor-centrality",
            EstimatorKind::ReportingCentrality => "reporting-centrality",
            EstimatorKind::RumorCenter => "rumor-center",
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "first-timestamp" | "ft" => EstimatorKind::FirstTimestamp,
            "ball-centrality" | "ball" => EstimatorKind::BallCentrality,
            "timestamp-rumor-centrality" | "trc" => EstimatorKind::TimestampRumorCentrality,
            "reporting-centrality" | "rc" => EstimatorKind::ReportingCentrality,
            "rumor-center" => EstimatorKind::RumorCenter,
            other => return Err(format!("unknown estimator {other:?}")),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub graph: GraphSpec,
    pub spread: SpreadParams,
    pub adversary: AdversarySpec,
    pub estimator: EstimatorKind,
    pub trials: usize,
    pub master_seed: u64,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_trc_degree")]
    pub trc_max_degree: usize,
}

fn default_trc_degree() -> usize {
    TrcOptions::default().max_degree
}

impl ExperimentSpec {
    pub fn new(
        graph: GraphSpec,
        spread: SpreadParams,
        adversary: AdversarySpec,
        estimator: EstimatorKind,
        trials: usize,
        master_seed: u64,
    ) -> Self {
        ExperimentSpec {
            graph,
            spread,
            adversary,
            estimator,
            trials,
            master_seed,
            workers: 0,
            trc_max_degree: default_trc_degree(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        use AdversarySpec as A;
        use EstimatorKind as E;
        match (self.estimator, &self.adversary) {
            (E::BallCentrality | E::TimestampRumorCentrality, A::Eavesdropper { .. }) => {
                if self.spread.protocol != Protocol::Trickle {
                    return bad("ball centrality and timestamp rumor centrality need trickle spreading");
                }
            }
            (E::BallCentrality | E::TimestampRumorCentrality, _) => {
                return bad("ball centrality and timestamp rumor centrality need an eavesdropper")
            }
            (E::FirstTimestamp | E::ReportingCentrality, A::Snapshot { .. }) => {
                return bad("a snapshot carries no reports; use rumor-center")
            }
            (E::RumorCenter, A::Eavesdropper { .. } | A::Spy { .. }) => {
                return bad("rumor-center needs a snapshot adversary")
            }
            _ => {}
        }
        if let A::Spy { p, .. } = self.adversary {
            if !(0.0..=1.0).contains(&p) {
                return bad("spy probability must lie in [0, 1]");
            }
        }
        Ok(())
    }

    fn uses_early_exit(&self) -> bool {
        self.estimator == EstimatorKind::FirstTimestamp
            && matches!(self.adversary, AdversarySpec::Eavesdropper { t: None })
    }

    /// Horizon value written to the report: the observation time, else the
    /// spreading horizon.
    pub fn t_or_k(&self) -> Option<f64> {
        self.adversary.time().or(match self.spread.horizon {
            Horizon::MaxTime(t) => Some(t),
            Horizon::MaxInfections(k) => Some(k as f64),
            Horizon::Unbounded => None,
        })
    }

    /// Matching closed-form value, where one applies.
    pub fn theory(&self) -> Option<TheoryValue> {
        let d = self.graph.degree()?;
        let theta = self.spread.theta;
        let taps = self.spread.taps().ok();
        use AdversarySpec as A;
        use EstimatorKind as E;
        let v = match (self.spread.protocol, self.estimator, self.adversary) {
            (Protocol::Diffusion, E::FirstTimestamp, A::Eavesdropper { .. }) => analytics::diffusion_ft(d, theta),
            (Protocol::Trickle, E::FirstTimestamp, A::Eavesdropper { .. }) => {
                analytics::trickle_ft_lower_bound(d, taps?)
            }
            (Protocol::Trickle, E::TimestampRumorCentrality, _) => analytics::trickle_ml_upper(d, taps?),
            (Protocol::Trickle, E::BallCentrality, _) => {
                let t = self.t_or_k()?;
                analytics::trickle_ml_lower(d, taps?, t as usize)
            }
            (_, E::ReportingCentrality, _) => analytics::reporting_centrality_constant(d),
            (_, E::FirstTimestamp, A::Spy { p, .. }) => analytics::spy_ft_bound(p),
            _ => return None,
        };
        v.ok()
    }
}

/// Per-trial stream: the master seed fixes the key, the trial index picks
/// the stream, so results never depend on scheduling.
pub fn trial_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub source: NodeId,
    pub chosen: Option<NodeId>,
    pub hit: bool,
    /// Source was the only node in the candidate set.
    pub strict_win: bool,
    pub candidates: usize,
    pub source_in_candidates: bool,
    /// Reporting-centrality center count.
    pub centers: Option<usize>,
    pub infected: usize,
    pub stop_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub protocol: Protocol,
    pub estimator: EstimatorKind,
    pub adversary: String,
    pub d: Option<usize>,
    pub theta: f64,
    pub t_or_k: Option<f64>,
    pub p: Option<f64>,
    pub trials: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub strict_win_rate: Option<f64>,
    pub theory: Option<TheoryValue>,
    pub seed: u64,
    /// Fraction of trials whose candidate set contained the source.
    pub containment_rate: f64,
    pub max_candidates: usize,
    /// Trials with 0, 1 and more than 1 reporting centers.
    pub center_histogram: Option<[usize; 3]>,
    pub mean_stop_time: f64,
    pub wall_time_secs: f64,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(hits: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

fn miss_on(e: &EstimateError) -> bool {
    matches!(e, EstimateError::NoReports | EstimateError::NoReportingCenter)
}

struct Context {
    graph: Arc<Graph>,
    uniform_source: Option<usize>,
}

fn run_trial(spec: &ExperimentSpec, ctx: &Context, index: usize) -> Result<TrialOutcome, crate::Error> {
    let mut rng = trial_rng(spec.master_seed, index);
    let source = match ctx.uniform_source {
        Some(n) => NodeId::from(rng.random_range(0..n)),
        None => NodeId::ROOT,
    };
    let params = spec.spread.clone().with_source(source);
    let g = ctx.graph.as_ref();
    let mut out = TrialOutcome {
        index,
        source,
        chosen: None,
        hit: false,
        strict_win: false,
        candidates: 0,
        source_in_candidates: false,
        centers: None,
        infected: 0,
        stop_time: 0.0,
    };

    if spec.uses_early_exit() {
        if let FirstReport::Reported { mut nodes, time } = first_report_trial(g, &params, &mut rng)? {
            nodes.sort();
            let chosen = nodes[rng.random_range(0..nodes.len())];
            out.chosen = Some(chosen);
            out.hit = chosen == source;
            out.strict_win = nodes == [source];
            out.source_in_candidates = nodes.contains(&source);
            out.candidates = nodes.len();
            out.stop_time = time;
        }
        return Ok(out);
    }

    let trace = simulate(g, &params, &mut rng)?;
    out.infected = trace.infected_count();
    out.stop_time = trace.stop_time;
    let obs_time = spec.adversary.time().unwrap_or(match params.horizon {
        Horizon::Unbounded => f64::INFINITY,
        _ => trace.stop_time,
    });
    let keep_all = spec.estimator == EstimatorKind::TimestampRumorCentrality;
    let obs: Observation = match spec.adversary {
        AdversarySpec::Eavesdropper { .. } => observe_eavesdropper(&trace, obs_time, keep_all)?,
        AdversarySpec::Spy { p, .. } => observe_spy(&trace, p, obs_time, &mut rng)?,
        AdversarySpec::Snapshot { .. } => observe_snapshot(&trace, obs_time)?,
    };
    let estimate: Result<EstimateResult, EstimateError> = match spec.estimator {
        EstimatorKind::FirstTimestamp => estimators::first_timestamp(&obs, &mut rng),
        EstimatorKind::BallCentrality => estimators::ball_centrality(&obs, g, &mut rng),
        EstimatorKind::TimestampRumorCentrality => {
            let opts = TrcOptions { max_degree: spec.trc_max_degree };
            estimators::timestamp_rumor_centrality(&obs, g, params.taps()?, opts, &mut rng)
        }
        EstimatorKind::ReportingCentrality => estimators::reporting_centrality(&obs, g, &mut rng),
        EstimatorKind::RumorCenter => estimators::rumor_center_estimate(&obs, g, &mut rng),
    };
    match estimate {
        Ok(r) => {
            out.chosen = Some(r.chosen);
            out.hit = r.chosen == source;
            out.strict_win = r.candidates == [source];
            out.source_in_candidates = r.candidates.contains(&source);
            out.candidates = r.candidates.len();
            if spec.estimator == EstimatorKind::ReportingCentrality {
                out.centers = Some(r.candidates.len());
            }
        }
        Err(e) if miss_on(&e) => {
            if spec.estimator == EstimatorKind::ReportingCentrality {
                out.centers = Some(0);
            }
        }
        Err(e) => return Err(e.into()),
    }
    Ok(out)
}

/// Runs every trial and returns the per-trial outcomes in index order.
pub fn run_trials(spec: &ExperimentSpec) -> Result<Vec<TrialOutcome>, HarnessError> {
    spec.validate()?;
    let graph = spec.graph.build()?;
    let uniform_source = match spec.graph {
        GraphSpec::EdgeList { .. } => graph.node_count(),
        _ => None,
    };
    if uniform_source == Some(0) {
        return Err(HarnessError::Invalid("graph has no nodes".into()));
    }
    let ctx = Context { graph, uniform_source };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| {
        (0..spec.trials)
            .into_par_iter()
            .map(|i| {
                run_trial(spec, &ctx, i).map_err(|e| HarnessError::Trial { index: i, source: Box::new(e) })
            })
            .collect()
    })
}

/// Aggregates outcomes produced by [`run_trials`] for `spec`.
pub fn summarize(spec: &ExperimentSpec, outcomes: &[TrialOutcome], wall_time_secs: f64) -> DetectionReport {
    let trials = outcomes.len();
    let hits = outcomes.iter().filter(|o| o.hit).count();
    let (ci_low, ci_high) = wilson_interval(hits, trials);
    let n = trials.max(1) as f64;
    let strict = (spec.estimator == EstimatorKind::FirstTimestamp && spec.spread.protocol == Protocol::Trickle)
        .then(|| outcomes.iter().filter(|o| o.strict_win).count() as f64 / n);
    let center_histogram = (spec.estimator == EstimatorKind::ReportingCentrality).then(|| {
        let mut h = [0usize; 3];
        for c in outcomes.iter().filter_map(|o| o.centers) {
            h[c.min(2)] += 1;
        }
        h
    });
    DetectionReport {
        protocol: spec.spread.protocol,
        estimator: spec.estimator,
        adversary: spec.adversary.name().to_string(),
        d: spec.graph.degree(),
        theta: spec.spread.theta,
        t_or_k: spec.t_or_k(),
        p: match spec.adversary {
            AdversarySpec::Spy { p, .. } => Some(p),
            _ => None,
        },
        trials,
        hits,
        p_hat: hits as f64 / n,
        ci_low,
        ci_high,
        strict_win_rate: strict,
        theory: spec.theory(),
        seed: spec.master_seed,
        containment_rate: outcomes.iter().filter(|o| o.source_in_candidates).count() as f64 / n,
        max_candidates: outcomes.iter().map(|o| o.candidates).max().unwrap_or(0),
        center_histogram,
        mean_stop_time: outcomes.iter().map(|o| o.stop_time).sum::<f64>() / n,
        wall_time_secs,
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<DetectionReport, HarnessError> {
    let start = Instant::now();
    let outcomes = run_trials(spec)?;
    Ok(summarize(spec, &outcomes, start.elapsed().as_secs_f64()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    D,
    Theta,
    T,
    P,
    Trials,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::D => "d",
            SweepAxis::Theta => "theta",
            SweepAxis::T => "t",
            SweepAxis::P => "p",
            SweepAxis::Trials => "trials",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "d" => SweepAxis::D,
            "theta" => SweepAxis::Theta,
            "t" => SweepAxis::T,
            "p" => SweepAxis::P,
            "trials" => SweepAxis::Trials,
            other => return Err(HarnessError::UnknownAxis(other.to_string())),
        })
    }
}

fn as_count(v: f64, what: &str) -> Result<usize, HarnessError> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(HarnessError::Invalid(format!("{what} must be a non-negative integer, got {v}")))
    }
}

/// Copy of `base` with one parameter replaced.
pub fn with_axis(base: &ExperimentSpec, axis: SweepAxis, value: f64) -> Result<ExperimentSpec, HarnessError> {
    let mut spec = base.clone();
    match axis {
        SweepAxis::D => {
            let d = as_count(value, "d")?;
            match &mut spec.graph {
                GraphSpec::RegularTree { d: old, .. } | GraphSpec::RandomRegular { d: old, .. } => *old = d,
                _ => return Err(HarnessError::Invalid("d sweeps need a generated graph".into())),
            }
        }
        SweepAxis::Theta => spec.spread.theta = value,
        SweepAxis::T => {
            match &mut spec.spread.horizon {
                Horizon::MaxTime(t) => *t = value,
                Horizon::MaxInfections(k) => *k = as_count(value, "K")?,
                Horizon::Unbounded => {}
            }
            match &mut spec.adversary {
                AdversarySpec::Eavesdropper { t } | AdversarySpec::Spy { t, .. } | AdversarySpec::Snapshot { t } => {
                    if t.is_some() {
                        *t = Some(value);
                    }
                }
            }
        }
        SweepAxis::P => match &mut spec.adversary {
            AdversarySpec::Spy { p, .. } => *p = value,
            _ => return Err(HarnessError::Invalid("p sweeps need a spy adversary".into())),
        },
        SweepAxis::Trials => spec.trials = as_count(value, "trials")?,
    }
    Ok(spec)
}

pub fn sweep(base: &ExperimentSpec, axis: SweepAxis, values: &[f64]) -> Result<Vec<DetectionReport>, HarnessError> {
    values
        .iter()
        .map(|&v| run_experiment(&with_axis(base, axis, v)?))
        .collect()
}

/// Flat CSV form of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub protocol: String,
    pub estimator: String,
    pub adversary: String,
    pub d: Option<usize>,
    pub theta: f64,
    #[serde(rename = "t_or_K")]
    pub t_or_k: Option<f64>,
    pub p: Option<f64>,
    pub trials: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub strict_win_rate: Option<f64>,
    pub theory: Option<f64>,
    pub seed: u64,
}

impl From<&DetectionReport> for ReportRow {
    fn from(r: &DetectionReport) -> Self {
        ReportRow {
            protocol: r.protocol.as_str().to_string(),
            estimator: r.estimator.as_str().to_string(),
            adversary: r.adversary.clone(),
            d: r.d,
            theta: r.theta,
            t_or_k: r.t_or_k,
            p: r.p,
            trials: r.trials,
            hits: r.hits,
            p_hat: r.p_hat,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            strict_win_rate: r.strict_win_rate,
            theory: r.theory.map(|t| t.value),
            seed: r.seed,
        }
    }
}

pub fn write_report_csv<'a>(
    reports: impl IntoIterator<Item = &'a DetectionReport>,
    out: impl Write,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(ReportRow::from(r))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_report_csv(input: impl Read) -> Result<Vec<ReportRow>, HarnessError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Formula matched to a report, for labelling output.
pub fn theory_label(r: &DetectionReport) -> Option<FormulaId> {
    r.theory.map(|t| t.formula)
}
