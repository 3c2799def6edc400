//! `sourcelab` command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sourcelab::analytics::{self, FormulaId, TheoryError};
use sourcelab::graph::load_edge_list;
use sourcelab::harness::{
    run_experiment, with_axis, AdversarySpec, DetectionReport, EstimatorKind, ExperimentSpec, GraphSpec,
    HarnessError, ReportRow, SweepAxis,
};
use sourcelab::spreading::{Horizon, Protocol, SpreadParams};

#[derive(Parser, Debug, Serialize)]
#[command(name = "sourcelab", version, about = "Source detection experiments for broadcast protocols")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct Common {
    /// Master seed; fixes every trial's random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 1000)]
    trials: usize,
    /// Worker threads, 0 for all cores. Does not change results.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Evaluate closed-form detection probabilities.
    Theory(TheoryArgs),
    /// Run one experiment per theta value.
    Simulate(ExperimentArgs),
    /// Run an experiment over a range of one parameter.
    Sweep(SweepArgs),
    /// Run the same sweep under trickle and diffusion.
    Compare(CompareArgs),
    /// Load an edge list and summarise it.
    Ingest(IngestArgs),
}

#[derive(Args, Debug, Serialize)]
struct TheoryArgs {
    #[arg(long, value_delimiter = ',', required_unless_present = "table2", value_parser = parse_formula)]
    #[serde(serialize_with = "formula_names")]
    formula: Vec<FormulaId>,
    #[arg(long, value_delimiter = ',')]
    d: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    theta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    t: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    p: Vec<f64>,
    /// Print the 2x2 summary (first-timestamp / maximum likelihood by protocol).
    #[arg(long, requires = "d")]
    table2: bool,
}

fn parse_formula(s: &str) -> Result<FormulaId, TheoryError> {
    s.parse()
}

fn formula_names<S: serde::Serializer>(v: &[FormulaId], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|f| f.as_str()))
}

#[derive(Args, Debug, Serialize)]
struct ExperimentArgs {
    #[arg(long, value_parser = parse_protocol)]
    #[serde(serialize_with = "protocol_name")]
    protocol: Protocol,
    #[command(flatten)]
    setup: Setup,
}

#[derive(Args, Debug, Serialize)]
struct Setup {
    #[arg(long, value_parser = parse_estimator, default_value = "first-timestamp")]
    estimator: EstimatorKind,
    #[arg(long, value_enum, default_value_t = Adversary::Eavesdropper)]
    adversary: Adversary,
    /// Tree or random-graph degree.
    #[arg(long, required_unless_present = "graph")]
    d: Option<usize>,
    /// Degree of the source on a regular tree, when different from d.
    #[arg(long, conflicts_with_all = ["graph", "nodes"])]
    root_degree: Option<usize>,
    /// Random d-regular graph on this many nodes instead of a tree.
    #[arg(long, conflicts_with = "graph")]
    nodes: Option<usize>,
    /// Seed of the random regular graph; defaults to --seed.
    #[arg(long, requires = "nodes")]
    graph_seed: Option<u64>,
    /// Edge-list file; sources are drawn uniformly from its nodes.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Taps per server (trickle) or report rate (diffusion). A list runs one
    /// experiment per value.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    theta: Vec<f64>,
    /// Adversary observation time; defaults to the end of the run.
    #[arg(long)]
    t: Option<f64>,
    /// Stop spreading at this time.
    #[arg(long, conflicts_with = "max_infections")]
    horizon_time: Option<f64>,
    /// Stop spreading after this many infections.
    #[arg(long)]
    max_infections: Option<usize>,
    /// Spy probability.
    #[arg(long, default_value_t = 0.0)]
    p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Adversary {
    Eavesdropper,
    Spy,
    Snapshot,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[command(flatten)]
    range: Range,
}

#[derive(Args, Debug, Serialize)]
struct Range {
    /// One of d, theta, t, p, trials.
    #[arg(long, value_parser = parse_axis)]
    axis: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

#[derive(Args, Debug, Serialize)]
struct CompareArgs {
    #[command(flatten)]
    setup: Setup,
    #[command(flatten)]
    range: Range,
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    #[arg(long)]
    graph: PathBuf,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse()
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse()
}

fn parse_axis(s: &str) -> Result<SweepAxis, HarnessError> {
    s.parse()
}

fn protocol_name<S: serde::Serializer>(p: &Protocol, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(p.as_str())
}

/// Bad flag combination found after parsing; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

impl Setup {
    fn graph_spec(&self, seed: u64) -> GraphSpec {
        if let Some(path) = &self.graph {
            return GraphSpec::EdgeList { path: path.clone() };
        }
        let d = self.d.unwrap_or_default();
        match self.nodes {
            Some(n) => GraphSpec::RandomRegular { n, d, seed: self.graph_seed.unwrap_or(seed) },
            None => GraphSpec::RegularTree { d, root_degree: self.root_degree },
        }
    }

    fn adversary(&self) -> AdversarySpec {
        match self.adversary {
            Adversary::Eavesdropper => AdversarySpec::Eavesdropper { t: self.t },
            Adversary::Spy => AdversarySpec::Spy { p: self.p, t: self.t },
            Adversary::Snapshot => AdversarySpec::Snapshot { t: self.t },
        }
    }

    fn horizon(&self) -> Horizon {
        match (self.max_infections, self.horizon_time, self.t) {
            (Some(k), _, _) => Horizon::MaxInfections(k),
            (None, Some(h), _) => Horizon::MaxTime(h),
            (None, None, Some(t)) => Horizon::MaxTime(t),
            (None, None, None) => Horizon::Unbounded,
        }
    }

    fn spec(&self, protocol: Protocol, theta: f64, common: &Common) -> Result<ExperimentSpec> {
        let spread = match protocol {
            Protocol::Trickle => {
                if theta < 1.0 || theta.fract() != 0.0 {
                    return Err(usage(format!("trickle needs an integer theta >= 1, got {theta}")));
                }
                SpreadParams::trickle(theta as usize, self.horizon())
            }
            Protocol::Diffusion => SpreadParams::diffusion(theta, self.horizon()),
        };
        let mut spec = ExperimentSpec::new(
            self.graph_spec(common.seed),
            spread,
            self.adversary(),
            self.estimator,
            common.trials,
            common.seed,
        );
        spec.workers = common.workers;
        spec.validate()?;
        Ok(spec)
    }

    fn first_theta(&self) -> f64 {
        self.theta.first().copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Serialize)]
struct TheoryRow {
    formula_id: String,
    d: Option<usize>,
    theta: Option<f64>,
    t: Option<usize>,
    p: Option<f64>,
    value: f64,
}

#[derive(Debug, Serialize)]
struct Table2Row {
    estimator: &'static str,
    trickle: f64,
    diffusion: f64,
}

#[derive(Debug, Serialize)]
struct CompareRow {
    protocol: String,
    estimator: String,
    axis: String,
    axis_value: f64,
    trials: usize,
    p_hat: f64,
    ci_low: f64,
    ci_high: f64,
    strict_win_rate: Option<f64>,
    theory: Option<f64>,
}

#[derive(Debug, Serialize)]
struct GraphSummary {
    nodes: usize,
    edges: usize,
    max_degree: usize,
    mean_degree: f64,
    components: usize,
}

/// Options for one optional grid axis: every value, or a single "unset".
fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().copied().map(Some).collect()
    }
}

fn theory_rows(a: &TheoryArgs) -> Result<Vec<TheoryRow>> {
    let mut rows = Vec::new();
    for &f in &a.formula {
        for d in axis(&a.d) {
            for theta in axis(&a.theta) {
                for t in axis(&a.t) {
                    for p in axis(&a.p) {
                        let v = analytics::evaluate(f, d, theta, t, p).map_err(|e| usage(e.to_string()))?;
                        rows.push(TheoryRow {
                            formula_id: f.as_str().to_string(),
                            d: v.d,
                            theta: v.theta,
                            t: v.t,
                            p: v.p,
                            value: v.value,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn table2_rows(a: &TheoryArgs) -> Result<Vec<Table2Row>> {
    let mut rows = Vec::new();
    let thetas = if a.theta.is_empty() { vec![1.0] } else { a.theta.clone() };
    for &d in &a.d {
        for &theta in &thetas {
            let ev = |f| analytics::evaluate(f, Some(d), Some(theta), None, None).map(|v| v.value);
            let ev = |f| ev(f).map_err(|e| usage(e.to_string()));
            rows.push(Table2Row {
                estimator: "first-timestamp",
                trickle: ev(FormulaId::TrickleFtLb)?,
                diffusion: ev(FormulaId::DiffusionFt)?,
            });
            rows.push(Table2Row {
                estimator: "maximum-likelihood",
                trickle: ev(FormulaId::TrickleMlUb)?,
                diffusion: ev(FormulaId::RcConstant)?,
            });
        }
    }
    Ok(rows)
}

fn run(spec: &ExperimentSpec) -> Result<DetectionReport> {
    run_experiment(spec).map_err(|e| match e {
        HarnessError::Invalid(m) => usage(m),
        e => e.into(),
    })
}

fn simulate(a: &ExperimentArgs, common: &Common) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for &theta in &a.setup.theta {
        let spec = a.setup.spec(a.protocol, theta, common)?;
        rows.push(ReportRow::from(&run(&spec)?));
    }
    Ok(rows)
}

fn sweep_reports(setup: &Setup, protocol: Protocol, range: &Range, common: &Common) -> Result<Vec<DetectionReport>> {
    let base = setup.spec(protocol, setup.first_theta(), common)?;
    range
        .values
        .iter()
        .map(|&v| {
            let spec = with_axis(&base, range.axis, v).map_err(|e| usage(e.to_string()))?;
            spec.validate()?;
            run(&spec)
        })
        .collect()
}

fn compare(a: &CompareArgs, common: &Common) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for protocol in [Protocol::Trickle, Protocol::Diffusion] {
        let reports = sweep_reports(&a.setup, protocol, &a.range, common)?;
        for (r, &v) in reports.iter().zip(&a.range.values) {
            rows.push(CompareRow {
                protocol: protocol.as_str().to_string(),
                estimator: r.estimator.as_str().to_string(),
                axis: a.range.axis.as_str().to_string(),
                axis_value: v,
                trials: r.trials,
                p_hat: r.p_hat,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
                strict_win_rate: r.strict_win_rate,
                theory: r.theory.map(|t| t.value),
            });
        }
    }
    Ok(rows)
}

fn ingest(a: &IngestArgs) -> Result<GraphSummary> {
    let g = load_edge_list(&a.graph).with_context(|| format!("loading {}", a.graph.display()))?;
    let x = g.as_explicit().context("edge list did not produce an explicit graph")?;
    let n = x.node_count();
    Ok(GraphSummary {
        nodes: n,
        edges: x.edge_count(),
        max_degree: x.max_degree(),
        mean_degree: if n == 0 { 0.0 } else { 2.0 * x.edge_count() as f64 / n as f64 },
        components: x.component_count(),
    })
}

fn emit<T: Serialize>(cli: &Cli, rows: &[T]) -> Result<()> {
    let sink: Box<dyn Write> = match &cli.common.out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut out = BufWriter::new(sink);
    match cli.common.format {
        Format::Csv => {
            writeln!(out, "# config: {}", serde_json::to_string(cli)?)?;
            let mut w = csv::Writer::from_writer(&mut out);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a, T> {
                config: &'a Cli,
                rows: &'a [T],
            }
            serde_json::to_writer_pretty(&mut out, &Doc { config: cli, rows })?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    if cli.common.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    match &cli.command {
        Command::Theory(a) if a.table2 => emit(cli, &table2_rows(a)?),
        Command::Theory(a) => emit(cli, &theory_rows(a)?),
        Command::Simulate(a) => emit(cli, &simulate(a, &cli.common)?),
        Command::Sweep(a) => {
            let reports = sweep_reports(&a.experiment.setup, a.experiment.protocol, &a.range, &cli.common)?;
            emit(cli, &reports.iter().map(ReportRow::from).collect::<Vec<_>>())
        }
        Command::Compare(a) => emit(cli, &compare(a, &cli.common)?),
        Command::Ingest(a) => emit(cli, &[ingest(a)?]),
    }
}

/// Error chain joined with ": ", skipping causes already quoted by the
/// message above them.
fn chain_message(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if msg.ends_with(&s) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&s);
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", chain_message(&e));
            let usage_error = e.downcast_ref::<Usage>().is_some()
                || matches!(e.downcast_ref::<HarnessError>(), Some(HarnessError::Invalid(_)));
            ExitCode::from(if usage_error { 2 } else { 1 })
        }
    }
}
