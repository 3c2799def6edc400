use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sourcelab::adversary::observe_eavesdropper;
use sourcelab::analytics::diffusion_ft_with_root_degree;
use sourcelab::estimators::{
    ball_centrality, enumerate_observations, observation_from_log, reporting_centers, BruteForceOptions,
};
use sourcelab::graph::{build_regular_tree, lazy_regular_tree};
use sourcelab::harness::{
    run_experiment, sweep, trial_rng, AdversarySpec, EstimatorKind, ExperimentSpec, GraphSpec, SweepAxis,
};
use sourcelab::spreading::{first_report_trial, simulate, FirstReport, Horizon, SpreadParams};
use sourcelab::NodeId;

#[test]
fn trickle_source_reports_on_first_step_one_time_in_five() {
    let g = lazy_regular_tree(4).unwrap();
    let params = SpreadParams::trickle(1, Horizon::MaxTime(1.0));
    let n = 100_000;
    let hits = (0..n)
        .filter(|&i| {
            let tr = simulate(&g, &params, &mut trial_rng(7, i)).unwrap();
            tr.records[0].first_report() == Some(1.0)
        })
        .count();
    let p = hits as f64 / n as f64;
    assert!((p - 0.2).abs() < 0.004, "{p}");
}

#[test]
fn diffusion_report_delays_are_exponential() {
    let g = lazy_regular_tree(4).unwrap();
    let theta = 1.5;
    let params = SpreadParams::diffusion(theta, Horizon::MaxInfections(200));
    let mut delays = Vec::with_capacity(100_000);
    let mut i = 0;
    while delays.len() < 100_000 {
        let tr = simulate(&g, &params, &mut trial_rng(11, i)).unwrap();
        delays.extend(tr.records.iter().map(|r| r.reports[0] - r.infected_at));
        i += 1;
    }
    delays.truncate(100_000);
    delays.sort_by(f64::total_cmp);
    let n = delays.len() as f64;
    let ks = delays
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let cdf = 1.0 - (-theta * x).exp();
            (cdf - k as f64 / n).abs().max(((k + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS statistic {ks}");
}

#[test]
fn diffusion_first_report_on_full_regular_tree() {
    for d in [3usize, 4] {
        let g = lazy_regular_tree(d).unwrap();
        let params = SpreadParams::diffusion(1.0, Horizon::Unbounded);
        let n = 40_000;
        let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
        let hits = (0..n)
            .filter(|_| match first_report_trial(&g, &params, &mut rng).unwrap() {
                FirstReport::Reported { nodes, .. } => nodes == [NodeId::ROOT],
                FirstReport::NoReport => false,
            })
            .count();
        let p = hits as f64 / n as f64;
        let expect = diffusion_ft_with_root_degree(d, d, 1.0).unwrap();
        let se = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!((p - expect).abs() < 4.0 * se, "d={d}: {p} vs {expect}");
    }
}

/// Every full observation of a small trickle run, enumerated exactly.
fn ball_contains_source_exhaustively(d: usize, depth: usize, t: u64) {
    let g = build_regular_tree(d, depth).unwrap();
    let n = g.node_count().unwrap();
    let params = SpreadParams::trickle(1, Horizon::MaxTime(t as f64));
    let logs = enumerate_observations(&g, &params, NodeId::ROOT, t, BruteForceOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (log, _) in &logs {
        assert_eq!(log.len(), n, "every node should have reported by step {t}");
        let obs = observation_from_log(log, t);
        let r = ball_centrality(&obs, &g, &mut rng).unwrap();
        assert!(r.candidates.contains(&NodeId::ROOT), "log {log:?} gave {:?}", r.candidates);
    }
}

#[test]
fn ball_contains_source_on_every_history() {
    ball_contains_source_exhaustively(3, 2, 8);
    ball_contains_source_exhaustively(2, 3, 8);
}

#[test]
fn ball_contains_source_on_depth_three_trees() {
    for d in [3usize, 4] {
        let g = build_regular_tree(d, 3).unwrap();
        let params = SpreadParams::trickle(1, Horizon::Unbounded);
        for i in 0..5_000 {
            let mut rng = trial_rng(17, i);
            let tr = simulate(&g, &params, &mut rng).unwrap();
            let obs = observe_eavesdropper(&tr, f64::INFINITY, false).unwrap();
            let r = ball_centrality(&obs, &g, &mut rng).unwrap();
            assert!(r.candidates.contains(&NodeId::ROOT));
        }
    }
}

#[test]
fn reporting_center_is_unique_or_absent() {
    let g = lazy_regular_tree(4).unwrap();
    for params in [
        SpreadParams::diffusion(1.0, Horizon::MaxInfections(100)),
        SpreadParams::trickle(1, Horizon::MaxTime(6.0)),
    ] {
        for i in 0..10_000 {
            let tr = simulate(&g, &params, &mut trial_rng(23, i)).unwrap();
            let obs = observe_eavesdropper(&tr, tr.stop_time, false).unwrap();
            let centers = reporting_centers(&obs, &g).unwrap();
            assert!(centers.len() <= 1);
        }
    }
}

fn diffusion_ft_spec(d: usize, trials: usize) -> ExperimentSpec {
    ExperimentSpec::new(
        GraphSpec::RegularTree { d, root_degree: Some(d - 2) },
        SpreadParams::diffusion(1.0, Horizon::Unbounded),
        AdversarySpec::Eavesdropper { t: None },
        EstimatorKind::FirstTimestamp,
        trials,
        5,
    )
}

#[test]
fn sweeps_follow_the_expected_trends() {
    let thetas: Vec<f64> = (1..=8).map(f64::from).collect();
    let by_theta = sweep(&diffusion_ft_spec(4, 20_000), SweepAxis::Theta, &thetas).unwrap();
    for w in by_theta.windows(2) {
        assert!(w[1].p_hat >= w[0].p_hat - 0.01, "{} then {}", w[0].p_hat, w[1].p_hat);
    }
    assert!(by_theta[7].p_hat > by_theta[0].p_hat + 0.2);

    let mut base = diffusion_ft_spec(3, 20_000);
    base.graph = GraphSpec::regular_tree(3);
    let by_d = sweep(&base, SweepAxis::D, &[3.0, 4.0, 6.0, 8.0]).unwrap();
    assert!(by_d.windows(2).all(|w| w[1].p_hat < w[0].p_hat));

    let by_trials = sweep(&diffusion_ft_spec(4, 1), SweepAxis::Trials, &[100.0, 1_000.0, 10_000.0]).unwrap();
    let widths: Vec<f64> = by_trials.iter().map(|r| r.ci_high - r.ci_low).collect();
    assert!(widths.windows(2).all(|w| w[1] < w[0]), "{widths:?}");
}

#[test]
fn trickle_strict_wins_never_exceed_hits() {
    let spec = ExperimentSpec::new(
        GraphSpec::regular_tree(4),
        SpreadParams::trickle(1, Horizon::Unbounded),
        AdversarySpec::Eavesdropper { t: None },
        EstimatorKind::FirstTimestamp,
        5_000,
        9,
    );
    let r = run_experiment(&spec).unwrap();
    let strict = r.strict_win_rate.unwrap();
    assert!(strict <= r.p_hat);
    assert!(r.theory.unwrap().value <= strict + 0.02);
}

#[test]
fn edge_list_experiments_pick_uniform_sources() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "# ring of twelve with chords").unwrap();
    for i in 0..12 {
        writeln!(file, "{} {}", 100 + i, 100 + (i + 1) % 12).unwrap();
    }
    writeln!(file, "100 106").unwrap();
    writeln!(file, "103 109").unwrap();
    let spec = ExperimentSpec::new(
        GraphSpec::EdgeList { path: file.path().to_path_buf() },
        SpreadParams::diffusion(1.0, Horizon::MaxInfections(12)),
        AdversarySpec::Eavesdropper { t: None },
        EstimatorKind::FirstTimestamp,
        2_000,
        1,
    );
    let outcomes = sourcelab::harness::run_trials(&spec).unwrap();
    let sources: std::collections::BTreeSet<NodeId> = outcomes.iter().map(|o| o.source).collect();
    assert_eq!(sources.len(), 12);
    let r = run_experiment(&spec).unwrap();
    assert!(r.p_hat > 0.0 && r.p_hat < 1.0);
    assert!(r.theory.is_none());
}
