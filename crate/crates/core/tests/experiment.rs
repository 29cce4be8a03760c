use driftplace::experiment::ablation::{self, summarize_horizons};
use driftplace::experiment::config::{GridSpec, MetricTimes, TimeSpec};
use driftplace::experiment::deploy::{self, RunId};
use driftplace::experiment::metrics::{baseline_crossing, metric_l2};
use driftplace::experiment::report;
use driftplace::experiment::{iso_performance, policy_rank, run_all, run_deployment, summarize, RunConfig};
use driftplace::ocean::{SpatialGrid, TimeGrid, VectorFieldSeries};
use driftplace::policies::PolicyKind;

fn small() -> RunConfig {
    let mut c = RunConfig::desk();
    c.grid = GridSpec { nx: 5, ny: 5, bounds: [-1.0, 1.0, -1.0, 1.0] };
    c.time = TimeSpec { end: 2.0, dt: 0.01 };
    c.deployments.count = 2;
    c.lookahead.samples = 3;
    c.optimizer.max_iters = 5;
    c.fields = 2;
    c.ablation.decision_times = vec![1.0];
    c.ablation.reference_samples = 6;
    c.ablation.replications = 2;
    c.ablation.horizons = vec![0.1, 0.5];
    c.ablation.horizon_decision_time = 1.0;
    c.ablation.horizon_samples = 4;
    c
}

#[test]
fn metric_is_zero_for_the_truth_and_one_for_a_unit_shift() {
    let grid = SpatialGrid::regular(3, 2, [0.0, 1.0, 0.0, 1.0]).unwrap();
    let f = VectorFieldSeries::from_fn(grid, TimeGrid::new(0.0, 0.1, 4).unwrap(), |s, t| [s[0] + t, s[1]]);
    let steps = [0, 3];
    let exact: Vec<[f64; 2]> = steps.iter().flat_map(|k| (0..6).map(|c| f.velocity(*k, c)).collect::<Vec<_>>()).collect();
    assert_eq!(metric_l2(&exact, &f, &steps).unwrap(), 0.0);
    let shifted: Vec<[f64; 2]> = exact.iter().map(|v| [v[0] + 0.6, v[1] - 0.8]).collect();
    assert!((metric_l2(&shifted, &f, &steps).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(metric_l2(&exact[..6], &f, &steps).unwrap_err().kind(), "shape");
}

#[test]
fn ranks_and_iso_performance_on_hand_built_tables() {
    // policy 0 is the baseline; policy 1 is always one deployment ahead
    let base = vec![vec![4.0, 3.0, 2.0, 1.0]];
    let ahead = vec![vec![3.0, 2.0, 1.0, 0.5]];
    let same = base.clone();
    let errors = vec![base, ahead, same];
    let ranks = policy_rank(&errors).unwrap();
    for m in 0..4 {
        assert_eq!(ranks[1][m].mean, 1.0);
        assert_eq!(ranks[0][m].mean, 2.5);
    }
    let iso = iso_performance(&errors, 0).unwrap();
    for m in 0..3 {
        assert!((iso[1][m].mean - 1.0).abs() < 1e-12);
        assert_eq!(iso[0][m].mean, 0.0);
        assert_eq!(iso[2][m].mean, 0.0);
    }
    // past the end the baseline is extended with its average slope (−1)
    assert!((iso[1][3].mean - 0.5).abs() < 1e-12);
    assert!((baseline_crossing(&[3.0, 2.0, 1.0], 1, 1.5) - 1.5).abs() < 1e-12);
    assert!((baseline_crossing(&[3.0, 2.0, 1.0], 2, 2.5) - 0.5).abs() < 1e-12);
    assert_eq!(baseline_crossing(&[3.0, 2.0, 1.0], 0, 9.0), 0.0);
    assert!(policy_rank(&[vec![vec![1.0]], vec![]]).is_err());
}

#[test]
fn one_further_uniform_deployment_places_two_drifters() {
    let mut c = small();
    c.deployments.count = 1;
    let truth = deploy::ground_truth(&c, 0).unwrap();
    let r = run_deployment(&c, &truth, PolicyKind::Uniform, RunId { field: 0, run: 0 }).unwrap();
    assert_eq!(r.records.len(), 2);
    assert_eq!(r.records[1].time, 0.5);
    assert!(r.records[1].l2_error.is_finite());
    assert_eq!(r.config_hash, c.hash());
}

#[test]
fn runs_do_not_depend_on_the_worker_count() {
    let c = small();
    let a = run_all(&c, 1).unwrap();
    let b = run_all(&c, 2).unwrap();
    assert_eq!(a.len(), 2 * 6);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(report::run_csv(x), report::run_csv(y));
        assert_eq!(report::to_json(x), report::to_json(y));
    }
    let opt = a.iter().find(|r| r.policy == PolicyKind::BallastOpt).unwrap();
    assert!(opt.records[0].optimizer_converged.is_none() && opt.records[1].optimizer_converged.is_some());
    let sa = summarize(&c, &a).unwrap();
    assert_eq!(report::to_json(&sa), report::to_json(&summarize(&c, &b).unwrap()));
    let unif = sa.policy(PolicyKind::Uniform).unwrap();
    assert!(unif.iso_performance.as_ref().unwrap().iter().all(|v| v.mean == 0.0));

    let dir = tempfile::tempdir().unwrap();
    let files = report::write_run_outputs(dir.path(), &c, &a, &sa).unwrap();
    assert_eq!(files.len(), a.len() + 2);
    let csv = std::fs::read_to_string(dir.path().join("runs").join(report::run_file_name(&a[0]))).unwrap();
    assert!(csv.starts_with("index,time,cell,observations,l2_error,optimizer_converged\n"));
    assert_eq!(csv.lines().count(), 4);
    let cfg = std::fs::read_to_string(dir.path().join("config.json")).unwrap();
    assert_eq!(RunConfig::from_json(&cfg).unwrap(), c);
}

#[test]
fn ranks_agree_with_the_summary() {
    let mut c = small();
    c.policies = vec![PolicyKind::Uniform, PolicyKind::Sobol, PolicyKind::Eig];
    c.metric_times = MetricTimes::Fine;
    let results = run_all(&c, 1).unwrap();
    let (ids, table) = report::error_table(&c, &results).unwrap();
    assert_eq!(ids.len(), 2);
    let s = summarize(&c, &results).unwrap();
    let ranks = policy_rank(&table).unwrap();
    for (p, row) in c.policies.iter().zip(&ranks) {
        assert_eq!(&s.policy(*p).unwrap().rank, row);
    }
    let total: f64 = ranks.iter().map(|r| r[2].mean).sum();
    assert!((total - 6.0).abs() < 1e-12);
}

#[test]
fn config_json_is_strict() {
    let c = small();
    c.validate().unwrap();
    assert!(RunConfig::from_json("{").is_err());
    let extra = c.to_json().replacen("{", "{\"bogus\": 1,", 1);
    assert_eq!(RunConfig::from_json(&extra).unwrap_err().kind(), "json");
    let mut bad = c.clone();
    bad.deployments.count = 400;
    assert_eq!(RunConfig::from_json(&bad.to_json()).unwrap_err().kind(), "config");
    let mut dup = c.clone();
    dup.policies = vec![PolicyKind::Eig, PolicyKind::Eig];
    assert!(dup.validate().is_err());
}

#[test]
fn tiny_ablation_is_consistent() {
    let mut c = small();
    c.time.end = 4.5;
    c.ablation.horizons = vec![0.1, 0.5, 1.0, 2.0, 3.0];
    let t = c.ablation.horizon_decision_time;
    let ends = ablation::horizon_ends(&c);
    let inst = ablation::ablation_instances(&c, t, &ends, 1).unwrap();
    assert_eq!(inst.len(), 2);
    for i in &inst {
        let g = i.ballast_gaps();
        assert_eq!(g.len(), 6);
        assert!(g.last().unwrap().mc.abs() < 1e-12);
        assert!(g.iter().all(|x| x.mc >= -1e-12 && x.full >= -1e-12));
        assert!(i.uniform_gaps().mc >= 0.0);
    }
    let h = summarize_horizons(&c, &inst).unwrap();
    let durations: Vec<f64> = h.horizons.iter().map(|x| x.duration).collect();
    assert_eq!(durations.len(), 6);
    for (d, want) in durations.iter().zip([0.1, 0.5, 1.0, 2.0, 3.0, 3.5]) {
        assert!((d - want).abs() < 1e-12);
    }
    let again = ablation::ablation_instances(&c, t, &ends, 2).unwrap();
    assert_eq!(inst[1].reference, again[1].reference);
    assert_eq!(report::horizon_csv(&h), report::horizon_csv(&summarize_horizons(&c, &again).unwrap()));
}
