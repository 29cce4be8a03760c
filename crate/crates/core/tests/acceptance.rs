//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with a custom harness so the criteria execute in order and share the
//! expensive ablation instances. `ACCEPTANCE_ONLY=1,5,9` restricts the run.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use driftplace::experiment::ablation::{self, AblationInstance, DecisionTimeAblation};
use driftplace::experiment::config::GridSpec;
use driftplace::experiment::{demo, report, run_all, summarize, RunConfig};
use driftplace::gp::{self, InfoGainFactor};
use driftplace::kernels::{self, Matern32Params, SpaceTimePoint, TemporalHelmholtzParams};
use driftplace::ocean::{ObservationSchedule, SpatialGrid, TimeGrid};
use driftplace::policies::{self, DecisionContext, PolicyKind};
use driftplace::spde::{self, SpatioTemporalSsm};
use driftplace::{linalg, oracle, rng};
use nalgebra::{DMatrix, DVector};

type Outcome = (bool, String);

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn out_dir() -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn rel_frob<const R: usize, const C: usize>(a: &nalgebra::SMatrix<f64, R, C>, b: &nalgebra::SMatrix<f64, R, C>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

fn kernel_derivatives() -> Outcome {
    let mut r = common::rng(101);
    let (mut worst_m, mut worst_h, mut worst_e) = (0.0f64, 0.0f64, 0.0f64);
    let mut pairs = 0;
    while pairs < 100 {
        let p = common::random_params(&mut r);
        let (x, x2) = (common::random_point(&mut r), common::random_point(&mut r));
        // the Matérn-3/2 second derivative has a kink at zero lag
        if (x.t - x2.t).abs() < 0.05 {
            continue;
        }
        pairs += 1;
        let (l, v) = (p.temporal.lengthscale, p.temporal.variance);
        let m = kernels::matern32_block(&Matern32Params::new(l, v).unwrap(), x.t, x2.t);
        worst_m = worst_m.max(rel_frob(&m, &oracle::matern32_block_fd(l, v, x.t, x2.t, 1e-4)));
        let h = kernels::helmholtz_block(&p, x.s, x2.s);
        worst_h = worst_h.max(rel_frob(&h, &oracle::helmholtz_block_fd(&p, x.s, x2.s, 1e-4)));
        let e = kernels::extended_block(&p, &x, &x2);
        worst_e = worst_e.max(rel_frob(&e, &oracle::extended_block_fd(&p, &x, &x2, 1e-4)));
    }
    let exact = kernels::matern32_block(&Matern32Params::new(1.0, 1.0).unwrap(), 0.0, 0.0)[(1, 1)];
    let ok = worst_m < 1e-5 && worst_h < 1e-5 && worst_e < 1e-5 && exact == 3.0;
    (ok, format!("max rel err matern {worst_m:.1e}, helmholtz {worst_h:.1e}, extended {worst_e:.1e}; zero-lag entry {exact}"))
}

fn smoother_equivalence() -> Outcome {
    let (mut wm, mut wc) = (0.0f64, 0.0f64);
    let n = 25;
    for seed in 0..n {
        let (m, c) = common::smoother_vs_dense(1000 + seed);
        wm = wm.max(m);
        wc = wc.max(c);
    }
    (wm < 1e-6 && wc < 1e-6, format!("{n} instances, max rel err mean {wm:.1e}, covariance {wc:.1e}"))
}

fn prior_sampling_covariance() -> Outcome {
    let grid = SpatialGrid::regular(2, 2, [-1.0, 1.0, -1.0, 1.0]).unwrap();
    let p = TemporalHelmholtzParams::synthetic_default();
    let dt = 0.01;
    let ssm = SpatioTemporalSsm::new(&p, &grid, dt).unwrap();
    let lags = [0usize, 5, 50];
    let mut at: Vec<Vec<DVector<f64>>> = vec![Vec::new(); lags.len()];
    let n = 5000;
    for i in 0..n {
        let mut rg = rng::stream(303, &[i]);
        let init = ssm.sample_stationary(&mut rg);
        let (f, _) = spde::propagate_sample(&init, &ssm, &grid, 0.0, 50, &mut rg).unwrap();
        for (slot, k) in at.iter_mut().zip(lags) {
            slot.push(DVector::from_column_slice(f.slice(k)));
        }
    }
    let mut errs = Vec::new();
    for (slot, k) in at.iter().zip(lags) {
        let sample = oracle::sample_cross_cov(slot, &at[0]);
        let want = &ssm.k_space * p.temporal.eval(k as f64 * dt, 0.0);
        errs.push(oracle::frobenius_rel(&sample, &want));
    }
    let ok = errs.iter().all(|e| *e < 0.05);
    (ok, format!("{n} rollouts, Frobenius rel err at lags 0/5/50 steps: {:.3}/{:.3}/{:.3}", errs[0], errs[1], errs[2]))
}

fn eig_reformulation() -> Outcome {
    let mut r = common::rng(404);
    let grid = SpatialGrid::regular(3, 3, [-1.0, 1.0, -1.0, 1.0]).unwrap();
    let mut agree = 0;
    let trials = 10;
    let mut worst_rank_q = 0.0f64;
    for _ in 0..trials {
        let p = common::random_params(&mut r);
        let t_n = 1.5;
        let mut d = common::random_dataset(&mut r, 6);
        d.points.iter_mut().for_each(|x| x.t = x.t.min(t_n));
        let ctx = DecisionContext {
            dataset: &d,
            decision_time: t_n,
            grid: &grid,
            times: TimeGrid::spanning(0.0, 3.0, 0.01).unwrap(),
            schedule: ObservationSchedule::default(),
            params: p,
            drifters: &[],
        };
        let cands: Vec<SpaceTimePoint> = grid.centers().iter().map(|s| SpaceTimePoint::new(*s, t_n)).collect();
        let mut test = cands.clone();
        for i in 0..6 {
            for j in 0..6 {
                test.push(SpaceTimePoint::new([-1.25 + 0.5 * i as f64, -1.25 + 0.5 * j as f64], t_n));
            }
        }
        let entropy: Vec<f64> =
            cands.iter().map(|c| oracle::entropy_reduction(&p, &d.points, std::slice::from_ref(c), &test)).collect();
        let best = entropy.iter().enumerate().fold(0, |b, (i, v)| if *v > entropy[b] { i } else { b });
        agree += usize::from(policies::choose_eig(&ctx).unwrap() == best);

        let a = common::random_points(&mut r, 3);
        let s = 1.0 / (p.obs_noise_sd * p.obs_noise_sd);
        let block = |u: &SpaceTimePoint, v: &SpaceTimePoint| kernels::thelm_block(&p, u, v) * s;
        let mut bx = kernels::gram_matrix(&d.points, block);
        bx += DMatrix::<f64>::identity(bx.nrows(), bx.ncols());
        let mut ba = kernels::gram_matrix(&a, block);
        ba += DMatrix::<f64>::identity(ba.nrows(), ba.ncols());
        let cross = kernels::cross_gram(&d.points, &a, block);
        let l = linalg::cholesky_lower(&bx).unwrap();
        let got = gp::logdet_rank_q_update(&l, &cross, &ba).unwrap();
        let mut all = d.points.clone();
        all.extend_from_slice(&a);
        let want = oracle::info_gain_direct(&p, &all);
        worst_rank_q = worst_rank_q.max((got - want).abs() / want.abs().max(1.0));
        let cached = InfoGainFactor::new(&p, &d.points).unwrap().logdet_with(&a).unwrap();
        worst_rank_q = worst_rank_q.max((cached - want).abs() / want.abs().max(1.0));
    }
    let ok = agree == trials && worst_rank_q < 1e-8;
    (ok, format!("argmax agreement {agree}/{trials}, rank-q max rel err {worst_rank_q:.1e}"))
}

fn proposition_witness() -> Outcome {
    let r = demo::demo_instance(7).and_then(|d| d.run(7)).unwrap();
    let ok = r.eig_lagrangian_utility < r.ballast_lagrangian_utility;
    (
        ok,
        format!(
            "EIG cell {} utility {:.3} (exit {:?}), BALLAST cell {} utility {:.3} (exit {:?})",
            r.eig_cell, r.eig_lagrangian_utility, r.eig_exit_time, r.ballast_cell, r.ballast_lagrangian_utility, r.ballast_exit_time
        ),
    )
}

fn j_ablation(config: &RunConfig, by_time: &[DecisionTimeAblation]) -> Outcome {
    let mut ok = by_time.len() == 3 && config.ablation.replications >= 20;
    let mut notes = Vec::new();
    for a in by_time {
        let cross = a.first_below(1.0);
        let beats = (5..=a.ballast.utility.len()).all(|j| {
            let u = a.ballast.utility[j - 1].mean;
            u > a.uniform.utility.mean && u > a.eig.utility.mean
        });
        ok &= cross.is_some_and(|j| j <= 20) && beats;
        notes.push(format!(
            "t={}: gap<1% at J={}, J=20 gap {:.2}%, beats UNIF/EIG for J>=5: {}",
            a.decision_time,
            cross.map_or("none".into(), |j| j.to_string()),
            a.ballast.mc_percent[19].mean,
            beats
        ));
    }
    (ok, notes.join("; "))
}

fn policy_trend(config: &RunConfig) -> Outcome {
    let results = run_all(config, workers()).unwrap();
    let s = summarize(config, &results).unwrap();
    let dir = out_dir().join("run");
    report::write_run_outputs(&dir, config, &results, &s).unwrap();
    let last = config.deployments.count;
    let err = |p: PolicyKind| s.policy(p).unwrap().l2_error[last].mean;
    let (bt, bo, un, eig) = (err(PolicyKind::BallastTrue), err(PolicyKind::BallastOpt), err(PolicyKind::Uniform), err(PolicyKind::Eig));
    let iso = s.policy(PolicyKind::BallastTrue).unwrap().iso_performance.as_ref().unwrap()[last].mean;
    let a = bt <= bo && bo < un;
    let b = eig >= un;
    let c = iso >= 1.0;
    (
        a && b && c,
        format!(
            "{} runs, final L2 BALLAST-true {bt:.4} / BALLAST-opt {bo:.4} / UNIF {un:.4} / EIG {eig:.4}, iso saving {iso:.2}; (a) {a} (b) {b} (c) {c}",
            s.runs
        ),
    )
}

fn horizon_trend(config: &RunConfig, instances: &[AblationInstance]) -> Outcome {
    let h = ablation::summarize_horizons(config, instances).unwrap();
    std::fs::write(out_dir().join("horizon.csv"), report::horizon_csv(&h)).unwrap();
    let mut ok = h.horizons.len() == 6 && h.replications >= 20;
    let mut steps = Vec::new();
    for w in h.horizons.windows(2) {
        let d: Vec<f64> = w[1].per_replication.iter().zip(&w[0].per_replication).map(|(b, a)| b - a).collect();
        let m = driftplace::experiment::MeanSe::of(&d);
        ok &= m.mean <= 2.0 * m.se;
        steps.push(format!("{:+.2}±{:.2}", m.mean, m.se));
    }
    let means: Vec<String> = h.horizons.iter().map(|c| format!("{:.1}:{:.2}%", c.duration, c.averaged.mean)).collect();
    ok &= h.horizons.last().unwrap().averaged.mean <= h.horizons[0].averaged.mean;
    (ok, format!("mean MC gap by horizon {}; paired steps {}", means.join(" "), steps.join(" ")))
}

fn determinism() -> Outcome {
    let mut c = RunConfig::desk();
    c.grid = GridSpec { nx: 5, ny: 5, bounds: [-1.0, 1.0, -1.0, 1.0] };
    c.time.end = 2.0;
    c.deployments.count = 2;
    c.lookahead.samples = 4;
    c.fields = 2;
    c.ablation.decision_times = vec![1.0];
    c.ablation.reference_samples = 8;
    c.ablation.replications = 2;
    c.ablation.horizons = vec![0.5];
    c.ablation.horizon_decision_time = 1.0;
    c.ablation.horizon_samples = 4;
    let write = |w: usize| {
        let dir = tempfile::tempdir().unwrap();
        let res = run_all(&c, w).unwrap();
        let s = summarize(&c, &res).unwrap();
        let files = report::write_run_outputs(dir.path(), &c, &res, &s).unwrap();
        let mut bytes: Vec<(PathBuf, Vec<u8>)> =
            files.iter().map(|f| (f.strip_prefix(dir.path()).unwrap().to_path_buf(), std::fs::read(f).unwrap())).collect();
        bytes.sort();
        let abl = report::ablation_csv(&ablation::ablation_j(&c, w).unwrap());
        let hor = report::horizon_csv(&ablation::ablation_horizon(&c, w).unwrap());
        (bytes, abl, hor)
    };
    let one = write(1);
    let again = write(1);
    let two = write(2);
    let ok = one == again && one == two;
    (ok, format!("{} output files plus ablation tables identical across reruns and worker counts 1/2: {ok}", one.0.len()))
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|v| v.contains(&n));
    let config = RunConfig::desk();
    let mut t5: Option<Vec<AblationInstance>> = None;
    let mut instances_at_5 = || -> Vec<AblationInstance> {
        t5.get_or_insert_with(|| {
            let ends = ablation::horizon_ends(&config);
            ablation::ablation_instances(&config, config.ablation.horizon_decision_time, &ends, workers()).unwrap()
        })
        .clone()
    };

    let mut failed = 0;
    let mut report_line = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let verdict = if outcome.0 { "PASS" } else { "FAIL" };
        failed += usize::from(!outcome.0);
        println!("{verdict} criterion {n} ({name}, {:.1}s): {}", start.elapsed().as_secs_f64(), outcome.1);
    };

    report_line(1, "kernel derivatives", &mut kernel_derivatives);
    report_line(2, "state-space equivalence", &mut smoother_equivalence);
    report_line(3, "prior sampling covariance", &mut prior_sampling_covariance);
    report_line(4, "log-det reformulation", &mut eig_reformulation);
    report_line(5, "myopic counterexample", &mut proposition_witness);
    report_line(6, "sample-count ablation", &mut || {
        let mut by_time = Vec::new();
        for t in &config.ablation.decision_times {
            let inst = if *t == config.ablation.horizon_decision_time {
                instances_at_5()
            } else {
                ablation::ablation_instances(&config, *t, &[], workers()).unwrap()
            };
            by_time.push(ablation::summarize_decision_time(&inst));
        }
        let result = ablation::AblationResult {
            reference_samples: config.ablation.reference_samples,
            replications: config.ablation.replications,
            times: by_time.clone(),
        };
        std::fs::write(out_dir().join("ablation_j.csv"), report::ablation_csv(&result)).unwrap();
        j_ablation(&config, &by_time)
    });
    report_line(7, "policy comparison", &mut || policy_trend(&config));
    report_line(8, "horizon ablation", &mut || horizon_trend(&config, &instances_at_5()));
    report_line(9, "determinism", &mut determinism);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
