use driftplace::experiment::metrics::{baseline_crossing, metric_l2};
use driftplace::gp::{self, InfoGainFactor};
use driftplace::kernels::{self, SpaceTimePoint, TemporalHelmholtzParams};
use driftplace::ocean::{self, SpatialGrid, TimeGrid, VectorFieldSeries};
use driftplace::policies::average_ranks;
use driftplace::rng;
use driftplace::sobol::{self, SobolState};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = TemporalHelmholtzParams> {
    (prop::array::uniform6(0.3f64..1.5), 0.05f64..0.5).prop_map(|(a, n)| {
        TemporalHelmholtzParams::from_vec(&[a[0], a[1], a[2], a[3], a[4], a[5], n])
    })
}

fn point() -> impl Strategy<Value = SpaceTimePoint> {
    (-2.0f64..2.0, -2.0f64..2.0, 0.0f64..3.0).prop_map(|(x, y, t)| SpaceTimePoint::new([x, y], t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_block_is_symmetric(p in params(), a in point(), b in point()) {
        let k = kernels::thelm_block(&p, &a, &b);
        let kt = kernels::thelm_block(&p, &b, &a).transpose();
        prop_assert!((k - kt).abs().max() < 1e-13);
    }

    #[test]
    fn gram_is_positive_semidefinite(p in params(), pts in prop::collection::vec(point(), 1..12)) {
        let k = kernels::gram_matrix(&pts, |a, b| kernels::thelm_block(&p, a, b));
        let min = k.clone().symmetric_eigenvalues().min();
        prop_assert!(min > -1e-9 * k.amax().max(1.0));
    }

    #[test]
    fn information_gain_grows_with_data(p in params(), x in prop::collection::vec(point(), 0..8), a in prop::collection::vec(point(), 1..5)) {
        let base = InfoGainFactor::new(&p, &x).unwrap().logdet();
        let more = gp::eig_utility(&p, &x, &a).unwrap();
        prop_assert!(more >= base - 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn ranks_are_a_permutation_average(v in prop::collection::vec(-5i32..5, 1..20)) {
        let vals: Vec<f64> = v.iter().map(|x| *x as f64).collect();
        let r = average_ranks(&vals);
        let n = vals.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        for i in 0..vals.len() {
            for j in 0..vals.len() {
                if vals[i] < vals[j] { prop_assert!(r[i] < r[j]); }
                if vals[i] == vals[j] { prop_assert_eq!(r[i], r[j]); }
            }
        }
        let shifted: Vec<f64> = vals.iter().map(|x| 3.0 * x + 1.0).collect();
        prop_assert_eq!(average_ranks(&shifted), r);
    }

    #[test]
    fn field_csv_round_trips(nx in 1usize..4, ny in 1usize..4, nt in 1usize..4, seed in any::<u64>()) {
        let grid = SpatialGrid::regular(nx, ny, [-1.0, 0.5, 0.0, 2.0]).unwrap();
        let times = TimeGrid::new(0.0, 0.25, nt).unwrap();
        let mut f = VectorFieldSeries::zeros(grid, times);
        let mut r = rng::stream(seed, &[]);
        for k in 0..nt {
            for c in 0..nx * ny {
                let mut draw = || rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut r);
                f.set_velocity(k, c, [draw(), draw()]);
            }
        }
        let text = ocean::field_to_csv(&f).unwrap();
        prop_assert_eq!(ocean::parse_field_csv(&text).unwrap(), f);
    }

    #[test]
    fn parser_never_panics(text in "\\PC{0,200}") {
        let _ = ocean::parse_field_csv(&text);
        let _ = driftplace::experiment::RunConfig::from_json(&text);
    }

    #[test]
    fn baseline_crossing_inverts_a_decreasing_curve(steps in prop::collection::vec(0.01f64..1.0, 2..8), m in 0usize..8, u in 0.0f64..1.0) {
        let mut curve = vec![10.0];
        for s in &steps {
            let last = *curve.last().unwrap();
            curve.push(last - s);
        }
        let m = m.min(curve.len() - 1);
        let (lo, hi) = (*curve.last().unwrap(), curve[0]);
        let e = lo + u * (hi - lo);
        let x = baseline_crossing(&curve, m, e);
        let i = (x.floor() as usize).min(curve.len() - 2);
        let interp = curve[i] + (x - i as f64) * (curve[i + 1] - curve[i]);
        prop_assert!((interp - e).abs() < 1e-9);
        prop_assert!(baseline_crossing(&curve, m, curve[m]) == m as f64);
    }

    #[test]
    fn sobol_points_stay_in_range(seed in any::<u64>(), nx in 1usize..30, ny in 1usize..30) {
        let mut s = SobolState::scrambled(&mut rng::stream(seed, &[]));
        for _ in 0..64 {
            let u = s.next_point();
            prop_assert!((0.0..1.0).contains(&u[0]) && (0.0..1.0).contains(&u[1]));
            prop_assert!(sobol::unit_to_cell(u, nx, ny) < nx * ny);
        }
    }

    #[test]
    fn metric_is_nonnegative(vals in prop::collection::vec(-3.0f64..3.0, 8)) {
        let grid = SpatialGrid::regular(2, 2, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let f = VectorFieldSeries::from_fn(grid, TimeGrid::new(0.0, 1.0, 2).unwrap(), |s, t| [s[0] - t, s[1]]);
        let mean: Vec<[f64; 2]> = vals.chunks(2).map(|c| [c[0], c[1]]).collect();
        prop_assert!(metric_l2(&mean, &f, &[1]).unwrap() >= 0.0);
    }
}
