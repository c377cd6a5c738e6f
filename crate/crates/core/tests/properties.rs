use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lowgain::io;
use lowgain::lfr::{
    daug_cone, eval_pi_delta, lipschitz_cone, make_lfr, parametric_cone, sector_cone, shift_sector, solve_loop,
    DeltaMap,
};
use lowgain::linalg;
use lowgain::measures::{contraction_lmi_linear, mu, mu_limit_oracle, NormKind};
use lowgain::model::{dc_gains, is_hurwitz, random_stable_system, slow_dynamics_lti, DcGains};
use lowgain::sdp::{self, LmiBlock, LmiProblem};
use lowgain::sim::SignalSpec;
use lowgain::synthesis::{hinf_lti_synthesis, StructureSpec, YConstraint};
use lowgain::{Error, Mat, Vec64};

fn matrix(n: usize, m: usize, range: f64) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-range..range, n * m).prop_map(move |v| Mat::from_row_slice(n, m, &v))
}

fn square(max: usize) -> impl Strategy<Value = Mat> {
    (1..=max).prop_flat_map(|n| matrix(n, n, 3.0))
}

fn square_pair(max: usize) -> impl Strategy<Value = (Mat, Mat)> {
    (1..=max).prop_flat_map(|n| (matrix(n, n, 3.0), matrix(n, n, 3.0)))
}

fn base_norms() -> [NormKind; 3] {
    [NormKind::One, NormKind::Two, NormKind::Inf]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measure_subadditive_and_bounds_spectrum((a, b) in square_pair(5)) {
        let slack = 1e-10 * (1.0 + a.amax() + b.amax());
        let abscissa = linalg::spectral_abscissa(&a).unwrap();
        for norm in base_norms() {
            let (ma, mb) = (mu(&a, &norm).unwrap(), mu(&b, &norm).unwrap());
            prop_assert!(mu(&(&a + &b), &norm).unwrap() <= ma + mb + slack);
            prop_assert!(abscissa <= ma + slack);
            prop_assert!(ma.abs() <= linalg::norm2(&a) * (a.nrows() as f64).sqrt() + slack);
        }
    }

    #[test]
    fn measure_homogeneous_and_shift_covariant(a in square(5), c in 0.0..4.0f64, s in -3.0..3.0f64) {
        let n = a.nrows();
        for norm in base_norms() {
            let ma = mu(&a, &norm).unwrap();
            let tol = 1e-10 * (1.0 + ma.abs());
            prop_assert!((mu(&(&a * c), &norm).unwrap() - c * ma).abs() <= tol * (1.0 + c));
            prop_assert!((mu(&(&a + Mat::identity(n, n) * s), &norm).unwrap() - (ma + s)).abs() <= tol + 1e-12);
        }
    }

    #[test]
    fn measure_matches_limit_oracle(a in square(5), t in matrix(3, 3, 1.0)) {
        let tol = 1e-5 * (1.0 + linalg::norm2(&a));
        for norm in base_norms() {
            prop_assert!((mu(&a, &norm).unwrap() - mu_limit_oracle(&a, &norm, 1e-8).unwrap()).abs() <= tol);
        }
        if a.nrows() == 3 {
            let w = &t + Mat::identity(3, 3) * 4.0;
            let p = w.transpose() * &w;
            for norm in [
                NormKind::weighted_two(p).unwrap(),
                NormKind::weighted_one(w.clone()).unwrap(),
                NormKind::weighted_inf(w).unwrap(),
            ] {
                let tol = 1e-5 * (1.0 + linalg::norm2(&a)) * 10.0;
                prop_assert!((mu(&a, &norm).unwrap() - mu_limit_oracle(&a, &norm, 1e-8).unwrap()).abs() <= tol);
            }
        }
    }

    #[test]
    fn slow_dynamics_spectrum(g0 in matrix(3, 3, 2.0), k in matrix(3, 3, 2.0), eps in 0.01..2.0f64) {
        let dc = DcGains::new(g0.clone(), Mat::identity(3, 3)).unwrap();
        let slow = slow_dynamics_lti(&dc, &k, eps).unwrap();
        let mut got: Vec<_> = linalg::eigenvalues(&slow.a).unwrap();
        let mut want: Vec<_> = linalg::eigenvalues(&(&g0 * &k)).unwrap().into_iter().map(|z| -z * eps).collect();
        let key = |z: &num_complex::Complex<f64>| (z.re, z.im);
        got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        want.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        let scale = 1.0 + eps * linalg::norm2(&(&g0 * &k));
        for (x, y) in got.iter().zip(&want) {
            prop_assert!((x - y).norm() <= 1e-6 * scale);
        }
    }

    #[test]
    fn sector_dual_inverts_primal(mu_v in 0.0..3.0f64, width in 0.1..5.0f64, theta in 0.1..10.0f64) {
        let pair = sector_cone(mu_v, mu_v + width).unwrap();
        let th = [theta];
        let matched = pair.matched_dual(&th).unwrap();
        let prod = pair.primal.element(&th) * pair.dual.as_ref().unwrap().element(&matched);
        prop_assert!((prod - Mat::identity(2, 2)).amax() < 1e-8);
        let back = pair.matched_primal(&matched).unwrap();
        prop_assert!((back[0] / theta - 1.0).abs() < 1e-8);
    }

    #[test]
    fn parametric_dual_inverts_primal(dim in 1usize..4, seed in 0u64..1000) {
        let pair = parametric_cone(dim, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let th = pair.primal.sample_interior(&mut rng);
        let matched = pair.matched_dual(&th).unwrap();
        let prod = pair.primal.element(&th) * pair.dual.as_ref().unwrap().element(&matched);
        let d = 2 * dim;
        prop_assert!((prod - Mat::identity(d, d)).amax() < 1e-8);
        prop_assert!(pair.dual.as_ref().unwrap().contains(&matched, 0.0));
    }

    #[test]
    fn daug_form_is_sum_of_parts(
        la in 0.5..3.0f64, lb in 0.5..3.0f64, ta in 0.1..2.0f64, tb in 0.1..2.0f64,
        v in prop::collection::vec(-2.0..2.0f64, 6),
    ) {
        let a = lipschitz_cone(la, 1, 2).unwrap();
        let b = sector_cone(0.0, lb).unwrap().primal;
        let d = daug_cone(&a, &b);
        prop_assert_eq!((d.dim_p, d.dim_q), (2, 3));
        let theta = d.element(&[ta, tb]);
        // Ordering (p_a, p_b, q_a, q_b).
        let (pa, pb, qa, qb) = (v[0], v[1], Vec64::from_vec(vec![v[2], v[3]]), v[4]);
        let x = Vec64::from_vec(vec![pa, pb, qa[0], qa[1], qb]);
        let whole = (x.transpose() * &theta * &x)[(0, 0)];
        let xa = Vec64::from_vec(vec![pa, qa[0], qa[1]]);
        let xb = Vec64::from_vec(vec![pb, qb]);
        let parts = (xa.transpose() * a.element(&[ta]) * &xa)[(0, 0)] + (xb.transpose() * b.element(&[tb]) * &xb)[(0, 0)];
        prop_assert!((whole - parts).abs() < 1e-12 * (1.0 + whole.abs()));
    }

    #[test]
    fn sdp_optimum_invariant_under_block_scaling(a0 in matrix(3, 3, 2.0), a1 in matrix(3, 3, 2.0), c in 0.01..100.0f64) {
        // minimize t subject to t I - sym(A0) - x sym(A1) >= 0 and -1 <= x <= 1.
        let mut prob = LmiProblem::new(2);
        prob.add_block(LmiBlock::nonstrict(
            -linalg::sym(&a0),
            vec![(0, Mat::identity(3, 3)), (1, -linalg::sym(&a1))],
        ));
        prob.add_block(LmiBlock::nonstrict(Mat::from_element(1, 1, 1.0), vec![(1, Mat::from_element(1, 1, 1.0))]));
        prob.add_block(LmiBlock::nonstrict(Mat::from_element(1, 1, 1.0), vec![(1, Mat::from_element(1, 1, -1.0))]));
        prob.minimize_var(0);
        let base = sdp::solve(&prob).unwrap();
        let scaled = sdp::solve(&prob.scaled(c)).unwrap();
        prop_assert!(base.status.is_feasible() && scaled.status.is_feasible(), "{:?} {:?}", base.status, scaled.status);
        prop_assert!((base.objective_value - scaled.objective_value).abs() <= 1e-5 * (1.0 + base.objective_value.abs()), "{} {}", base.objective_value, scaled.objective_value);
        // Oracle: the objective is convex in x; grid search bounds it.
        let grid_min = (0..=2000)
            .map(|i| -1.0 + i as f64 / 1000.0)
            .map(|x| linalg::lambda_max(&(linalg::sym(&a0) + linalg::sym(&a1) * x)).unwrap())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(base.objective_value <= grid_min + 1e-5 * (1.0 + grid_min.abs()));
        prop_assert!(base.objective_value >= grid_min - 1e-2 * (1.0 + linalg::norm2(&a1)));
    }

    #[test]
    fn state_space_json_round_trip(seed in 0u64..10_000, n in 1usize..6, m in 1usize..4, nw in 1usize..3) {
        let p = m;
        let ss = random_stable_system(seed, n.max(p), m, p, nw).unwrap();
        let text = serde_json::to_string(&io::state_space_to_json(&ss)).unwrap();
        let back = io::state_space_from_json(&io::parse_json(&text).unwrap()).unwrap();
        prop_assert_eq!(back, ss);
    }

    #[test]
    fn loop_solution_satisfies_interconnection(
        j in matrix(2, 2, 0.3), h in matrix(2, 1, 1.0), e2 in matrix(2, 1, 1.0),
        u in -3.0..3.0f64, w in -3.0..3.0f64,
    ) {
        let lfr = make_lfr(Mat::from_element(1, 1, 1.0), Mat::from_element(1, 2, 0.5), h, j, Mat::from_element(1, 1, 1.0), e2).unwrap();
        let delta = DeltaMap::diagonal(2, |i, x| if i == 0 { x.clamp(-1.0, 1.0) } else { x.tanh() });
        let (uu, ww) = (Vec64::from_element(1, u), Vec64::from_element(1, w));
        let (q, p) = solve_loop(&lfr, &delta, &uu, &ww).unwrap();
        let resid = &q - (&lfr.h * &uu + &lfr.j * &p + &lfr.e2 * &ww);
        prop_assert!(resid.amax() < 1e-9);
        prop_assert!((&p - delta.eval(&q).unwrap()).amax() < 1e-9);
    }

    #[test]
    fn sector_shift_preserves_equilibrium_map(
        j in matrix(1, 1, 0.2), g in matrix(2, 1, 1.0), h in matrix(1, 2, 1.0),
        shift in 0.0..1.0f64, u in matrix(2, 1, 2.0),
    ) {
        let lfr = make_lfr(Mat::identity(2, 2), g, h, j, Mat::from_element(2, 1, 1.0), Mat::from_element(1, 1, 0.5)).unwrap();
        let delta = DeltaMap::diagonal(1, move |_, x| 1.0 * x + 0.5 * x.sin());
        let shifted = shift_sector(&lfr, &[shift]).unwrap();
        let delta_s = delta.shifted(&[shift]).unwrap();
        let w = Vec64::from_element(1, 0.7);
        let u = u.column(0).into_owned();
        let a = eval_pi_delta(&lfr, &delta, &u, &w).unwrap();
        let b = eval_pi_delta(&shifted, &delta_s, &u, &w).unwrap();
        prop_assert!((a - b).amax() < 1e-8);
    }

    #[test]
    fn step_signal_is_piecewise_constant(times in prop::collection::vec(0.01..5.0f64, 1..5), probe in 0.0..30.0f64) {
        let mut t = 0.0;
        let mut knots = vec![(0.0, Vec64::from_element(1, 0.0))];
        for (i, dt) in times.iter().enumerate() {
            t += dt;
            knots.push((t, Vec64::from_element(1, (i + 1) as f64)));
        }
        let sig = SignalSpec::steps(knots.clone()).unwrap();
        let expect = knots.iter().filter(|(tk, _)| *tk <= probe).count() - 1;
        prop_assert_eq!(sig.eval(probe)[0], expect as f64);
        prop_assert!(sig.knots(100.0).windows(2).all(|w| w[1] > w[0]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lmi_certificate_iff_hurwitz(g0 in matrix(3, 3, 2.0), k in matrix(3, 3, 2.0)) {
        let gk = &g0 * &k;
        let abscissa = linalg::spectral_abscissa(&(-&gk)).unwrap();
        prop_assume!(abscissa.abs() > 1e-3);
        let h = is_hurwitz(&(-&gk), 0.0).unwrap();
        match contraction_lmi_linear(&gk) {
            Ok(cert) => {
                prop_assert!(h);
                prop_assert!(cert.rho <= -abscissa * (1.0 + 1e-6) + 1e-9);
                prop_assert!(cert.rho >= -abscissa * (1.0 - 1e-3));
            }
            Err(Error::Infeasible(_)) => prop_assert!(!h),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn structure_only_degrades(seed in 0u64..500, pattern in prop::collection::vec(any::<bool>(), 12)) {
        let ss = random_stable_system(seed, 6, 4, 3, 2).unwrap();
        let dc = dc_gains(&ss).unwrap();
        let mut mask = pattern;
        for i in 0..3 {
            mask[i * 3 + i] = true;
        }
        let spec = StructureSpec::new(4, 3, mask.clone(), YConstraint::None).unwrap();
        let full = hinf_lti_synthesis(&dc, None).unwrap();
        match hinf_lti_synthesis(&dc, Some(&spec)) {
            Ok(r) => {
                prop_assert!(r.gamma >= full.gamma - 1e-5 * (1.0 + full.gamma), "structured {} full {}", r.gamma, full.gamma);
                for i in 0..4 {
                    for j in 0..3 {
                        if !mask[i * 3 + j] {
                            prop_assert_eq!(r.k[(i, j)].to_bits(), 0);
                        }
                    }
                }
            }
            Err(Error::StructureTooRestrictive) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}
