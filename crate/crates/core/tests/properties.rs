mod common;

use common::*;
use proptest::prelude::*;
use regswitch::american_put::{price_given_levels, PutPricer};
use regswitch::embedding::embed;
use regswitch::exit::{gerber_shiu, phi_minus, ExitOperator, Penalty};
use regswitch::first_passage::{LevelVector, PassageSolver};
use regswitch::linalg::Vector;
use regswitch::measure::to_emm;
use regswitch::wiener_hopf::solve_factorization;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn phase_type_cdf_is_a_distribution(seed in 0u64..10_000, phases in 1usize..4) {
        let ph = random_ph(&mut rng(seed), phases, 0.5, 6.0);
        let mut last = 0.0;
        for i in 0..40 {
            let c = ph.cdf(0.1 * i as f64);
            prop_assert!(c >= last - 1e-14 && c <= 1.0 + 1e-14);
            last = c;
        }
        prop_assert!((ph.mgf(0.0).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((ph.resolvent_exit(0.0).unwrap() - Vector::from_element(phases, 1.0)).amax() < 1e-12);
    }

    #[test]
    fn factorization_of_random_killed_models(seed in 0u64..10_000, n in 1usize..4) {
        let mut r = rng(seed);
        let m = random_model(&mut r, n, 2);
        let a = vec![0.05; n];
        let fe = embed(&m, &a).unwrap();
        let f = solve_factorization(&fe).unwrap();
        let (rp, rm) = f.residuals(&fe);
        prop_assert!(rp < 1e-9 && rm < 1e-9);
        // Killed ladder processes lose mass.
        let ones = Vector::from_element(f.q_minus.nrows(), 1.0);
        prop_assert!((&f.q_minus * ones).iter().all(|v| *v <= 1e-12));
    }

    #[test]
    fn ruin_decreases_with_surplus(seed in 0u64..10_000) {
        let m = random_model(&mut rng(seed), 2, 2);
        let fe = embed(&m, &[0.05, 0.1]).unwrap();
        let f = solve_factorization(&fe).unwrap();
        let mut last = 1.0 + 1e-12;
        for k in 0..20 {
            let v = gerber_shiu(&m, &fe, &f, 0.1 * k as f64, 0, &Penalty::One).unwrap();
            prop_assert!(v <= last && v >= 0.0);
            last = v;
        }
    }

    #[test]
    fn two_sided_exit_is_bounded_by_one_sided(seed in 0u64..10_000, width in 0.2f64..2.0) {
        let m = random_model(&mut rng(seed), 2, 2);
        let fe = embed(&m, &[0.05, 0.1]).unwrap();
        let f = solve_factorization(&fe).unwrap();
        let op = ExitOperator::new(&fe, &f, 0.0, width).unwrap();
        let x = 0.5 * width;
        let two = op.psi_minus(x).unwrap().column_sum();
        let one = phi_minus(&f, 0.0, x).unwrap().column_sum();
        prop_assert!(two.iter().zip(one.iter()).all(|(a, b)| *a <= *b + 1e-12));
    }

    #[test]
    fn passage_value_is_level_continuous(seed in 0u64..10_000, gap in 0.01f64..0.5) {
        let m = random_model(&mut rng(seed), 3, 2);
        let solver = PassageSolver::new(&m, &[0.05, 0.08, 0.1]).unwrap();
        let levels = LevelVector::new(&[0.0, -gap, -2.0 * gap]).unwrap();
        let pv = solver.solve(&levels, 0.0, &[1.0, 1.0, 1.0]).unwrap();
        for i in 0..3 {
            let v = pv.evaluate(levels.level(i), i);
            prop_assert!((v - 1.0).abs() < 1e-12);
            prop_assert!(pv.evaluate(1.0, i) < 1.0);
        }
    }

    #[test]
    fn put_value_dominates_payoff(seed in 0u64..10_000) {
        let m = to_emm(&random_model(&mut rng(seed), 2, 2)).unwrap();
        if !m.regimes().iter().all(|r| r.r > 0.0) {
            return Ok(());
        }
        let sol = PutPricer::new(&m, 1.0).unwrap().solve_optimal().unwrap();
        for k in 0..30 {
            let x = -1.0 + 0.05 * k as f64;
            for i in 0..2 {
                prop_assert!(sol.value_log(x, i) >= (1.0 - x.exp()).max(0.0) - 1e-10);
            }
        }
        let fixed = price_given_levels(&m, 1.0, sol.k()).unwrap();
        prop_assert!((fixed.value_log(0.0, 0) - sol.value_log(0.0, 0)).abs() < 1e-12);
    }
}

#[test]
fn model_json_round_trip() {
    let m = example_three_regime();
    let back = regswitch::model::ModelSpec::from_json(&m.to_json()).unwrap();
    assert_eq!(m.to_json(), back.to_json());
}
