mod support;

use beamkd::distill::{exp_map, hyperbolic_distance, mobius_add};
use beamkd::seed;
use proptest::prelude::*;
use rand::Rng;
use support::geometry::CURVATURES;

#[test]
fn distance_is_a_metric_on_random_triples() {
    println!("{}", support::geometry::verify_metric_axioms());
}

#[test]
fn mobius_identities_hold_on_seeded_points() {
    println!("{}", support::geometry::verify_mobius_identities());
}

#[test]
fn distance_matches_the_mobius_form_away_from_the_boundary() {
    let mut rng = seed::rng(7, &[]);
    for &c in &CURVATURES {
        for _ in 0..1000 {
            let x: Vec<f64> = (0..6)
                .map(|_| rng.random_range(-0.3..0.3) / c.sqrt())
                .collect();
            let y: Vec<f64> = (0..6)
                .map(|_| rng.random_range(-0.3..0.3) / c.sqrt())
                .collect();
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let gap = mobius_add(&neg, &y, c).unwrap();
            let n = gap.iter().map(|v| v * v).sum::<f64>().sqrt();
            let expected = 2.0 / c.sqrt() * (c.sqrt() * n).atanh();
            let d = hyperbolic_distance(&x, &y, c);
            assert!(
                (d - expected).abs() <= 1e-10 * expected.max(1.0),
                "{d} vs {expected}"
            );
        }
    }
}

fn ball_point(dim: usize) -> impl Strategy<Value = (Vec<f64>, f64)> {
    (
        prop::collection::vec(-1.0f64..1.0, dim),
        0.0f64..0.95,
        prop::sample::select(CURVATURES.to_vec()),
    )
        .prop_map(|(v, r, c)| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            (v.iter().map(|x| x / n * r / c.sqrt()).collect(), c)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn adding_zero_is_the_identity((x, c) in ball_point(5)) {
        let zero = vec![0.0; x.len()];
        for (a, b) in mobius_add(&x, &zero, c).unwrap().iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in mobius_add(&zero, &x, c).unwrap().iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn negation_is_the_inverse((x, c) in ball_point(5)) {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        for v in mobius_add(&neg, &x, c).unwrap() {
            prop_assert!(v.abs() <= 1e-12);
        }
    }

    #[test]
    fn left_cancellation((x, c) in ball_point(4), (y, _) in ball_point(4)) {
        let y: Vec<f64> = y.iter().map(|v| v * 0.5).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let back = mobius_add(&neg, &mobius_add(&x, &y, c).unwrap(), c).unwrap();
        for (a, b) in back.iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn exp_map_lands_inside_the_ball(t in prop::collection::vec(-50.0f64..50.0, 1..12), c in prop::sample::select(CURVATURES.to_vec())) {
        let y = exp_map(&t, c).unwrap();
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(n < 1.0 / c.sqrt());
    }
}
