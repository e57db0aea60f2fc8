use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use switchtrack::basis::PolynomialBasis;
use switchtrack::document::{ProblemDocument, BUNDLED_LQ_TWO_MODE};
use switchtrack::problems;
use switchtrack::rollout::{rollout, FnPolicy};
use switchtrack::snac::least_squares_fit;
use switchtrack::switchopt::golden_section;
use switchtrack::transform::map_time;
use switchtrack::{SwitchVector, TransformedGrid};

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Sorted switching times in `(0, 3)` with at least `gap` between them.
fn switch_times(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..2.95, k).prop_filter_map("too close", |mut t| {
        t.sort_by(f64::total_cmp);
        if t.windows(2).all(|w| w[1] - w[0] > 1e-3) {
            Some(t)
        } else {
            None
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integer_transformed_times_hit_the_switches(t in switch_times(3)) {
        let sw = SwitchVector::new(t.clone(), 0.0, 3.0).unwrap();
        prop_assert_eq!(map_time(0.0, 3.0, &sw, 0.0).unwrap(), 0.0);
        prop_assert_eq!(map_time(0.0, 3.0, &sw, 4.0).unwrap(), 3.0);
        for (j, tj) in t.iter().enumerate() {
            prop_assert!((map_time(0.0, 3.0, &sw, (j + 1) as f64).unwrap() - tj).abs() < 1e-15);
        }
        let mut prev = -1.0;
        for i in 0..=400 {
            let now = map_time(0.0, 3.0, &sw, i as f64 / 100.0).unwrap();
            prop_assert!(now >= prev);
            prev = now;
        }
    }

    #[test]
    fn basis_size_is_a_binomial(nvars in 1usize..5, degree in 1u32..5) {
        let b = PolynomialBasis::enumerate(nvars, degree).unwrap();
        prop_assert_eq!(b.len() as u64, binomial(nvars as u64 + degree as u64, degree as u64));
        let point: Vec<f64> = (0..nvars).map(|i| 0.3 + 0.1 * i as f64).collect();
        let phi = b.eval(&point[..1], &point[1..]);
        prop_assert_eq!(phi.len(), b.len());
        prop_assert_eq!(phi[0], 1.0);
    }

    #[test]
    fn exact_data_is_fitted_exactly(seed in 0u64..1000, rows in 12usize..40) {
        let cols = 6;
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let phi = DMatrix::from_fn(rows, cols, |_, _| next());
        let w = DMatrix::from_fn(cols, 2, |_, _| next());
        let y = &phi * &w;
        let fit = least_squares_fit(&phi, &y, 0.0).unwrap();
        prop_assert!((fit - w).amax() < 1e-9);
    }

    #[test]
    fn golden_section_finds_a_parabola_vertex(c in 0.1f64..2.9) {
        let out = golden_section(|t| Ok((t - c) * (t - c)), 0.0, 3.0, 1e-6).unwrap();
        prop_assert!((out.x - c).abs() < 1e-5);
        prop_assert!(out.unimodal);
    }

    #[test]
    fn rollout_cost_is_nonnegative(t1 in 0.41f64..0.59, x1 in -1.0f64..1.0, x2 in -1.0f64..1.0, k in -3.0f64..3.0) {
        let p = problems::lq_two_mode();
        let grid = TransformedGrid::new(1, problems::LQ_DTHAT).unwrap();
        let sw = SwitchVector::new(vec![t1], 0.0, 1.0).unwrap();
        let policy = FnPolicy(|_: usize, _: &SwitchVector, x: &DVector<f64>| DVector::from_element(1, k * x[0]));
        let traj = rollout(&p, &grid, &sw, &policy, &DVector::from_vec(vec![x1, x2])).unwrap();
        prop_assert!(traj.total_cost >= 0.0);
        prop_assert_eq!(traj.states.len(), 401);
        let sum: f64 = traj.stage_costs.iter().sum::<f64>() + traj.terminal_cost;
        prop_assert!((sum - traj.total_cost).abs() <= 1e-12 * sum.max(1.0));
    }

    #[test]
    fn document_round_trip_preserves_hash(s in 0.0f64..10.0, eta in 20usize..2000) {
        let mut doc = ProblemDocument::from_json(BUNDLED_LQ_TWO_MODE).unwrap();
        doc.s[0][0] = s;
        doc.train.eta = eta;
        let back = ProblemDocument::from_json(&doc.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.config_hash(), doc.config_hash());
        prop_assert_eq!(back, doc);
    }
}
