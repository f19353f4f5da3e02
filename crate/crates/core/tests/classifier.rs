use dsfcn::classifier::{fit_sigmoid, fit_sigmoid_with, sigmoid, FitOptions, Objective, SigmoidClassifier};
use dsfcn::metrics::auc;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ratios uniform on [0, 1] with labels drawn from `sigmoid(20 (gamma - 0.6))`.
fn logistic_sample(seed: u64, n: usize) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gammas: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels = gammas
        .iter()
        .map(|&g| u8::from(rng.random_bool(1.0 / (1.0 + (-20.0 * (g - 0.6)).exp()))))
        .collect();
    (gammas, labels)
}

#[test]
fn recovers_inflection_from_logistic_labels() {
    for seed in [1, 2, 3] {
        let (g, y) = logistic_sample(seed, 400);
        for objective in [Objective::SquaredError, Objective::LogLikelihood] {
            let opts = FitOptions { objective, ..Default::default() };
            let c = fit_sigmoid_with(&g, &y, &opts).unwrap().classifier;
            assert!((0.55..=0.65).contains(&c.b), "seed {seed} {objective:?}: b = {}", c.b);
            assert!(c.a > 0.0);
        }
    }
}

#[test]
fn probability_auc_equals_ratio_auc() {
    let (g, y) = logistic_sample(7, 400);
    let c = fit_sigmoid(&g, &y).unwrap().classifier;
    assert_eq!(auc(&c.predict_all(&g), &y).unwrap(), auc(&g, &y).unwrap());
}

#[test]
fn fitting_is_deterministic() {
    let (g, y) = logistic_sample(9, 120);
    assert_eq!(fit_sigmoid(&g, &y).unwrap(), fit_sigmoid(&g, &y).unwrap());
}

#[test]
fn predictions_match_the_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = SigmoidClassifier { a: 13.0, b: 0.42 };
    assert_eq!(c.predict(0.42), 0.5);
    for _ in 0..100 {
        let g: f64 = rng.random_range(-1.0..2.0);
        let direct = 1.0 / (1.0 + (-13.0 * (g - 0.42)).exp());
        assert!((c.predict(g) - direct).abs() <= 1e-12);
    }
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    assert!(grid.windows(2).all(|w| c.predict(w[0]) < c.predict(w[1])));
}

#[test]
fn degenerate_inputs_are_rejected() {
    assert!(fit_sigmoid(&[0.1, 0.2], &[0, 1, 1]).is_err());
    assert!(fit_sigmoid(&[0.1, 0.2, 0.3, 0.4], &[0, 1, 1, 2]).is_err());
    assert!(fit_sigmoid(&[0.1, f64::NAN, 0.3, 0.4], &[0, 1, 0, 1]).is_err());
}

proptest! {
    #[test]
    fn probabilities_stay_in_unit_interval(a in -200.0f64..200.0, b in 0.0f64..1.0, g in 0.0f64..1.0) {
        let p = SigmoidClassifier { a, b }.predict(g);
        prop_assert!((0.0..=1.0).contains(&p));
        // Away from saturation the open interval holds exactly.
        if (a * (g - b)).abs() < 30.0 {
            prop_assert!(p > 0.0 && p < 1.0);
        }
        prop_assert!((sigmoid(a * (g - b)) + sigmoid(-a * (g - b)) - 1.0).abs() < 1e-12);
    }
}
