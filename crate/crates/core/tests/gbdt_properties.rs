mod common;

use common::{noisy_dataset, numeric_dataset, rmse, step_dataset, stumps};
use invplan::gbdt::{fit, Dataset, Ensemble, TrainConfig};
use proptest::prelude::*;

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_iterations: 60,
        learning_rate: 0.2,
        max_depth: 4,
        l2_leaf_reg: 1.0,
        min_samples_leaf: 3,
        early_stopping_rounds: 0,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn step_function_within_fifty_stumps() {
    let d = step_dataset();
    let m = fit(&d, &Dataset::default(), &stumps(50)).unwrap();
    assert!(m.n_trees() <= 50);
    let p = m.predict(&d.features).unwrap();
    assert!(rmse(&p, &d.target) < 0.05);
    let at = numeric_dataset(vec![("x", vec![0.9])], vec![0.0]);
    assert!((m.predict(&at.features).unwrap()[0] - 1.0).abs() < 0.1);
}

#[test]
fn zero_weight_rows_are_invisible() {
    let base = noisy_dataset(300, 1);
    let mut padded = base.clone();
    let extra = noisy_dataset(80, 2);
    // Interleave the extra rows with zero weight.
    let mut rows: Vec<(bool, usize)> = (0..300).map(|i| (false, i)).collect();
    for j in 0..80 {
        rows.insert(j * 3 + 1, (true, j));
    }
    padded.target = rows
        .iter()
        .map(|&(e, i)| if e { extra.target[i] } else { base.target[i] })
        .collect();
    padded.weight = rows
        .iter()
        .map(|&(e, i)| if e { 0.0 } else { base.weight[i] })
        .collect();
    for k in 0..base.features.numeric.len() {
        padded.features.numeric[k] = rows
            .iter()
            .map(|&(e, i)| {
                if e {
                    extra.features.numeric[k][i]
                } else {
                    base.features.numeric[k][i]
                }
            })
            .collect();
    }
    padded.features.categorical[0] = rows
        .iter()
        .map(|&(e, i)| {
            if e {
                extra.features.categorical[0][i].clone()
            } else {
                base.features.categorical[0][i].clone()
            }
        })
        .collect();
    let cfg = small_config(4);
    let a = fit(&base, &Dataset::default(), &cfg).unwrap();
    let b = fit(&padded, &Dataset::default(), &cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn subsampled_fit_is_reproducible_and_round_trips() {
    let d = noisy_dataset(400, 7);
    let v = noisy_dataset(100, 8);
    let cfg = TrainConfig {
        feature_subsample: 0.7,
        row_subsample: 0.6,
        early_stopping_rounds: 20,
        ..small_config(11)
    };
    let a = fit(&d, &v, &cfg).unwrap();
    let b = fit(&d, &v, &cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let back = Ensemble::from_json(&a.to_json().unwrap()).unwrap();
    let pa = a.predict(&v.features).unwrap();
    let pb = back.predict(&v.features).unwrap();
    assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));
    let other = fit(&d, &v, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.to_json().unwrap(), other.to_json().unwrap());
}

#[test]
fn early_stopping_keeps_the_best_validation_iteration() {
    let d = noisy_dataset(300, 21);
    let v = noisy_dataset(120, 22);
    let cfg = TrainConfig {
        max_iterations: 300,
        learning_rate: 0.5,
        max_depth: 6,
        l2_leaf_reg: 0.0,
        min_samples_leaf: 1,
        early_stopping_rounds: 15,
        ..TrainConfig::default()
    };
    let m = fit(&d, &v, &cfg).unwrap();
    assert!(m.best_iteration <= m.n_trees());
    let curve: Vec<f64> = m.history.iter().map(|h| h.valid_rmse.unwrap()).collect();
    let best = curve[m.best_iteration - 1];
    assert!(curve[..m.best_iteration].iter().all(|&r| best <= r));
}

#[test]
fn duplicate_rows_predict_identically() {
    let d = noisy_dataset(200, 3);
    let m = fit(&d, &Dataset::default(), &small_config(0)).unwrap();
    let dup = d.select(&[5, 5, 9, 9]);
    let p = m.predict(&dup.features).unwrap();
    assert_eq!(p[0].to_bits(), p[1].to_bits());
    assert_eq!(p[2].to_bits(), p[3].to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn training_rmse_never_rises(seed in 0u64..10_000, depth in 1usize..6, lr in 0.05f64..1.0) {
        let d = noisy_dataset(150, seed);
        let cfg = TrainConfig { max_depth: depth, learning_rate: lr, ..small_config(seed) };
        let m = fit(&d, &Dataset::default(), &cfg).unwrap();
        for w in m.history.windows(2) {
            prop_assert!(w[1].train_rmse <= w[0].train_rmse * (1.0 + 1e-12));
        }
    }

    #[test]
    fn power_of_two_weight_scaling_changes_nothing(seed in 0u64..10_000, exp in -8i32..8) {
        let d = noisy_dataset(150, seed);
        let mut scaled = d.clone();
        let c = 2f64.powi(exp);
        scaled.weight.iter_mut().for_each(|w| *w *= c);
        let cfg = small_config(seed);
        let a = fit(&d, &Dataset::default(), &cfg).unwrap();
        let b = fit(&scaled, &Dataset::default(), &cfg).unwrap();
        prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    // One round moves the base score part way to a leaf mean, so it cannot
    // leave the target range. Later rounds can: a leaf whose other rows are
    // over-predicted drags an exact row below min(y).
    #[test]
    fn one_round_stays_inside_the_target_range(seed in 0u64..10_000, lr in 0.05f64..=1.0, depth in 1usize..8) {
        let d = noisy_dataset(120, seed);
        let cfg = TrainConfig {
            max_iterations: 1,
            max_depth: depth,
            learning_rate: lr,
            l2_leaf_reg: 0.0,
            ..small_config(seed)
        };
        let m = fit(&d, &Dataset::default(), &cfg).unwrap();
        let lo = d.target.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.target.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let eps = 1e-9 * (hi - lo).max(1.0);
        for p in m.predict(&d.features).unwrap() {
            prop_assert!(p >= lo - eps && p <= hi + eps, "{} outside [{}, {}]", p, lo, hi);
        }
    }
}

#[test]
fn general_weight_scaling_barely_moves_predictions() {
    let d = noisy_dataset(250, 42);
    let mut scaled = d.clone();
    scaled.weight.iter_mut().for_each(|w| *w *= 3.7);
    let cfg = small_config(42);
    let a = fit(&d, &Dataset::default(), &cfg).unwrap();
    let b = fit(&scaled, &Dataset::default(), &cfg).unwrap();
    let pa = a.predict(&d.features).unwrap();
    let pb = b.predict(&d.features).unwrap();
    for (x, y) in pa.iter().zip(&pb) {
        assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
    }
}
