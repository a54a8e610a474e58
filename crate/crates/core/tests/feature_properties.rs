mod common;

use common::{
    causality_violations, clip_free_panel, equivariance_violations, panel_from, synthetic,
};
use invplan::features::{build_features, impute, observation_weights, FeatureSpec};
use invplan::panel::{load_sales_wide, write_flags_wide, write_sales_wide};
use proptest::prelude::*;

#[test]
fn truncated_history_reproduces_every_row() {
    let panel = synthetic(12, 130, 5);
    let bad = causality_violations(&panel, 60, 17);
    assert!(bad.is_empty(), "rows differ after truncation: {bad:?}");
}

#[test]
fn scaling_sales_leaves_scaled_features_alone() {
    let panel = clip_free_panel(8, 120, 3);
    for c in [2.0, 10.0, 7.0] {
        assert_eq!(equivariance_violations(&panel, c, 1e-9), Some(0), "c = {c}");
    }
}

#[test]
fn windows_skip_masked_weeks() {
    // An out-of-stock week with an inconsistent huge sale must not leak into
    // any feature: windows see only in-stock weeks.
    let n = 40;
    let sales: Vec<f64> = (0..n).map(|t| (t % 5) as f64 + 1.0).collect();
    let mut flags = vec![true; n];
    flags[20] = false;
    let mut zeroed = sales.clone();
    zeroed[20] = 0.0;
    let a = build_features(
        &panel_from(vec![zeroed], vec![flags.clone()]),
        &FeatureSpec::default(),
    )
    .unwrap();
    let mut b_sales = sales.clone();
    b_sales[20] = 1000.0;
    let b = build_features(
        &panel_from(vec![b_sales], vec![flags]),
        &FeatureSpec::default(),
    )
    .unwrap();
    assert_eq!(format!("{:?}", a.columns), format!("{:?}", b.columns));
    assert!(a.column("lag_0").unwrap().values[20].is_nan());
    // A rolling mean over a window containing the masked week averages the
    // valid weeks only.
    let m3 = a.column("roll_mean_3").unwrap().values[21] * a.scale[21];
    let expected = (sales[19] + sales[21]) / 2.0;
    assert!((m3 - expected).abs() < 1e-9, "{m3} vs {expected}");
}

#[test]
fn sales_files_round_trip() {
    let panel = synthetic(7, 60, 9);
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("sales.csv");
    let f = dir.path().join("flags.csv");
    write_sales_wide(&panel, &s).unwrap();
    write_flags_wide(&panel, &f).unwrap();
    let (back, report) = load_sales_wide(&s, &f).unwrap();
    assert!(report.is_clean());
    assert_eq!(back, panel);
}

proptest! {
    #[test]
    fn weights_step_up_in_blocks(len in 1usize..400, decay in 0.05f64..=1.0) {
        let spec = FeatureSpec { decay_factor: decay, ..FeatureSpec::default() };
        let w = observation_weights(len, &spec);
        prop_assert_eq!(w.len(), len);
        prop_assert!(w.iter().all(|&x| x > 0.0));
        prop_assert!(w.windows(2).all(|p| p[0] <= p[1]));
        let mut distinct = w.clone();
        distinct.dedup();
        prop_assert!(distinct.len() <= len.div_ceil(53));
        prop_assert_eq!(*w.last().unwrap(), 1.0);
    }

    #[test]
    fn scale_never_below_one(seed in 0u64..1000) {
        let panel = synthetic(4, 80, seed);
        let m = build_features(&panel, &FeatureSpec::default()).unwrap();
        prop_assert!(m.scale.iter().all(|&s| s >= 1.0));
    }

    #[test]
    fn imputation_is_idempotent(seed in 0u64..1000, cutoff in 20usize..79) {
        let panel = synthetic(5, 80, seed);
        let raw = build_features(&panel, &FeatureSpec::default()).unwrap();
        let (once, _) = impute(&raw, cutoff).unwrap();
        let (twice, _) = impute(&once, cutoff).unwrap();
        prop_assert_eq!(format!("{:?}", once), format!("{:?}", twice));
        for (r, o) in raw.columns.iter().zip(&once.columns) {
            for (a, b) in r.values.iter().zip(&o.values) {
                prop_assert!(a.is_nan() || a.to_bits() == b.to_bits());
                prop_assert!(b.is_finite());
            }
        }
    }
}
