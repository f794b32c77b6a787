mod common;

use common::tables::{MISPRINTED, ORIGINAL_GZSL};
use gasl_core::metrics::{harmonic_mean, per_class_top1, round1};

#[test]
fn published_harmonic_means_follow_from_u_and_s() {
    for &(model, ds, u, s, h) in &ORIGINAL_GZSL {
        if (model, ds) == MISPRINTED {
            continue;
        }
        assert!((harmonic_mean(u, s) - h).abs() <= 0.1, "{model}/{ds}");
    }
}

#[test]
fn the_misprinted_row_is_not_a_harmonic_mean() {
    let &(_, _, u, s, h) = ORIGINAL_GZSL.iter().find(|r| (r.0, r.1) == MISPRINTED).unwrap();
    assert!((harmonic_mean(u, s) - h).abs() > 0.1);
}

#[test]
fn per_class_averaging_ignores_class_size() {
    let mut labels = vec![1; 1000];
    labels.extend([2; 10]);
    let preds = vec![1; 1010];
    assert_eq!(per_class_top1(&preds, &labels, &[1, 2]).unwrap(), 50.0);
    let pooled = 100.0 * 1000.0 / 1010.0;
    assert_eq!(round1(pooled), 99.0);
}
