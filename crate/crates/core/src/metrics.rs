//! Per-class top-1 accuracy, harmonic mean and wall-clock timing.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::datamodel::ClassId;
use crate::error::{Error, Result};

/// Fraction of correct predictions within each class of `scope`.
pub fn per_class_accuracy(preds: &[ClassId], labels: &[ClassId], scope: &[ClassId]) -> Result<BTreeMap<ClassId, f64>> {
    if preds.len() != labels.len() {
        return Err(Error::Eval(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut tally: BTreeMap<ClassId, (usize, usize)> = scope.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &y) in preds.iter().zip(labels) {
        if let Some(t) = tally.get_mut(&y) {
            t.1 += 1;
            if p == y {
                t.0 += 1;
            }
        }
    }
    tally
        .into_iter()
        .map(|(c, (hit, n))| {
            if n == 0 {
                Err(Error::Eval(format!("class {c} has no test samples")))
            } else {
                Ok((c, hit as f64 / n as f64))
            }
        })
        .collect()
}

/// Mean over the classes of `scope` of the within-class accuracy, in percent.
pub fn per_class_top1(preds: &[ClassId], labels: &[ClassId], scope: &[ClassId]) -> Result<f64> {
    if scope.is_empty() {
        return Err(Error::Eval("empty class scope".into()));
    }
    let acc = per_class_accuracy(preds, labels, scope)?;
    Ok(100.0 * acc.values().sum::<f64>() / acc.len() as f64)
}

/// `2SU/(S+U)`, taken as 0 when both are 0.
pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s <= 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

/// Rounds to one decimal, as reported in tables.
pub fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Runs `f` and returns its result together with the elapsed hours.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() / 3600.0)
}
