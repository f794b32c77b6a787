//! Index-level splits for the six any-shot tasks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datamodel::{BasePartition, ClassId, DatasetMeta, SplitSpec, Task};
use crate::error::{Error, Result};
use crate::rng::child_rng;

pub const SELECTION_RULE: &str = "seeded-permutation-prefix/v1";

/// The samples kept for one few-shot side of a split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSelection {
    pub per_class: BTreeMap<ClassId, Vec<usize>>,
    pub seed: u64,
    pub rule: String,
}

impl ShotSelection {
    pub fn all_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.per_class.values().flatten().copied().collect();
        v.sort_unstable();
        v
    }
}

/// Parses a task name, reporting unknown names as [`Error::InvalidTask`].
pub fn parse_task(name: &str) -> Result<Task> {
    name.parse().map_err(|_| Error::InvalidTask(name.to_string()))
}

fn group_by_class(pool: &[usize], labels: &[ClassId]) -> BTreeMap<ClassId, Vec<usize>> {
    let mut by: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for &i in pool {
        by.entry(labels[i]).or_default().push(i);
    }
    for v in by.values_mut() {
        v.sort_unstable();
    }
    by
}

/// Picks `shots` samples of every class in `classes` from `pool`.
///
/// Each class is shuffled once with a seed that depends only on `(seed, side,
/// class)`, and the first `shots` entries are kept, so a smaller N always
/// selects a subset of a larger N.
pub fn select_shots(
    pool: &[usize],
    labels: &[ClassId],
    classes: &[ClassId],
    shots: usize,
    seed: u64,
    side: &str,
) -> Result<ShotSelection> {
    let by = group_by_class(pool, labels);
    let mut per_class = BTreeMap::new();
    for &c in classes {
        let members = by.get(&c).cloned().unwrap_or_default();
        if shots >= members.len() {
            return Err(Error::ShotOverflow {
                shots,
                class: c,
                available: members.len(),
            });
        }
        let mut order = members;
        order.shuffle(&mut child_rng(seed, &format!("shots/{side}/{c}")));
        let mut chosen = order[..shots].to_vec();
        chosen.sort_unstable();
        per_class.insert(c, chosen);
    }
    Ok(ShotSelection {
        per_class,
        seed,
        rule: SELECTION_RULE.into(),
    })
}

fn minus(pool: &[usize], remove: &[usize]) -> Vec<usize> {
    let drop: BTreeSet<usize> = remove.iter().copied().collect();
    pool.iter().copied().filter(|i| !drop.contains(i)).collect()
}

pub fn build_split(
    meta: &DatasetMeta,
    labels: &[ClassId],
    base: &BasePartition,
    task: Task,
    shots: Option<usize>,
    seed: u64,
) -> Result<SplitSpec> {
    let n = match (task.is_few_shot(), shots) {
        (true, Some(n)) if n > 0 => Some(n),
        (true, _) => return Err(Error::Config(format!("{task} needs a positive shot count"))),
        (false, Some(_)) => return Err(Error::Config(format!("{task} takes no shot count"))),
        (false, None) => None,
    };
    if let Some(&bad) = base
        .train_seen
        .iter()
        .chain(&base.test_seen)
        .chain(&base.test_unseen)
        .find(|&&i| i >= labels.len())
    {
        return Err(Error::Invalid(format!("base partition index {bad} out of range")));
    }

    let seen_pool = if task.is_generalized() {
        base.train_seen.clone()
    } else {
        base.trainval()
    };
    let test_seen = if task.is_generalized() {
        base.test_seen.clone()
    } else {
        Vec::new()
    };

    let mut spec = SplitSpec {
        task,
        shots: n,
        seed,
        train_seen: seen_pool,
        train_unseen: Vec::new(),
        test_seen,
        test_unseen: base.test_unseen.clone(),
    };

    if task.has_unseen_shots() {
        let sel = select_shots(&base.test_unseen, labels, &meta.unseen_classes(), n.unwrap(), seed, "unseen")?;
        spec.train_unseen = sel.all_indices();
        spec.test_unseen = minus(&base.test_unseen, &spec.train_unseen);
    }
    if task.has_seen_shots() {
        // Discarded seen samples are dropped, not moved to the test set.
        let sel = select_shots(&spec.train_seen, labels, &meta.seen_classes(), n.unwrap(), seed, "seen")?;
        spec.train_seen = sel.all_indices();
    }
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub checks: Vec<Check>,
}

impl SplitReport {
    fn push(&mut self, name: &str, failures: Vec<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed: failures.is_empty(),
            detail: failures.join("; "),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks a split against its invariants. With `base`, cardinalities are
/// compared against the formulas for the task.
pub fn validate_split(split: &SplitSpec, labels: &[ClassId], meta: &DatasetMeta, base: Option<&BasePartition>) -> SplitReport {
    let mut report = SplitReport::default();
    let lists: [(&str, &Vec<usize>, bool); 4] = [
        ("train_seen", &split.train_seen, true),
        ("train_unseen", &split.train_unseen, false),
        ("test_seen", &split.test_seen, true),
        ("test_unseen", &split.test_unseen, false),
    ];

    let mut bounds = Vec::new();
    for (name, list, _) in &lists {
        if let Some(i) = list.iter().find(|&&i| i >= labels.len()) {
            bounds.push(format!("{name} index {i} out of range"));
        }
    }
    let in_range = bounds.is_empty();
    report.push("index_range", bounds);

    let mut owner: BTreeMap<usize, &str> = BTreeMap::new();
    let mut overlap = Vec::new();
    for (name, list, _) in &lists {
        for &i in list.iter() {
            if let Some(prev) = owner.insert(i, name) {
                overlap.push(format!("index {i} in both {prev} and {name}"));
            }
        }
    }
    overlap.truncate(5);
    report.push("index_disjoint", overlap);

    let mut class_fail = Vec::new();
    if in_range {
        for (name, list, seen_side) in &lists {
            let bad = list.iter().find(|&&i| {
                let y = labels[i];
                if *seen_side {
                    !meta.is_seen(y)
                } else {
                    !meta.is_unseen(y)
                }
            });
            if let Some(&i) = bad {
                class_fail.push(format!("{name} holds index {i} of class {}", labels[i]));
            }
        }
    }
    report.push("class_disjoint", class_fail);

    let mut empties = Vec::new();
    if !split.task.has_unseen_shots() && !split.train_unseen.is_empty() {
        empties.push(format!("{} must have empty train_unseen", split.task));
    }
    if !split.task.is_generalized() && !split.test_seen.is_empty() {
        empties.push(format!("{} must have empty test_seen", split.task));
    }
    if split.task.is_few_shot() != split.shots.is_some() {
        empties.push("shot count presence does not match task".into());
    }
    report.push("task_shape", empties);

    let mut shot_fail = Vec::new();
    if let (Some(n), true) = (split.shots, in_range) {
        let mut check = |list: &[usize], classes: Vec<ClassId>, side: &str| {
            let by = group_by_class(list, labels);
            for c in classes {
                let got = by.get(&c).map_or(0, Vec::len);
                if got != n {
                    shot_fail.push(format!("{side} class {c} has {got} shots, expected {n}"));
                }
            }
        };
        if split.task.has_unseen_shots() {
            check(&split.train_unseen, meta.unseen_classes(), "unseen");
        }
        if split.task.has_seen_shots() {
            check(&split.train_seen, meta.seen_classes(), "seen");
        }
    }
    shot_fail.truncate(5);
    report.push("shot_counts", shot_fail);

    if let Some(base) = base {
        let mut card = Vec::new();
        let seen_pool = if split.task.is_generalized() {
            base.train_seen.len()
        } else {
            base.train_seen.len() + base.test_seen.len()
        };
        let n = split.shots.unwrap_or(0);
        let expect_train_seen = if split.task.has_seen_shots() { n * meta.p } else { seen_pool };
        let expect_train_unseen = if split.task.has_unseen_shots() { n * meta.q } else { 0 };
        let expect_test_seen = if split.task.is_generalized() { base.test_seen.len() } else { 0 };
        let expect_test_unseen = base.test_unseen.len() - expect_train_unseen.min(base.test_unseen.len());
        for (name, got, want) in [
            ("train_seen", split.train_seen.len(), expect_train_seen),
            ("train_unseen", split.train_unseen.len(), expect_train_unseen),
            ("test_seen", split.test_seen.len(), expect_test_seen),
            ("test_unseen", split.test_unseen.len(), expect_test_unseen),
        ] {
            if got != want {
                card.push(format!("|{name}|={got}, expected {want}"));
            }
        }
        if split.task.has_unseen_shots() && split.train_unseen.len() + split.test_unseen.len() != base.test_unseen.len() {
            card.push("unseen pool not conserved".into());
        }
        report.push("cardinality", card);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two seen classes with 6 samples each, two unseen with 5 each.
    fn toy() -> (DatasetMeta, Vec<ClassId>, BasePartition) {
        let mut labels = Vec::new();
        let mut base = BasePartition {
            train_seen: vec![],
            test_seen: vec![],
            test_unseen: vec![],
        };
        for c in 1..=2u32 {
            for k in 0..6 {
                if k < 4 {
                    base.train_seen.push(labels.len());
                } else {
                    base.test_seen.push(labels.len());
                }
                labels.push(c);
            }
        }
        for c in 3..=4u32 {
            for _ in 0..5 {
                base.test_unseen.push(labels.len());
                labels.push(c);
            }
        }
        let meta = DatasetMeta::from_labels("toy", 2, 2, 3, &labels).unwrap();
        (meta, labels, base)
    }

    #[test]
    fn every_task_validates() {
        let (meta, labels, base) = toy();
        for &task in Task::ALL {
            let shots = task.is_few_shot().then_some(2);
            let s = build_split(&meta, &labels, &base, task, shots, 11).unwrap();
            let r = validate_split(&s, &labels, &meta, Some(&base));
            assert!(r.all_passed(), "{task}: {:?}", r.failed());
        }
    }

    #[test]
    fn duplicated_index_is_reported() {
        let (meta, labels, base) = toy();
        let mut s = build_split(&meta, &labels, &base, Task::Gzsl, None, 1).unwrap();
        s.train_seen.push(s.test_seen[0]);
        let r = validate_split(&s, &labels, &meta, None);
        assert!(!r.get("index_disjoint").unwrap().passed);
    }

    #[test]
    fn missing_shot_is_reported() {
        let (meta, labels, base) = toy();
        let mut s = build_split(&meta, &labels, &base, Task::Ufsl, Some(2), 1).unwrap();
        let moved = s.train_unseen.pop().unwrap();
        s.test_unseen.push(moved);
        let r = validate_split(&s, &labels, &meta, Some(&base));
        assert!(!r.get("shot_counts").unwrap().passed);
    }

    #[test]
    fn overflow_when_shots_reach_class_size() {
        let (meta, labels, base) = toy();
        let err = build_split(&meta, &labels, &base, Task::Ufsl, Some(5), 1).unwrap_err();
        assert!(matches!(err, Error::ShotOverflow { shots: 5, available: 5, .. }));
    }

    #[test]
    fn shots_must_match_task() {
        let (meta, labels, base) = toy();
        assert!(build_split(&meta, &labels, &base, Task::Zsl, Some(1), 1).is_err());
        assert!(build_split(&meta, &labels, &base, Task::Sfsl, None, 1).is_err());
        assert!(matches!(parse_task("TSL"), Err(Error::InvalidTask(_))));
    }

    #[test]
    fn smaller_shot_selection_is_nested() {
        let (meta, labels, base) = toy();
        let a = build_split(&meta, &labels, &base, Task::Gufsl, Some(1), 5).unwrap();
        let b = build_split(&meta, &labels, &base, Task::Gufsl, Some(3), 5).unwrap();
        assert!(a.train_unseen.iter().all(|i| b.train_unseen.contains(i)));
    }
}
