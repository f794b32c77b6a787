//! Plain-text reporting of result records: a CSV, an aligned table with
//! the best entries marked, and an average-rank table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ModelKind, ResultRecord, Task};
use crate::error::{Error, Result};
use crate::metrics::{harmonic_mean, round1};

pub const CSV_FILE: &str = "results.csv";
pub const TABLE_FILE: &str = "table.txt";
pub const RANK_FILE: &str = "ranks.txt";

/// Largest tolerated gap between a stored H and the one recomputed from U, S.
pub const H_TOLERANCE: f64 = 0.05;

pub const CSV_HEADER: [&str; 13] = [
    "dataset",
    "model",
    "task",
    "shots",
    "provenance_x",
    "provenance_a",
    "Z",
    "ZT",
    "U",
    "S",
    "H",
    "HT",
    "seed",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One row per record.
    #[default]
    Flat,
    /// One row per model, one column group per dataset, one block per task.
    Grid,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub csv: PathBuf,
    pub table: PathBuf,
    pub ranks: PathBuf,
    pub average_ranks: BTreeMap<ModelKind, f64>,
    pub warnings: Vec<String>,
}

/// Comparison cell: records in one cell are ranked against each other.
type Cell = (String, Task, Option<usize>, String, String);

fn cell(r: &ResultRecord) -> Cell {
    (
        r.dataset.clone(),
        r.task,
        r.shots,
        r.provenance_x.to_string(),
        r.provenance_a.to_string(),
    )
}

/// The metric a record is judged by: H for generalized tasks, else Z.
pub fn headline(r: &ResultRecord) -> Option<f64> {
    if r.task.is_generalized() {
        r.h
    } else {
        r.z
    }
}

/// Records whose stored H disagrees with the one recomputed from U and S.
pub fn consistency_warnings(records: &[ResultRecord]) -> Vec<String> {
    records
        .iter()
        .filter_map(|r| {
            let (u, s, h) = (r.u?, r.s?, r.h?);
            let want = harmonic_mean(u, s);
            ((want - h).abs() > H_TOLERANCE).then(|| {
                format!(
                    "{} {} {}: H = {h:.1} but U = {u:.1}, S = {s:.1} give {want:.2}",
                    r.dataset, r.model, r.task
                )
            })
        })
        .collect()
}

/// Per-cell competition ranks (1 = best, ties share the mean rank),
/// averaged per model over the cells it appears in. Repeated records of a
/// model within a cell are averaged first.
pub fn average_ranks(records: &[ResultRecord]) -> BTreeMap<ModelKind, f64> {
    let mut cells: BTreeMap<Cell, BTreeMap<ModelKind, Vec<f64>>> = BTreeMap::new();
    for r in records {
        if let Some(v) = headline(r) {
            cells.entry(cell(r)).or_default().entry(r.model).or_default().push(v);
        }
    }
    let mut sums: BTreeMap<ModelKind, (f64, usize)> = BTreeMap::new();
    for models in cells.values() {
        let scores: Vec<(ModelKind, f64)> = models
            .iter()
            .map(|(m, v)| (*m, v.iter().sum::<f64>() / v.len() as f64))
            .collect();
        for &(m, v) in &scores {
            let better = scores.iter().filter(|(_, o)| *o > v).count();
            let equal = scores.iter().filter(|(_, o)| *o == v).count();
            let rank = better as f64 + (equal as f64 + 1.0) / 2.0;
            let e = sums.entry(m).or_insert((0.0, 0));
            e.0 += rank;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect()
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}", round1(x))).unwrap_or_default()
}

fn hours(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn row(r: &ResultRecord) -> Vec<String> {
    vec![
        r.dataset.clone(),
        r.model.to_string(),
        r.task.to_string(),
        r.shots.map(|n| n.to_string()).unwrap_or_default(),
        r.provenance_x.to_string(),
        r.provenance_a.to_string(),
        pct(r.z),
        hours(r.zt),
        pct(r.u),
        pct(r.s),
        pct(r.h),
        hours(r.ht),
        r.seed.to_string(),
    ]
}

/// Renders rows as space-aligned columns.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().enumerate().map(|(j, s)| format!("{s:<w$}", w = widths[j])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Best Z and best H per cell; marked with `*` in the tables.
fn best_per_cell(records: &[ResultRecord]) -> BTreeMap<Cell, (Option<f64>, Option<f64>)> {
    let mut best: BTreeMap<Cell, (Option<f64>, Option<f64>)> = BTreeMap::new();
    let max = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, y) => x.or(y),
    };
    for r in records {
        let e = best.entry(cell(r)).or_default();
        e.0 = max(e.0, r.z.map(round1));
        e.1 = max(e.1, r.h.map(round1));
    }
    best
}

fn mark(v: Option<f64>, best: Option<f64>) -> String {
    match v {
        Some(x) if Some(round1(x)) == best => format!("{}*", pct(v)),
        _ => pct(v),
    }
}

fn flat_table(records: &[ResultRecord]) -> String {
    let best = best_per_cell(records);
    let mut rows = vec![CSV_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for r in records {
        let (bz, bh) = best[&cell(r)];
        let mut cols = row(r);
        cols[6] = mark(r.z, bz);
        cols[10] = mark(r.h, bh);
        rows.push(cols);
    }
    align(&rows)
}

fn grid_table(records: &[ResultRecord]) -> String {
    let best = best_per_cell(records);
    let mut blocks: BTreeMap<(Task, Option<usize>, String, String), Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        let (_, t, n, px, pa) = cell(r);
        blocks.entry((t, n, px, pa)).or_default().push(r);
    }
    let mut out = String::new();
    for ((task, shots, px, pa), recs) in blocks {
        let mut datasets: Vec<String> = recs.iter().map(|r| r.dataset.clone()).collect();
        datasets.sort();
        datasets.dedup();
        let mut models: Vec<ModelKind> = recs.iter().map(|r| r.model).collect();
        models.sort();
        models.dedup();
        let shots = shots.map(|n| format!(" N={n}")).unwrap_or_default();
        let _ = writeln!(out, "{task}{shots} (x: {px}, a: {pa})");
        let metrics: &[&str] = if task.is_generalized() { &["U", "S", "H"] } else { &["Z"] };
        let mut header = vec!["model".to_string()];
        for d in &datasets {
            for m in metrics {
                header.push(format!("{d}:{m}"));
            }
        }
        let mut rows = vec![header];
        for m in &models {
            let mut cols = vec![m.to_string()];
            for d in &datasets {
                // Last record wins when a model repeats within a cell.
                let r = recs.iter().rev().find(|r| r.model == *m && &r.dataset == d);
                let (bz, bh) = r.map(|r| best[&cell(r)]).unwrap_or_default();
                if task.is_generalized() {
                    cols.push(pct(r.and_then(|r| r.u)));
                    cols.push(pct(r.and_then(|r| r.s)));
                    cols.push(mark(r.and_then(|r| r.h), bh));
                } else {
                    cols.push(mark(r.and_then(|r| r.z), bz));
                }
            }
            rows.push(cols);
        }
        out.push_str(&align(&rows));
        out.push('\n');
    }
    out
}

fn rank_table(ranks: &BTreeMap<ModelKind, f64>) -> String {
    let mut sorted: Vec<(&ModelKind, &f64)> = ranks.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)));
    let mut rows = vec![vec!["model".to_string(), "average rank".to_string()]];
    rows.extend(sorted.into_iter().map(|(m, r)| vec![m.to_string(), format!("{r:.2}")]));
    align(&rows)
}

/// Writes the CSV, aligned table and rank table into `out`.
pub fn emit_report(records: &[ResultRecord], layout: Layout, out: &Path) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::EmptyReport);
    }
    fs::create_dir_all(out)?;
    let warnings = consistency_warnings(records);
    for w in &warnings {
        warn!("inconsistent record: {w}");
    }

    let csv_path = out.join(CSV_FILE);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Io(e.into()))?;
    w.write_record(CSV_HEADER).map_err(|e| Error::Io(e.into()))?;
    for r in records {
        w.write_record(row(r)).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;

    let table = match layout {
        Layout::Flat => flat_table(records),
        Layout::Grid => grid_table(records),
    };
    let table_path = out.join(TABLE_FILE);
    fs::write(&table_path, table)?;

    let average_ranks = average_ranks(records);
    let ranks_path = out.join(RANK_FILE);
    fs::write(&ranks_path, rank_table(&average_ranks))?;
    Ok(Report {
        csv: csv_path,
        table: table_path,
        ranks: ranks_path,
        average_ranks,
        warnings,
    })
}
