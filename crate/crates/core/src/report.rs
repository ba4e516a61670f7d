//! Comparison tables over one or more evaluation directories.
//!
//! A directory is either an experiment directory (with `summary.json` and
//! `runs/seed-<s>/eval.json`) or a plain directory holding one `eval.json`.
//! The first directory is the baseline for significance columns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::write_text_atomic;
use crate::error::{Error, Result};
use crate::eval::{permutation_test, EvalReport, RunSeries};
use crate::experiment::{ExperimentSummary, DEFAULT_ALPHA, DEFAULT_RESAMPLES};
use crate::tree::QactLabel;

/// Evaluation reports of one system, in run order.
#[derive(Debug, Clone)]
pub struct SystemRuns {
    pub name: String,
    pub reports: Vec<EvalReport>,
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn load_system(dir: impl AsRef<Path>) -> Result<SystemRuns> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let reports = if dir.join("summary.json").is_file() {
        let summary = ExperimentSummary::load(dir)?;
        summary
            .runs
            .iter()
            .map(|r| read_report(&dir.join("runs").join(format!("seed-{}", r.seed)).join("eval.json")))
            .collect::<Result<Vec<_>>>()?
    } else if dir.join("eval.json").is_file() {
        vec![read_report(&dir.join("eval.json"))?]
    } else {
        return Err(Error::Argument(format!(
            "{} holds no evaluation reports",
            dir.display()
        )));
    };
    Ok(SystemRuns { name, reports })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    /// `None` cells are gaps: the metric was not available.
    pub rows: Vec<Vec<Option<String>>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<&str> = row.iter().map(|c| c.as_deref().unwrap_or("")).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub baseline: String,
    pub alpha: f64,
    pub tables: Vec<Table>,
}

impl Report {
    /// Writes `<table>.csv` for every table plus `report.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for t in &self.tables {
            let p = dir.join(format!("{}.csv", t.name));
            write_text_atomic(&p, &t.to_csv())?;
            written.push(p);
        }
        let p = dir.join("report.json");
        write_text_atomic(&p, &serde_json::to_string_pretty(self)?)?;
        written.push(p);
        Ok(written)
    }
}

fn num(v: f64) -> Option<String> {
    Some(format!("{v:.4}"))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-run values of a metric; `None` when any run lacks it.
fn series<F>(sys: &SystemRuns, f: F) -> Option<Vec<f64>>
where
    F: Fn(&EvalReport) -> Option<f64>,
{
    sys.reports.iter().map(f).collect()
}

/// p-value of `sys` against `base`; a gap when either side has fewer than
/// two runs or the run counts differ.
fn p_value(base: Option<&[f64]>, sys: Option<&[f64]>) -> Option<String> {
    let (b, s) = (base?, sys?);
    if b.len() != s.len() || b.len() < 2 {
        return None;
    }
    let r = permutation_test(
        &RunSeries::new("", s.to_vec()),
        &RunSeries::new("", b.to_vec()),
        DEFAULT_ALPHA,
        DEFAULT_RESAMPLES,
        0,
    )
    .ok()?;
    Some(format!("{:.4}", r.p_value))
}

type Metric = (&'static str, fn(&EvalReport) -> Option<f64>);

fn add_metric_table(
    name: &str,
    metrics: &[Metric],
    tested: &[&str],
    systems: &[SystemRuns],
) -> Table {
    let mut header = vec!["system", "runs"];
    header.extend(metrics.iter().map(|(m, _)| *m));
    let p_cols: Vec<String> = tested.iter().map(|m| format!("p_{m}")).collect();
    header.extend(p_cols.iter().map(String::as_str));
    header.push("significant");
    let mut table = Table::new(name, &header);
    let base = &systems[0];
    for (k, sys) in systems.iter().enumerate() {
        let mut row = vec![Some(sys.name.clone()), Some(sys.reports.len().to_string())];
        for (_, f) in metrics {
            let values: Vec<f64> = sys.reports.iter().filter_map(f).collect();
            row.push(if values.len() == sys.reports.len() {
                mean(&values).and_then(num)
            } else {
                None
            });
        }
        let mut significant = Vec::new();
        for m in tested {
            let (_, f) = metrics.iter().find(|(n, _)| n == m).expect("tested metric listed");
            let p = if k == 0 {
                None
            } else {
                p_value(series(base, f).as_deref(), series(sys, f).as_deref())
            };
            if p.as_deref().and_then(|s| s.parse::<f64>().ok()).is_some_and(|p| p < DEFAULT_ALPHA) {
                significant.push(*m);
            }
            row.push(p);
        }
        row.push(if k == 0 { None } else { Some(significant.join(";")) });
        table.rows.push(row);
    }
    table
}

fn qact_f1(label: QactLabel) -> impl Fn(&EvalReport) -> Option<f64> {
    move |r| r.qact.per_label.get(&label).copied()
}

/// Long-format series (`system,<key>,f1,runs_present`) averaged over the
/// runs in which the key occurs.
fn series_table<K: Ord + Clone, F>(name: &str, key: &str, systems: &[SystemRuns], keys: F, label: fn(&K) -> String) -> Table
where
    F: Fn(&EvalReport) -> BTreeMap<K, f64>,
{
    let mut table = Table::new(name, &["system", key, "f1", "runs_present"]);
    for sys in systems {
        let mut acc: BTreeMap<K, Vec<f64>> = BTreeMap::new();
        for r in &sys.reports {
            for (k, v) in keys(r) {
                acc.entry(k).or_default().push(v);
            }
        }
        for (k, v) in acc {
            table.rows.push(vec![
                Some(sys.name.clone()),
                Some(label(&k)),
                mean(&v).and_then(num),
                Some(v.len().to_string()),
            ]);
        }
    }
    table
}

/// Builds the link-metric, QACT and structure-shape tables plus the
/// per-distance and per-depth series.
pub fn build_report(systems: &[SystemRuns]) -> Result<Report> {
    if systems.is_empty() {
        return Err(Error::Argument("no systems to report".into()));
    }
    if let Some(s) = systems.iter().find(|s| s.reports.is_empty()) {
        return Err(Error::Argument(format!("{} has no runs", s.name)));
    }
    let link: [Metric; 3] = [
        ("accuracy", |r| Some(r.accuracy)),
        ("f1_macro", |r| Some(r.f1_macro)),
        ("mar_dset", |r| Some(r.mar_dset)),
    ];
    let table1 = add_metric_table("table1_links", &link, &["accuracy", "f1_macro", "mar_dset"], systems);

    let qact: [Metric; 5] = [
        ("major_claim", |r| qact_f1(QactLabel::MajorClaim)(r)),
        ("ac_non_leaf", |r| qact_f1(QactLabel::AcNonLeaf)(r)),
        ("ac_leaf", |r| qact_f1(QactLabel::AcLeaf)(r)),
        ("non_ac", |r| qact_f1(QactLabel::NonAc)(r)),
        ("macro_f1", |r| Some(r.qact.macro_f1)),
    ];
    let table2 = add_metric_table(
        "table2_qact",
        &qact,
        &["major_claim", "ac_non_leaf", "ac_leaf", "non_ac", "macro_f1"],
        systems,
    );

    let shape: [Metric; 4] = [
        ("avg_depth", |r| Some(r.shape.avg_depth)),
        ("std_depth", |r| Some(r.shape.std_depth)),
        ("leaf_ratio", |r| Some(r.shape.leaf_ratio)),
        ("std_leaf_ratio", |r| Some(r.shape.std_leaf_ratio)),
    ];
    let mut table3 = add_metric_table("table3_shape", &shape, &["avg_depth", "leaf_ratio"], systems);
    let g = &systems[0].reports[0].gold_shape;
    let cols = table3.header.len();
    let mut gold_row = vec![Some("gold".to_string()), None];
    gold_row.extend([g.avg_depth, g.std_depth, g.leaf_ratio, g.std_leaf_ratio].map(num));
    gold_row.resize(cols, None);
    table3.rows.insert(0, gold_row);

    let fig6 = series_table(
        "fig6_distance",
        "distance",
        systems,
        |r| r.per_distance_f1.clone(),
        |d: &i64| d.to_string(),
    );
    let fig6_ranges = series_table(
        "fig6_distance_ranges",
        "range",
        systems,
        |r| r.distance_range_f1.clone(),
        |s: &String| s.clone(),
    );
    let fig7 = series_table(
        "fig7_depth",
        "depth",
        systems,
        |r| r.per_depth_f1.clone(),
        |d| d.as_str().to_string(),
    );
    Ok(Report {
        baseline: systems[0].name.clone(),
        alpha: DEFAULT_ALPHA,
        tables: vec![table1, table2, table3, fig6, fig6_ranges, fig7],
    })
}
