//! JSON and aligned-column CSV outputs.
//!
//! CSV files are comma separated with cells padded to a common column
//! width, so they read as tables and still parse once cells are trimmed.
//! Lines starting with `#` are comments.

use std::fs;
use std::path::Path;

use gcfc_core::ablation::AblationReport;
use gcfc_core::metrics::Metrics;
use gcfc_core::trainer::History;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Comma-separated table whose columns are padded to equal width; the
/// first column is left aligned, the rest right aligned.
pub fn aligned_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join(", ").trim_end().to_string() + "\n"
    };
    let mut out = line(&mut header.iter().copied());
    for r in rows {
        out += &line(&mut r.iter().map(String::as_str));
    }
    out
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

pub fn history_csv(history: &History) -> String {
    let aux_names: Vec<String> = history
        .epochs
        .first()
        .map(|e| e.train_aux.iter().map(|(t, _)| format!("aux_{}", t.key())).collect())
        .unwrap_or_default();
    let mut header = vec!["epoch", "train_loss", "train_cls"];
    header.extend(aux_names.iter().map(String::as_str));
    header.extend(["valid_accuracy", "valid_weighted_f1", "valid_macro_f1"]);
    let rows: Vec<Vec<String>> = history
        .epochs
        .iter()
        .map(|e| {
            let mut r = vec![e.epoch.to_string(), f(e.train_loss), f(e.train_cls)];
            r.extend(e.train_aux.iter().map(|(_, v)| f(*v)));
            r.extend([f(e.valid_accuracy), f(e.valid_weighted_f1), f(e.valid_macro_f1)]);
            r
        })
        .collect();
    let mut out = aligned_csv(&header, &rows);
    out += &format!(
        "# best_epoch {}{}\n",
        history.best_epoch,
        if history.stopped_early { ", stopped early" } else { "" }
    );
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Evaluation scores with per-class rows keyed by label name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub utterances: u64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassRow>,
    /// Rows are true classes, columns predictions, in label order.
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn new(metrics: &Metrics, labels: &[String]) -> Self {
        MetricsReport {
            utterances: metrics.confusion.total(),
            accuracy: metrics.accuracy,
            weighted_f1: metrics.weighted_f1,
            macro_f1: metrics.macro_f1,
            per_class: metrics
                .per_class
                .iter()
                .zip(labels)
                .map(|(s, l)| ClassRow {
                    label: l.clone(),
                    precision: s.precision,
                    recall: s.recall,
                    f1: s.f1,
                    support: s.support,
                })
                .collect(),
            confusion: metrics.confusion.counts.clone(),
        }
    }

    /// One row per class, then the weighted and macro averages.
    pub fn csv(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .per_class
            .iter()
            .map(|c| {
                vec![
                    c.label.clone(),
                    f(c.precision),
                    f(c.recall),
                    f(c.f1),
                    c.support.to_string(),
                ]
            })
            .collect();
        let total: u64 = self.per_class.iter().map(|c| c.support).sum();
        let avg = |w: &dyn Fn(&ClassRow) -> f64, pick: &dyn Fn(&ClassRow) -> f64| {
            let den: f64 = self.per_class.iter().map(w).sum();
            if den == 0.0 {
                0.0
            } else {
                self.per_class.iter().map(|c| w(c) * pick(c)).sum::<f64>() / den
            }
        };
        let by_support = |c: &ClassRow| c.support as f64;
        let uniform = |_: &ClassRow| 1.0;
        rows.push(vec![
            "weighted avg".into(),
            f(avg(&by_support, &|c| c.precision)),
            f(avg(&by_support, &|c| c.recall)),
            f(self.weighted_f1),
            total.to_string(),
        ]);
        rows.push(vec![
            "macro avg".into(),
            f(avg(&uniform, &|c| c.precision)),
            f(avg(&uniform, &|c| c.recall)),
            f(self.macro_f1),
            total.to_string(),
        ]);
        let mut out = aligned_csv(&["class", "precision", "recall", "f1", "support"], &rows);
        out += &format!("# accuracy {}\n", f(self.accuracy));
        out
    }
}

pub fn ablation_csv(report: &AblationReport) -> String {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.classes.to_string(),
                f(r.accuracy),
                f(r.weighted_f1),
                f(r.valid_weighted_f1),
            ]
        })
        .collect();
    let mut out = aligned_csv(
        &[
            "config",
            "classes",
            "test_accuracy",
            "test_weighted_f1",
            "valid_weighted_f1",
        ],
        &rows,
    );
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    out += &format!("# study {}, mean over seeds {}\n", report.study, seeds.join(" "));
    for w in &report.warnings {
        out += &format!("# WARNING {w}\n");
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::write(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::write(path, e.into()))?;
    text.push('\n');
    write_text(path, &text)
}
