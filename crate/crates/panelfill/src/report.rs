//! Monte Carlo reports: JSON and aligned text.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// One aggregated cell: an estimator evaluated on one target.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub target: String,
    /// Replications (times elements, for vector measures) entering the aggregates.
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ase: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q05: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q95: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub schema: u32,
    pub study: String,
    pub replications: usize,
    pub effective: usize,
    pub failed: usize,
    /// Left out of the JSON unless timing was requested, so reports stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
    pub config: BTreeMap<String, String>,
    pub rows: Vec<McRow>,
}

impl McReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn find(&self, method: &str, variant: Option<&str>, target: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| {
            r.method.eq_ignore_ascii_case(method)
                && r.target == target
                && variant.is_none_or(|v| r.variant.as_deref().is_some_and(|rv| rv.eq_ignore_ascii_case(v)))
        })
    }

    /// Aligned text table; imputation and risk studies are pivoted with targets as columns.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} study: {} of {} replications ({} failed)",
            self.study, self.effective, self.replications, self.failed
        );
        match self.study.as_str() {
            "imputation" => {
                out.push_str("RMSE\n");
                out.push_str(&self.pivot(|r| r.rmse));
            }
            "risk" => {
                out.push_str("bias\n");
                out.push_str(&self.pivot(|r| r.bias));
                out.push_str("RMSE\n");
                out.push_str(&self.pivot(|r| r.rmse));
            }
            _ => out.push_str(&self.long_table()),
        }
        out
    }

    fn row_label(r: &McRow) -> String {
        match &r.variant {
            Some(v) => format!("{} {}", r.method, v),
            None => r.method.clone(),
        }
    }

    fn pivot(&self, value: impl Fn(&McRow) -> Option<f64>) -> String {
        let mut targets: Vec<&str> = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        for r in &self.rows {
            if !targets.contains(&r.target.as_str()) {
                targets.push(&r.target);
            }
            let l = Self::row_label(r);
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        let mut cells = vec![vec![String::new(); targets.len()]; labels.len()];
        for r in &self.rows {
            let a = labels.iter().position(|l| *l == Self::row_label(r)).unwrap();
            let b = targets.iter().position(|t| *t == r.target).unwrap();
            cells[a][b] = value(r).map_or_else(|| "-".into(), |v| format!("{v:.3}"));
        }
        let mut header = vec![String::new()];
        header.extend(targets.iter().map(|t| t.to_string()));
        let body: Vec<Vec<String>> = labels
            .into_iter()
            .zip(cells)
            .map(|(l, c)| std::iter::once(l).chain(c).collect())
            .collect();
        align(&header, &body)
    }

    fn long_table(&self) -> String {
        let fields: [(&str, fn(&McRow) -> Option<f64>); 9] = [
            ("truth", |r| r.truth),
            ("mean", |r| r.mean),
            ("sd", |r| r.sd),
            ("ase", |r| r.mean_ase),
            ("q05", |r| r.q05),
            ("q95", |r| r.q95),
            ("coverage", |r| r.coverage),
            ("pred.cov", |r| r.prediction_coverage),
            ("rmse", |r| r.rmse),
        ];
        let used: Vec<_> = fields
            .iter()
            .filter(|(_, f)| self.rows.iter().any(|r| f(r).is_some()))
            .collect();
        let mut header = vec!["target".to_string(), "method".to_string()];
        header.extend(used.iter().map(|(n, _)| n.to_string()));
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.target.clone(), Self::row_label(r)];
                row.extend(used.iter().map(|(_, f)| f(r).map_or_else(|| "-".into(), |v| format!("{v:.3}"))));
                row
            })
            .collect();
        align(&header, &body)
    }
}

fn align(header: &[String], body: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(header).chain(body.iter().map(|r| r.as_slice())) {
        let line: Vec<String> = (0..cols)
            .map(|k| {
                if k == 0 {
                    format!("{:<w$}", row[k], w = widths[k])
                } else {
                    format!("{:>w$}", row[k], w = widths[k])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
