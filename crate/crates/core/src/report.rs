//! Result tables: CSV for machines, aligned text for people.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{GridReport, OrderingReport, SCHEMA_VERSION};
use crate::fusion::FusionKind;
use crate::metrics::MetricsReport;
use crate::models::enumerate_pairs;
use crate::training::AggregateReport;

/// Everything written to `results.json`; `report` re-renders from it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultsFile {
    pub schema: u32,
    pub experiment: String,
    pub rows: Vec<AggregateReport>,
    #[serde(default)]
    pub grid: Option<GridReport>,
    #[serde(default)]
    pub ordering: Option<OrderingReport>,
}

impl ResultsFile {
    pub fn new(experiment: &str, rows: Vec<AggregateReport>) -> Self {
        ResultsFile {
            schema: SCHEMA_VERSION,
            experiment: experiment.into(),
            rows,
            grid: None,
            ordering: None,
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let file: ResultsFile = serde_json::from_slice(&fs::read(dir.join("results.json"))?)?;
        if file.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("results schema {} is not {SCHEMA_VERSION}", file.schema)));
        }
        Ok(file)
    }

    /// Writes results.json, results.csv, results.txt and, for grids,
    /// matrix.csv.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.json"), serde_json::to_vec_pretty(self)?)?;
        fs::write(dir.join("results.csv"), rows_csv(&self.experiment, &self.rows)?)?;
        fs::write(dir.join("results.txt"), self.render())?;
        if let Some(grid) = &self.grid {
            fs::write(dir.join("matrix.csv"), grid_csv(grid)?)?;
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = rows_text(&self.rows);
        if let Some(grid) = &self.grid {
            s.push('\n');
            s.push_str(&grid_text(grid));
        }
        if let Some(o) = &self.ordering {
            s.push('\n');
            s.push_str(&ordering_text(o));
        }
        s
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

/// Long-form table: one row per configuration, mean and std per metric.
pub fn rows_csv(experiment: &str, rows: &[AggregateReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["schema".to_string(), "experiment".into(), "label".into(), "parameters".into(), "seeds".into()];
    for f in MetricsReport::FIELDS {
        header.push(format!("{f}_mean"));
        header.push(format!("{f}_std"));
    }
    header.push("min_tuning_recall".into());
    w.write_record(&header).map_err(csv_error)?;
    for r in rows {
        let mut rec = vec![
            SCHEMA_VERSION.to_string(),
            experiment.to_string(),
            r.label.clone(),
            r.parameters.to_string(),
            r.runs.len().to_string(),
        ];
        for m in &r.summary {
            rec.push(format!("{:.6}", m.mean));
            rec.push(format!("{:.6}", m.std));
        }
        rec.push(format!("{:.6}", min_tuning_recall(r)));
        w.write_record(&rec).map_err(csv_error)?;
    }
    finish(w)
}

/// Lowest validation fraud recall at the tuned threshold over all seeds.
pub fn min_tuning_recall(r: &AggregateReport) -> f64 {
    r.runs.iter().map(|s| s.report.tuning_recall).fold(f64::INFINITY, f64::min)
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = widths[c] - s.chars().count();
                if c == 0 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn pm(r: &AggregateReport, field: &str) -> String {
    let m = r.get(field).expect("known field");
    if r.runs.len() > 1 {
        format!("{:.3}±{:.3}", m.mean, m.std)
    } else {
        format!("{:.3}", m.mean)
    }
}

/// Results-table layout: PR AUC, Bal. Acc., then P/R/F1 per class.
pub fn rows_text(rows: &[AggregateReport]) -> String {
    let mut t = vec![[
        "Features", "Params", "PR AUC", "Bal. Acc.", "Thr.", "F P", "F R", "F F1", "NF P", "NF R", "NF F1",
    ]
    .map(String::from)
    .to_vec()];
    for r in rows {
        let mut line = vec![r.label.clone(), r.parameters.to_string()];
        for f in [
            "pr_auc",
            "balanced_accuracy",
            "threshold",
            "fraud_precision",
            "fraud_recall",
            "fraud_f1",
            "not_fraud_precision",
            "not_fraud_recall",
            "not_fraud_f1",
        ] {
            line.push(pm(r, f));
        }
        t.push(line);
    }
    align(&t)
}

/// Mean and std PR AUC, one row per pair, two columns per strategy.
pub fn grid_csv(grid: &GridReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["schema".to_string(), "pair".into()];
    for k in FusionKind::ALL {
        header.push(format!("{}_mean", k.slug()));
        header.push(format!("{}_std", k.slug()));
    }
    w.write_record(&header).map_err(csv_error)?;
    for (pair, row) in grid_rows(grid) {
        let mut rec = vec![SCHEMA_VERSION.to_string(), pair];
        for cell in row {
            match cell {
                Some(m) => {
                    rec.push(format!("{:.6}", m.0));
                    rec.push(format!("{:.6}", m.1));
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    finish(w)
}

type GridRow = (String, Vec<Option<(f64, f64)>>);

fn grid_rows(grid: &GridReport) -> Vec<GridRow> {
    enumerate_pairs()
        .into_iter()
        .map(|pair| {
            let cells = FusionKind::ALL
                .into_iter()
                .map(|kind| {
                    grid.get(crate::experiment::GridCell { pair, kind }).map(|r| (r.pr_auc().mean, r.pr_auc().std))
                })
                .collect();
            (format!("{} × {}", pair.0, pair.1), cells)
        })
        .collect()
}

/// Two panels: visual × tabular pairs, then pairs with text.
pub fn grid_text(grid: &GridReport) -> String {
    let rows = grid_rows(grid);
    let mut out = String::new();
    for (title, panel) in [("Visual × tabular", &rows[..4]), ("With text", &rows[4..])] {
        let mut t = vec![std::iter::once(title.to_string()).chain(FusionKind::ALL.iter().map(|k| k.name().to_string())).collect::<Vec<_>>()];
        for (pair, cells) in panel {
            let mut line = vec![pair.clone()];
            line.extend(cells.iter().map(|c| match c {
                Some((m, s)) => format!("{m:.3}±{s:.3}"),
                None => "-".into(),
            }));
            t.push(line);
        }
        out.push_str(&align(&t));
        out.push('\n');
    }
    out
}

pub fn ordering_text(o: &OrderingReport) -> String {
    let rows = [
        ("Unimodal best", o.best_unimodal()),
        ("Bimodal best", o.best_bimodal()),
        ("AutoFraudNet", &o.autofraudnet),
        ("AutoFraudNet + Heads", &o.autofraudnet_heads),
    ];
    let mut t = vec![vec!["Stage".to_string(), "Model".into(), "PR AUC".into()]];
    for (stage, r) in rows {
        t.push(vec![stage.into(), r.label.clone(), pm(r, "pr_auc")]);
    }
    align(&t)
}

/// Appends `lines` to `path`, one per line.
pub fn append_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}
