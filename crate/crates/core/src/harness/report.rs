//! Report rendering: JSON, CSV and aligned text tables with a fixed column
//! order and four-decimal reals.

use serde::{Deserialize, Serialize};

use crate::metrics::{DocScore, EvalReport};

pub const COLUMNS: [&str; 9] = ["dataset", "model", "prompt", "P", "R", "F1", "F1@5", "F1@10", "N_EX"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Table,
}

/// Pads every column to its widest cell; numeric-looking cells are
/// right-aligned.
pub fn aligned_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i >= widths.len() {
                widths.push(0);
            }
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let render = |cells: &[String]| -> String {
        let line: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if c.parse::<f64>().is_ok() {
                    format!("{c:>w$}", w = widths[i])
                } else {
                    format!("{c:<w$}", w = widths[i])
                }
            })
            .collect();
        line.join("  ").trim_end().to_string()
    };
    let mut out = render(header);
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&rule.join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&render(row));
        out.push('\n');
    }
    out
}

pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    pub prompt: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_at_5: f64,
    pub f1_at_10: f64,
    pub n_ex: f64,
}

impl ReportRow {
    pub fn from_report(report: &EvalReport) -> Self {
        ReportRow {
            dataset: report.split_name.clone(),
            model: report.model_id.clone(),
            prompt: report.template_name.clone(),
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            f1_at_5: report.f1_at_5,
            f1_at_10: report.f1_at_10,
            n_ex: report.n_ex,
        }
    }

    fn cells(&self) -> Vec<String> {
        let mut cells = vec![self.dataset.clone(), self.model.clone(), self.prompt.clone()];
        cells.extend(
            [
                self.precision,
                self.recall,
                self.f1,
                self.f1_at_5,
                self.f1_at_10,
                self.n_ex,
            ]
            .iter()
            .map(|v| format!("{v:.4}")),
        );
        cells
    }
}

/// Rows of a sweep; failed runs keep their identity and an error message.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultsEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsEntry {
    pub dataset: String,
    pub model: String,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<ReportRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultsTable {
    pub fn push_report(&mut self, report: &EvalReport) {
        let row = ReportRow::from_report(report);
        self.rows.push(ResultsEntry {
            dataset: row.dataset.clone(),
            model: row.model.clone(),
            prompt: row.prompt.clone(),
            row: Some(row),
            error: None,
        });
    }

    pub fn push_error(&mut self, dataset: &str, model: &str, prompt: &str, error: String) {
        self.rows.push(ResultsEntry {
            dataset: dataset.to_string(),
            model: model.to_string(),
            prompt: prompt.to_string(),
            row: None,
            error: Some(error),
        });
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|e| match &e.row {
                Some(row) => {
                    let mut c = row.cells();
                    c.push(String::new());
                    c
                }
                None => {
                    let mut c = vec![e.dataset.clone(), e.model.clone(), e.prompt.clone()];
                    c.extend(std::iter::repeat_n("-".to_string(), 6));
                    c.push(e.error.clone().unwrap_or_default());
                    c
                }
            })
            .collect()
    }

    fn header() -> Vec<String> {
        COLUMNS
            .iter()
            .map(|c| c.to_string())
            .chain(["error".to_string()])
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(Self::header()).expect("in-memory write");
        for row in self.cells() {
            wtr.write_record(row).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn to_table(&self) -> String {
        aligned_table(&Self::header(), &self.cells())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }
}

fn rounded(report: &EvalReport) -> EvalReport {
    let map4 = |m: &std::collections::BTreeMap<usize, f64>| m.iter().map(|(k, v)| (*k, round4(*v))).collect();
    EvalReport {
        precision: round4(report.precision),
        recall: round4(report.recall),
        f1: round4(report.f1),
        f1_at_5: round4(report.f1_at_5),
        f1_at_10: round4(report.f1_at_10),
        n_ex: round4(report.n_ex),
        per_doc: report
            .per_doc
            .iter()
            .map(|d| DocScore {
                doc_id: d.doc_id.clone(),
                p: round4(d.p),
                r: round4(d.r),
                f1: round4(d.f1),
                p_at: map4(&d.p_at),
                r_at: map4(&d.r_at),
                f1_at: map4(&d.f1_at),
                n_predicted: d.n_predicted,
            })
            .collect(),
        ..report.clone()
    }
}

/// Deterministic rendering of one report.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(&rounded(report)).expect("report serializes") + "\n",
        ReportFormat::Csv | ReportFormat::Table => {
            let mut table = ResultsTable::default();
            table.push_report(report);
            let header: Vec<String> = COLUMNS.iter().map(|c| c.to_string()).collect();
            let cells: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|e| e.row.as_ref().expect("row").cells())
                .collect();
            if format == ReportFormat::Table {
                aligned_table(&header, &cells)
            } else {
                let mut wtr = csv::Writer::from_writer(Vec::new());
                wtr.write_record(&header).expect("in-memory write");
                for row in cells {
                    wtr.write_record(row).expect("in-memory write");
                }
                String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
            }
        }
    }
}
