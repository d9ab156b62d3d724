//! Study reports and their table / JSON / markdown renderings.
//!
//! Cells use the compact uncertainty notation `a.bc(d)`: the mean to two
//! decimals followed by the standard deviation in units of the last printed
//! digit, so `4.16(3)` reads 4.16 ± 0.03 and `2.59(111)` reads 2.59 ± 1.11.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::mrengine::{Anomaly, DerivationLog, MRVerdict, MetricRecord, Records, Thresholds};
use crate::mutate::to_sorted_json;
use crate::numeric::{round_half_away, MeanStd};

pub const MISSING_CELL: &str = "-";
pub const REPORT_FILE: &str = "report.json";

/// `mean` to two decimals and `std` in hundredths, e.g. `4.16(3)`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    let cents = round_half_away(mean * 100.0);
    let digits = round_half_away(std * 100.0);
    format!("{:.2}({})", cents / 100.0, digits as u64)
}

pub fn format_cell(v: Option<MeanStd>) -> String {
    v.map_or_else(|| MISSING_CELL.to_string(), |m| format_mean_std(m.mean, m.std))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub tool_version: String,
    pub seed: u64,
    pub thresholds: Thresholds,
    pub n_splits: usize,
    /// Human-readable model and classifier descriptions.
    pub model: String,
    pub classifier: String,
}

/// A published or external figure shown for context; never evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub label: String,
    pub is_result: MeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Completed,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub name: String,
    pub status: CaseStatus,
    #[serde(default)]
    pub record: Option<MetricRecord>,
    #[serde(default)]
    pub error: Option<String>,
}

impl CaseEntry {
    pub fn completed(record: MetricRecord) -> Self {
        Self { name: record.test_case.clone(), status: CaseStatus::Completed, record: Some(record), error: None }
    }

    pub fn inconclusive(name: impl Into<String>, error: impl Into<String>) -> Self {
        Self { name: name.into(), status: CaseStatus::Inconclusive, record: None, error: Some(error.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub environment: Environment,
    #[serde(default)]
    pub references: Vec<ReferenceRow>,
    pub baseline: CaseEntry,
    pub test_cases: Vec<CaseEntry>,
    pub verdicts: Vec<MRVerdict>,
    pub anomalies: Vec<Anomaly>,
    pub derivation: DerivationLog,
}

impl StudyReport {
    /// Baseline first, then test cases in configured order.
    pub fn entries(&self) -> impl Iterator<Item = &CaseEntry> {
        std::iter::once(&self.baseline).chain(&self.test_cases)
    }

    pub fn entry(&self, name: &str) -> Option<&CaseEntry> {
        self.entries().find(|e| e.name == name)
    }

    pub fn records(&self) -> Records {
        self.entries()
            .filter_map(|e| e.record.clone())
            .map(|r| (r.test_case.clone(), r))
            .collect()
    }

    pub fn verdict(&self, mr_id: &str) -> Option<&MRVerdict> {
        self.verdicts.iter().find(|v| v.mr_id == mr_id)
    }

    /// Entry names are unique and completed entries carry a matching record.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for e in self.entries() {
            if !seen.insert(e.name.as_str()) {
                return Err(format!("test case {} appears twice", e.name));
            }
            match (&e.status, &e.record) {
                (CaseStatus::Completed, Some(r)) if r.test_case == e.name => {}
                (CaseStatus::Inconclusive, None) => {}
                _ => return Err(format!("entry {} has inconsistent status and record", e.name)),
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        to_sorted_json(self)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Json,
    Markdown,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(Format::Table),
            "json" => Ok(Format::Json),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(format!("unknown report format {other:?} (table, json, markdown)")),
        }
    }
}

pub fn render_report(r: &StudyReport, format: Format) -> String {
    match format {
        Format::Table => render_table(r),
        Format::Json => r.to_json().expect("report serializes"),
        Format::Markdown => render_markdown(r),
    }
}

struct Row {
    label: String,
    is: String,
    semantic: String,
    realistic: String,
    tint: String,
}

fn rows(r: &StudyReport) -> Vec<Row> {
    let mut out: Vec<Row> = r
        .references
        .iter()
        .map(|x| Row {
            label: x.label.clone(),
            is: format_cell(Some(x.is_result)),
            semantic: MISSING_CELL.into(),
            realistic: MISSING_CELL.into(),
            tint: MISSING_CELL.into(),
        })
        .collect();
    for e in r.entries() {
        out.push(match &e.record {
            Some(rec) => Row {
                label: e.name.clone(),
                is: format_mean_std(rec.is_result.mean, rec.is_result.std),
                semantic: format_cell(rec.likert_semantic),
                realistic: format_cell(rec.likert_realistic),
                tint: format!("{:.3}", rec.tint),
            },
            None => Row {
                label: format!("{} (inconclusive)", e.name),
                is: MISSING_CELL.into(),
                semantic: MISSING_CELL.into(),
                realistic: MISSING_CELL.into(),
                tint: MISSING_CELL.into(),
            },
        });
    }
    out
}

fn render_table(r: &StudyReport) -> String {
    let header = ["Test Cases", "IS", "Semantic Likert", "Realistic Likert", "Grey tint"];
    let body: Vec<[String; 5]> = rows(r)
        .into_iter()
        .map(|x| [x.label, x.is, x.semantic, x.realistic, x.tint])
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[&str]| -> String {
        let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", line(&header));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for row in &body {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        let _ = writeln!(out, "{}", line(&cells));
    }

    let t = r.environment.thresholds;
    let _ = writeln!(out, "\nVerdicts (epsilon_is = {:.2}, tau_tint = {:.2})", t.epsilon_is, t.tau_tint);
    let id_w = r.verdicts.iter().map(|v| v.mr_id.len()).max().unwrap_or(0);
    for v in &r.verdicts {
        let _ = write!(out, "  {:<id_w$}  {}", v.mr_id, v.outcome);
        if !v.groups.is_empty() {
            let groups: Vec<String> = v.groups.iter().map(|(g, o)| format!("{g}: {o}")).collect();
            let _ = write!(out, "  [{}]", groups.join(", "));
        }
        if !v.missing.is_empty() {
            let _ = write!(out, "  missing: {}", v.missing.join(", "));
        }
        out.push('\n');
    }
    if !r.anomalies.is_empty() {
        let _ = writeln!(out, "\nAnomalies");
        for a in &r.anomalies {
            let _ = writeln!(out, "  - {a}");
        }
    }
    let failed: Vec<&CaseEntry> = r.entries().filter(|e| e.status == CaseStatus::Inconclusive).collect();
    if !failed.is_empty() {
        let _ = writeln!(out, "\nInconclusive test cases");
        for e in failed {
            let _ = writeln!(out, "  - {}: {}", e.name, e.error.as_deref().unwrap_or("no record"));
        }
    }
    out
}

fn render_markdown(r: &StudyReport) -> String {
    let env = &r.environment;
    let mut out = String::from("# Metamorphic study report\n\n");
    let _ = writeln!(out, "- tool: {}", env.tool_version);
    let _ = writeln!(out, "- seed: {}", env.seed);
    let _ = writeln!(
        out,
        "- thresholds: epsilon_is = {}, tau_tint = {}",
        env.thresholds.epsilon_is, env.thresholds.tau_tint
    );
    let _ = writeln!(out, "- IS splits: {}", env.n_splits);
    let _ = writeln!(out, "- model: {}", env.model);
    let _ = writeln!(out, "- classifier: {}", env.classifier);
    out.push_str("- grey tint is measured as 1 - mean HSV saturation of the generated images\n\n");

    out.push_str("## Results\n\n");
    out.push_str("| Test Cases | IS | Semantic Likert | Realistic Likert | Grey tint |\n");
    out.push_str("|---|---|---|---|---|\n");
    for x in rows(r) {
        let _ = writeln!(out, "| {} | {} | {} | {} | {} |", x.label, x.is, x.semantic, x.realistic, x.tint);
    }

    out.push_str("\n## Verdicts\n\n| MR | Outcome | Groups | Missing |\n|---|---|---|---|\n");
    for v in &r.verdicts {
        let groups: Vec<String> = v.groups.iter().map(|(g, o)| format!("{g}: {o}")).collect();
        let _ = writeln!(out, "| {} | {} | {} | {} |", v.mr_id, v.outcome, groups.join(", "), v.missing.join(", "));
    }
    if !r.anomalies.is_empty() {
        out.push_str("\n## Anomalies\n\n");
        for a in &r.anomalies {
            let _ = writeln!(out, "- {a}");
        }
    }

    out.push_str("\n## Chart data\n\n");
    out.push_str("Bar-chart series of the evaluated test cases, one point per case.\n\n```json\n");
    let series = |f: &dyn Fn(&MetricRecord) -> serde_json::Value| -> Vec<serde_json::Value> {
        r.entries()
            .filter_map(|e| e.record.as_ref())
            .map(|rec| json!({ "test_case": rec.test_case, "value": f(rec) }))
            .collect()
    };
    let charts = json!({
        "inception_score": series(&|rec| json!({ "mean": rec.is_result.mean, "std": rec.is_result.std })),
        "grey_tint": series(&|rec| json!(rec.tint)),
    });
    out.push_str(&serde_json::to_string_pretty(&charts).expect("chart data serializes"));
    out.push_str("\n```\n\n");
    out.push_str(&r.derivation.to_markdown());
    out
}
