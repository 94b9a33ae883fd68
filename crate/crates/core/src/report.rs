//! Result tables: model performance, human comparison, ICC, error
//! distributions and sample-efficiency curves.
//!
//! A [`ReportDocument`] is a list of labelled columns of typed cells. Cell
//! types carry their own precision: percentages and millimeters to two
//! decimals, normalized distances to three significant figures. Rounding is
//! half-to-even on the exact binary value.

use crate::agreement::{HumanBaseline, IccResult};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, MM_PER_DIAGONAL};
use crate::model::{KeypointId, NUM_KEYPOINTS};
use crate::stats::OrderStats;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Performance,
    HumanComparison,
    Icc,
    ErrorDistribution,
    SampleEfficiency,
}

impl FromStr for ReportKind {
    type Err = Error;

    /// Accepts both kind names and the table/figure aliases used on the
    /// command line.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "performance" | "table1" => ReportKind::Performance,
            "human_comparison" | "table2" => ReportKind::HumanComparison,
            "icc" | "table3" => ReportKind::Icc,
            "error_distribution" | "fig4" => ReportKind::ErrorDistribution,
            "sample_efficiency" | "fig6" => ReportKind::SampleEfficiency,
            other => return Err(Error::InvalidInput(format!("unknown report kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Text,
    Markdown,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "txt" | "text" => Ok(Format::Text),
            "md" | "markdown" => Ok(Format::Markdown),
            other => Err(Error::InvalidInput(format!("unsupported format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Text(String),
    Percent(f64),
    Normalized(f64),
    Millimeters(f64),
    Milliseconds(f64),
    Count(u64),
    Coefficient { value: f64, lo: Option<f64>, hi: Option<f64> },
    Missing,
}

/// Formats with three significant figures.
pub fn format_sig3(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (2 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // Rounding may carry into the next decade (0.009996 -> 0.01000).
    match s.parse::<f64>() {
        Ok(r) if decimals > 0 && r.abs() >= 10f64.powi(exp + 1) => format!("{v:.prec$}", prec = decimals - 1),
        _ => s,
    }
}

impl Cell {
    fn is_numeric(&self) -> bool {
        !matches!(self, Cell::Text(_) | Cell::Missing)
    }

    fn render(&self, decorate: bool) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Percent(v) if decorate => format!("{v:.2}%"),
            Cell::Percent(v) | Cell::Millimeters(v) | Cell::Milliseconds(v) => format!("{v:.2}"),
            Cell::Normalized(v) => format_sig3(*v),
            Cell::Count(n) => n.to_string(),
            Cell::Coefficient { value, lo: Some(lo), hi: Some(hi) } => format!("{value:.2} [{lo:.2}, {hi:.2}]"),
            Cell::Coefficient { value, .. } => format!("{value:.2}"),
            Cell::Missing => "-".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub label: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub kind: ReportKind,
    pub columns: Vec<Column>,
}

impl ReportDocument {
    pub fn new(kind: ReportKind, labels: &[&str]) -> Self {
        ReportDocument {
            kind,
            columns: labels.iter().map(|l| Column { label: l.to_string(), cells: Vec::new() }).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.cells.len())
    }

    pub fn push_row(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the column count");
        for (col, cell) in self.columns.iter_mut().zip(row) {
            col.cells.push(cell);
        }
    }

    pub fn column(&self, label: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.label == label)
    }

    fn rows(&self) -> impl Iterator<Item = Vec<&Cell>> + '_ {
        (0..self.n_rows()).map(move |i| self.columns.iter().map(|c| &c.cells[i]).collect())
    }
}

/// Declared and measured efficiency figures for one model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Efficiency {
    pub resolution: Option<(u32, u32)>,
    pub params: Option<u64>,
    pub flops: Option<u64>,
    pub latency_ms: Option<f64>,
}

/// Everything a report may be built from; each kind uses a subset.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub reports: Vec<MetricReport>,
    pub efficiency: Vec<Efficiency>,
    pub baseline: Option<HumanBaseline>,
    pub icc: Vec<(String, IccResult)>,
    pub distributions: Vec<(String, Vec<(KeypointId, OrderStats)>)>,
    /// (model, training frames, mean normalized error)
    pub sample_efficiency: Vec<(String, usize, f64)>,
}

fn missing(what: &str) -> Error {
    Error::InvalidInput(format!("missing input: {what}"))
}

fn opt<T>(v: Option<T>, f: impl FnOnce(T) -> Cell) -> Cell {
    v.map_or(Cell::Missing, f)
}

pub fn generate_report(kind: ReportKind, inputs: &ReportInputs) -> Result<ReportDocument> {
    match kind {
        ReportKind::Performance => performance(inputs),
        ReportKind::HumanComparison => human_comparison(inputs),
        ReportKind::Icc => icc_table(inputs),
        ReportKind::ErrorDistribution => error_distribution(inputs),
        ReportKind::SampleEfficiency => sample_efficiency(inputs),
    }
}

fn tau_label(tau: f64) -> String {
    format!("PCK_h@{}", (tau * 100.0).round())
}

fn performance(inputs: &ReportInputs) -> Result<ReportDocument> {
    if inputs.reports.is_empty() {
        return Err(missing("metric reports"));
    }
    let taus: Vec<f64> = inputs.reports[0].pckh.iter().map(|t| t.tau).collect();
    let mut labels = vec!["Model".to_string(), "Resolution".to_string()];
    labels.extend(taus.iter().map(|t| tau_label(*t)));
    labels.extend(["ME", "ME (mm)", "Parameters", "FLOPs", "Latency (ms)"].map(String::from));
    let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
    let mut doc = ReportDocument::new(ReportKind::Performance, &labels);
    for (i, r) in inputs.reports.iter().enumerate() {
        let eff = inputs.efficiency.get(i).cloned().unwrap_or_default();
        let mut row = vec![
            Cell::Text(r.model_id.clone()),
            opt(eff.resolution, |(w, h)| Cell::Text(format!("{w}x{h}"))),
        ];
        for &tau in &taus {
            row.push(opt(r.pckh_at(tau), |s| Cell::Percent(s.overall)));
        }
        row.extend([
            Cell::Normalized(r.me.overall),
            Cell::Millimeters(r.me.overall * MM_PER_DIAGONAL),
            opt(eff.params, Cell::Count),
            opt(eff.flops, Cell::Count),
            opt(eff.latency_ms, Cell::Milliseconds),
        ]);
        doc.push_row(row);
    }
    Ok(doc)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn human_comparison(inputs: &ReportInputs) -> Result<ReportDocument> {
    let baseline = inputs.baseline.as_ref().ok_or_else(|| missing("human baseline"))?;
    let mut labels = vec![
        "Body keypoint".to_string(),
        "H_b".into(),
        "H_b (mm)".into(),
        "H_b^95".into(),
        "H_b^95 (mm)".into(),
    ];
    let mut pck = Vec::new();
    for r in &inputs.reports {
        let scores = r
            .pck_human95
            .as_ref()
            .ok_or_else(|| missing(&format!("PCK@Human95 for {}", r.model_id)))?;
        pck.push(scores.per_keypoint);
        labels.push(format!("{} PCK@Human95", r.model_id));
        labels.push(format!("{} ME-H (mm)", r.model_id));
    }
    let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
    let mut doc = ReportDocument::new(ReportKind::HumanComparison, &labels);

    let h: Vec<f64> = baseline.per_keypoint.iter().map(|s| s.h).collect();
    let h95: Vec<f64> = baseline.per_keypoint.iter().map(|s| s.h95).collect();
    let diffs: Vec<Vec<f64>> = inputs
        .reports
        .iter()
        .map(|r| (0..NUM_KEYPOINTS).map(|i| (r.me.per_keypoint[i] - h[i]) * MM_PER_DIAGONAL).collect())
        .collect();

    let row = |label: String, h: f64, h95: f64, models: Vec<(f64, f64)>| {
        let mut row = vec![
            Cell::Text(label),
            Cell::Normalized(h),
            Cell::Millimeters(h * MM_PER_DIAGONAL),
            Cell::Normalized(h95),
            Cell::Millimeters(h95 * MM_PER_DIAGONAL),
        ];
        for (p, d) in models {
            row.push(Cell::Percent(p));
            row.push(Cell::Millimeters(d));
        }
        row
    };
    for k in KeypointId::ALL {
        let i = k.index();
        let models = pck.iter().zip(&diffs).map(|(p, d)| (p[i], d[i])).collect();
        doc.push_row(row(k.label().into(), h[i], h95[i], models));
    }
    let models = pck.iter().zip(&diffs).map(|(p, d)| (mean(p), mean(d))).collect();
    doc.push_row(row("All body parts".into(), mean(&h), mean(&h95), models));
    Ok(doc)
}

fn icc_table(inputs: &ReportInputs) -> Result<ReportDocument> {
    if inputs.icc.is_empty() {
        return Err(missing("ICC results"));
    }
    let mut labels = vec!["Coefficient"];
    labels.extend(inputs.icc.iter().map(|(m, _)| m.as_str()));
    let mut doc = ReportDocument::new(ReportKind::Icc, &labels);
    let coefficient = |v: f64, ci: Option<crate::agreement::Interval>| Cell::Coefficient {
        value: v,
        lo: ci.map(|c| c.lo),
        hi: ci.map(|c| c.hi),
    };
    let mut a = vec![Cell::Text("ICC(A,1)".into())];
    let mut c = vec![Cell::Text("ICC(C,1)".into())];
    for (_, r) in &inputs.icc {
        a.push(coefficient(r.icc_a1, r.ci_a1));
        c.push(coefficient(r.icc_c1, r.ci_c1));
    }
    doc.push_row(a);
    doc.push_row(c);
    Ok(doc)
}

fn error_distribution(inputs: &ReportInputs) -> Result<ReportDocument> {
    if inputs.distributions.is_empty() {
        return Err(missing("error distributions"));
    }
    let mut doc = ReportDocument::new(
        ReportKind::ErrorDistribution,
        &["Source", "Body keypoint", "Min", "P25", "Median", "P75", "P95", "Max"],
    );
    for (source, stats) in &inputs.distributions {
        for (k, s) in stats {
            doc.push_row(vec![
                Cell::Text(source.clone()),
                Cell::Text(k.label().into()),
                Cell::Normalized(s.min),
                Cell::Normalized(s.p25),
                Cell::Normalized(s.median),
                Cell::Normalized(s.p75),
                Cell::Normalized(s.p95),
                Cell::Normalized(s.max),
            ]);
        }
    }
    Ok(doc)
}

fn sample_efficiency(inputs: &ReportInputs) -> Result<ReportDocument> {
    if inputs.sample_efficiency.is_empty() {
        return Err(missing("sample-efficiency series"));
    }
    let mut doc = ReportDocument::new(ReportKind::SampleEfficiency, &["Model", "Training frames", "ME", "ME (mm)"]);
    let mut points = inputs.sample_efficiency.clone();
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    for (model, size, me) in points {
        doc.push_row(vec![
            Cell::Text(model),
            Cell::Count(size as u64),
            Cell::Normalized(me),
            Cell::Millimeters(me * MM_PER_DIAGONAL),
        ]);
    }
    Ok(doc)
}

pub fn render(doc: &ReportDocument, format: Format) -> Vec<u8> {
    match format {
        Format::Csv => render_csv(doc),
        Format::Text => render_text(doc).into_bytes(),
        Format::Markdown => render_markdown(doc).into_bytes(),
    }
}

fn render_csv(doc: &ReportDocument) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(doc.columns.iter().map(|c| c.label.as_str())).expect("in-memory write");
    for row in doc.rows() {
        w.write_record(row.iter().map(|c| c.render(false))).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn render_text(doc: &ReportDocument) -> String {
    let rendered: Vec<Vec<String>> = doc.rows().map(|r| r.iter().map(|c| c.render(true)).collect()).collect();
    let widths: Vec<usize> = doc
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| rendered.iter().map(|r| r[j].chars().count()).chain([c.label.chars().count()]).max().unwrap_or(0))
        .collect();
    let numeric: Vec<bool> = doc.columns.iter().map(|c| c.cells.iter().any(Cell::is_numeric)).collect();
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (j, cell) in cells.iter().enumerate() {
            if j > 0 {
                s.push_str("  ");
            }
            let pad = widths[j] - cell.chars().count();
            if numeric[j] {
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            } else {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            }
        }
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    };
    let mut out = line(doc.columns.iter().map(|c| c.label.as_str()).collect());
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    for r in &rendered {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn render_markdown(doc: &ReportDocument) -> String {
    let escape = |s: &str| s.replace('|', "\\|");
    let mut out = String::new();
    let header: Vec<String> = doc.columns.iter().map(|c| escape(&c.label)).collect();
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let align: Vec<&str> = doc
        .columns
        .iter()
        .map(|c| if c.cells.iter().any(Cell::is_numeric) { "---:" } else { "---" })
        .collect();
    let _ = writeln!(out, "| {} |", align.join(" | "));
    for row in doc.rows() {
        let cells: Vec<String> = row.iter().map(|c| escape(&c.render(true))).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}
