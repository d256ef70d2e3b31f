//! Violation reports: grouped counters sorted by violation proportion and
//! rendered as JSON, CSV or Markdown.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::engine::{Counters, VerdictSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    ByTransformation,
    BySourceInput,
    ByContext,
    ByInsertionPair,
    ByLanguage,
}

impl Grouping {
    pub fn name(self) -> &'static str {
        match self {
            Grouping::ByTransformation => "by_transformation",
            Grouping::BySourceInput => "by_source_input",
            Grouping::ByContext => "by_context",
            Grouping::ByInsertionPair => "by_insertion_pair",
            Grouping::ByLanguage => "by_language",
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    #[serde(alias = "md")]
    Markdown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub key: String,
    pub counters: Counters,
}

impl ReportRow {
    /// Violation proportion, 0 when nothing was decided.
    pub fn proportion(&self) -> f64 {
        self.counters.proportion().unwrap_or(0.0)
    }

    pub fn zero_denominator(&self) -> bool {
        self.counters.denominator() == 0
    }

    /// The proportion as an exact fraction.
    fn ratio(&self) -> (u128, u128) {
        match self.counters.denominator() {
            0 => (0, 1),
            d => (u128::from(self.counters.violated), u128::from(d)),
        }
    }
}

/// Descending proportion, compared exactly, then ascending key.
fn row_order(a: &ReportRow, b: &ReportRow) -> Ordering {
    let (an, ad) = a.ratio();
    let (bn, bd) = b.ratio();
    (bn * ad).cmp(&(an * bd)).then_with(|| a.key.cmp(&b.key))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationReport {
    pub grouping: Grouping,
    pub rows: Vec<ReportRow>,
}

impl ViolationReport {
    /// Sums counters per key and sorts the rows.
    pub fn from_counts(grouping: Grouping, counts: impl IntoIterator<Item = (String, Counters)>) -> Self {
        let mut merged: BTreeMap<String, Counters> = BTreeMap::new();
        for (k, c) in counts {
            *merged.entry(k).or_default() += c;
        }
        let mut rows: Vec<ReportRow> = merged.into_iter().map(|(key, counters)| ReportRow { key, counters }).collect();
        rows.sort_by(row_order);
        Self { grouping, rows }
    }

    pub fn totals(&self) -> Counters {
        self.rows.iter().map(|r| r.counters).sum()
    }
}

/// Groups a verdict set. By-source and by-insertion rows count each case a
/// source takes part in; the other groupings count each case once.
pub fn aggregate(vs: &VerdictSet, grouping: Grouping) -> ViolationReport {
    let mut counts: Vec<(String, Counters)> = Vec::new();
    for p in &vs.partitions {
        match grouping {
            Grouping::ByTransformation => counts.extend(p.plans.iter().map(|r| (r.label.clone(), r.counters))),
            Grouping::ByContext => counts.push((p.label.clone(), p.plans.iter().map(|r| r.counters).sum())),
            Grouping::ByLanguage => counts.extend(p.plans.iter().map(|r| {
                let key = if p.label.is_empty() { r.label.clone() } else { format!("{}/{}", p.label, r.label) };
                (key, r.counters)
            })),
            Grouping::BySourceInput => counts.extend(p.source_ids.iter().cloned().zip(p.per_source.iter().copied())),
            Grouping::ByInsertionPair => {
                let keys = p.insertion_keys.as_ref().unwrap_or(&p.source_ids);
                counts.extend(keys.iter().cloned().zip(p.per_source.iter().copied()));
            }
        }
    }
    ViolationReport::from_counts(grouping, counts)
}

/// Reports for one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportSet {
    pub model_id: String,
    pub totals: Counters,
    pub reports: Vec<ViolationReport>,
}

impl ReportSet {
    pub fn new(vs: &VerdictSet, groupings: &[Grouping]) -> Self {
        Self {
            model_id: vs.model_id.clone(),
            totals: vs.totals(),
            reports: groupings.iter().map(|&g| aggregate(vs, g)).collect(),
        }
    }

    /// Largest violation proportion over the run.
    pub fn overall_proportion(&self) -> f64 {
        self.totals.proportion().unwrap_or(0.0)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.render_json(),
            ReportFormat::Csv => self.render_csv(),
            ReportFormat::Markdown => self.render_markdown(),
        }
    }

    fn render_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            key: &'a str,
            violation_proportion: f64,
            violated: u64,
            satisfied: u64,
            vacuous: u64,
            errors: u64,
            zero_denominator: bool,
        }
        #[derive(Serialize)]
        struct Table<'a> {
            grouping: Grouping,
            rows: Vec<Row<'a>>,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            model_id: &'a str,
            totals: Counters,
            violation_proportion: f64,
            reports: Vec<Table<'a>>,
        }
        let doc = Doc {
            model_id: &self.model_id,
            totals: self.totals,
            violation_proportion: self.overall_proportion(),
            reports: self
                .reports
                .iter()
                .map(|r| Table {
                    grouping: r.grouping,
                    rows: r
                        .rows
                        .iter()
                        .map(|row| Row {
                            key: &row.key,
                            violation_proportion: row.proportion(),
                            violated: row.counters.violated,
                            satisfied: row.counters.satisfied,
                            vacuous: row.counters.vacuous,
                            errors: row.counters.errors,
                            zero_denominator: row.zero_denominator(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("report serialises");
        s.push('\n');
        s
    }

    fn render_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["grouping", "key", "violation_proportion", "violated", "satisfied", "vacuous", "errors", "zero_denominator"])
            .expect("in-memory csv");
        for r in &self.reports {
            for row in &r.rows {
                w.write_record([
                    r.grouping.name(),
                    &row.key,
                    &row.proportion().to_string(),
                    &row.counters.violated.to_string(),
                    &row.counters.satisfied.to_string(),
                    &row.counters.vacuous.to_string(),
                    &row.counters.errors.to_string(),
                    &row.zero_denominator().to_string(),
                ])
                .expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv of utf-8 fields")
    }

    fn render_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Violation report\n\nModel: `{}`\n", self.model_id);
        let t = &self.totals;
        let _ = writeln!(
            out,
            "Cases: {} (violated {}, satisfied {}, vacuous {}, errors {}); violation proportion {:.3}\n",
            t.total(),
            t.violated,
            t.satisfied,
            t.vacuous,
            t.errors,
            self.overall_proportion()
        );
        for r in &self.reports {
            let _ = writeln!(out, "## {}\n", r.grouping);
            out.push_str(&markdown_table(r));
            out.push('\n');
        }
        out
    }
}

fn markdown_table(r: &ViolationReport) -> String {
    let header = ["key", "violation proportion", "violated", "satisfied", "vacuous", "errors"];
    let right = [false, true, true, true, true, true];
    let rows: Vec<[String; 6]> = r
        .rows
        .iter()
        .map(|row| {
            let p = format!("{:.3}{}", row.proportion(), if row.zero_denominator() { "*" } else { "" });
            [
                row.key.replace('|', "\\|"),
                p,
                row.counters.violated.to_string(),
                row.counters.satisfied.to_string(),
                row.counters.vacuous.to_string(),
                row.counters.errors.to_string(),
            ]
        })
        .collect();
    let mut widths: [usize; 6] = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[&str]| {
        let mut s = String::from("|");
        for (i, c) in cells.iter().enumerate() {
            let pad = widths[i] - c.chars().count();
            if right[i] {
                let _ = write!(s, " {}{} |", " ".repeat(pad), c);
            } else {
                let _ = write!(s, " {}{} |", c, " ".repeat(pad));
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(&header);
    out.push('|');
    for (i, w) in widths.iter().enumerate() {
        let dashes = "-".repeat(*w);
        if right[i] {
            let _ = write!(out, " {}: |", &dashes[1..]);
        } else {
            let _ = write!(out, " {dashes} |");
        }
    }
    out.push('\n');
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        out.push_str(&line(&cells));
    }
    if rows.iter().any(|r| r[1].ends_with('*')) {
        out.push_str("\n\\* no decided cases; reported as 0.\n");
    }
    out
}
