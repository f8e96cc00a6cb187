//! Evaluation reports and their canonical text renderings.
//!
//! Metrics print with three decimals and percentages with one. JSON keys are sorted, so a
//! report renders to the same bytes every time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Cell {
    Text(String),
    Count(usize),
    /// A proportion printed with three decimals.
    Metric(f64),
    /// A proportion printed as a percentage with one decimal.
    Percent(f64),
    /// Missing or undefined value.
    Na,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Count(n) => n.to_string(),
            Cell::Metric(v) => fixed(*v, 3),
            Cell::Percent(v) => fixed(v * 100.0, 1),
            Cell::Na => "N/A".into(),
        }
    }
}

/// Fixed-point text without a negative zero.
fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, title: &str, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width must match table `{}`",
            self.name
        );
        self.rows.push(row);
    }
}

/// Output of one command: summary tables plus a per-paper detail section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub command: String,
    pub tables: Vec<Table>,
    pub details: Vec<Table>,
    /// Template name to version tag for every prompt the command used.
    pub prompt_versions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub mode: String,
    pub seed: u64,
    pub prompt_versions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub sections: Vec<Section>,
}

impl EvalReport {
    /// Sections are ordered by command name; prompt versions are merged into the metadata.
    pub fn assemble(config_hash: &str, mode: &str, seed: u64, mut sections: Vec<Section>) -> Self {
        sections.sort_by(|a, b| a.command.cmp(&b.command));
        let prompt_versions = sections
            .iter()
            .flat_map(|s| {
                s.prompt_versions
                    .iter()
                    .map(|(k, v)| (k.clone(), v.clone()))
            })
            .collect();
        EvalReport {
            metadata: RunMetadata {
                config_hash: config_hash.into(),
                mode: mode.into(),
                seed,
                prompt_versions,
            },
            sections,
        }
    }

    fn all_tables(&self) -> impl Iterator<Item = &Table> {
        self.sections
            .iter()
            .flat_map(|s| s.tables.iter().chain(&s.details))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Json, Format::Csv, Format::Markdown];

    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Markdown => "md",
        }
    }
}

pub fn render_report(report: &EvalReport, format: Format) -> String {
    match format {
        Format::Json => render_json(report),
        Format::Csv => render_csv(report),
        Format::Markdown => render_markdown(report),
    }
}

fn table_json(t: &Table) -> serde_json::Value {
    serde_json::json!({
        "name": t.name,
        "title": t.title,
        "columns": t.columns,
        "rows": t.rows.iter().map(|r| r.iter().map(Cell::render).collect::<Vec<_>>()).collect::<Vec<_>>(),
    })
}

fn render_json(report: &EvalReport) -> String {
    let sections: Vec<serde_json::Value> = report
        .sections
        .iter()
        .map(|s| {
            serde_json::json!({
                "command": s.command,
                "tables": s.tables.iter().map(table_json).collect::<Vec<_>>(),
                "details": s.details.iter().map(table_json).collect::<Vec<_>>(),
            })
        })
        .collect();
    let v = serde_json::json!({
        "metadata": report.metadata,
        "sections": sections,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
    s.push('\n');
    s
}

/// Long format, one value per line: `table,row,column,value`.
fn render_csv(report: &EvalReport) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["table", "row", "column", "value"])
        .expect("in-memory write");
    for t in report.all_tables() {
        for (i, row) in t.rows.iter().enumerate() {
            for (c, cell) in t.columns.iter().zip(row) {
                w.write_record([t.name.as_str(), &i.to_string(), c, &cell.render()])
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn markdown_table(t: &Table) -> String {
    let rendered: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| r.iter().map(Cell::render).collect())
        .collect();
    let widths: Vec<usize> = (0..t.columns.len())
        .map(|c| {
            rendered
                .iter()
                .map(|r| r[c].chars().count())
                .chain([t.columns[c].chars().count(), 3])
                .max()
                .unwrap_or(3)
        })
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(&t.columns);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule));
    for r in &rendered {
        out.push_str(&line(r));
    }
    out
}

fn render_markdown(report: &EvalReport) -> String {
    let m = &report.metadata;
    let mut out = format!(
        "# Evaluation report\n\n- config hash: `{}`\n- mode: {}\n- seed: {}\n",
        m.config_hash, m.mode, m.seed
    );
    for (k, v) in &m.prompt_versions {
        out.push_str(&format!("- prompt `{k}`: {v}\n"));
    }
    for s in &report.sections {
        out.push_str(&format!("\n## {}\n", s.command));
        for t in &s.tables {
            out.push_str(&format!("\n### {}\n\n{}", t.title, markdown_table(t)));
        }
        for t in &s.details {
            out.push_str(&format!(
                "\n### {} (per paper)\n\n{}",
                t.title,
                markdown_table(t)
            ));
        }
    }
    out
}
