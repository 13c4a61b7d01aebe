//! Report rendering. Every report carries the tool name, version and the
//! resolved configuration so that a file on its own says how it was made.

use serde::Serialize;
use serde_json::{json, Value};

use crate::args::Format;

pub const TOOL: &str = "pgfield";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Rows for CSV output. Numbers are pre-formatted so that JSON and CSV agree
/// on the shortest round-trip representation.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:?}")
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

/// Process exit status for a completed run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The run finished but the input failed validation.
    Invalid,
}

#[derive(Debug)]
pub struct Report {
    pub config: Value,
    pub result: Value,
    pub table: Option<Table>,
    pub default_format: Format,
    pub warnings: Vec<String>,
    pub status: Status,
}

impl Report {
    pub fn new(config: Value, result: impl Serialize, default_format: Format) -> Self {
        Self {
            config,
            result: serde_json::to_value(result).expect("report results serialise"),
            table: None,
            default_format,
            warnings: Vec::new(),
            status: Status::Ok,
        }
    }

    pub fn with_table(mut self, table: Table) -> Self {
        self.table = Some(table);
        self
    }

    pub fn render(&self, format: Option<Format>) -> Result<String, String> {
        let format = format.unwrap_or(self.default_format);
        let mut config = self.config.clone();
        if let Some(obj) = config.as_object_mut() {
            obj.insert("format".into(), json!(format));
        }
        match format {
            Format::Json => {
                let doc = json!({
                    "tool": TOOL,
                    "version": VERSION,
                    "config": config,
                    "result": self.result,
                });
                let mut text = serde_json::to_string_pretty(&doc).expect("JSON values serialise");
                text.push('\n');
                Ok(text)
            }
            Format::Csv => {
                let table = self
                    .table
                    .as_ref()
                    .ok_or_else(|| "this subcommand has no CSV form; use --format json".to_string())?;
                let mut out = format!(
                    "# tool: {TOOL}\n# version: {VERSION}\n# config: {}\n",
                    serde_json::to_string(&config).expect("JSON values serialise")
                );
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&table.columns).map_err(|e| e.to_string())?;
                for row in &table.rows {
                    w.write_record(row).map_err(|e| e.to_string())?;
                }
                let body = w.into_inner().map_err(|e| e.to_string())?;
                out.push_str(std::str::from_utf8(&body).expect("CSV of UTF-8 fields is UTF-8"));
                Ok(out)
            }
        }
    }
}
