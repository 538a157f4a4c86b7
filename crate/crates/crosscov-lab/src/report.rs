//! Report emission: CSV tables and JSON summaries.
//!
//! CSV dialect is pinned for bit-exact reproducibility checks: comma
//! separator, '.' decimal point, header row, LF line endings, floats with 17
//! significant digits (round-trip exact for f64). Wall-clock timings never
//! enter CSV output; they live in the JSON summaries.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

/// Render a float with 17 significant digits (`{:.16e}`), round-trip exact.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// A CSV cell: already-rendered text.
pub fn fmt_usize(x: usize) -> String {
    x.to_string()
}

pub fn fmt_bool(x: bool) -> String {
    if x { "true".to_string() } else { "false".to_string() }
}

/// An in-memory CSV table with a fixed header.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(header: I) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.rows.push(row);
    }

    /// Serialize with LF endings. Cells must not contain commas or newlines;
    /// labels are validated upstream.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_csv())
    }
}

/// Write a pretty JSON summary document.
pub fn write_json(path: &Path, value: &serde_json::Value) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)
}
