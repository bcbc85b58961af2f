//! Deterministic file output: versioned CSV with an embedded provenance
//! line, and pretty JSON with stable field order.

use std::path::Path;

use seqpt::error::{Error, Result};

/// Write bytes; parent directories are created as needed.
pub fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, content).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_file(path, &format!("{text}\n"))
}

/// CSV with a schema comment line:
/// `# schema=<name>/<version> config=<hash> seed=<seed>`.
/// A schema bump renames columns loudly instead of silently reordering.
pub struct CsvFile {
    buf: String,
    columns: usize,
}

impl CsvFile {
    pub fn new(name: &str, version: u32, config_hash: &str, seed: u64, header: &[&str]) -> Self {
        let mut buf = format!("# schema={name}/{version} config={config_hash} seed={seed}\n");
        buf.push_str(&header.join(","));
        buf.push('\n');
        Self {
            buf,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "CSV row width mismatch");
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_file(path, &self.buf)
    }
}

/// Shortest-round-trip float formatting; deterministic and exact.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Assert the schema line of a CSV produced by [`CsvFile`].
pub fn expect_schema(text: &str, name: &str, version: u32) -> Result<()> {
    let first = text.lines().next().unwrap_or("");
    let want = format!("# schema={name}/{version} ");
    if first.starts_with(&want) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "CSV schema mismatch: expected {name}/{version}, file says '{first}'"
        )))
    }
}
