//! CSV output helpers. Every file opens with `#` lines naming the tool
//! version and echoing the effective configuration.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Comment header: tool/version line, command line, then each line of the
/// effective configuration.
pub fn header(command: &str, effective: &str) -> String {
    let mut out = format!("# glr-cusum {VERSION}\n# command: {command}\n");
    for line in effective.lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Writes `header`, then a CSV table with the given columns.
pub fn write_table<W: Write>(mut w: W, header: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    w.write_all(header.as_bytes())?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(columns)?;
    for row in rows {
        csv.write_record(row)?;
    }
    csv.flush()?;
    Ok(())
}

/// Opens `path` for writing, or standard output when `path` is `None` or `-`.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p.as_os_str() != "-" => Box::new(BufWriter::new(File::create(p)?)),
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}
