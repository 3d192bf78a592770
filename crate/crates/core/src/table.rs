//! CSV output with `# key=value` provenance lines above the header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

/// Shortest decimal that reads back to the same `f64`, switching to
/// exponent notation for very small and very large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes provenance comments, a header row and the data rows.
pub fn write_table<W: Write>(out: W, provenance: &[(String, String)], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = out;
    for (k, v) in provenance {
        writeln!(out, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_file(path: &Path, provenance: &[(String, String)], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_table(f, provenance, header, rows)
}
