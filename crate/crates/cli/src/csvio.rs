//! Minimal RFC-4180 CSV writing: comma-separated, LF line endings, fields
//! quoted (with doubled quotes) only when they contain a comma, quote, or
//! newline. Floats use Rust's shortest round-trip formatting, so outputs are
//! byte-stable across runs.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub struct CsvFile {
    out: BufWriter<File>,
    columns: usize,
}

impl CsvFile {
    pub fn create(path: &Path, header: &[&str]) -> std::io::Result<Self> {
        let mut file = Self {
            out: BufWriter::new(File::create(path)?),
            columns: header.len(),
        };
        file.write_row(header)?;
        Ok(file)
    }

    pub fn write_row<T: Display>(&mut self, fields: &[T]) -> std::io::Result<()> {
        assert_eq!(fields.len(), self.columns, "csv row width mismatch");
        let mut line = String::new();
        for (i, field) in fields.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&quote(&field.to_string()));
        }
        line.push('\n');
        self.out.write_all(line.as_bytes())
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

fn quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_round_trips() {
        assert_eq!(quote("plain"), "plain");
        assert_eq!(quote("a,b"), "\"a,b\"");
        assert_eq!(quote("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
