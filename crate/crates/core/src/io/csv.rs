//! Minimal CSV output. Fields are numbers or identifiers, so no quoting is
//! needed; a field containing a comma or quote is rejected.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    /// Lines written before the header, each prefixed with `# `.
    pub notes: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn note(mut self, line: impl Into<String>) -> Self {
        self.notes.push(line.into());
        self
    }

    pub fn push<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows.push(row.into_iter().map(|s| s.to_string()).collect());
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        let bad = self
            .header
            .iter()
            .chain(self.rows.iter().flatten())
            .find(|f| f.contains([',', '"', '\n']));
        if let Some(f) = bad {
            return Err(Error::invalid(format!("CSV field `{f}` needs quoting")));
        }
        let io = |e: std::io::Error| Error::format("CSV", e.to_string());
        for n in &self.notes {
            writeln!(w, "# {n}").map_err(io)?;
        }
        writeln!(w, "{}", self.header.join(",")).map_err(io)?;
        for r in &self.rows {
            if r.len() != self.header.len() {
                return Err(Error::invalid(format!(
                    "CSV row has {} fields, header has {}",
                    r.len(),
                    self.header.len()
                )));
            }
            writeln!(w, "{}", r.join(",")).map_err(io)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let mut t = Table::new(["a", "b"]).note("units: mm");
        t.push([1.5, 2.0]);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# units: mm\na,b\n1.5,2\n");
        t.push(["x"]);
        assert!(t.write(&mut Vec::new()).is_err());
    }
}
