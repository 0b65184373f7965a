//! Column tables written as CSV with round-trip float formatting, and read back for plotting.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Formats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            columns: vec![Vec::new(); headers.len()],
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        for (c, &v) in self.columns.iter_mut().zip(row) {
            c.push(v);
        }
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        match self.headers.iter().position(|h| h == name) {
            Some(i) => Ok(&self.columns[i]),
            None => bail!("no column {name:?} (have {:?})", self.headers),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(&self.headers)?;
        for r in 0..self.rows() {
            w.write_record(self.columns.iter().map(|c| fmt_f64(c[r])))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r =
            csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut t = Table {
            columns: vec![Vec::new(); headers.len()],
            headers,
        };
        for rec in r.records() {
            let rec = rec?;
            for (c, field) in t.columns.iter_mut().zip(rec.iter()) {
                c.push(
                    field
                        .parse()
                        .with_context(|| format!("bad number {field:?} in {}", path.display()))?,
                );
            }
        }
        Ok(t)
    }
}
