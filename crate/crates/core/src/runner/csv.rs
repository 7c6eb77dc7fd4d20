//! Plain-text tables: `# key=value` metadata lines, one header line, then
//! comma-separated rows. Floats are written with 17 significant digits so a
//! value read back is bit-identical.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::diagnostics::TimeSeries;

pub const SERIES_HEADER: &str = "t,norm_scaled,abs_psi,re_psi,im_psi,delta_f";

/// Round-trip exact float formatting.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { meta: Vec::new(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k}={v}").unwrap();
        }
        writeln!(out, "{}", self.header.join(",")).unwrap();
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.render())
    }

    /// Parses the format produced by [`Table::render`].
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut table = Table::default();
        let mut lines = text.lines().enumerate();
        for (n, line) in lines.by_ref() {
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest.split_once('=').ok_or_else(|| format!("line {}: malformed metadata", n + 1))?;
                table.meta.push((k.to_string(), v.to_string()));
            } else {
                table.header = line.split(',').map(str::to_string).collect();
                break;
            }
        }
        for (n, line) in lines {
            let row = line
                .split(',')
                .map(|c| c.parse::<f64>().map_err(|e| format!("line {}: {e}", n + 1)))
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != table.header.len() {
                return Err(format!("line {}: {} cells, header has {}", n + 1, row.len(), table.header.len()));
            }
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// Rows of a time series under [`SERIES_HEADER`]; metadata is left to the caller.
pub fn series_table(series: &TimeSeries) -> Table {
    let mut table = Table::new(&SERIES_HEADER.split(',').collect::<Vec<_>>());
    table.rows = series
        .rows
        .iter()
        .map(|r| vec![r.t, r.norm_scaled, r.psi.norm(), r.psi.re, r.psi.im, r.delta_f])
        .collect();
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn render_and_parse() {
        let mut t = Table::new(&["x", "y"]);
        t.meta("h", 0.25).meta("kind", "full");
        t.rows.push(vec![1.0, 0.1]);
        t.rows.push(vec![2.0, -1e-20]);
        let text = t.render();
        assert!(text.starts_with("# h=0.25\n# kind=full\nx,y\n"));
        let back = Table::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.meta_value("kind"), Some("full"));
        assert_eq!(back.column("y").unwrap(), vec![0.1, -1e-20]);
        assert!(Table::parse("a,b\n1,2,3\n").is_err());
    }

    #[test]
    fn empty_table_keeps_header() {
        let t = Table::new(&["h", "delta0"]);
        assert_eq!(t.render(), "h,delta0\n");
    }
}
