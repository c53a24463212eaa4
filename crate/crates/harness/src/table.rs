//! CSV tables. Numbers use 17 significant digits (`{:.16e}`), which parses back
//! to the same `f64`. A leading `# scenario_hash=<hex>` comment ties a file to
//! the scenario that produced it.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{io_err, HarnessError, Result};

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_num(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| HarnessError::Mismatch(format!("not a number: {s:?}")))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub scenario_hash: Option<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(scenario_hash: Option<&str>, header: impl IntoIterator<Item = S>) -> Self {
        Self { scenario_hash: scenario_hash.map(str::to_string), header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Column `name` parsed as numbers.
    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name).ok_or_else(|| HarnessError::Mismatch(format!("no column {name}")))?;
        self.rows.iter().map(|r| parse_num(&r[c])).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(io_err(path))?;
        if let Some(h) = &self.scenario_hash {
            writeln!(f, "# scenario_hash={h}").map_err(io_err(path))?;
        }
        let mut w = csv::Writer::from_writer(f);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut first = String::new();
        BufReader::new(File::open(path).map_err(io_err(path))?).read_line(&mut first).map_err(io_err(path))?;
        let scenario_hash = first.trim_end().strip_prefix("# scenario_hash=").map(str::to_string);
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r.records().map(|rec| rec.map(|x| x.iter().map(str::to_string).collect())).collect::<std::result::Result<_, _>>()?;
        Ok(Self { scenario_hash, header, rows })
    }
}
