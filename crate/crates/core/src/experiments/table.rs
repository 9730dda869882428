//! Tidy result tables, CSV output and quantile summaries.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};

/// Rows of text cells under named columns.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Shortest round-trip decimal form; `inf`, `-inf` and `NaN` for the
/// non-finite values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Dimension {
                expected: self.columns.len(),
                found: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("unknown column '{name}'")))
    }

    /// Numeric values of a column; cells that do not parse are skipped.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().filter_map(|r| r[i].parse().ok()).collect())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(&self.columns)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let columns = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { columns, rows })
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) q`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const SUMMARY_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Quantiles of each value column within each group. Groups appear in the
/// order of their first row; non-numeric and non-finite cells are ignored.
pub fn summarize(table: &Table, group_by: &[&str], values: &[&str]) -> Result<Table> {
    let gidx: Vec<usize> = group_by.iter().map(|g| table.column_index(g)).collect::<Result<_>>()?;
    let vidx: Vec<usize> = values.iter().map(|v| table.column_index(v)).collect::<Result<_>>()?;
    let mut index: HashMap<Vec<String>, usize> = HashMap::new();
    let mut groups: Vec<(Vec<String>, Vec<&Vec<String>>)> = Vec::new();
    for row in &table.rows {
        let key: Vec<String> = gidx.iter().map(|&i| row[i].clone()).collect();
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(row);
    }
    let mut columns: Vec<&str> = group_by.to_vec();
    columns.extend(["column", "count", "q05", "q25", "q50", "q75", "q95"]);
    let mut out = Table::new(&columns);
    for (key, rows) in groups {
        for (&vi, name) in vidx.iter().zip(values) {
            let mut xs: Vec<f64> = rows
                .iter()
                .filter_map(|r| r[vi].parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .collect();
            xs.sort_by(f64::total_cmp);
            let mut row = key.clone();
            row.push(name.to_string());
            row.push(xs.len().to_string());
            for q in SUMMARY_QUANTILES {
                row.push(fmt_f64(quantile(&xs, q)));
            }
            out.push(row)?;
        }
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}
