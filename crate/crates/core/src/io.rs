//! CSV datasets and tables.
//!
//! Files are comma separated, UTF-8, with a required header row. Floats are
//! written in Rust's shortest round-trip form, so a table read back with
//! [`read_table`] reproduces the written values exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_names: Vec<String>,
    pub output_name: String,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::Dimension(format!(
                "{} input rows for {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        let d = inputs.first().map_or(1, |x| x.len());
        if inputs.iter().any(|x| x.len() != d) || d == 0 {
            return Err(Error::Dimension("input rows must share a nonzero dimension".into()));
        }
        let input_names = (1..=d).map(|k| format!("x{k}")).collect();
        Ok(Self {
            input_names,
            output_name: "y".into(),
            inputs,
            outputs,
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.input_names.len()
    }

    /// Rows at the given indices.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            input_names: self.input_names.clone(),
            output_name: self.output_name.clone(),
            inputs: rows.iter().map(|i| self.inputs[*i].clone()).collect(),
            outputs: rows.iter().map(|i| self.outputs[*i]).collect(),
        }
    }

    /// FNV-1a hash of the exact values, as 16 hex digits.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (x, y) in self.inputs.iter().zip(&self.outputs) {
            for v in x {
                feed(*v);
            }
            feed(*y);
        }
        format!("{h:016x}")
    }

    pub fn to_csv(&self) -> String {
        let mut header = self.input_names.clone();
        header.push(self.output_name.clone());
        let rows: Vec<Vec<f64>> = self
            .inputs
            .iter()
            .zip(&self.outputs)
            .map(|(x, y)| {
                let mut r = x.clone();
                r.push(*y);
                r
            })
            .collect();
        format_table(&header, &rows)
    }
}

/// Header and numeric rows of a CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn parse_number(field: &str, line: usize, column: &str) -> Result<f64> {
    let t = field.trim();
    let v: f64 = t.parse().map_err(|_| Error::Parse {
        line,
        message: format!("column '{column}': '{t}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column '{column}': non-finite value '{t}'"),
        });
    }
    Ok(v)
}

/// Parses a numeric table with a header row.
pub fn read_table(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match &header {
            None => {
                if record.iter().all(|f| f.parse::<f64>().is_ok()) {
                    return Err(Error::Parse {
                        line,
                        message: "missing header row (first line is numeric)".into(),
                    });
                }
                let names: Vec<String> = record.iter().map(|f| f.to_string()).collect();
                if names.iter().any(|n| n.is_empty()) {
                    return Err(Error::Parse {
                        line,
                        message: "empty column name in header".into(),
                    });
                }
                header = Some(names);
            }
            Some(h) => {
                if record.len() != h.len() {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected {} fields, found {}", h.len(), record.len()),
                    });
                }
                let row = record
                    .iter()
                    .zip(h)
                    .map(|(f, name)| parse_number(f, line, name))
                    .collect::<Result<Vec<f64>>>()?;
                rows.push(row);
            }
        }
    }
    let header = header.ok_or(Error::NoObservations)?;
    Ok(Table { header, rows })
}

/// Parses a dataset: `d` input columns followed by one output column.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let table = read_table(text)?;
    if table.header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "need at least one input column and one output column".into(),
        });
    }
    if table.rows.is_empty() {
        return Err(Error::NoObservations);
    }
    let d = table.header.len() - 1;
    let inputs = table.rows.iter().map(|r| r[..d].to_vec()).collect();
    let outputs = table.rows.iter().map(|r| r[d]).collect();
    Ok(Dataset {
        input_names: table.header[..d].to_vec(),
        output_name: table.header[d].clone(),
        inputs,
        outputs,
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

pub fn format_table(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    let mut out = String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 header");
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    std::fs::write(path, format_table(header, rows))?;
    Ok(())
}

/// Header and text rows of a CSV table; used for reports that mix labels
/// and numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Column values by header name.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

/// Parses a CSV table of text fields with a header row.
pub fn read_text_table(text: &str) -> Result<TextTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let fields: Vec<String> = record.iter().map(|f| f.to_string()).collect();
        match &header {
            None => header = Some(fields),
            Some(h) if h.len() != fields.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", h.len(), fields.len()),
                })
            }
            Some(_) => rows.push(fields),
        }
    }
    let header = header.ok_or(Error::NoObservations)?;
    Ok(TextTable { header, rows })
}
