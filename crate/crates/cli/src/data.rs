//! Reading observation tables.

use std::io::Read;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug)]
pub struct Table {
    pub covariate_names: Vec<String>,
    /// One vector per covariate.
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<u64>,
}

/// Column layout of an input table: where the response sits among the fields.
#[derive(Clone)]
pub struct Layout {
    pub covariate_names: Vec<String>,
    response_index: usize,
}

impl Layout {
    pub fn from_headers(headers: &csv::StringRecord, response: &str) -> Result<Self> {
        let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
        let response_index = names
            .iter()
            .position(|h| h == response)
            .ok_or_else(|| anyhow!("response column '{response}' not found in header {names:?}"))?;
        let covariate_names = names
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != response_index)
            .map(|(_, n)| n.clone())
            .collect();
        Ok(Self {
            covariate_names,
            response_index,
        })
    }

    /// Parses one record into (y, covariates).
    pub fn parse(&self, record: &csv::StringRecord) -> Result<(u64, Vec<f64>)> {
        if record.len() != self.covariate_names.len() + 1 {
            bail!(
                "expected {} fields, found {}",
                self.covariate_names.len() + 1,
                record.len()
            );
        }
        let mut y = None;
        let mut xs = Vec::with_capacity(self.covariate_names.len());
        for (i, field) in record.iter().enumerate() {
            let field = field.trim();
            if i == self.response_index {
                y = Some(parse_count(field)?);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| anyhow!("covariate value '{field}' is not a number"))?;
                if !v.is_finite() {
                    bail!("covariate value '{field}' is not finite");
                }
                xs.push(v);
            }
        }
        Ok((y.expect("response index within record"), xs))
    }
}

fn parse_count(field: &str) -> Result<u64> {
    field
        .parse::<u64>()
        .map_err(|_| anyhow!("response '{field}' is not a nonnegative integer"))
}

pub fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source)
}

pub fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Reads a whole table; any malformed line is an error naming its line number.
pub fn read_table<R: Read>(source: R, response: &str) -> Result<Table> {
    let mut reader = csv_reader(source);
    let layout = Layout::from_headers(reader.headers().context("reading header")?, response)?;
    let mut columns = vec![Vec::new(); layout.covariate_names.len()];
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record.context("malformed input")?;
        let (yi, xs) = layout
            .parse(&record)
            .with_context(|| format!("line {}", line_of(&record)))?;
        y.push(yi);
        for (col, x) in columns.iter_mut().zip(xs) {
            col.push(x);
        }
    }
    if y.is_empty() {
        bail!("input has no observations");
    }
    Ok(Table {
        covariate_names: layout.covariate_names,
        columns,
        y,
    })
}
