use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Chronological split proportions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive, got {all:?}")));
        }
        if all.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config(format!("split fractions sum above 1: {all:?}")));
        }
        Ok(())
    }
}

/// One input table and what is known about it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub domain_id: String,
    /// Free-form sampling period such as `"1h"`; informational only.
    pub sampling_period: Option<String>,
    /// Natural periods in steps, used to build the seasonal bank.
    pub natural_periods: Vec<f64>,
    pub split: SplitFractions,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            domain_id: "default".into(),
            sampling_period: None,
            natural_periods: vec![24.0],
            split: SplitFractions::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.domain_id.is_empty()
            || !self
                .domain_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::Config(format!(
                "domain id `{}` must be non-empty ASCII letters, digits, `_` or `-`",
                self.domain_id
            )));
        }
        if self.natural_periods.iter().any(|p| !(*p > 2.0)) {
            return Err(Error::Config("natural periods must exceed 2 steps".into()));
        }
        Ok(())
    }
}

/// Parsed numeric table.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSeries {
    pub values: Tensor,
    /// Column names, synthesized as `c0, c1, …` without a header row.
    pub columns: Vec<String>,
    pub timestamp_dropped: bool,
}

impl LoadedSeries {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }
}

pub fn load_csv(spec: &DatasetSpec) -> Result<LoadedSeries> {
    read_csv(&spec.path)
}

pub fn read_csv(path: &Path) -> Result<LoadedSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file)
}

fn numeric(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

const TIME_HEADERS: [&str; 5] = ["time", "date", "datetime", "timestamp", "ts"];

/// Rectangular numeric CSV with an optional header row and an optional
/// leading timestamp column.
///
/// The first row is a header when any cell after the first is non-numeric
/// (or, for a single column, when its only cell is). Column 0 is a
/// timestamp when it is non-numeric in every data row, or when its header
/// names a time (`time`, `date`, `datetime`, `timestamp`, `ts`) so that
/// integer step indices and epoch seconds are dropped too.
pub fn parse_csv<R: Read>(reader: R) -> Result<LoadedSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 1);
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    let Some((first_line, first)) = rows.first().cloned() else {
        return Err(Error::Dataset("CSV input is empty".into()));
    };
    let width = first.len();
    for (line, r) in &rows {
        if r.len() != width {
            return Err(Error::Parse {
                line: *line,
                msg: format!("expected {width} fields, found {}", r.len()),
            });
        }
    }
    let is_header = if width == 1 {
        numeric(&first[0]).is_none()
    } else {
        first[1..].iter().any(|c| numeric(c).is_none())
    };
    let (header, data) = if is_header {
        (Some(first), &rows[1..])
    } else {
        (None, &rows[..])
    };
    if data.is_empty() {
        return Err(Error::Dataset(format!("CSV has a header at line {first_line} but no data rows")));
    }
    let named_time = header
        .as_ref()
        .is_some_and(|h| TIME_HEADERS.contains(&h[0].to_ascii_lowercase().as_str()));
    let timestamp = width > 1 && (named_time || data.iter().all(|(_, r)| numeric(&r[0]).is_none()));
    let skip = usize::from(timestamp);
    let channels = width - skip;
    let mut values = Vec::with_capacity(data.len() * channels);
    for (row_idx, (line, r)) in data.iter().enumerate() {
        for (col, cell) in r.iter().enumerate().skip(skip) {
            match numeric(cell) {
                Some(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::Parse {
                        line: *line,
                        msg: format!("row {row_idx}, column {col}: `{cell}` is not a finite number"),
                    })
                }
            }
        }
    }
    let columns = match header {
        Some(h) => h[skip..].to_vec(),
        None => (0..channels).map(|j| format!("c{j}")).collect(),
    };
    Ok(LoadedSeries {
        values: Tensor::new(vec![data.len(), channels], values)?,
        columns,
        timestamp_dropped: timestamp,
    })
}

/// Header row then one row per tensor row. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv<W: Write>(out: W, columns: &[String], values: &Tensor) -> Result<()> {
    let (_, c) = values.expect_2d("write_csv")?;
    if columns.len() != c {
        return Err(Error::dim("write_csv", &[columns.len()], values.shape()));
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Dataset(format!("CSV write failed: {e}"));
    w.write_record(columns).map_err(io)?;
    for i in 0..values.rows() {
        w.write_record(values.row(i).iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Dataset(format!("CSV write failed: {e}")))?;
    Ok(())
}

pub fn write_csv_file(path: &Path, columns: &[String], values: &Tensor) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), columns, values)
}

pub fn default_columns(c: usize) -> Vec<String> {
    (0..c).map(|j| format!("c{j}")).collect()
}
