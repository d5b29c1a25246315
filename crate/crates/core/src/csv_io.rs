//! Dataset CSV schema.
//!
//! Header row = feature names plus the reserved columns `label`, `subject_id`
//! and `t_index` (in any position). Missing cells are empty or `NaN`. Lines
//! starting with `#` are comments. Values are written in shortest round-trip
//! form, so observed cells survive a write/read cycle bit-exactly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};

pub const LABEL: &str = "label";
pub const SUBJECT: &str = "subject_id";
pub const TIME: &str = "t_index";

/// A parsed CSV whose reserved columns may be absent (prediction inputs).
#[derive(Debug, Clone)]
pub struct Table {
    pub features: FeatureMatrix,
    pub labels: Option<Vec<u8>>,
    pub groups: Option<Vec<u32>>,
    pub order: Option<Vec<i64>>,
}

impl Table {
    /// Converts to a labeled dataset; all reserved columns must be present.
    pub fn into_labeled(self) -> Result<LabeledDataset> {
        let missing = |c: &str| Error::MissingColumn(c.to_string());
        let labels = self.labels.ok_or_else(|| missing(LABEL))?;
        let groups = self.groups.ok_or_else(|| missing(SUBJECT))?;
        let order = self.order.ok_or_else(|| missing(TIME))?;
        LabeledDataset::new(self.features, labels, groups, order)
    }
}

impl From<LabeledDataset> for Table {
    fn from(d: LabeledDataset) -> Self {
        Table {
            labels: Some(d.labels().to_vec()),
            groups: Some(d.groups().to_vec()),
            order: Some(d.order().to_vec()),
            features: d.features().clone(),
        }
    }
}

fn parse_cell(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        None
    } else {
        // A non-numeric string is surfaced by the caller.
        s.parse::<f64>().ok().or(Some(f64::NAN))
    }
}

pub fn read_table_from<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let pos = |name: &str| header.iter().position(|h| h == name);
    let (label_col, subject_col, time_col) = (pos(LABEL), pos(SUBJECT), pos(TIME));
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != label_col && Some(i) != subject_col && Some(i) != time_col)
        .collect();
    let names: Vec<String> = feature_cols.iter().map(|&i| header[i].clone()).collect();

    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut order = Vec::new();
    let mut n_rows = 0;
    for (record_no, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |message: String| Error::Parse {
            record: record_no,
            message,
        };
        for &c in &feature_cols {
            match parse_cell(field(c)) {
                Some(v) if v.is_nan() => {
                    return Err(bad(format!("`{}` is not a number in column `{}`", field(c), header[c])))
                }
                Some(v) => {
                    values.push(v);
                    mask.push(true);
                }
                None => {
                    values.push(f64::NAN);
                    mask.push(false);
                }
            }
        }
        if let Some(c) = label_col {
            let l: u8 = field(c).parse().map_err(|_| bad(format!("bad label `{}`", field(c))))?;
            labels.push(l);
        }
        if let Some(c) = subject_col {
            let g: u32 = field(c).parse().map_err(|_| bad(format!("bad subject id `{}`", field(c))))?;
            groups.push(g);
        }
        if let Some(c) = time_col {
            let t: i64 = field(c).parse().map_err(|_| bad(format!("bad time index `{}`", field(c))))?;
            order.push(t);
        }
        n_rows += 1;
    }
    Ok(Table {
        features: FeatureMatrix::new(names, n_rows, values, mask)?,
        labels: label_col.map(|_| labels),
        groups: subject_col.map(|_| groups),
        order: time_col.map(|_| order),
    })
}

pub fn read_table(path: &Path) -> Result<Table> {
    read_table_from(File::open(path)?)
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    read_table(path)?.into_labeled()
}

/// Writes `comment` lines (each prefixed with `# `) followed by the CSV.
pub fn write_table_to<W: Write>(mut writer: W, table: &Table, comment: Option<&str>) -> Result<()> {
    if let Some(text) = comment {
        for line in text.lines() {
            writeln!(writer, "# {line}")?;
        }
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let fm = &table.features;
    let mut header: Vec<&str> = fm.feature_names().iter().map(String::as_str).collect();
    if table.labels.is_some() {
        header.push(LABEL);
    }
    if table.groups.is_some() {
        header.push(SUBJECT);
    }
    if table.order.is_some() {
        header.push(TIME);
    }
    wtr.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for r in 0..fm.n_rows() {
        record.clear();
        for c in 0..fm.n_cols() {
            record.push(fm.get(r, c).map(format_value).unwrap_or_default());
        }
        if let Some(l) = &table.labels {
            record.push(l[r].to_string());
        }
        if let Some(g) = &table.groups {
            record.push(g[r].to_string());
        }
        if let Some(o) = &table.order {
            record.push(o[r].to_string());
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, data: &LabeledDataset, comment: Option<&str>) -> Result<()> {
    let file = File::create(path)?;
    write_table_to(std::io::BufWriter::new(file), &Table::from(data.clone()), comment)
}

/// Shortest representation that parses back to the identical `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}
