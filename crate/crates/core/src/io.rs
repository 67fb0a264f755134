//! Delimited-text ingestion and export of survival datasets.
//!
//! Files carry `id, tstart, tstop, status` followed by covariate columns; a
//! JSON schema maps each covariate column to `Z1`, `Z2` or `Z3`. Comma or tab
//! delimiters are detected from the header line.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CovariateNames, CovariateProfile, Dims, Role, Segment, SubjectRecord, SurvivalDataset};
use crate::error::{Error, Result};

/// Role a column plays in the input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRole {
    #[serde(rename = "id")]
    Id,
    #[serde(rename = "tstart")]
    Start,
    #[serde(rename = "tstop")]
    Stop,
    #[serde(rename = "status")]
    Status,
    Z1,
    Z2,
    Z3,
}

/// Column-name to role map. Columns named `id`, `tstart`, `tstop` and
/// `status` take those roles unless the schema says otherwise; unmapped
/// columns are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub columns: HashMap<String, ColumnRole>,
}

impl Schema {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Self::from_json_str(&text)
    }

    pub fn covariate(mut self, name: &str, role: Role) -> Self {
        let r = match role {
            Role::Z1 => ColumnRole::Z1,
            Role::Z2 => ColumnRole::Z2,
            Role::Z3 => ColumnRole::Z3,
        };
        self.columns.insert(name.to_string(), r);
        self
    }

    fn role_of(&self, column: &str) -> Option<ColumnRole> {
        if let Some(r) = self.columns.get(column) {
            return Some(*r);
        }
        match column {
            "id" => Some(ColumnRole::Id),
            "tstart" => Some(ColumnRole::Start),
            "tstop" => Some(ColumnRole::Stop),
            "status" => Some(ColumnRole::Status),
            _ => None,
        }
    }
}

fn detect_delimiter(header: &str) -> u8 {
    if header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

struct Layout {
    id: usize,
    start: usize,
    stop: usize,
    status: usize,
    z1: Vec<usize>,
    z2: Vec<usize>,
    z3: Vec<usize>,
    names: CovariateNames,
}

impl Layout {
    fn from_header(header: &csv::StringRecord, schema: &Schema) -> Result<Self> {
        let mut fixed: [Option<usize>; 4] = [None; 4];
        let (mut z1, mut z2, mut z3) = (vec![], vec![], vec![]);
        let mut names = CovariateNames::default();
        for (k, col) in header.iter().enumerate() {
            let col = col.trim();
            let slot = match schema.role_of(col) {
                Some(ColumnRole::Id) => 0,
                Some(ColumnRole::Start) => 1,
                Some(ColumnRole::Stop) => 2,
                Some(ColumnRole::Status) => 3,
                Some(ColumnRole::Z1) => {
                    z1.push(k);
                    names.z1.push(col.to_string());
                    continue;
                }
                Some(ColumnRole::Z2) => {
                    z2.push(k);
                    names.z2.push(col.to_string());
                    continue;
                }
                Some(ColumnRole::Z3) => {
                    z3.push(k);
                    names.z3.push(col.to_string());
                    continue;
                }
                None => continue,
            };
            if fixed[slot].replace(k).is_some() {
                return Err(Error::Schema(format!("column role for '{col}' assigned twice")));
            }
        }
        for (name, role) in &schema.columns {
            if matches!(role, ColumnRole::Z1 | ColumnRole::Z2 | ColumnRole::Z3)
                && !header.iter().any(|c| c.trim() == name)
            {
                return Err(Error::Schema(format!("schema column '{name}' not found in header")));
            }
        }
        let need = |slot: usize, what: &str| {
            fixed[slot].ok_or_else(|| Error::Schema(format!("missing '{what}' column")))
        };
        Ok(Self {
            id: need(0, "id")?,
            start: need(1, "tstart")?,
            stop: need(2, "tstop")?,
            status: need(3, "status")?,
            z1,
            z2,
            z3,
            names,
        })
    }

    fn dims(&self) -> Dims {
        Dims::new(self.z1.len(), self.z2.len(), self.z3.len())
    }
}

struct Row {
    line: u64,
    start: f64,
    stop: f64,
    status: bool,
    z1: Vec<f64>,
    z2: Vec<f64>,
    z3: Vec<f64>,
}

fn parse_number(field: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("column '{column}': cannot parse '{field}' as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("column '{column}': non-finite value '{field}'"),
        });
    }
    Ok(v)
}

/// Parses a dataset from delimited text.
pub fn parse_dataset(text: &str, schema: &Schema) -> Result<SurvivalDataset> {
    let header_line = text.lines().next().filter(|l| !l.trim().is_empty()).ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(header_line))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let layout = Layout::from_header(&header, schema)?;

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| parse_number(get(k), line, &header[k]);
        let status = match get(layout.status).trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("status must be 0 or 1, got '{other}'"),
                })
            }
        };
        let id = get(layout.id).trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse { line, msg: "empty id".into() });
        }
        let row = Row {
            line,
            start: num(layout.start)?,
            stop: num(layout.stop)?,
            status,
            z1: layout.z1.iter().map(|&k| num(k)).collect::<Result<_>>()?,
            z2: layout.z2.iter().map(|&k| num(k)).collect::<Result<_>>()?,
            z3: layout.z3.iter().map(|&k| num(k)).collect::<Result<_>>()?,
        };
        rows.entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(row);
    }
    if order.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no data rows".into() });
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let rows = rows.remove(&id).unwrap();
        subjects.push(merge_rows(id, rows)?);
    }
    SurvivalDataset::with_names(subjects, layout.dims(), layout.names)
}

fn merge_rows(id: String, rows: Vec<Row>) -> Result<SubjectRecord> {
    let fail = |msg: String| Error::Validation { id: id.clone(), msg };
    let z1 = rows[0].z1.clone();
    let last = rows.len() - 1;
    for (k, r) in rows.iter().enumerate() {
        if r.z1 != z1 {
            return Err(fail(format!("Z1 must be time-independent (line {})", r.line)));
        }
        if r.status && k != last {
            return Err(fail(format!("event on a non-final interval (line {})", r.line)));
        }
    }
    let segments = rows
        .iter()
        .map(|r| Segment {
            start: r.start,
            stop: r.stop,
            z2: r.z2.clone(),
            z3: r.z3.clone(),
        })
        .collect();
    Ok(SubjectRecord {
        time: rows[last].stop,
        event: rows[last].status,
        covariates: CovariateProfile { z1, segments },
        id,
    })
}

/// Reads and validates a dataset from `path`.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<SurvivalDataset> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_dataset(&text, schema)
}

/// Canonical comma-separated form: one row per segment, status on the last.
pub fn write_dataset<W: Write>(data: &SurvivalDataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    let names = data.names();
    let mut header = vec!["id".to_string(), "tstart".into(), "tstop".into(), "status".into()];
    header.extend(names.all().cloned());
    w.write_record(&header).map_err(csv_io)?;
    for s in data.subjects() {
        let segs = &s.covariates.segments;
        for (k, seg) in segs.iter().enumerate() {
            let status = if k + 1 == segs.len() && s.event { "1" } else { "0" };
            let mut rec = vec![s.id.clone(), fmt(seg.start), fmt(seg.stop), status.to_string()];
            rec.extend(s.covariates.z1.iter().map(|v| fmt(*v)));
            rec.extend(seg.z2.iter().map(|v| fmt(*v)));
            rec.extend(seg.z3.iter().map(|v| fmt(*v)));
            w.write_record(&rec).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Schema matching [`write_dataset`] output.
pub fn schema_of(data: &SurvivalDataset) -> Schema {
    let names = data.names();
    let mut schema = Schema::default();
    for n in &names.z1 {
        schema = schema.covariate(n, Role::Z1);
    }
    for n in &names.z2 {
        schema = schema.covariate(n, Role::Z2);
    }
    for n in &names.z3 {
        schema = schema.covariate(n, Role::Z3);
    }
    schema
}

pub fn export_dataset(data: &SurvivalDataset, path: impl AsRef<Path>) -> Result<()> {
    let f = fs::File::create(path.as_ref())?;
    write_dataset(data, std::io::BufWriter::new(f))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Part;

    fn schema() -> Schema {
        Schema::default()
            .covariate("x", Role::Z1)
            .covariate("w", Role::Z2)
            .covariate("v", Role::Z3)
    }

    #[test]
    fn one_row_per_subject() {
        let text = "id,tstart,tstop,status,x,w,v\n1,0,1.5,1,0,1,0\n2,0,2,0,1,0,1\n3,0,0.5,1,1,1,1\n";
        let d = parse_dataset(text, &schema()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dims(), Dims::new(1, 1, 1));
        for s in d.subjects() {
            assert_eq!(s.covariates.segments.len(), 1);
        }
        assert_eq!(d.subjects()[1].time, 2.0);
        assert!(!d.subjects()[1].event);
    }

    #[test]
    fn tab_delimiter_detected() {
        let text = "id\ttstart\ttstop\tstatus\tx\tw\tv\n1\t0\t1\t1\t0\t1\t0\n2\t0\t2\t1\t1\t0\t1\n";
        let d = parse_dataset(text, &schema()).unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn multi_row_subject_merged() {
        let text = "id,tstart,tstop,status,x,w,v\na,0,1,0,1,0,0\na,1,3,1,1,2,0\nb,0,2,1,0,1,1\n";
        let d = parse_dataset(text, &schema()).unwrap();
        let a = &d.subjects()[0];
        assert_eq!(a.time, 3.0);
        assert!(a.event);
        assert_eq!(a.covariate_at(Part::Z2, 0.5), &[0.0]);
        assert_eq!(a.covariate_at(Part::Z2, 2.0), &[2.0]);
    }

    #[test]
    fn gap_names_subject() {
        let text = "id,tstart,tstop,status,x,w,v\ns7,0,2,0,1,0,0\ns7,3,5,1,1,1,0\nb,0,2,1,0,1,1\n";
        let err = parse_dataset(text, &schema()).unwrap_err().to_string();
        assert!(err.contains("s7") && err.contains("gap"), "{err}");
    }

    #[test]
    fn varying_z1_rejected() {
        let text = "id,tstart,tstop,status,x,w,v\na,0,1,0,1,0,0\na,1,3,1,0,2,0\nb,0,2,1,0,1,1\n";
        let err = parse_dataset(text, &schema()).unwrap_err().to_string();
        assert!(err.contains("Z1 must be time-independent"), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "id,tstart,tstop,status,x,w,v\na,0,1,1,0,0,0\nb,0,abc,1,0,1,1\n";
        match parse_dataset(text, &schema()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_file_is_parse_error() {
        assert!(matches!(parse_dataset("", &schema()), Err(Error::Parse { .. })));
        let header_only = "id,tstart,tstop,status,x,w,v\n";
        assert!(matches!(parse_dataset(header_only, &schema()), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_schema_column_rejected() {
        let text = "id,tstart,tstop,status,x\na,0,1,1,0\nb,0,2,1,1\n";
        assert!(matches!(parse_dataset(text, &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn schema_json_roles() {
        let s = Schema::from_json_str(r#"{"age": "Z1", "trt": "Z2", "subj": "id"}"#).unwrap();
        assert_eq!(s.role_of("age"), Some(ColumnRole::Z1));
        assert_eq!(s.role_of("subj"), Some(ColumnRole::Id));
        assert_eq!(s.role_of("tstop"), Some(ColumnRole::Stop));
    }
}
