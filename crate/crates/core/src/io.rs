//! Line-delimited JSON persistence.
//!
//! Every file starts with a `#` header line naming its schema and version:
//!
//! ```text
//! # pile-kd groups v1
//! {"query_id":"q0","docs":[{"doc_id":"q0-d0","features":[...],"label":2,"teacher_logits":[...]}]}
//! ```
//!
//! Group and ensemble files carry one query group per line. Model and report
//! files carry a single JSON object; training logs one epoch per line. Keys
//! follow struct declaration order. Floats are written in scientific notation
//! with 17 significant digits, so every value reads back bit-exact.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::student::{StudentParams, TrainingLog};
use crate::types::{validate_group, Dataset, EnsembleState, QueryGroup};

pub const GROUPS_HEADER: &str = "# pile-kd groups v1";
pub const ENSEMBLE_HEADER: &str = "# pile-kd ensemble v1";
pub const MODEL_HEADER: &str = "# pile-kd model v1";
pub const REPORT_HEADER: &str = "# pile-kd report v1";
pub const TRAINLOG_HEADER: &str = "# pile-kd trainlog v1";

/// serde_json formatter printing `f64` with 17 significant digits.
struct ExactFloat;

impl serde_json::ser::Formatter for ExactFloat {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{value:.8e}")
    }
}

/// One JSON line (without the newline) in the canonical float format.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloat);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize: {e}")))?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

fn write_lines<'a, T: Serialize + 'a>(
    path: &Path,
    header: &str,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    writeln!(out, "{header}").map_err(io_err)?;
    for record in records {
        writeln!(out, "{}", to_json_line(record)?).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads the JSON records following the header, with their 1-based line
/// numbers. A missing header is accepted only for an empty file.
fn read_records<T: DeserializeOwned>(path: &Path, header: &str) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let number = index + 1;
        if index == 0 && line.starts_with('#') {
            if line.trim_end() != header {
                return Err(Error::Parse {
                    path: path.into(),
                    line: number,
                    message: format!("expected header '{header}', found '{line}'"),
                });
            }
            continue;
        }
        if index == 0 {
            return Err(Error::Parse {
                path: path.into(),
                line: number,
                message: format!("missing header '{header}'"),
            });
        }
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: number,
            message: e.to_string(),
        })?;
        out.push((number, record));
    }
    Ok(out)
}

fn read_single<T: DeserializeOwned>(path: &Path, header: &str) -> Result<T> {
    let mut records = read_records::<T>(path, header)?;
    match records.len() {
        1 => Ok(records.remove(0).1),
        n => Err(Error::Parse {
            path: path.into(),
            line: records.get(1).map_or(1, |r| r.0),
            message: format!("expected exactly one record, found {n}"),
        }),
    }
}

pub fn write_groups(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), GROUPS_HEADER, &dataset.groups)
}

/// Reads and validates a group file. Dimensions are fixed by the first
/// document; the first violating line is reported by number.
pub fn read_groups(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let records = read_records::<QueryGroup>(path, GROUPS_HEADER)?;
    let mut dims: Option<(usize, usize)> = None;
    let mut groups = Vec::with_capacity(records.len());
    for (line, group) in records {
        let (feature_dim, num_teachers) = *dims.get_or_insert_with(|| {
            group
                .docs
                .first()
                .map_or((0, 0), |d| (d.features.len(), d.teacher_logits.len()))
        });
        if let Some(v) = validate_group(&group, groups.len(), feature_dim, num_teachers).first() {
            return Err(Error::Validation {
                path: path.into(),
                line,
                message: v.to_string(),
            });
        }
        groups.push(group);
    }
    let (feature_dim, num_teachers) = dims.unwrap_or((0, 0));
    Ok(Dataset {
        groups,
        feature_dim,
        num_teachers,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDoc {
    pub doc_id: String,
    pub logit: f64,
    pub weights: Vec<u8>,
}

/// Ensemble result for one query group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub query_id: String,
    pub method: String,
    pub iterations_used: usize,
    pub converged: bool,
    pub docs: Vec<EnsembleDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<EnsembleState>>,
}

impl EnsembleRecord {
    pub fn logits(&self) -> Vec<f64> {
        self.docs.iter().map(|d| d.logit).collect()
    }
}

pub fn write_ensemble(records: &[EnsembleRecord], path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), ENSEMBLE_HEADER, records)
}

pub fn read_ensemble(path: impl AsRef<Path>) -> Result<Vec<EnsembleRecord>> {
    Ok(read_records(path.as_ref(), ENSEMBLE_HEADER)?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

pub fn write_model(params: &StudentParams, path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), MODEL_HEADER, [params])
}

pub fn read_model(path: impl AsRef<Path>) -> Result<StudentParams> {
    let path = path.as_ref();
    let params: StudentParams = read_single(path, MODEL_HEADER)?;
    params.validate().map_err(|e| Error::Validation {
        path: path.into(),
        line: 2,
        message: e.to_string(),
    })?;
    Ok(params)
}

pub fn write_report(report: &MetricReport, path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), REPORT_HEADER, [report])
}

pub fn read_report(path: impl AsRef<Path>) -> Result<MetricReport> {
    read_single(path.as_ref(), REPORT_HEADER)
}

pub fn write_training_log(log: &TrainingLog, path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), TRAINLOG_HEADER, &log.epochs)
}
