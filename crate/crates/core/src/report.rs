//! CSV encoding of result rows.
//!
//! Columns are fixed: the run columns below, followed by four columns per
//! plant class (`class{j}_a`, `class{j}_avg_aoi`, `class{j}_iae`,
//! `class{j}_starved`) for as many classes as the widest row has. Reals are
//! written in shortest round-trip decimal form.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::scheduling::SchedulerKind;
use crate::simulation::LoopTrace;
use crate::sweep::{ClassRow, ResultRow};

pub const BASE_COLUMNS: [&str; 11] = [
    "scheduler",
    "n",
    "r_ul",
    "r_dl",
    "t_s",
    "t_sim",
    "seed",
    "avg_aoi",
    "iae",
    "starved_loops",
    "noise_checksum",
];

const CLASS_FIELDS: [&str; 4] = ["a", "avg_aoi", "iae", "starved"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("row has non-finite {field}")]
    NonFinite { field: &'static str },
}

pub fn header(class_count: usize) -> Vec<String> {
    let mut cols: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for j in 0..class_count {
        for f in CLASS_FIELDS {
            cols.push(format!("class{j}_{f}"));
        }
    }
    cols
}

fn record(row: &ResultRow, class_count: usize) -> Result<Vec<String>, ReportError> {
    for (field, v) in [("avg_aoi", row.avg_aoi), ("iae", row.iae)] {
        if !v.is_finite() {
            return Err(ReportError::NonFinite { field });
        }
    }
    let mut rec = vec![
        row.scheduler.to_string(),
        row.n.to_string(),
        row.r_ul.to_string(),
        row.r_dl.to_string(),
        row.t_s.to_string(),
        row.t_sim.to_string(),
        row.seed.to_string(),
        row.avg_aoi.to_string(),
        row.iae.to_string(),
        row.starved_loops.to_string(),
        format!("{:016x}", row.noise_checksum),
    ];
    for j in 0..class_count {
        match row.classes.get(j) {
            Some(c) => {
                if !(c.avg_aoi.is_finite() && c.iae.is_finite()) {
                    return Err(ReportError::NonFinite { field: "class metric" });
                }
                rec.extend([
                    c.label.clone(),
                    c.avg_aoi.to_string(),
                    c.iae.to_string(),
                    c.starved.to_string(),
                ]);
            }
            None => rec.extend(std::iter::repeat_n(String::new(), CLASS_FIELDS.len())),
        }
    }
    Ok(rec)
}

/// Renders rows (in the given order) as CSV text.
pub fn to_csv_string(rows: &[ResultRow]) -> Result<String, ReportError> {
    let classes = rows.iter().map(|r| r.classes.len()).max().unwrap_or(0);
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |source| ReportError::Csv {
        path: PathBuf::from("<memory>"),
        source,
    };
    wtr.write_record(header(classes)).map_err(csv_err)?;
    for row in rows {
        wtr.write_record(record(row, classes)?).map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| ReportError::Io {
        path: PathBuf::from("<memory>"),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<(), ReportError> {
    let text = to_csv_string(rows)?;
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses CSV produced by [`to_csv_string`].
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>, ReportError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| ReportError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < BASE_COLUMNS.len()
        || names[..BASE_COLUMNS.len()] != BASE_COLUMNS
        || !(names.len() - BASE_COLUMNS.len()).is_multiple_of(CLASS_FIELDS.len())
    {
        return Err(ReportError::Malformed {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let class_count = (names.len() - BASE_COLUMNS.len()) / CLASS_FIELDS.len();

    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx as u64 + 2;
        let rec = rec.map_err(|e| ReportError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        fn num<T: std::str::FromStr>(s: &str, name: &str, line: u64) -> Result<T, ReportError> {
            s.parse().map_err(|_| ReportError::Malformed {
                line,
                message: format!("bad {name} '{s}'"),
            })
        }
        let scheduler: SchedulerKind = field(0)
            .parse()
            .map_err(|message| ReportError::Malformed { line, message })?;
        let noise_checksum =
            u64::from_str_radix(field(10), 16).map_err(|_| ReportError::Malformed {
                line,
                message: format!("bad noise_checksum '{}'", field(10)),
            })?;
        let mut classes = Vec::new();
        for j in 0..class_count {
            let base = BASE_COLUMNS.len() + j * CLASS_FIELDS.len();
            if field(base).is_empty() {
                continue;
            }
            classes.push(ClassRow {
                label: field(base).to_string(),
                avg_aoi: num(field(base + 1), "class avg_aoi", line)?,
                iae: num(field(base + 2), "class iae", line)?,
                starved: num(field(base + 3), "class starved", line)?,
            });
        }
        rows.push(ResultRow {
            scheduler,
            n: num(field(1), "n", line)?,
            r_ul: num(field(2), "r_ul", line)?,
            r_dl: num(field(3), "r_dl", line)?,
            t_s: num(field(4), "t_s", line)?,
            t_sim: num(field(5), "t_sim", line)?,
            seed: num(field(6), "seed", line)?,
            avg_aoi: num(field(7), "avg_aoi", line)?,
            iae: num(field(8), "iae", line)?,
            starved_loops: num(field(9), "starved_loops", line)?,
            noise_checksum,
            classes,
        });
    }
    Ok(rows)
}

/// Per-slot traces in long form: `loop,slot,aoi,error_norm`.
pub fn traces_to_csv_string(traces: &[LoopTrace]) -> String {
    let mut out = String::from("loop,slot,aoi,error_norm\n");
    for (i, tr) in traces.iter().enumerate() {
        for (k, (aoi, err)) in tr.aoi.iter().zip(&tr.error_norm).enumerate() {
            out.push_str(&format!("{i},{},{aoi},{err}\n", tr.start_slot + k as u64));
        }
    }
    out
}

pub fn emit_traces(traces: &[LoopTrace], path: &Path) -> Result<(), ReportError> {
    fs::write(path, traces_to_csv_string(traces)).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text)
}
