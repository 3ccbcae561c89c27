//! CSV datasets and adjacency lists.
//!
//! Dataset files carry a header with `segment_id`, `year`, `facility_id`,
//! `position_index`, `crash_count` and any number of predictor columns. Row
//! numbers in errors count data rows from 1.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nbbart_core::data::{CrashDataset, PredictorColumn};
use nbbart_core::Error as CoreError;

use crate::error::{AppError, AppResult};

pub const SEGMENT_ID: &str = "segment_id";
pub const YEAR: &str = "year";
pub const FACILITY_ID: &str = "facility_id";
pub const POSITION_INDEX: &str = "position_index";
pub const CRASH_COUNT: &str = "crash_count";
const REQUIRED: [&str; 5] = [SEGMENT_ID, YEAR, FACILITY_ID, POSITION_INDEX, CRASH_COUNT];

fn reader(path: &Path) -> AppResult<csv::Reader<File>> {
    let file = File::open(path).map_err(AppError::io(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> AppError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => AppError::Io { path: path.to_path_buf(), source },
        other => AppError::Data(format!("{}: {other:?}", path.display())),
    }
}

fn cell_error(row: usize, column: &str, message: impl Into<String>) -> AppError {
    AppError::data(CoreError::Cell { row, column: column.into(), message: message.into() })
}

fn parse_int(raw: &str, row: usize, column: &str) -> AppResult<i64> {
    raw.parse().map_err(|_| cell_error(row, column, format!("`{raw}` is not an integer")))
}

fn parse_count(raw: &str, row: usize) -> AppResult<u64> {
    match raw.parse::<i64>() {
        Ok(v) if v >= 0 => Ok(v as u64),
        Ok(v) => Err(cell_error(row, CRASH_COUNT, format!("negative count {v}"))),
        Err(_) => Err(cell_error(row, CRASH_COUNT, format!("`{raw}` is not a non-negative integer"))),
    }
}

fn parse_real(raw: &str, row: usize, column: &str) -> AppResult<f64> {
    if raw.is_empty() {
        return Err(cell_error(row, column, "missing value"));
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(cell_error(row, column, format!("`{raw}` is not a finite number"))),
    }
}

/// Loads the rows of one year. Without `year` the file must hold a single
/// year.
pub fn read_dataset(path: &Path, year: Option<i32>) -> AppResult<CrashDataset> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut required = [0usize; 5];
    for (slot, name) in required.iter_mut().zip(REQUIRED) {
        *slot = position(name).ok_or_else(|| AppError::data(CoreError::MissingColumn(name.into())))?;
    }
    let predictors: Vec<(usize, String)> =
        headers.iter().enumerate().filter(|(_, h)| !REQUIRED.contains(h)).map(|(i, h)| (i, h.to_string())).collect();

    let mut file_rows = Vec::new();
    let (mut ids, mut counts, mut facilities, mut positions) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); predictors.len()];
    let mut seen_year: Option<i32> = None;
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let y = parse_int(field(required[1]), row, YEAR)?;
        let y = i32::try_from(y).map_err(|_| cell_error(row, YEAR, "year out of range"))?;
        match year {
            Some(want) if want != y => continue,
            Some(_) => {}
            None => match seen_year {
                Some(prev) if prev != y => {
                    return Err(AppError::Data(format!(
                        "{} holds several years ({prev} and {y} at row {row}); select one",
                        path.display()
                    )))
                }
                _ => seen_year = Some(y),
            },
        }
        ids.push(parse_int(field(required[0]), row, SEGMENT_ID)?);
        facilities.push(parse_int(field(required[2]), row, FACILITY_ID)?);
        positions.push(parse_int(field(required[3]), row, POSITION_INDEX)?);
        counts.push(parse_count(field(required[4]), row)?);
        for ((i, name), column) in predictors.iter().zip(values.iter_mut()) {
            column.push(parse_real(field(*i), row, name)?);
        }
        file_rows.push(row);
    }
    if ids.is_empty() {
        return Err(match year {
            Some(y) => AppError::Data(format!("{}: no rows for year {y}", path.display())),
            None => AppError::data(CoreError::NoRows),
        });
    }
    let year = year.or(seen_year).unwrap_or_default();
    let columns = predictors.into_iter().zip(values).map(|((_, name), values)| PredictorColumn { name, values }).collect();
    CrashDataset::new(year, ids, counts, facilities, positions, columns).map_err(|e| AppError::data(file_row(e, &file_rows)))
}

/// Maps a row index of the selected rows back to the file row.
fn file_row(e: CoreError, rows: &[usize]) -> CoreError {
    let map = |r: usize| rows.get(r - 1).copied().unwrap_or(r);
    match e {
        CoreError::Cell { row, column, message } => CoreError::Cell { row: map(row), column, message },
        CoreError::DuplicateSegment { id, row } => CoreError::DuplicateSegment { id, row: map(row) },
        CoreError::DuplicatePosition { facility, position, row } => CoreError::DuplicatePosition { facility, position, row: map(row) },
        other => other,
    }
}

fn create(path: &Path) -> AppResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(AppError::io(path))?))
}

pub fn write_dataset(path: &Path, dataset: &CrashDataset) -> AppResult<()> {
    let mut out = create(path)?;
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(out, "{}", REQUIRED.join(","))?;
        for c in dataset.columns() {
            write!(out, ",{}", c.name)?;
        }
        writeln!(out)?;
        for i in 0..dataset.len() {
            write!(
                out,
                "{},{},{},{},{}",
                dataset.segment_ids()[i],
                dataset.year(),
                dataset.facility_ids()[i],
                dataset.positions()[i],
                dataset.counts()[i]
            )?;
            for c in dataset.columns() {
                write!(out, ",{}", c.values[i])?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write(&mut out).map_err(AppError::io(path))
}

pub const EDGE_A: &str = "segment_id_a";
pub const EDGE_B: &str = "segment_id_b";

/// Undirected edges between segment ids.
pub fn read_edges(path: &Path) -> AppResult<Vec<(i64, i64)>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let a = headers.iter().position(|h| h == EDGE_A).ok_or_else(|| AppError::data(CoreError::MissingColumn(EDGE_A.into())))?;
    let b = headers.iter().position(|h| h == EDGE_B).ok_or_else(|| AppError::data(CoreError::MissingColumn(EDGE_B.into())))?;
    let mut edges = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let ia = parse_int(record.get(a).unwrap_or(""), k + 1, EDGE_A)?;
        let ib = parse_int(record.get(b).unwrap_or(""), k + 1, EDGE_B)?;
        edges.push((ia, ib));
    }
    Ok(edges)
}

pub fn write_edges(path: &Path, edges: &[(i64, i64)]) -> AppResult<()> {
    let mut out = create(path)?;
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "{EDGE_A},{EDGE_B}")?;
        for (a, b) in edges {
            writeln!(out, "{a},{b}")?;
        }
        out.flush()
    };
    write(&mut out).map_err(AppError::io(path))
}
