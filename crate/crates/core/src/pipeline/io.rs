//! CSV formats: sensor logs, step responses, simulator truth, per-step
//! reports and trajectories.
//!
//! Numbers are written with `f64`'s `Display`, which is the shortest string
//! that parses back to the same value, so parse → write is byte-identical for
//! files this module produced. Missing values are empty fields.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::SimRun;
use crate::sysid::StepResponseSeries;
use crate::vehicle::SensorRecord;

pub const SENSOR_HEADER: [&str; 4] = ["t", "lat", "lon", "heading_deg"];
pub const STEP_HEADER: [&str; 3] = ["t", "value", "input_level"];
pub const TRUTH_HEADER: [&str; 7] = ["t", "x_north", "y_east", "heading", "speed", "u_true", "r_true"];
pub const GAP_HEADER: [&str; 1] = ["t"];

/// A parsed data row with its 1-based line number in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub line: u64,
    pub fields: Vec<Option<f64>>,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses a numeric table with an exact header. Empty fields become `None`.
pub fn parse_table(text: &str, header: &[&str], path: &Path) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let first = match records.next() {
        Some(r) => r.map_err(|e| parse_error(path, 1, e.to_string()))?,
        None => return Err(parse_error(path, 1, "empty file")),
    };
    let found: Vec<&str> = first.iter().collect();
    if found != header {
        return Err(parse_error(
            path,
            1,
            format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let mut fields = Vec::with_capacity(rec.len());
        for (name, raw) in header.iter().zip(rec.iter()) {
            if raw.is_empty() {
                fields.push(None);
                continue;
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_error(path, line, format!("{name}: `{raw}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, format!("{name}: non-finite value")));
            }
            fields.push(Some(v));
        }
        rows.push(Row { line, fields });
    }
    Ok(rows)
}

fn required(row: &Row, header: &[&str], path: &Path) -> Result<Vec<f64>> {
    row.fields
        .iter()
        .zip(header)
        .map(|(f, name)| f.ok_or_else(|| parse_error(path, row.line, format!("{name} is missing"))))
        .collect()
}

/// Formats a numeric table; `None` becomes an empty field.
pub fn format_table<I>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = Vec<Option<f64>>>,
{
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        let fields = row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default());
        w.write_record(fields).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII output")
}

/// GPS/compass log. `lines[i]` is the source line of `records[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLog {
    pub path: PathBuf,
    pub records: Vec<SensorRecord>,
    pub lines: Vec<u64>,
}

pub fn parse_sensor_log(text: &str, path: &Path) -> Result<SensorLog> {
    let rows = parse_table(text, &SENSOR_HEADER, path)?;
    if rows.is_empty() {
        return Err(parse_error(path, 1, "log has no records"));
    }
    let mut records = Vec::with_capacity(rows.len());
    let mut lines = Vec::with_capacity(rows.len());
    for row in &rows {
        let v = required(row, &SENSOR_HEADER, path)?;
        let rec = SensorRecord::new(v[0], v[1], v[2], v[3])
            .map_err(|e| parse_error(path, row.line, e.to_string()))?;
        if let Some(prev) = records.last().map(|r: &SensorRecord| r.timestamp) {
            if !(rec.timestamp > prev) {
                return Err(parse_error(path, row.line, "timestamps must increase"));
            }
        }
        records.push(rec);
        lines.push(row.line);
    }
    Ok(SensorLog {
        path: path.to_path_buf(),
        records,
        lines,
    })
}

pub fn read_sensor_log(path: &Path) -> Result<SensorLog> {
    parse_sensor_log(&read_text(path)?, path)
}

pub fn format_sensor_log(records: &[SensorRecord]) -> String {
    format_table(
        &SENSOR_HEADER,
        records.iter().map(|r| {
            vec![
                Some(r.timestamp),
                Some(r.latitude),
                Some(r.longitude),
                Some(r.heading),
            ]
        }),
    )
}

/// Step-response log; the onset is the first row with a nonzero input level.
pub fn parse_step_series(text: &str, path: &Path) -> Result<StepResponseSeries> {
    let rows = parse_table(text, &STEP_HEADER, path)?;
    let mut cols = [Vec::new(), Vec::new(), Vec::new()];
    for row in &rows {
        let v = required(row, &STEP_HEADER, path)?;
        for (c, x) in cols.iter_mut().zip(v) {
            c.push(x);
        }
    }
    StepResponseSeries::from_rows(&cols[0], &cols[1], &cols[2]).map_err(|e| match e {
        Error::DegenerateData(_) => e,
        other => parse_error(path, 1, other.to_string()),
    })
}

pub fn read_step_series(path: &Path) -> Result<StepResponseSeries> {
    parse_step_series(&read_text(path)?, path)
}

pub fn format_step_series(times: &[f64], values: &[f64], levels: &[f64]) -> String {
    format_table(
        &STEP_HEADER,
        times
            .iter()
            .zip(values)
            .zip(levels)
            .map(|((&t, &v), &l)| vec![Some(t), Some(v), Some(l)]),
    )
}

/// One row of the simulator truth file. `heading` is the unwrapped compass
/// heading in radians, `x_north`/`y_east` are metres from the start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub t: f64,
    pub x_north: f64,
    pub y_east: f64,
    pub heading: f64,
    pub speed: f64,
    pub u_true: f64,
    pub r_true: f64,
}

pub fn truth_rows(run: &SimRun) -> Vec<TruthRow> {
    run.truth
        .iter()
        .map(|s| TruthRow {
            t: s.t,
            x_north: s.state.north,
            y_east: s.state.east,
            heading: s.state.heading,
            speed: s.state.speed,
            u_true: s.surge_input,
            r_true: s.yaw_input,
        })
        .collect()
}

pub fn parse_truth(text: &str, path: &Path) -> Result<Vec<TruthRow>> {
    parse_table(text, &TRUTH_HEADER, path)?
        .iter()
        .map(|row| {
            let v = required(row, &TRUTH_HEADER, path)?;
            Ok(TruthRow {
                t: v[0],
                x_north: v[1],
                y_east: v[2],
                heading: v[3],
                speed: v[4],
                u_true: v[5],
                r_true: v[6],
            })
        })
        .collect()
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    parse_truth(&read_text(path)?, path)
}

pub fn format_truth(rows: &[TruthRow]) -> String {
    format_table(
        &TRUTH_HEADER,
        rows.iter().map(|r| {
            [r.t, r.x_north, r.y_east, r.heading, r.speed, r.u_true, r.r_true]
                .into_iter()
                .map(Some)
                .collect()
        }),
    )
}

pub fn format_gaps(gaps: &[f64]) -> String {
    format_table(&GAP_HEADER, gaps.iter().map(|&t| vec![Some(t)]))
}
