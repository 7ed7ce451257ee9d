//! Sequence and prediction CSV files.
//!
//! A sequence file holds one frame per row. An optional header row names
//! the columns; it is recognized as a first row that does not parse as
//! numbers. Every row must have the same number of columns.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Raw numeric table read from a sequence file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub columns: usize,
    /// Row-major `[rows][columns]`.
    pub values: Vec<f64>,
}

impl Table {
    pub fn rows(&self) -> usize {
        if self.columns == 0 {
            0
        } else {
            self.values.len() / self.columns
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a numeric CSV file. Empty files, ragged rows and non-numeric
/// cells are parse errors carrying the 1-based line number.
pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_table_from(file, path)
}

pub(crate) fn read_table_from(reader: impl std::io::Read, path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut header = None;
    let mut columns = 0;
    let mut values = Vec::new();
    let mut first = true;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        if first {
            first = false;
            columns = record.len();
            if record.iter().any(|c| c.parse::<f64>().is_err()) {
                header = Some(record.iter().map(str::to_string).collect());
                continue;
            }
        }
        if record.len() != columns {
            return Err(parse_err(
                path,
                line,
                format!("{} columns, expected {columns}", record.len()),
            ));
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, line, format!("column {}: `{cell}` is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column {}: non-finite value", col + 1)));
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    Ok(Table {
        header,
        columns,
        values,
    })
}

/// Column names `name_x, name_y, name_z` per joint.
pub fn joint_header(joint_names: &[String]) -> Vec<String> {
    joint_names
        .iter()
        .flat_map(|n| ["x", "y", "z"].map(|a| format!("{n}_{a}")))
        .collect()
}

fn fmt_value(v: f64) -> String {
    // Shortest representation that parses back to the same value.
    format!("{v:?}")
}

/// Writes frames `[T][3M]` with a header row.
pub fn write_sequence(path: &Path, header: &[String], values: &[f64]) -> Result<()> {
    let width = header.len();
    if width == 0 || values.len() % width != 0 {
        return Err(Error::dim(
            "write_sequence",
            format!("{} values for {width} columns", values.len()),
        ));
    }
    let mut out = String::with_capacity(values.len() * 12);
    out.push_str(&header.join(","));
    out.push('\n');
    for row in values.chunks_exact(width) {
        let cells: Vec<String> = row.iter().map(|&v| fmt_value(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes predictions `[S][T_f][3M]` as rows `sample,frame,v...`; frames
/// are numbered from 1 (the first predicted frame).
pub fn write_predictions(path: &Path, predictions: &[f64], frames: usize, width: usize) -> Result<()> {
    if frames == 0 || width == 0 || predictions.len() % (frames * width) != 0 {
        return Err(Error::dim(
            "write_predictions",
            format!("{} values for {frames} frames x {width} columns", predictions.len()),
        ));
    }
    let mut file = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut header = vec!["sample".to_string(), "frame".to_string()];
    header.extend((0..width).map(|c| format!("v{c}")));
    let io = |e| Error::io(path, e);
    writeln!(file, "{}", header.join(",")).map_err(io)?;
    for (i, row) in predictions.chunks_exact(width).enumerate() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_value(v)).collect();
        writeln!(file, "{},{},{}", i / frames, i % frames + 1, cells.join(",")).map_err(io)?;
    }
    file.flush().map_err(io)
}

/// Reads a file written by [`write_predictions`] back into
/// `(samples, frames, values)`.
pub fn read_predictions(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let table = read_table(path)?;
    if table.columns < 3 {
        return Err(parse_err(path, 1, "prediction rows need sample, frame and values"));
    }
    let mut samples = 0;
    let mut frames = 0;
    let mut values = Vec::with_capacity(table.rows() * (table.columns - 2));
    for row in table.values.chunks_exact(table.columns) {
        samples = samples.max(row[0] as usize + 1);
        frames = frames.max(row[1] as usize);
        values.extend_from_slice(&row[2..]);
    }
    Ok((samples, frames, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Table> {
        read_table_from(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn header_is_optional() {
        let with = parse("a,b\n1,2\n3,4\n").unwrap();
        assert_eq!(with.header, Some(vec!["a".into(), "b".into()]));
        assert_eq!(with.values, vec![1.0, 2.0, 3.0, 4.0]);
        let without = parse("1,2\n3,4\n").unwrap();
        assert_eq!(without.header, None);
        assert_eq!(without.rows(), 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse("a,b\n1,2\n3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse("a,b\n1,2\n3,x\n") {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("column 2"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse(""), Err(Error::Parse { .. })));
        assert!(matches!(parse("a,b\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn sequence_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let values = vec![0.1, -1.0 / 3.0, 2.5e-17, 7.0, 1e300, -0.0];
        write_sequence(&path, &["a".into(), "b".into(), "c".into()], &values).unwrap();
        let t = read_table(&path).unwrap();
        assert_eq!(t.columns, 3);
        assert_eq!(t.values, values);
    }

    #[test]
    fn prediction_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let values: Vec<f64> = (0..2 * 3 * 6).map(|v| v as f64 * 0.25).collect();
        write_predictions(&path, &values, 3, 6).unwrap();
        let (s, f, back) = read_predictions(&path).unwrap();
        assert_eq!((s, f), (2, 3));
        assert_eq!(back, values);
    }
}
