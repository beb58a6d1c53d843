//! CSV import and export.
//!
//! Frames are written as a header row `time,<sensor_1>,...,<sensor_p>` followed by one
//! row per sample. Every number is printed with 17 significant digits so that a frame
//! survives a write/read cycle bit for bit.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::detector::DeltaScoreSeries;
use crate::frame::{Channel, FrameError, TimeSeriesFrame, UNIFORM_SPACING_RTOL};

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("header must be {0}")]
    BadHeader(&'static str),
    #[error("row {row}: expected {expected} cells, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column `{column}`: missing value")]
    Missing { row: usize, column: String },
    #[error("row {row}, column `{column}`: cannot parse `{text}`")]
    Parse {
        row: usize,
        column: String,
        text: String,
    },
    #[error("row {row}, column `{column}`: non-finite value")]
    NonFinite { row: usize, column: String },
    #[error("sample period {found} does not match expected {expected}")]
    Period { expected: f64, found: f64 },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Sensor ids, window times and the `windows × p` values of a per-window table.
pub type WindowTable = (Vec<String>, Vec<f64>, DMatrix<f64>);

const FRAME_HEADER: &str = "`time` followed by at least one sensor id";
const TABLE_HEADER: &str = "`window_time` followed by at least one sensor id";
const LABELS_HEADER: &str = "`sensor_id,attacked`";

/// Full-precision decimal rendering used by every writer.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_frame_csv<W: Write>(frame: &TimeSeriesFrame, out: W) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(frame.sensor_ids().iter().cloned());
    w.write_record(&header)?;
    let v = frame.values();
    for (k, t) in frame.times().iter().enumerate() {
        let mut rec = Vec::with_capacity(v.nrows() + 1);
        rec.push(fmt_f64(*t));
        rec.extend((0..v.nrows()).map(|i| fmt_f64(v[(i, k)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a frame CSV. Rows are numbered from 1 for the header in error messages.
///
/// When `expected_period` is given the file's sample period must match it within the
/// uniform-spacing tolerance.
pub fn read_frame_csv<R: Read>(
    input: R,
    channel: Channel,
    expected_period: Option<f64>,
) -> Result<TimeSeriesFrame, CsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = rdr.records();
    let header = records.next().ok_or(CsvError::BadHeader(FRAME_HEADER))??;
    if header.len() < 2 || header.get(0) != Some("time") {
        return Err(CsvError::BadHeader(FRAME_HEADER));
    }
    let columns: Vec<String> = header.iter().map(str::to_string).collect();
    let p = columns.len() - 1;

    let mut times = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (idx, rec) in records.enumerate() {
        let row = idx + 2;
        let rec = rec?;
        if rec.len() != columns.len() {
            return Err(CsvError::Ragged {
                row,
                expected: columns.len(),
                found: rec.len(),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let column = &columns[j];
            if cell.is_empty() {
                return Err(CsvError::Missing {
                    row,
                    column: column.clone(),
                });
            }
            let x: f64 = cell.parse().map_err(|_| CsvError::Parse {
                row,
                column: column.clone(),
                text: cell.to_string(),
            })?;
            if !x.is_finite() {
                return Err(CsvError::NonFinite {
                    row,
                    column: column.clone(),
                });
            }
            if j == 0 {
                times.push(x);
            } else {
                data.push(x);
            }
        }
    }
    let m = times.len();
    // data is row-major over samples, i.e. column-major for a p × m matrix
    let values = DMatrix::from_column_slice(p, m, &data);
    let frame = TimeSeriesFrame::new(columns[1..].to_vec(), channel, times, values)?;
    if let Some(expected) = expected_period {
        let found = frame.sample_period();
        if (found - expected).abs() > UNIFORM_SPACING_RTOL * expected {
            return Err(CsvError::Period { expected, found });
        }
    }
    Ok(frame)
}

fn write_window_table<W: Write>(
    sensor_ids: &[String],
    window_times: &[f64],
    table: &DMatrix<f64>,
    out: W,
) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["window_time".to_string()];
    header.extend(sensor_ids.iter().cloned());
    w.write_record(&header)?;
    for (r, t) in window_times.iter().enumerate() {
        let mut rec = vec![fmt_f64(*t)];
        rec.extend((0..table.ncols()).map(|i| fmt_f64(table[(r, i)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `window_time,<sensor_1>,...` with one Δ-score row per window.
pub fn write_scores_csv<W: Write>(series: &DeltaScoreSeries, out: W) -> Result<(), CsvError> {
    write_window_table(
        &series.sensor_ids,
        &series.window_times,
        &series.scores,
        out,
    )
}

/// Same layout as the score table, holding the divergences to the centroid.
pub fn write_distances_csv<W: Write>(series: &DeltaScoreSeries, out: W) -> Result<(), CsvError> {
    write_window_table(
        &series.sensor_ids,
        &series.window_times,
        &series.distances,
        out,
    )
}

/// Read a score (or distance) table back into `(sensor_ids, window_times, table)`.
pub fn read_window_table<R: Read>(input: R) -> Result<WindowTable, CsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = rdr.records();
    let header = records.next().ok_or(CsvError::BadHeader(TABLE_HEADER))??;
    if header.len() < 2 || header.get(0) != Some("window_time") {
        return Err(CsvError::BadHeader(TABLE_HEADER));
    }
    let columns: Vec<String> = header.iter().map(str::to_string).collect();
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, rec) in records.enumerate() {
        let row = idx + 2;
        let rec = rec?;
        if rec.len() != columns.len() {
            return Err(CsvError::Ragged {
                row,
                expected: columns.len(),
                found: rec.len(),
            });
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (j, cell) in rec.iter().enumerate() {
            // NaN marks a window whose fit failed
            let x: f64 = cell.parse().map_err(|_| CsvError::Parse {
                row,
                column: columns[j].clone(),
                text: cell.to_string(),
            })?;
            vals.push(x);
        }
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    let p = columns.len() - 1;
    let table = DMatrix::from_fn(rows.len(), p, |r, i| rows[r][i]);
    Ok((columns[1..].to_vec(), times, table))
}

/// `sensor_id,attacked` ground-truth labels.
pub fn write_labels_csv<W: Write>(
    sensor_ids: &[String],
    attacked: &[bool],
    out: W,
) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sensor_id", "attacked"])?;
    for (id, a) in sensor_ids.iter().zip(attacked) {
        w.write_record([id.as_str(), if *a { "true" } else { "false" }])?;
    }
    w.flush()?;
    Ok(())
}

/// Read `sensor_id,attacked` labels written by [`write_labels_csv`].
pub fn read_labels_csv<R: Read>(input: R) -> Result<Vec<(String, bool)>, CsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = rdr.records();
    let header = records.next().ok_or(CsvError::BadHeader(LABELS_HEADER))??;
    if header.iter().collect::<Vec<_>>() != ["sensor_id", "attacked"] {
        return Err(CsvError::BadHeader(LABELS_HEADER));
    }
    let mut out = Vec::new();
    for (idx, rec) in records.enumerate() {
        let row = idx + 2;
        let rec = rec?;
        if rec.len() != 2 {
            return Err(CsvError::Ragged {
                row,
                expected: 2,
                found: rec.len(),
            });
        }
        let flag = match &rec[1] {
            "true" => true,
            "false" => false,
            other => {
                return Err(CsvError::Parse {
                    row,
                    column: "attacked".into(),
                    text: other.to_string(),
                })
            }
        };
        out.push((rec[0].to_string(), flag));
    }
    Ok(out)
}
