//! Recording CSV, ground-truth JSON, report JSON and ROC CSV.
//!
//! Byte-level formats are described in `docs/formats.md`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mfpca_core::detect::{
    CsdReport, GroundTruth, SensorRecording, GROUND_TRUTH_SCHEMA_VERSION, REPORT_SCHEMA_VERSION,
};
use mfpca_core::eval::{ComparisonRow, RocCurve};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

pub const TIME_COLUMN: &str = "time_s";

/// Relative tolerance on the spacing of the time column.
const SPACING_TOL: f64 = 1e-6;

/// Writes `contents` to a temporary file next to `path`, then renames it
/// over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    tmp.write_all(contents).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Scientific notation with 17 significant digits, enough to round-trip.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn recording_to_csv(recording: &SensorRecording) -> String {
    let mut out = String::new();
    out.push_str(TIME_COLUMN);
    for name in recording.channels() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let rate = recording.sample_rate_hz();
    for (i, row) in recording.samples().rows().into_iter().enumerate() {
        out.push_str(&fmt_f64(i as f64 / rate));
        for v in row {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_recording(path: &Path, recording: &SensorRecording) -> Result<(), CliError> {
    write_atomic(path, recording_to_csv(recording).as_bytes())
}

/// Parses a recording. The sample rate comes from `sample_rate_hz` when
/// given, otherwise from the (uniform) spacing of the time column.
pub fn parse_recording(
    text: &str,
    source: &Path,
    sample_rate_hz: Option<f64>,
) -> Result<SensorRecording, CliError> {
    let malformed = |line: u64, message: String| CliError::Csv {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    if header.get(0) != Some(TIME_COLUMN) {
        return Err(malformed(
            1,
            format!("first column must be `{TIME_COLUMN}`"),
        ));
    }
    let channels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if channels.is_empty() {
        return Err(malformed(1, "no sensor columns".into()));
    }
    if let Some(c) = channels.iter().find(|c| c.trim().is_empty()) {
        return Err(malformed(1, format!("empty channel name `{c}`")));
    }

    let mut times = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                malformed(
                    line,
                    format!("column `{}`: `{field}` is not a number", &header[k]),
                )
            })?;
            if !v.is_finite() {
                return Err(malformed(
                    line,
                    format!("column `{}`: non-finite value", &header[k]),
                ));
            }
            if k == 0 {
                times.push((line, v));
            } else {
                values.push(v);
            }
        }
    }
    let t = times.len();
    if t == 0 {
        return Err(malformed(2, "no samples".into()));
    }

    let rate = match sample_rate_hz {
        Some(r) => r,
        None => {
            if t < 2 {
                return Err(malformed(
                    times[0].0,
                    "cannot infer the sample rate from a single sample".into(),
                ));
            }
            let step = times[1].1 - times[0].1;
            if step <= 0.0 {
                return Err(malformed(times[1].0, "time column must increase".into()));
            }
            for w in times.windows(2) {
                if ((w[1].1 - w[0].1) - step).abs() > SPACING_TOL * step {
                    return Err(malformed(
                        w[1].0,
                        format!("time column is not uniformly spaced (expected step {step})"),
                    ));
                }
            }
            // the end-to-end span averages out rounding in individual steps
            let dt = (times[t - 1].1 - times[0].1) / (t - 1) as f64;
            1.0 / dt
        }
    };
    let samples = Array2::from_shape_vec((t, channels.len()), values)
        .map_err(|e| malformed(0, e.to_string()))?;
    Ok(SensorRecording::new(channels, rate, samples)?)
}

pub fn read_recording(
    path: &Path,
    sample_rate_hz: Option<f64>,
) -> Result<SensorRecording, CliError> {
    parse_recording(&read_to_string(path)?, path, sample_rate_hz)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serialises");
    s.push('\n');
    s
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_to_string(path)?).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn check_version(path: &Path, found: u32, expected: u32) -> Result<(), CliError> {
    if found != expected {
        return Err(CliError::Usage(format!(
            "{}: schema_version {found} is not supported (expected {expected})",
            path.display()
        )));
    }
    Ok(())
}

pub fn truth_to_json(truth: &GroundTruth) -> String {
    to_json(truth)
}

pub fn write_truth(path: &Path, truth: &GroundTruth) -> Result<(), CliError> {
    write_atomic(path, truth_to_json(truth).as_bytes())
}

pub fn read_truth(path: &Path) -> Result<GroundTruth, CliError> {
    let truth: GroundTruth = read_json(path)?;
    check_version(path, truth.schema_version, GROUND_TRUTH_SCHEMA_VERSION)?;
    Ok(truth)
}

pub fn report_to_json(report: &CsdReport) -> String {
    to_json(report)
}

pub fn read_report(path: &Path) -> Result<CsdReport, CliError> {
    let report: CsdReport = read_json(path)?;
    check_version(path, report.schema_version, REPORT_SCHEMA_VERSION)?;
    Ok(report)
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    read_json(path)
}

/// `fpr,tpr` header, then one point per line.
pub fn roc_to_csv(curve: &RocCurve) -> String {
    let mut out = String::from("fpr,tpr\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{}", p.fpr, p.tpr);
    }
    out
}

/// Signed AUC increment, or `-` for the baseline.
pub fn fmt_increment(increment: Option<f64>) -> String {
    increment.map_or_else(|| "-".to_string(), |d| format!("{d:+}"))
}

/// `name,auc,increment,reports`, one line per group.
pub fn summary_to_csv(rows: &[ComparisonRow], sources: &[String]) -> String {
    let mut out = String::from("name,auc,increment,reports\n");
    for (row, src) in rows.iter().zip(sources) {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.name,
            row.auc,
            fmt_increment(row.increment),
            src
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SensorRecording, CliError> {
        parse_recording(text, Path::new("in.csv"), None)
    }

    fn line_of(err: CliError) -> u64 {
        match err {
            CliError::Csv { line, .. } => line,
            other => panic!("expected a CSV error, got {other:?}"),
        }
    }

    #[test]
    fn parses_header_and_rate() {
        let rec = parse("time_s,a,b\n0,1,2\n0.5,3,4\n1.0,5,6\n").unwrap();
        assert_eq!(rec.channels(), ["a", "b"]);
        assert_eq!(rec.sample_rate_hz(), 2.0);
        assert_eq!(rec.samples()[[2, 1]], 6.0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(line_of(parse("time_s,a\n0,1\n0.5,x\n").unwrap_err()), 3);
        assert_eq!(line_of(parse("time_s,a\n0,1\n0.5,1,2\n").unwrap_err()), 3);
        assert_eq!(line_of(parse("t,a\n0,1\n").unwrap_err()), 1);
        assert_eq!(
            line_of(parse("time_s,a\n0,1\n0.5,1\n2.0,1\n").unwrap_err()),
            4
        );
        assert_eq!(line_of(parse("time_s,a\n0,1\n0.5,nan\n").unwrap_err()), 3);
        assert_eq!(line_of(parse("time_s\n0\n").unwrap_err()), 1);
        assert!(matches!(parse("time_s,a\n"), Err(CliError::Csv { .. })));
    }

    #[test]
    fn explicit_rate_skips_inference() {
        let rec = parse_recording("time_s,a\n0,1\n", Path::new("x"), Some(10.0)).unwrap();
        assert_eq!(rec.sample_rate_hz(), 10.0);
        assert!(parse("time_s,a\n0,1\n").is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let values = [
            0.1,
            -1.0 / 3.0,
            1e-300,
            123456.789,
            f64::MIN_POSITIVE,
            -0.0,
            2.0f64.sqrt(),
        ];
        let samples =
            Array2::from_shape_fn((values.len(), 2), |(i, j)| values[i] * (j as f64 + 1.0));
        let rec = SensorRecording::new(vec!["x".into(), "y".into()], 3.0, samples).unwrap();
        let text = recording_to_csv(&rec);
        let back = parse(&text).unwrap();
        for (a, b) in rec.samples().iter().zip(back.samples().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!((back.sample_rate_hz() - 3.0).abs() < 1e-12);
        assert_eq!(
            recording_to_csv(&back.clone()).lines().next(),
            Some("time_s,x,y")
        );
    }

    #[test]
    fn increment_format() {
        assert_eq!(fmt_increment(None), "-");
        assert_eq!(fmt_increment(Some(0.0117)), "+0.0117");
        assert_eq!(fmt_increment(Some(-0.25)), "-0.25");
    }
}
