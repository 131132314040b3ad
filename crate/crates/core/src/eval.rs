//! Localization error statistics and report tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::LocalizationRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no successful localizations to summarize")]
    EmptySet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid record for image {image_id}: {reason}")]
    InvalidRecord { image_id: u32, reason: String },
    #[error("table parse error: {0}")]
    Parse(String),
}

/// Outcome of one query; errors are present exactly when it succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: u32,
    pub success: bool,
    pub position_error: Option<f64>,
    pub rotation_error_deg: Option<f64>,
}

impl EvalRecord {
    pub fn success(image_id: u32, position_error: f64, rotation_error_deg: f64) -> Self {
        Self {
            image_id,
            success: true,
            position_error: Some(position_error),
            rotation_error_deg: Some(rotation_error_deg),
        }
    }

    pub fn failure(image_id: u32) -> Self {
        Self {
            image_id,
            success: false,
            position_error: None,
            rotation_error_deg: None,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: &str| {
            Err(EvalError::InvalidRecord {
                image_id: self.image_id,
                reason: reason.into(),
            })
        };
        match (self.success, self.position_error, self.rotation_error_deg) {
            (true, Some(p), Some(r)) => {
                if !(p >= 0.0 && p.is_finite() && r >= 0.0 && r.is_finite()) {
                    return bad("errors must be finite and non-negative");
                }
                Ok(())
            }
            (false, None, None) => Ok(()),
            (true, _, _) => bad("a success needs both position and rotation errors"),
            (false, _, _) => bad("a failure carries no errors"),
        }
    }

    /// Reads a localization result; a success must carry ground-truth errors.
    pub fn from_localization(rec: &LocalizationRecord) -> Result<Self, EvalError> {
        let out = if rec.success {
            Self {
                image_id: rec.image_id,
                success: true,
                position_error: rec.position_error,
                rotation_error_deg: rec.rotation_error_deg,
            }
        } else {
            Self::failure(rec.image_id)
        };
        out.validate()?;
        Ok(out)
    }
}

/// Nearest-rank percentile of an ascending list: the value at 1-based
/// index `ceil(P / 100 * n)`.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64, EvalError> {
    if sorted.is_empty() {
        return Err(EvalError::EmptySet);
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(EvalError::InvalidParameter(format!("percentile must lie in (0, 100], got {p}")));
    }
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub median: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
}

impl ErrorStats {
    /// Statistics of unsorted errors; the median is the 50th percentile.
    pub fn from_errors(errors: &[f64]) -> Result<Self, EvalError> {
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let p50 = percentile(&sorted, 50.0)?;
        Ok(Self {
            median: p50,
            p25: percentile(&sorted, 25.0)?,
            p50,
            p75: percentile(&sorted, 75.0)?,
            p90: percentile(&sorted, 90.0)?,
        })
    }

    fn columns(&self) -> [f64; 5] {
        [self.median, self.p25, self.p50, self.p75, self.p90]
    }

    fn from_columns(c: [f64; 5]) -> Self {
        Self {
            median: c[0],
            p25: c[1],
            p50: c[2],
            p75: c[3],
            p90: c[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_total: usize,
    pub n_success: usize,
    pub rate: f64,
    pub position: Option<ErrorStats>,
    pub rotation_deg: Option<ErrorStats>,
}

impl Report {
    /// Report of a run in which nothing was localized.
    pub fn without_successes(n_total: usize) -> Self {
        Self {
            n_total,
            n_success: 0,
            rate: 0.0,
            position: None,
            rotation_deg: None,
        }
    }
}

fn rate(n_success: usize, n_total: usize) -> f64 {
    if n_total == 0 {
        0.0
    } else {
        n_success as f64 / n_total as f64
    }
}

/// Error statistics over the successful records; every record counts toward the rate.
pub fn summarize(records: &[EvalRecord]) -> Result<Report, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptySet);
    }
    for r in records {
        r.validate()?;
    }
    let ok: Vec<&EvalRecord> = records.iter().filter(|r| r.success).collect();
    if ok.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let pos: Vec<f64> = ok.iter().filter_map(|r| r.position_error).collect();
    let rot: Vec<f64> = ok.iter().filter_map(|r| r.rotation_error_deg).collect();
    Ok(Report {
        n_total: records.len(),
        n_success: ok.len(),
        rate: rate(ok.len(), records.len()),
        position: Some(ErrorStats::from_errors(&pos)?),
        rotation_deg: Some(ErrorStats::from_errors(&rot)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(EvalError::InvalidParameter(format!("unknown table format {s:?}"))),
        }
    }
}

const HEADER_LABEL: &str = "Errors \\ Metrics";
const POSITION_LABEL: &str = "Position Error (m)";
const ANGLE_LABEL: &str = "Angle Error (degrees)";
const LOCALIZED_LABEL: &str = "Localized";
const COLUMNS: [&str; 5] = ["Median", "P 25%", "P 50%", "P 75%", "P 90%"];
const LABEL_WIDTH: usize = 24;
const VALUE_WIDTH: usize = 12;
const CSV_HEADER: [&str; 9] = ["metric", "n_total", "n_success", "rate", "median", "p25", "p50", "p75", "p90"];

/// Text tables print four decimals, the precision of published tables;
/// csv and json keep every bit.
pub fn emit_table(report: &Report, format: TableFormat) -> Vec<u8> {
    match format {
        TableFormat::Text => emit_text(report).into_bytes(),
        TableFormat::Csv => emit_csv(report),
        TableFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
    }
}

fn emit_text(report: &Report) -> String {
    let mut s = format!("{HEADER_LABEL:<LABEL_WIDTH$}");
    for c in COLUMNS {
        let _ = write!(s, "{c:>VALUE_WIDTH$}");
    }
    s.push('\n');
    for (label, stats) in [(POSITION_LABEL, &report.position), (ANGLE_LABEL, &report.rotation_deg)] {
        let _ = write!(s, "{label:<LABEL_WIDTH$}");
        match stats {
            Some(st) => st.columns().iter().for_each(|v| {
                let _ = write!(s, "{:>VALUE_WIDTH$}", format!("{v:.4}"));
            }),
            None => (0..5).for_each(|_| {
                let _ = write!(s, "{:>VALUE_WIDTH$}", "-");
            }),
        }
        s.push('\n');
    }
    let _ = writeln!(
        s,
        "{LOCALIZED_LABEL:<LABEL_WIDTH$}{} / {} (rate {:.4})",
        report.n_success, report.n_total, report.rate
    );
    s
}

fn emit_csv(report: &Report) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for (label, stats) in [("position_m", &report.position), ("rotation_deg", &report.rotation_deg)] {
        let mut row = vec![
            label.to_string(),
            report.n_total.to_string(),
            report.n_success.to_string(),
            report.rate.to_string(),
        ];
        match stats {
            Some(st) => row.extend(st.columns().iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn parse_table(bytes: &[u8], format: TableFormat) -> Result<Report, EvalError> {
    match format {
        TableFormat::Text => {
            let text = std::str::from_utf8(bytes).map_err(|e| EvalError::Parse(e.to_string()))?;
            parse_text(text)
        }
        TableFormat::Csv => parse_csv(bytes),
        TableFormat::Json => serde_json::from_slice(bytes).map_err(|e| EvalError::Parse(e.to_string())),
    }
}

fn parse_err<T>(m: impl Into<String>) -> Result<T, EvalError> {
    Err(EvalError::Parse(m.into()))
}

fn parse_f64(s: &str) -> Result<f64, EvalError> {
    s.parse().map_err(|_| EvalError::Parse(format!("bad number {s:?}")))
}

fn parse_usize(s: &str) -> Result<usize, EvalError> {
    s.parse().map_err(|_| EvalError::Parse(format!("bad count {s:?}")))
}

fn parse_stats_row(line: &str, label: &str) -> Result<Option<ErrorStats>, EvalError> {
    let Some(rest) = line.strip_prefix(label) else {
        return parse_err(format!("expected a {label:?} row, got {line:?}"));
    };
    let fields: Vec<&str> = rest.split_whitespace().collect();
    if fields.len() != 5 {
        return parse_err(format!("{label:?} row needs 5 values, got {}", fields.len()));
    }
    if fields.iter().all(|f| *f == "-") {
        return Ok(None);
    }
    let mut c = [0.0; 5];
    for (slot, f) in c.iter_mut().zip(&fields) {
        *slot = parse_f64(f)?;
    }
    Ok(Some(ErrorStats::from_columns(c)))
}

fn parse_text(text: &str) -> Result<Report, EvalError> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != 4 {
        return parse_err(format!("text table has 4 lines, got {}", lines.len()));
    }
    let header: Vec<&str> = match lines[0].strip_prefix(HEADER_LABEL) {
        Some(rest) => rest.split("  ").map(str::trim).filter(|t| !t.is_empty()).collect(),
        None => return parse_err("missing table header"),
    };
    if header != COLUMNS {
        return parse_err(format!("unexpected columns {header:?}"));
    }
    let position = parse_stats_row(lines[1], POSITION_LABEL)?;
    let rotation_deg = parse_stats_row(lines[2], ANGLE_LABEL)?;
    let Some(rest) = lines[3].strip_prefix(LOCALIZED_LABEL) else {
        return parse_err("missing localization row");
    };
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    let [ns, "/", nt, "(rate", r] = tokens[..] else {
        return parse_err(format!("bad localization row {:?}", lines[3]));
    };
    let (n_success, n_total) = (parse_usize(ns)?, parse_usize(nt)?);
    let Some(r) = r.strip_suffix(')') else {
        return parse_err("bad rate field");
    };
    let printed = parse_f64(r)?;
    let rate = rate(n_success, n_total);
    if format!("{rate:.4}") != format!("{printed:.4}") {
        return parse_err(format!("rate {printed} disagrees with {n_success} / {n_total}"));
    }
    report_checked(n_total, n_success, rate, position, rotation_deg)
}

fn parse_csv(bytes: &[u8]) -> Result<Report, EvalError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| EvalError::Parse(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return parse_err(format!("unexpected csv header {header:?}"));
    }
    let rows = r
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| EvalError::Parse(e.to_string()))?;
    if rows.len() != 2 || &rows[0][0] != "position_m" || &rows[1][0] != "rotation_deg" {
        return parse_err("csv table needs position_m and rotation_deg rows");
    }
    let counts = |row: &csv::StringRecord| -> Result<(usize, usize, f64), EvalError> {
        Ok((parse_usize(&row[1])?, parse_usize(&row[2])?, parse_f64(&row[3])?))
    };
    let (n_total, n_success, rate) = counts(&rows[0])?;
    if counts(&rows[1])? != (n_total, n_success, rate) {
        return parse_err("csv rows disagree on counts");
    }
    let stats = |row: &csv::StringRecord| -> Result<Option<ErrorStats>, EvalError> {
        if (4..9).all(|i| row[i].is_empty()) {
            return Ok(None);
        }
        let mut c = [0.0; 5];
        for (i, slot) in c.iter_mut().enumerate() {
            *slot = parse_f64(&row[4 + i])?;
        }
        Ok(Some(ErrorStats::from_columns(c)))
    };
    report_checked(n_total, n_success, rate, stats(&rows[0])?, stats(&rows[1])?)
}

fn report_checked(
    n_total: usize,
    n_success: usize,
    rate: f64,
    position: Option<ErrorStats>,
    rotation_deg: Option<ErrorStats>,
) -> Result<Report, EvalError> {
    if n_success > n_total {
        return parse_err(format!("{n_success} successes out of {n_total}"));
    }
    if position.is_some() != rotation_deg.is_some() {
        return parse_err("position and rotation statistics must both be present or both absent");
    }
    Ok(Report {
        n_total,
        n_success,
        rate,
        position,
        rotation_deg,
    })
}
