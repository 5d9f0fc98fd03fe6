//! CSV ingestion with located diagnostics.
//!
//! Contract: header row required; `time` (real >= 0), `event` (0/1),
//! `arm` (0/1, trial files only) and optional `stratum` (integer) are
//! reserved columns, matched case-insensitively; every other column is a
//! covariate, named by its header. Values `NA`, `NaN`, or empty mark a
//! missing covariate and are mean-imputed. Malformed cells fail with the
//! 1-based data row and column name; rows are never silently dropped.

use std::path::Path;

use covadj_core::data::{impute_column_means, Arm, Subject, TrialDataset};
use covadj_core::prognostic::ExternalControls;

use crate::CliError;

pub struct LoadDiagnostics {
    pub n_rows: usize,
    pub imputed_cells: usize,
    pub warnings: Vec<String>,
}

struct RawTable {
    feature_names: Vec<String>,
    time_idx: usize,
    event_idx: usize,
    arm_idx: Option<usize>,
    stratum_idx: Option<usize>,
    feature_idx: Vec<usize>,
    rows: Vec<csv::StringRecord>,
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

fn read_table(path: &Path, need_arm: bool) -> Result<RawTable, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: bad header: {e}", path.display())))?
        .clone();

    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let time_idx = find("time");
    let event_idx = find("event");
    let arm_idx = find("arm");
    let stratum_idx = find("stratum");

    let mut missing = Vec::new();
    if time_idx.is_none() {
        missing.push("time");
    }
    if event_idx.is_none() {
        missing.push("event");
    }
    if need_arm && arm_idx.is_none() {
        missing.push("arm");
    }
    if !missing.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: missing required columns: {}",
            path.display(),
            missing.join(", ")
        )));
    }

    let reserved = [time_idx, event_idx, arm_idx, stratum_idx];
    let mut feature_idx = Vec::new();
    let mut feature_names = Vec::new();
    for (k, h) in headers.iter().enumerate() {
        if reserved.iter().flatten().any(|&r| r == k) {
            continue;
        }
        feature_idx.push(k);
        feature_names.push(h.to_string());
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            CliError::Validation(format!("{}: row {}: {e}", path.display(), i + 1))
        })?;
        rows.push(record);
    }
    if rows.is_empty() {
        return Err(CliError::Validation(format!("{}: no data rows", path.display())));
    }
    Ok(RawTable {
        feature_names,
        time_idx: time_idx.unwrap(),
        event_idx: event_idx.unwrap(),
        arm_idx,
        stratum_idx,
        feature_idx,
        rows,
    })
}

fn cell<'a>(record: &'a csv::StringRecord, idx: usize, row: usize, col: &str) -> Result<&'a str, CliError> {
    record
        .get(idx)
        .ok_or_else(|| CliError::Validation(format!("row {row}: column '{col}' is absent")))
}

fn parse_time(s: &str, row: usize) -> Result<f64, CliError> {
    let v: f64 = s
        .parse()
        .map_err(|_| CliError::Validation(format!("row {row}: column 'time': not a number: '{s}'")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(CliError::Validation(format!(
            "row {row}: column 'time': must be finite and nonnegative, got {s}"
        )));
    }
    Ok(v)
}

fn parse_binary(s: &str, row: usize, col: &str) -> Result<bool, CliError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(CliError::Validation(format!(
            "row {row}: column '{col}': expected 0 or 1, got '{other}'"
        ))),
    }
}

fn parse_covariate(s: &str, row: usize, col: &str) -> Result<f64, CliError> {
    if is_missing(s) {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| {
        CliError::Validation(format!("row {row}: column '{col}': not a number: '{s}'"))
    })
}

fn extract_covariates(table: &RawTable) -> Result<(Vec<Vec<f64>>, usize), CliError> {
    let mut rows = Vec::with_capacity(table.rows.len());
    for (i, record) in table.rows.iter().enumerate() {
        let row_no = i + 1;
        let mut out = Vec::with_capacity(table.feature_idx.len());
        for (&idx, name) in table.feature_idx.iter().zip(&table.feature_names) {
            let s = cell(record, idx, row_no, name)?;
            out.push(parse_covariate(s, row_no, name)?);
        }
        rows.push(out);
    }
    let imputed = impute_column_means(&mut rows)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok((rows, imputed))
}

/// Load a trial CSV into a validated dataset.
pub fn load_trial(
    path: &Path,
    tau: Option<f64>,
    pi: Option<f64>,
) -> Result<(TrialDataset, LoadDiagnostics), CliError> {
    let table = read_table(path, true)?;
    let (covariates, imputed_cells) = extract_covariates(&table)?;

    let mut subjects = Vec::with_capacity(table.rows.len());
    for (i, record) in table.rows.iter().enumerate() {
        let row_no = i + 1;
        let time = parse_time(cell(record, table.time_idx, row_no, "time")?, row_no)?;
        let event = parse_binary(cell(record, table.event_idx, row_no, "event")?, row_no, "event")?;
        let arm_raw =
            parse_binary(cell(record, table.arm_idx.unwrap(), row_no, "arm")?, row_no, "arm")?;
        let arm = if arm_raw { Arm::Treatment } else { Arm::Control };
        let mut subject = Subject::new(time, event, arm).with_covariates(covariates[i].clone());
        if let Some(sidx) = table.stratum_idx {
            let s = cell(record, sidx, row_no, "stratum")?;
            if !is_missing(s) {
                let label: u32 = s.parse().map_err(|_| {
                    CliError::Validation(format!(
                        "row {row_no}: column 'stratum': expected a small integer, got '{s}'"
                    ))
                })?;
                subject = subject.with_stratum(label);
            }
        }
        subjects.push(subject);
    }

    let n_rows = subjects.len();
    let data = TrialDataset::new(subjects, tau, pi)
        .and_then(|d| d.with_feature_names(table.feature_names.clone()))
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let mut warnings = Vec::new();
    if imputed_cells > 0 {
        warnings.push(format!("{imputed_cells} missing covariate cells mean-imputed"));
    }
    Ok((data, LoadDiagnostics { n_rows, imputed_cells, warnings }))
}

/// Load an external control CSV. The `arm` column, if present, is ignored.
pub fn load_external(
    path: &Path,
    tau: Option<f64>,
) -> Result<(ExternalControls, LoadDiagnostics), CliError> {
    let table = read_table(path, false)?;
    let (covariates, imputed_cells) = extract_covariates(&table)?;

    let mut times = Vec::with_capacity(table.rows.len());
    let mut events = Vec::with_capacity(table.rows.len());
    for (i, record) in table.rows.iter().enumerate() {
        let row_no = i + 1;
        times.push(parse_time(cell(record, table.time_idx, row_no, "time")?, row_no)?);
        events.push(parse_binary(
            cell(record, table.event_idx, row_no, "event")?,
            row_no,
            "event",
        )?);
    }

    let n_rows = times.len();
    let ext = ExternalControls::new(times, events, covariates, table.feature_names.clone(), tau)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let mut warnings = Vec::new();
    if imputed_cells > 0 {
        warnings.push(format!("{imputed_cells} missing covariate cells mean-imputed"));
    }
    if ext.is_small() {
        warnings.push(format!("external cohort has only {} rows", ext.n()));
    }
    Ok((ext, LoadDiagnostics { n_rows, imputed_cells, warnings }))
}

/// Load a one-column score file (column named `score`, or the only column).
pub fn load_scores(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: bad header: {e}", path.display())))?
        .clone();
    let idx = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("score"))
        .or(if headers.len() == 1 { Some(0) } else { None })
        .ok_or_else(|| {
            CliError::Validation(format!(
                "{}: need a 'score' column (or a single-column file)",
                path.display()
            ))
        })?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| CliError::Validation(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        let s = cell(&record, idx, i + 1, "score")?;
        let v: f64 = s.parse().map_err(|_| {
            CliError::Validation(format!("row {}: column 'score': not a number: '{s}'", i + 1))
        })?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Validation(format!("{}: no data rows", path.display())));
    }
    Ok(out)
}

pub fn write_scores(path: &Path, scores: &[f64]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record(["score"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for s in scores {
        writer
            .write_record([format!("{s}")])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}
