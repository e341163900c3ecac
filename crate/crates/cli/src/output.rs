use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analyze::{AnalysisReport, PROCEDURES};
use crate::error::{CliError, CliResult};
use freqlfdr::simulate::{CalibrationCurve, MonteCarloReport};

/// Shortest text that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("cannot serialize: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Write to `out`, or to stdout when absent.
pub fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e)),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io("stdout", e)),
    }
}

/// `<out>.summary.json` next to a CSV table.
pub fn summary_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".summary.json");
    PathBuf::from(name)
}

fn csv_text(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Io(format!("cannot write csv: {e}"));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Io(format!("cannot write csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

pub fn analysis_csv(report: &AnalysisReport) -> CliResult<String> {
    let with_truth = report.hypotheses.iter().any(|h| h.truth.is_some());
    let mut header: Vec<String> = ["id", "stat", "p_value", "q_value", "lfdr_score"]
        .map(String::from)
        .to_vec();
    if with_truth {
        header.push("truth".into());
    }
    header.extend(PROCEDURES.iter().map(|p| format!("rejected_{p}")));
    let rows = report.hypotheses.iter().map(|h| {
        let mut row = vec![
            h.id.clone(),
            num(h.stat),
            num(h.p_value),
            num(h.q_value),
            num(h.lfdr_score),
        ];
        if let Some(t) = h.truth {
            row.push(t.to_string());
        }
        row.extend(h.rejected.flags().iter().map(|&b| (b as u8).to_string()));
        row
    });
    csv_text(&header, rows)
}

pub fn monte_carlo_csv(report: &MonteCarloReport) -> CliResult<String> {
    let header = [
        "criterion",
        "mean",
        "std_error",
        "replicates",
        "conditioning_fraction",
    ]
    .map(String::from);
    let rows = report.config.criteria.iter().map(|c| {
        let key = c.key();
        let est = report.estimates.get(&key);
        vec![
            key.clone(),
            opt_num(est.map(|e| e.mean)),
            opt_num(est.map(|e| e.std_error)),
            report.replicates.to_string(),
            opt_num(report.pfdr_conditioning_fraction.get(&key).copied()),
        ]
    });
    csv_text(&header, rows)
}

pub fn calibration_csv(curve: &CalibrationCurve) -> CliResult<String> {
    let header = [
        "bin_lo",
        "bin_hi",
        "midpoint",
        "count",
        "null_count",
        "null_fraction",
    ]
    .map(String::from);
    let rows = (0..curve.num_bins()).map(|k| {
        vec![
            num(curve.bin_edges[k]),
            num(curve.bin_edges[k + 1]),
            num(curve.midpoint(k)),
            curve.bin_counts[k].to_string(),
            curve.bin_null_counts[k].to_string(),
            opt_num(curve.bin_null_fraction[k]),
        ]
    });
    csv_text(&header, rows)
}
