use std::path::Path;

use freqlfdr::model::{Scale, StatVector};
use freqlfdr::quad::std_normal_sf;

use crate::error::{CliError, CliResult};

/// Parsed `id,stat[,truth]` table.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: Vec<String>,
    /// Statistics on their native scale.
    pub stats: StatVector,
    /// One-sided p-values (`1 - Phi(z)` for z input).
    pub p: StatVector,
    /// `true` for a true null (`truth = 0`).
    pub truth: Option<Vec<bool>>,
}

pub fn read_dataset(path: &Path, scale: Scale) -> CliResult<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    parse_dataset(file, scale)
}

pub fn parse_dataset<R: std::io::Read>(reader: R, scale: Scale) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("line 1: {e}")))?
        .clone();
    let columns: Vec<&str> = header.iter().collect();
    let with_truth = match columns.as_slice() {
        ["id", "stat"] => false,
        ["id", "stat", "truth"] => true,
        _ => {
            return Err(CliError::Input(format!(
                "line 1: expected header 'id,stat' or 'id,stat,truth', found '{}'",
                columns.join(",")
            )))
        }
    };
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut truth = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Input(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != columns.len() {
            return Err(CliError::Input(format!(
                "line {line}: expected {} fields, found {}",
                columns.len(),
                record.len()
            )));
        }
        let id = &record[0];
        if id.is_empty() {
            return Err(CliError::Input(format!("line {line}: empty id")));
        }
        let stat: f64 = record[1].parse().map_err(|_| {
            CliError::Input(format!(
                "line {line}: stat '{}' is not a number",
                &record[1]
            ))
        })?;
        if !stat.is_finite() {
            return Err(CliError::Input(format!(
                "line {line}: stat for {id} is not finite"
            )));
        }
        if with_truth {
            truth.push(match &record[2] {
                "0" => true,
                "1" => false,
                other => {
                    return Err(CliError::Input(format!(
                        "line {line}: truth must be 0 or 1, found '{other}'"
                    )))
                }
            });
        }
        ids.push(id.to_string());
        values.push(stat);
    }
    if values.is_empty() {
        return Err(CliError::Input("no statistics after the header".into()));
    }
    let stats = StatVector::with_ids(values.clone(), scale, ids.clone())?;
    let p = match scale {
        Scale::PValue => stats.clone(),
        Scale::ZValue => StatVector::with_ids(
            values.iter().map(|&z| std_normal_sf(z)).collect(),
            Scale::PValue,
            ids.clone(),
        )?,
    };
    Ok(Dataset {
        ids,
        stats,
        p,
        truth: with_truth.then_some(truth),
    })
}
