use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{OutputPaths, SimulationTable};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: String,
    design: &'a str,
    estimator: &'a str,
    mse: f64,
    rel_eff: f64,
    ci_lo: f64,
    ci_hi: f64,
    asymp_rel_eff: Option<f64>,
    coverage: f64,
    n_fail: usize,
}

fn csv_text(table: &SimulationTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &table.rows {
        w.serialize(CsvRow {
            method: r.method.to_string(),
            design: &r.design,
            estimator: &r.estimator,
            mse: r.mse,
            rel_eff: r.rel_eff,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            asymp_rel_eff: r.asymp_rel_eff,
            coverage: r.coverage,
            n_fail: r.n_fail,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn markdown_text(table: &SimulationTable) -> String {
    let level = (table.metadata.level * 100.0).round();
    let mut s = String::new();
    let _ = writeln!(s, "| DGP | Estimator | Design | Sim. rel. eff. ({level}% CI) | Asymp. rel. eff. |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    let dgp = table.dgp_label();
    let last = table.rows.len().saturating_sub(1);
    for (i, r) in table.rows.iter().enumerate() {
        let asym = r.asymp_rel_eff.map_or_else(|| "-".to_string(), |a| format!("{a:.3}"));
        let sim = if i == last {
            "1 (baseline)".to_string()
        } else {
            format!("{:.3} ({:.3}, {:.3})", r.rel_eff, r.ci_lo, r.ci_hi)
        };
        let _ = writeln!(s, "| {dgp} | {} | {} | {sim} | {asym} |", r.estimator, r.design);
    }
    let _ = writeln!(
        s,
        "\nReplications: {} of {} used, bootstrap resamples: {}, master seed: {}.",
        table.metadata.used_replications, table.metadata.replications, table.metadata.bootstrap, table.metadata.master_seed
    );
    s
}

pub fn render_report(table: &SimulationTable, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => csv_text(table),
        ReportFormat::Json => Ok(serde_json::to_string_pretty(table)?),
        ReportFormat::Markdown => Ok(markdown_text(table)),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Writes every report whose path is set.
pub fn emit_report(table: &SimulationTable, paths: &OutputPaths) -> Result<()> {
    let targets = [
        (&paths.csv, ReportFormat::Csv),
        (&paths.json, ReportFormat::Json),
        (&paths.markdown, ReportFormat::Markdown),
    ];
    for (path, format) in targets {
        if let Some(p) = path {
            write(p, &render_report(table, format)?)?;
        }
    }
    Ok(())
}
