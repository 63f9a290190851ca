use std::fs;
use std::path::Path;

use bqrnn_core::EvalReport;

use crate::error::CliError;

/// Reads `report.json` from a run directory.
pub fn load_report(run_dir: &Path) -> Result<EvalReport, CliError> {
    let path = run_dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{} is not a valid report: {e}", path.display())))
}

/// Table rendering of a stored run, headed by the run directory.
pub fn render(run_dir: &Path) -> Result<String, CliError> {
    let report = load_report(run_dir)?;
    Ok(format!("Run {}\n\n{}", run_dir.display(), report.to_table()))
}
