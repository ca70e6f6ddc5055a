//! Scenario execution behind the command-line tool: config resolution,
//! figure grids, sweeps, the validation suite and file output.

pub mod config;
pub mod output;
pub mod scenarios;
pub mod validate;

use std::path::{Path, PathBuf};

pub use config::RunConfig;
pub use output::{Cell, Table};
pub use scenarios::{run_scenario, sweep, Scenario};
pub use validate::{validate, Check, Status, ValidationReport};

use crate::error::Result;

/// Runs `scenario` and writes `<scenario>.csv` (or `validation.json`) and
/// `manifest.json` into `out`. Returns the validation verdict, `true` for
/// table scenarios.
pub fn execute(cfg: &RunConfig, scenario: Scenario, out: &Path) -> Result<bool> {
    if scenario == Scenario::Validate {
        return execute_validate(cfg, out).map(|r| r.passed());
    }
    let (table, summary) = run_scenario(cfg, scenario)?;
    output::write_table(out, scenario.name(), cfg, &table, summary)?;
    Ok(true)
}

pub fn execute_validate(cfg: &RunConfig, out: &Path) -> Result<ValidationReport> {
    let report = validate(cfg);
    std::fs::create_dir_all(out)?;
    output::write_json(&out.join("validation.json"), &report)?;
    output::write_json(
        &out.join("manifest.json"),
        &output::manifest(
            cfg,
            "validate",
            &["validation.json".to_string()],
            serde_json::json!({ "passed": report.passed() }),
        ),
    )?;
    Ok(report)
}

pub fn execute_sweep(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let table = sweep(cfg)?;
    output::write_table(out, "sweep", cfg, &table, serde_json::Value::Null)
}
