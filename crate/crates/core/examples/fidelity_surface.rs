//! Fidelity against velocity spread and atom number, written to CSV with a
//! manifest, as the `run fig8` command does.

use std::path::Path;

use cqed_memory::experiment::{output, run_scenario, RunConfig, Scenario};

fn main() -> cqed_memory::Result<()> {
    let cfg = RunConfig::from_text("grid.dv = 0:2:0.5\ngrid.n_atoms = 0:3000:1000\n", &[])?;
    let (table, summary) = run_scenario(&cfg, Scenario::Fig8)?;
    for row in &table.rows {
        println!("{}", row.iter().map(|c| format!("{:>12.5}", c.as_f64())).collect::<String>());
    }
    let dir = std::env::temp_dir().join("cqed-fidelity-surface");
    let csv = output::write_table(Path::new(&dir), "fig8", &cfg, &table, summary)?;
    println!("wrote {}", csv.display());
    Ok(())
}
