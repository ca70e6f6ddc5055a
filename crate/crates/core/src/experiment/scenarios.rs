//! Figure grids, generic two-parameter sweeps and Monte Carlo time series.

use std::str::FromStr;

use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::RunConfig;
use super::output::{Cell, Table};
use crate::beam::{monte_carlo_ensemble, ProtocolKind};
use crate::closed_form::{
    dwell_dispersive_dispersion, dwell_kick_dispersion, effective_rates_dispersive,
    effective_rates_kick, fidelity_formula, gain_dispersive, gain_kick, DwellReport, EffectiveRates,
};
use crate::error::{Error, Result};
use crate::hilbert::StateVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Kick gain against λ.
    Fig3,
    /// Dispersive gain against λ.
    Fig5,
    /// Kick gain against λ and velocity spread.
    Fig6,
    /// Dispersive gain against λ and velocity spread.
    Fig7,
    /// Kick fidelity against velocity spread and atom number.
    Fig8,
    /// Dispersive fidelity against velocity spread and atom number.
    Fig9,
    /// Monte Carlo time series of the configured beam.
    Custom,
    Validate,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Fig3,
        Scenario::Fig5,
        Scenario::Fig6,
        Scenario::Fig7,
        Scenario::Fig8,
        Scenario::Fig9,
        Scenario::Custom,
        Scenario::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Fig3 => "fig3",
            Scenario::Fig5 => "fig5",
            Scenario::Fig6 => "fig6",
            Scenario::Fig7 => "fig7",
            Scenario::Fig8 => "fig8",
            Scenario::Fig9 => "fig9",
            Scenario::Custom => "custom",
            Scenario::Validate => "validate",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::config("scenario", format!("unknown scenario `{s}`")))
    }
}

/// Dwell report and effective rates at λ and rms velocity spread `dv`.
fn closed_form_point(cfg: &RunConfig, kind: ProtocolKind, lambda: f64, dv: f64) -> Result<(DwellReport, EffectiveRates)> {
    match kind {
        ProtocolKind::Kick => {
            let mut p = cfg.kick_params()?;
            p.lambda = lambda;
            p.dv = dv;
            Ok((dwell_kick_dispersion(&p)?, effective_rates_kick(&p)?))
        }
        ProtocolKind::Dispersive => {
            let mut p = cfg.dispersive_params()?;
            p.lambda = lambda;
            p.dv = dv;
            Ok((dwell_dispersive_dispersion(&p)?, effective_rates_dispersive(&p)?))
        }
    }
}

fn gain_curve(cfg: &RunConfig, kind: ProtocolKind) -> Result<Table> {
    let cfg = cfg.for_protocol(kind)?;
    let rows: Result<Vec<Vec<Cell>>> = cfg
        .grids
        .lambda
        .par_iter()
        .map(|&lambda| {
            let g = match kind {
                ProtocolKind::Kick => {
                    let mut p = cfg.kick_params()?;
                    p.lambda = lambda;
                    gain_kick(&p)?
                }
                ProtocolKind::Dispersive => {
                    let mut p = cfg.dispersive_params()?;
                    p.lambda = lambda;
                    gain_dispersive(&p)?
                }
            };
            Ok(vec![Cell::Float(lambda), Cell::Float(g)])
        })
        .collect();
    let mut t = Table::new(&["lambda", "gain"]);
    t.rows = rows?;
    Ok(t)
}

fn gain_surface(cfg: &RunConfig, kind: ProtocolKind) -> Result<Table> {
    let cfg = cfg.for_protocol(kind)?;
    let points: Vec<(f64, f64)> = cfg
        .grids
        .lambda
        .iter()
        .flat_map(|&l| cfg.grids.dv.iter().map(move |&v| (l, v)))
        .collect();
    let rows: Result<Vec<Vec<Cell>>> = points
        .par_iter()
        .map(|&(lambda, dv)| {
            let (report, _) = closed_form_point(&cfg, kind, lambda, dv)?;
            Ok(vec![Cell::Float(lambda), Cell::Float(dv), Cell::Float(report.gain)])
        })
        .collect();
    let mut t = Table::new(&["lambda", "dv", "gain"]);
    t.rows = rows?;
    Ok(t)
}

fn fidelity_surface(cfg: &RunConfig, kind: ProtocolKind) -> Result<Table> {
    let cfg = cfg.for_protocol(kind)?;
    let slot = cfg.setup().slot_duration()?;
    let lambda = cfg.beam.density;
    let points: Vec<(f64, f64)> = cfg
        .grids
        .dv
        .iter()
        .flat_map(|&v| cfg.grids.n_atoms.iter().map(move |&n| (v, n)))
        .collect();
    let rows: Result<Vec<Vec<Cell>>> = points
        .par_iter()
        .map(|&(dv, n)| {
            let (_, rates) = closed_form_point(&cfg, kind, lambda, dv)?;
            let t = n * slot;
            Ok(vec![
                Cell::Float(dv),
                Cell::Int(n as u64),
                Cell::Float(t),
                Cell::Float(fidelity_formula(rates.kappa_bar, rates.f_bar, t)),
            ])
        })
        .collect();
    let mut t = Table::new(&["dv", "n_atoms", "time", "fidelity"]);
    t.rows = rows?;
    Ok(t)
}

fn time_series(cfg: &RunConfig) -> Result<(Table, Value)> {
    let field0 = StateVector::equal_superposition(cfg.params.fock_cutoff, 0.0).projector();
    let ens = monte_carlo_ensemble(&field0, &cfg.setup(), cfg.mc_engine, cfg.mc_realizations)?;
    let mut t = Table::new(&[
        "slot",
        "time",
        "rho11_mean",
        "rho11_se",
        "coherence_mean",
        "coherence_se",
        "fidelity_mean",
        "fidelity_se",
    ]);
    for k in 0..ens.times.len() {
        t.rows.push(vec![
            Cell::Int(k as u64),
            Cell::Float(ens.times[k]),
            Cell::Float(ens.rho11_mean[k]),
            Cell::Float(ens.rho11_se[k]),
            Cell::Float(ens.coherence_mean[k]),
            Cell::Float(ens.coherence_se[k]),
            Cell::Float(ens.fidelity_mean[k]),
            Cell::Float(ens.fidelity_se[k]),
        ]);
    }
    let summary = json!({
        "realizations": ens.n_realizations,
        "engine": cfg.get("mc.engine"),
        "population_fit": ens.population_fit,
        "coherence_fit": ens.coherence_fit,
        "clamped_slots": ens.clamped_slots,
    });
    Ok((t, summary))
}

/// Data table of a figure or time-series scenario, plus a JSON summary for
/// the manifest.
pub fn run_scenario(cfg: &RunConfig, scenario: Scenario) -> Result<(Table, Value)> {
    let none = Value::Null;
    match scenario {
        Scenario::Fig3 => Ok((gain_curve(cfg, ProtocolKind::Kick)?, none)),
        Scenario::Fig5 => Ok((gain_curve(cfg, ProtocolKind::Dispersive)?, none)),
        Scenario::Fig6 => Ok((gain_surface(cfg, ProtocolKind::Kick)?, none)),
        Scenario::Fig7 => Ok((gain_surface(cfg, ProtocolKind::Dispersive)?, none)),
        Scenario::Fig8 => Ok((fidelity_surface(cfg, ProtocolKind::Kick)?, none)),
        Scenario::Fig9 => Ok((fidelity_surface(cfg, ProtocolKind::Dispersive)?, none)),
        Scenario::Custom => time_series(cfg),
        Scenario::Validate => Err(Error::config("scenario", "validate produces a report, not a table")),
    }
}

/// Closed-form gain, dwell times and fidelity after `beam.n_atoms` slots
/// over the `sweep.x` × `sweep.y` grid (x outer). Velocity spread enters as
/// the rms of the configured sampler.
pub fn sweep(cfg: &RunConfig) -> Result<Table> {
    let s = &cfg.sweep;
    let mut table = Table::new(&[&s.x, &s.y, "gain", "tr_p", "tr_c", "fidelity"]);
    let points: Vec<(f64, f64)> = s
        .x_values
        .iter()
        .flat_map(|&x| s.y_values.iter().map(move |&y| (x, y)))
        .collect();
    let rows: Result<Vec<Vec<Cell>>> = points
        .par_iter()
        .map(|&(x, y)| {
            let point = cfg
                .with_override(&s.x, &x.to_string())?
                .with_override(&s.y, &y.to_string())?;
            let lambda = point.beam.density;
            let dv = point.beam.velocity_rms();
            let (report, rates) = closed_form_point(&point, point.kind, lambda, dv)?;
            let t = point.beam.n_atoms as f64 * point.setup().slot_duration()?;
            Ok(vec![
                Cell::Float(x),
                Cell::Float(y),
                Cell::Float(report.gain),
                Cell::Float(report.tr_p),
                Cell::Float(report.tr_c),
                Cell::Float(fidelity_formula(rates.kappa_bar, rates.f_bar, t)),
            ])
        })
        .collect();
    table.rows = rows?;
    Ok(table)
}
