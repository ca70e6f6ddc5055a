//! Flat `section.key = value` configuration.
//!
//! Every key has a default taken from the reference setup. A config file
//! (text or a previous `manifest.json`) and `--set` pairs override
//! defaults in that order. Values named `auto` are derived from other keys.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::beam::{BeamSetup, BeamSpec, Engine, Geometry, ProtocolKind, VelocityDist};
use crate::closed_form::{DispersiveParams, FModel, KickParams};
use crate::error::{Error, Result};
use crate::hilbert::PhysicalParams;
use crate::lindblad::IntegratorConfig;

const AUTO: &str = "auto";

fn defaults() -> BTreeMap<String, String> {
    let p = PhysicalParams::realistic();
    let entries = [
        ("physics.kappa", p.kappa.to_string()),
        ("physics.nbar", "0".into()),
        ("physics.coupling", p.coupling.to_string()),
        ("physics.detuning", AUTO.into()),
        ("physics.rabi", AUTO.into()),
        ("physics.fock_cutoff", "3".into()),
        ("protocol.kind", "kick".into()),
        ("protocol.f", "0".into()),
        ("beam.n_atoms", "100".into()),
        ("beam.lambda", "1".into()),
        ("beam.v0", AUTO.into()),
        ("beam.dv", "0".into()),
        ("beam.velocity_dist", "uniform".into()),
        ("beam.free_window", "0".into()),
        ("geometry.a", "0.01".into()),
        ("geometry.b", AUTO.into()),
        ("geometry.c", AUTO.into()),
        ("geometry.d", AUTO.into()),
        ("geometry.w0", "0.006".into()),
        ("integrator.dt_max", "1e-7".into()),
        ("integrator.bare_dt", "1e-3".into()),
        ("integrator.renormalize_trace", "false".into()),
        ("grid.lambda", "0:1:0.01".into()),
        ("grid.dv", "0:2:0.1".into()),
        ("grid.n_atoms", "0:3000:100".into()),
        ("sweep.x", "beam.lambda".into()),
        ("sweep.x_values", "0:1:0.1".into()),
        ("sweep.y", "beam.dv".into()),
        ("sweep.y_values", "0:2:0.5".into()),
        ("mc.realizations", "400".into()),
        ("mc.engine", "numeric".into()),
        ("run.seed", "0".into()),
    ];
    entries
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Keys accepted in config files and `--set`.
pub fn known_keys() -> Vec<String> {
    defaults().into_keys().collect()
}

/// `start:stop:step` (inclusive) or a comma-separated list; empty means no points.
pub fn parse_grid(field: &str, text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::config(field, format!("`{s}` is not a finite number")))
    };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::config(field, "range must be start:stop:step"));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(Error::config(field, "range needs step > 0 and stop >= start"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| start + i as f64 * step).collect());
    }
    text.split(',').map(num).collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct Grids {
    pub lambda: Vec<f64>,
    pub dv: Vec<f64>,
    pub n_atoms: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub x: String,
    pub x_values: Vec<f64>,
    pub y: String,
    pub y_values: Vec<f64>,
}

/// Fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
    pub params: PhysicalParams,
    pub kind: ProtocolKind,
    pub f_constant: f64,
    pub beam: BeamSpec,
    pub geom: Geometry,
    pub integrator: IntegratorConfig,
    /// Step used for bare-cavity checks.
    pub bare_dt: f64,
    pub grids: Grids,
    pub sweep: SweepSpec,
    pub mc_realizations: usize,
    pub mc_engine: Engine,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_entries(defaults()).expect("defaults resolve")
    }
}

struct Reader<'a>(&'a BTreeMap<String, String>);

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).unwrap_or("")
    }

    fn is_auto(&self, key: &str) -> bool {
        self.raw(key).trim() == AUTO
    }

    fn f64(&self, key: &str) -> Result<f64> {
        let s = self.raw(key).trim();
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::config(key, format!("`{s}` is not a finite number")))
    }

    fn f64_or(&self, key: &str, auto: f64) -> Result<f64> {
        if self.is_auto(key) {
            Ok(auto)
        } else {
            self.f64(key)
        }
    }

    fn usize(&self, key: &str) -> Result<usize> {
        let s = self.raw(key).trim();
        if let Ok(v) = s.parse::<usize>() {
            return Ok(v);
        }
        // Accept integral floats such as "100" produced by sweeps.
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 1e15 => Ok(v as usize),
            _ => Err(Error::config(key, format!("`{s}` is not a non-negative integer"))),
        }
    }

    fn u64(&self, key: &str) -> Result<u64> {
        let s = self.raw(key).trim();
        s.parse::<u64>()
            .map_err(|_| Error::config(key, format!("`{s}` is not an unsigned integer")))
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key).trim() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            s => Err(Error::config(key, format!("`{s}` is not a boolean"))),
        }
    }

    fn parsed<T: std::str::FromStr<Err = String>>(&self, key: &str) -> Result<T> {
        self.raw(key).trim().parse::<T>().map_err(|e| Error::config(key, e))
    }

    fn grid(&self, key: &str) -> Result<Vec<f64>> {
        parse_grid(key, self.raw(key))
    }
}

/// Re-labels a parameter error with its config key.
fn as_config_error(err: Error, section: &str) -> Error {
    match err {
        Error::InvalidParameter { name, reason } => {
            let field = if name.contains('.') {
                name.to_string()
            } else {
                format!("{section}.{name}")
            };
            Error::config(field, reason)
        }
        Error::ZeroDetuning => Error::config("physics.detuning", "must be non-zero for the dispersive protocol"),
        other => other,
    }
}

impl RunConfig {
    fn from_entries(entries: BTreeMap<String, String>) -> Result<Self> {
        let r = Reader(&entries);
        let coupling = r.f64("physics.coupling")?;
        let mut params = PhysicalParams::new(
            r.f64("physics.kappa")?,
            r.f64("physics.nbar")?,
            coupling,
            r.f64_or("physics.detuning", 3.0 * coupling)?,
        );
        params.rabi = r.f64_or("physics.rabi", 2.0 * coupling)?;
        params.fock_cutoff = r.usize("physics.fock_cutoff")?;
        params.validate().map_err(|e| as_config_error(e, "physics"))?;
        if params.fock_cutoff < 2 || params.space().is_err() {
            return Err(Error::config("physics.fock_cutoff", "must lie in [2, 16]"));
        }

        let kind: ProtocolKind = r.parsed("protocol.kind")?;
        if kind == ProtocolKind::Dispersive {
            params.dispersive_shift().map_err(|e| as_config_error(e, "physics"))?;
        }
        let f_constant = r.f64("protocol.f")?;
        let seed = r.u64("run.seed")?;

        let beam = BeamSpec {
            n_atoms: r.usize("beam.n_atoms")?,
            density: r.f64("beam.lambda")?,
            v0: r.f64_or("beam.v0", kind.default_velocity())?,
            dv: r.f64("beam.dv")?,
            velocity_dist: r.parsed::<VelocityDist>("beam.velocity_dist")?,
            free_window: r.f64("beam.free_window")?,
            seed,
        };
        beam.validate().map_err(|e| as_config_error(e, "beam"))?;

        let a = r.f64("geometry.a")?;
        let w0 = r.f64("geometry.w0")?;
        let auto = Geometry::from_a(a, w0);
        let geom = Geometry {
            a,
            b: r.f64_or("geometry.b", auto.b)?,
            c: r.f64_or("geometry.c", auto.c)?,
            d: r.f64_or("geometry.d", auto.d)?,
            w0,
        };
        geom.validate().map_err(|e| as_config_error(e, "geometry"))?;

        let integrator = IntegratorConfig {
            dt_max: r.f64("integrator.dt_max")?,
            renormalize_trace: r.bool("integrator.renormalize_trace")?,
        };
        integrator
            .validate()
            .map_err(|_| Error::config("integrator.dt_max", "must be finite and > 0"))?;
        let bare_dt = r.f64("integrator.bare_dt")?;
        if !(bare_dt > 0.0) {
            return Err(Error::config("integrator.bare_dt", "must be > 0"));
        }

        let grids = Grids {
            lambda: r.grid("grid.lambda")?,
            dv: r.grid("grid.dv")?,
            n_atoms: r.grid("grid.n_atoms")?,
        };
        if grids.lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::config("grid.lambda", "values must lie in [0, 1]"));
        }
        if grids.dv.iter().any(|v| *v < 0.0) {
            return Err(Error::config("grid.dv", "values must be >= 0"));
        }
        if grids.n_atoms.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(Error::config("grid.n_atoms", "values must be non-negative integers"));
        }

        let sweep = SweepSpec {
            x: r.raw("sweep.x").trim().to_string(),
            x_values: r.grid("sweep.x_values")?,
            y: r.raw("sweep.y").trim().to_string(),
            y_values: r.grid("sweep.y_values")?,
        };
        for (field, key) in [("sweep.x", &sweep.x), ("sweep.y", &sweep.y)] {
            if !entries.contains_key(key.as_str()) || key.starts_with("sweep.") || key.starts_with("grid.") {
                return Err(Error::config(field, format!("`{key}` is not a sweepable key")));
            }
        }

        let mc_realizations = r.usize("mc.realizations")?;
        if mc_realizations == 0 {
            return Err(Error::config("mc.realizations", "must be >= 1"));
        }
        let mc_engine: Engine = r.parsed("mc.engine")?;

        Ok(Self {
            entries,
            params,
            kind,
            f_constant,
            beam,
            geom,
            integrator,
            bare_dt,
            grids,
            sweep,
            mc_realizations,
            mc_engine,
            seed,
        })
    }

    /// Defaults, then `text` (key = value lines, `#` comments), then `sets`.
    pub fn from_text(text: &str, sets: &[String]) -> Result<Self> {
        let mut entries = defaults();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), format!("expected key = value, got `{line}`"))
            })?;
            set_entry(&mut entries, k.trim(), v.trim())?;
        }
        apply_sets(&mut entries, sets)?;
        Self::from_entries(entries)
    }

    /// Reads a text config or the `config` object of a manifest (`.json`).
    pub fn load(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            None => Self::from_text("", sets)?,
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::config("--config", format!("{}: {e}", p.display())))?;
                if p.extension().is_some_and(|e| e == "json") {
                    let value: serde_json::Value = serde_json::from_str(&text)
                        .map_err(|e| Error::config("--config", format!("{}: {e}", p.display())))?;
                    let obj = value
                        .get("config")
                        .and_then(|c| c.as_object())
                        .ok_or_else(|| Error::config("--config", "manifest has no `config` object"))?;
                    let mut entries = defaults();
                    for (k, v) in obj {
                        let v = v
                            .as_str()
                            .ok_or_else(|| Error::config(k.clone(), "manifest values must be strings"))?;
                        set_entry(&mut entries, k, v)?;
                    }
                    apply_sets(&mut entries, sets)?;
                    Self::from_entries(entries)?
                } else {
                    Self::from_text(&text, sets)?
                }
            }
        };
        if let Some(seed) = seed {
            cfg = cfg.with_override("run.seed", &seed.to_string())?;
        }
        Ok(cfg)
    }

    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut entries = self.entries.clone();
        set_entry(&mut entries, key, value)?;
        Self::from_entries(entries)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Sorted `key=value` lines; the hashed identity of a run.
    pub fn canonical_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn sha256(&self) -> String {
        hex(&Sha256::digest(self.canonical_text().as_bytes()))
    }

    pub fn f_model(&self) -> FModel {
        if self.f_constant == 0.0 {
            FModel::Zero
        } else {
            FModel::Constant(self.f_constant)
        }
    }

    pub fn setup(&self) -> BeamSetup {
        BeamSetup {
            params: self.params,
            spec: self.beam,
            geom: self.geom,
            kind: self.kind,
            integrator: self.integrator,
            f_model: self.f_model(),
        }
    }

    /// The same config re-resolved for `kind`, so that `auto` keys such as
    /// `beam.v0` follow the protocol.
    pub fn for_protocol(&self, kind: ProtocolKind) -> Result<Self> {
        if self.kind == kind {
            Ok(self.clone())
        } else {
            self.with_override("protocol.kind", kind.name())
        }
    }

    /// Closed-form kick parameters, with `beam.v0` resolved for the kick protocol.
    pub fn kick_params(&self) -> Result<KickParams> {
        let c = self.for_protocol(ProtocolKind::Kick)?;
        Ok(KickParams::from_setup(&c.params, &c.beam, &c.geom))
    }

    /// Closed-form dispersive parameters, with `beam.v0` resolved for the dispersive protocol.
    pub fn dispersive_params(&self) -> Result<DispersiveParams> {
        let c = self.for_protocol(ProtocolKind::Dispersive)?;
        DispersiveParams::from_setup(&c.params, &c.beam, &c.geom, c.f_model())
    }
}

fn set_entry(entries: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<()> {
    match entries.get_mut(key) {
        Some(slot) => {
            *slot = value.to_string();
            Ok(())
        }
        None => Err(Error::config(key, "unknown key")),
    }
}

fn apply_sets(entries: &mut BTreeMap<String, String>, sets: &[String]) -> Result<()> {
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::config("--set", format!("expected key=value, got `{s}`")))?;
        set_entry(entries, k.trim(), v.trim())?;
    }
    Ok(())
}
