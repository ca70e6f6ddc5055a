//! Atomic beam: per-atom schedules for the two protection protocols,
//! stochastic presence and velocity errors, and the slot-by-slot march of
//! the cavity field through a beam of atoms.
//!
//! The beam is a sequence of equal-duration slots. A slot lasts the nominal
//! interaction time (T for the kick protocol, T + τ for the dispersive one)
//! plus the free window. With probability λ the slot holds an atom; an empty
//! slot is plain cavity decay over the same wall-clock time.

use std::f64::consts::PI;
use std::str::FromStr;

use log::warn;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{eta, gamma_factor, FModel};
use crate::error::{Error, Result};
use crate::hilbert::{
    dispersive_hamiltonian, embed_matrix, jc_interaction_hamiltonian, joint_annihilation,
    kick_unitary, state_fidelity, trace_atom_matrix, AtomLevel, CMatrix, DensityMatrix,
    HilbertSpace, Operator, PhysicalParams, StateVector, C64, ONE,
};
use crate::lindblad::{evolve, evolve_operator, evolve_unitary, IntegratorConfig, LindbladModel};

/// Mean velocity of the reference kick-protocol beam, m/s.
pub const KICK_VELOCITY: f64 = 510.0;
/// Mean velocity of the reference dispersive beam, m/s.
pub const DISPERSIVE_VELOCITY: f64 = 127.5;

const DISPERSION_WARN_RATIO: f64 = 0.05;
/// Free segments step at `FREE_STEP / rate` instead of `dt_max`.
const FREE_STEP: f64 = 0.002;
const FACTOR_TOL: f64 = 1e-9;
/// Realizations per parallel job in [`monte_carlo_ensemble`].
const ENSEMBLE_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Kick,
    Dispersive,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Kick => "kick",
            ProtocolKind::Dispersive => "dispersive",
        }
    }

    pub fn default_velocity(self) -> f64 {
        match self {
            ProtocolKind::Kick => KICK_VELOCITY,
            ProtocolKind::Dispersive => DISPERSIVE_VELOCITY,
        }
    }
}

impl FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "kick" | "phase_kick" => Ok(ProtocolKind::Kick),
            "dispersive" => Ok(ProtocolKind::Dispersive),
            other => Err(format!("unknown protocol `{other}` (expected kick|dispersive)")),
        }
    }
}

/// Positions along the beam, in meters. `a` runs from the velocity selector
/// to the first resonant zone, `c` (kick) and `d` (dispersive) to the end of
/// the second resonant zone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub w0: f64,
}

impl Default for Geometry {
    /// a = 1 cm, w0 = 6 mm; b sits mid-mode and c = d at the far edge of the
    /// effective length √π w0.
    fn default() -> Self {
        Self::from_a(0.01, 0.006)
    }
}

impl Geometry {
    pub fn from_a(a: f64, w0: f64) -> Self {
        let s = PI.sqrt() * w0;
        Self {
            a,
            b: a + s / 2.0,
            c: a + s,
            d: a + s,
            w0,
        }
    }

    /// √π w0.
    pub fn interaction_length(&self) -> f64 {
        PI.sqrt() * self.w0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("geometry.a", self.a),
            ("geometry.b", self.b),
            ("geometry.c", self.c),
            ("geometry.d", self.d),
            ("geometry.w0", self.w0),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityDist {
    /// Δv uniform on [−dv, dv].
    Uniform,
    /// Δv normal with standard deviation dv.
    Gaussian,
    /// Δv = dv for every atom.
    Fixed,
}

impl VelocityDist {
    pub fn name(self) -> &'static str {
        match self {
            VelocityDist::Uniform => "uniform",
            VelocityDist::Gaussian => "gaussian",
            VelocityDist::Fixed => "fixed",
        }
    }

    /// Root-mean-square of Δv for scale `dv`.
    pub fn rms(self, dv: f64) -> f64 {
        match self {
            VelocityDist::Uniform => dv / 3f64.sqrt(),
            VelocityDist::Gaussian | VelocityDist::Fixed => dv,
        }
    }
}

impl FromStr for VelocityDist {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(VelocityDist::Uniform),
            "gaussian" => Ok(VelocityDist::Gaussian),
            "fixed" => Ok(VelocityDist::Fixed),
            other => Err(format!(
                "unknown velocity distribution `{other}` (expected uniform|gaussian|fixed)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    pub n_atoms: usize,
    /// Probability λ that a slot holds an atom.
    pub density: f64,
    pub v0: f64,
    pub dv: f64,
    pub velocity_dist: VelocityDist,
    /// Free time after each interaction, seconds.
    pub free_window: f64,
    pub seed: u64,
}

impl BeamSpec {
    pub fn new(kind: ProtocolKind, n_atoms: usize, density: f64) -> Self {
        Self {
            n_atoms,
            density,
            v0: kind.default_velocity(),
            dv: 0.0,
            velocity_dist: VelocityDist::Uniform,
            free_window: 0.0,
            seed: 0,
        }
    }

    pub fn with_dispersion(mut self, dv: f64, dist: VelocityDist) -> Self {
        self.dv = dv;
        self.velocity_dist = dist;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn velocity_rms(&self) -> f64 {
        self.velocity_dist.rms(self.dv)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::InvalidParameter {
                name: "beam.lambda",
                reason: format!("must lie in [0, 1], got {}", self.density),
            });
        }
        if !(self.v0 > 0.0 && self.v0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "beam.v0",
                reason: format!("must be finite and > 0, got {}", self.v0),
            });
        }
        if !(self.dv >= 0.0 && self.dv.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "beam.dv",
                reason: format!("must be finite and >= 0, got {}", self.dv),
            });
        }
        if !(self.free_window >= 0.0 && self.free_window.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "beam.free_window",
                reason: format!("must be finite and >= 0, got {}", self.free_window),
            });
        }
        if self.dv / self.v0 > DISPERSION_WARN_RATIO {
            warn!(
                "dv/v0 = {:.3} exceeds {DISPERSION_WARN_RATIO}; first-order timing rules are stretched",
                self.dv / self.v0
            );
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AtomInstance {
    pub present: bool,
    pub velocity: f64,
    pub dt_pi1: f64,
    pub dt_pi2: f64,
}

impl AtomInstance {
    pub fn nominal() -> Self {
        Self {
            present: true,
            velocity: 0.0,
            dt_pi1: 0.0,
            dt_pi2: 0.0,
        }
    }

    pub fn absent() -> Self {
        Self {
            present: false,
            ..Self::nominal()
        }
    }
}

/// Draws presence and velocity error of one atom. Every call consumes one
/// presence draw and one velocity draw, so the presence pattern does not
/// depend on `dv`.
pub fn sample_atom<R: Rng + ?Sized>(
    spec: &BeamSpec,
    geom: &Geometry,
    kind: ProtocolKind,
    rng: &mut R,
) -> AtomInstance {
    let present = rng.random::<f64>() < spec.density;
    let u: f64 = match spec.velocity_dist {
        VelocityDist::Uniform => 2.0 * rng.random::<f64>() - 1.0,
        VelocityDist::Gaussian => rng.sample(StandardNormal),
        VelocityDist::Fixed => 1.0,
    };
    let delta = spec.dv * u;
    let ratio = delta / spec.v0;
    let far = match kind {
        ProtocolKind::Kick => geom.c,
        ProtocolKind::Dispersive => geom.d,
    };
    AtomInstance {
        present,
        velocity: spec.v0 + delta,
        dt_pi1: geom.a / spec.v0 * ratio,
        dt_pi2: far / spec.v0 * ratio,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Segment {
    Resonant(f64),
    Kick,
    Dispersive(f64),
    Free(f64),
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Resonant(t) | Segment::Dispersive(t) | Segment::Free(t) => t,
            Segment::Kick => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolSchedule {
    pub kind: ProtocolKind,
    pub segments: Vec<Segment>,
    /// A perturbed resonant duration went negative and was clamped to zero.
    pub clamped: bool,
}

impl ProtocolSchedule {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }
}

/// Nominal interaction time of one atom: T = 2π/Ω, plus τ for the dispersive protocol.
pub fn interaction_time(params: &PhysicalParams, kind: ProtocolKind) -> Result<f64> {
    let t = 2.0 * params.pi_pulse();
    Ok(match kind {
        ProtocolKind::Kick => t,
        ProtocolKind::Dispersive => t + params.dispersive_hold()?,
    })
}

/// Wall-clock length of one beam slot.
pub fn slot_duration(params: &PhysicalParams, kind: ProtocolKind, free_window: f64) -> Result<f64> {
    Ok(interaction_time(params, kind)? + free_window)
}

/// Segment list of one slot. The first π-pulse becomes T1 + dt_pi1, the
/// second T2 − dt_pi2, the dispersive hold is unchanged, and the remainder
/// of the slot is free decay.
pub fn build_schedule(
    atom: &AtomInstance,
    params: &PhysicalParams,
    kind: ProtocolKind,
    free_window: f64,
) -> Result<ProtocolSchedule> {
    let slot = slot_duration(params, kind, free_window)?;
    if !atom.present {
        return Ok(ProtocolSchedule {
            kind,
            segments: vec![Segment::Free(slot)],
            clamped: false,
        });
    }
    let half = params.pi_pulse();
    let t1 = half + atom.dt_pi1;
    let t2 = half - atom.dt_pi2;
    let clamped = t1 < 0.0 || t2 < 0.0;
    if clamped {
        warn!("perturbed pi-pulse durations ({t1:e}, {t2:e}) clamped at zero");
    }
    let (t1, t2) = (t1.max(0.0), t2.max(0.0));
    let middle = match kind {
        ProtocolKind::Kick => Segment::Kick,
        ProtocolKind::Dispersive => Segment::Dispersive(params.dispersive_hold()?),
    };
    let mut segments = vec![Segment::Resonant(t1), middle, Segment::Resonant(t2)];
    let used: f64 = segments.iter().map(Segment::duration).sum();
    let pad = slot - used;
    // Skip round-off remainders when there is no free window.
    if pad > slot * 1e-12 {
        segments.push(Segment::Free(pad));
    }
    Ok(ProtocolSchedule {
        kind,
        segments,
        clamped,
    })
}

/// Generators for every segment type on the joint atom-field space.
struct SegmentModels {
    space: HilbertSpace,
    resonant: LindbladModel,
    dispersive: Option<LindbladModel>,
    free: LindbladModel,
    kick: Operator,
    free_cfg: IntegratorConfig,
}

impl SegmentModels {
    fn new(params: &PhysicalParams, kind: ProtocolKind, cfg: &IntegratorConfig) -> Result<Self> {
        params.validate()?;
        let space = params.space()?;
        let a = joint_annihilation(space);
        let hi = jc_interaction_hamiltonian(params, space);
        let resonant = LindbladModel::cavity_loss(&hi, &a, params.kappa, params.nbar)?;
        let dispersive = match kind {
            ProtocolKind::Kick => None,
            ProtocolKind::Dispersive => Some(resonant.with_hamiltonian(&dispersive_hamiltonian(params, space)?)?),
        };
        let free = resonant.with_hamiltonian(&Operator::zeros(space.joint_dim()))?;
        let rate = free.rate_scale();
        let free_dt = if rate > 0.0 {
            (FREE_STEP / rate).max(cfg.dt_max)
        } else {
            f64::MAX
        };
        Ok(Self {
            space,
            resonant,
            dispersive,
            free,
            kick: kick_unitary(space),
            free_cfg: IntegratorConfig {
                dt_max: free_dt,
                ..*cfg
            },
        })
    }

    fn model_for(&self, seg: &Segment) -> Option<(&LindbladModel, bool)> {
        match seg {
            Segment::Resonant(_) => Some((&self.resonant, false)),
            Segment::Dispersive(_) => Some((
                self.dispersive
                    .as_ref()
                    .expect("dispersive segment in a kick schedule"),
                false,
            )),
            Segment::Free(_) => Some((&self.free, true)),
            Segment::Kick => None,
        }
    }

    fn run_density(&self, rho: DensityMatrix, sched: &ProtocolSchedule, cfg: &IntegratorConfig) -> Result<DensityMatrix> {
        let mut rho = rho;
        for seg in &sched.segments {
            rho = match self.model_for(seg) {
                Some((model, free)) => {
                    let c = if free { &self.free_cfg } else { cfg };
                    evolve(&rho, model, seg.duration(), c)?
                }
                None => evolve_unitary(&rho, &self.kick)?,
            };
        }
        Ok(rho)
    }

    fn run_operator(&self, m: CMatrix, sched: &ProtocolSchedule, cfg: &IntegratorConfig) -> Result<CMatrix> {
        let mut m = m;
        for seg in &sched.segments {
            m = match self.model_for(seg) {
                Some((model, free)) => {
                    let c = if free { &self.free_cfg } else { cfg };
                    evolve_operator(&m, model, seg.duration(), c)?
                }
                None => {
                    let u = self.kick.matrix();
                    u * m * u.adjoint()
                }
            };
        }
        Ok(m)
    }
}

fn check_field(field: &DensityMatrix, params: &PhysicalParams) -> Result<()> {
    if field.dim() != params.fock_cutoff {
        return Err(Error::DimensionMismatch {
            expected: params.fock_cutoff,
            found: field.dim(),
        });
    }
    Ok(())
}

/// Passes one slot numerically: a fresh ground-state atom is attached to the
/// field, every segment is integrated with the cavity-loss master equation
/// and the atom is traced out.
pub fn apply_atom_numeric(
    field: &DensityMatrix,
    sched: &ProtocolSchedule,
    params: &PhysicalParams,
    cfg: &IntegratorConfig,
) -> Result<DensityMatrix> {
    check_field(field, params)?;
    let models = SegmentModels::new(params, sched.kind, cfg)?;
    apply_with_models(field, sched, &models, cfg)
}

fn apply_with_models(
    field: &DensityMatrix,
    sched: &ProtocolSchedule,
    models: &SegmentModels,
    cfg: &IntegratorConfig,
) -> Result<DensityMatrix> {
    let joint = DensityMatrix::from_matrix_unchecked(embed_matrix(
        field.matrix(),
        AtomLevel::Ground,
        models.space,
    ));
    let out = models.run_density(joint, sched, cfg)?;
    Ok(DensityMatrix::from_matrix_unchecked(trace_atom_matrix(
        out.matrix(),
        models.space,
    )))
}

/// A slot's action on the field as a linear map on column-major vec(ρ).
#[derive(Clone, Debug)]
pub struct FieldChannel {
    cutoff: usize,
    map: CMatrix,
}

impl FieldChannel {
    pub fn build(sched: &ProtocolSchedule, params: &PhysicalParams, cfg: &IntegratorConfig) -> Result<Self> {
        let models = SegmentModels::new(params, sched.kind, cfg)?;
        Self::from_models(sched, &models, cfg)
    }

    fn from_models(sched: &ProtocolSchedule, models: &SegmentModels, cfg: &IntegratorConfig) -> Result<Self> {
        let c = models.space.fock_cutoff();
        let mut map = CMatrix::zeros(c * c, c * c);
        for j in 0..c {
            for i in 0..c {
                let mut unit = CMatrix::zeros(c, c);
                unit[(i, j)] = ONE;
                let joint = embed_matrix(&unit, AtomLevel::Ground, models.space);
                let out = trace_atom_matrix(&models.run_operator(joint, sched, cfg)?, models.space);
                map.column_mut(i + j * c).copy_from_slice(out.as_slice());
            }
        }
        Ok(Self { cutoff: c, map })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.map
    }

    pub fn apply(&self, field: &DensityMatrix) -> Result<DensityMatrix> {
        if field.dim() != self.cutoff {
            return Err(Error::DimensionMismatch {
                expected: self.cutoff,
                found: field.dim(),
            });
        }
        let v = DVector::from_column_slice(field.matrix().as_slice());
        let out = &self.map * v;
        let m = CMatrix::from_column_slice(self.cutoff, self.cutoff, out.as_slice());
        let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        Ok(DensityMatrix::from_matrix_unchecked(m))
    }
}

/// ρ11 → ρ11 f², ρ10 → ρ10 f, ρ00 absorbs the population change. Entries
/// above the one-photon level are left alone.
pub fn apply_atom_analytic(field: &DensityMatrix, factor: f64) -> Result<DensityMatrix> {
    if !(factor > 0.0 && factor <= 1.0 + FACTOR_TOL) {
        return Err(Error::FactorOutOfRange(factor));
    }
    if field.dim() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: field.dim(),
        });
    }
    let mut m = field.matrix().clone();
    let f = C64::new(factor, 0.0);
    let p11 = m[(1, 1)].re * factor * factor;
    let higher: f64 = (2..m.nrows()).map(|n| m[(n, n)].re).sum();
    m[(1, 1)] = C64::new(p11, 0.0);
    m[(1, 0)] *= f;
    m[(0, 1)] *= f;
    m[(0, 0)] = C64::new(1.0 - p11 - higher, 0.0);
    Ok(DensityMatrix::from_matrix_unchecked(m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Lindblad integration of every slot.
    Numeric,
    /// Per-atom factors η or Γ at nominal timing; velocity errors are ignored.
    Analytic,
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "numeric" => Ok(Engine::Numeric),
            "analytic" => Ok(Engine::Analytic),
            other => Err(format!("unknown engine `{other}` (expected numeric|analytic)")),
        }
    }
}

/// Everything needed to march a field through a beam.
#[derive(Clone, Debug)]
pub struct BeamSetup {
    pub params: PhysicalParams,
    pub spec: BeamSpec,
    pub geom: Geometry,
    pub kind: ProtocolKind,
    pub integrator: IntegratorConfig,
    /// Correction function inside Γ for the analytic dispersive engine.
    pub f_model: FModel,
}

impl BeamSetup {
    pub fn new(params: PhysicalParams, spec: BeamSpec, kind: ProtocolKind) -> Self {
        Self {
            params,
            spec,
            geom: Geometry::default(),
            kind,
            integrator: IntegratorConfig::default(),
            f_model: FModel::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.spec.validate()?;
        self.geom.validate()?;
        self.integrator.validate()?;
        if self.kind == ProtocolKind::Dispersive {
            self.params.dispersive_shift()?;
        }
        Ok(())
    }

    pub fn slot_duration(&self) -> Result<f64> {
        slot_duration(&self.params, self.kind, self.spec.free_window)
    }

    fn rng(&self, realization: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(realization);
        rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunPoint {
    /// Slots elapsed.
    pub slot: usize,
    pub t: f64,
    pub rho11: f64,
    pub rho10_re: f64,
    pub rho10_im: f64,
    /// |ρ10|.
    pub coherence: f64,
    /// Overlap with the principal state of the initial field.
    pub fidelity: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub points: Vec<RunPoint>,
    pub final_state: DensityMatrix,
    pub atoms_present: usize,
    pub clamped_slots: usize,
    /// Largest population above |1⟩ seen after any slot.
    pub max_leakage: f64,
}

/// Slot maps shared between realizations.
enum Stepper {
    Numeric {
        models: SegmentModels,
        /// Present and absent channels when every atom has nominal timing.
        cached: Option<(FieldChannel, FieldChannel)>,
    },
    Analytic {
        present: f64,
        absent: f64,
    },
}

impl Stepper {
    fn new(setup: &BeamSetup, engine: Engine) -> Result<Self> {
        setup.validate()?;
        let p = &setup.params;
        match engine {
            Engine::Numeric => {
                let models = SegmentModels::new(p, setup.kind, &setup.integrator)?;
                let cached = if setup.spec.dv == 0.0 {
                    let present = build_schedule(&AtomInstance::nominal(), p, setup.kind, setup.spec.free_window)?;
                    let absent = build_schedule(&AtomInstance::absent(), p, setup.kind, setup.spec.free_window)?;
                    Some((
                        FieldChannel::from_models(&present, &models, &setup.integrator)?,
                        FieldChannel::from_models(&absent, &models, &setup.integrator)?,
                    ))
                } else {
                    None
                };
                Ok(Stepper::Numeric { models, cached })
            }
            Engine::Analytic => {
                let period = 2.0 * p.pi_pulse();
                let t = setup.spec.free_window;
                let present = match setup.kind {
                    ProtocolKind::Kick => eta(p.kappa, p.rabi, period, t),
                    ProtocolKind::Dispersive => gamma_factor(
                        p.kappa,
                        p.rabi,
                        p.dispersive_hold()?,
                        period,
                        t,
                        &setup.f_model,
                    ),
                };
                let absent = (-p.kappa * setup.slot_duration()?).exp();
                Ok(Stepper::Analytic { present, absent })
            }
        }
    }

    fn step(&self, setup: &BeamSetup, field: &DensityMatrix, atom: &AtomInstance) -> Result<(DensityMatrix, bool)> {
        match self {
            Stepper::Numeric {
                cached: Some((present, absent)),
                ..
            } => Ok((
                if atom.present {
                    present.apply(field)?
                } else {
                    absent.apply(field)?
                },
                false,
            )),
            Stepper::Numeric { models, cached: None } => {
                let sched = build_schedule(atom, &setup.params, setup.kind, setup.spec.free_window)?;
                let out = apply_with_models(field, &sched, models, &setup.integrator)?;
                Ok((out, sched.clamped))
            }
            Stepper::Analytic { present, absent } => {
                let f = if atom.present { *present } else { *absent };
                Ok((apply_atom_analytic(field, f)?, false))
            }
        }
    }
}

fn record(slot: usize, t: f64, rho: &DensityMatrix, target: &StateVector) -> Result<RunPoint> {
    let rho10 = rho.get(1, 0);
    Ok(RunPoint {
        slot,
        t,
        rho11: rho.population(1),
        rho10_re: rho10.re,
        rho10_im: rho10.im,
        coherence: rho10.norm(),
        fidelity: state_fidelity(target, rho)?,
    })
}

fn run_realization(
    field0: &DensityMatrix,
    setup: &BeamSetup,
    stepper: &Stepper,
    realization: u64,
) -> Result<RunResult> {
    check_field(field0, &setup.params)?;
    let slot = setup.slot_duration()?;
    let target = field0.principal_state();
    let mut rng = setup.rng(realization);
    let mut rho = field0.clone();
    let mut points = Vec::with_capacity(setup.spec.n_atoms + 1);
    points.push(record(0, 0.0, &rho, &target)?);
    let mut atoms_present = 0;
    let mut clamped_slots = 0;
    let mut max_leakage = rho.leakage();
    for k in 1..=setup.spec.n_atoms {
        let atom = sample_atom(&setup.spec, &setup.geom, setup.kind, &mut rng);
        let (next, clamped) = stepper.step(setup, &rho, &atom)?;
        rho = next;
        atoms_present += atom.present as usize;
        clamped_slots += clamped as usize;
        max_leakage = max_leakage.max(rho.leakage());
        points.push(record(k, k as f64 * slot, &rho, &target)?);
    }
    Ok(RunResult {
        points,
        final_state: rho,
        atoms_present,
        clamped_slots,
        max_leakage,
    })
}

/// One realization of the beam, drawn from stream 0 of `spec.seed`.
pub fn run_beam(field0: &DensityMatrix, setup: &BeamSetup, engine: Engine) -> Result<RunResult> {
    let stepper = Stepper::new(setup, engine)?;
    run_realization(field0, setup, &stepper, 0)
}

/// Least-squares fit of ln y = intercept − rate·t.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub rate_stderr: f64,
    pub intercept: f64,
    /// RMS residual of ln y.
    pub residual_rms: f64,
    pub points: usize,
}

pub fn fit_exponential_decay(t: &[f64], y: &[f64]) -> Result<DecayFit> {
    if t.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: t.len(),
            found: y.len(),
        });
    }
    let n = t.len();
    if n < 3 {
        return Err(Error::FitDegenerate(format!("{n} points, need at least 3")));
    }
    if let Some(bad) = y.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::FitDegenerate(format!("non-positive value {bad} in series")));
    }
    let ln: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let nf = n as f64;
    let tm = t.iter().sum::<f64>() / nf;
    let lm = ln.iter().sum::<f64>() / nf;
    let sxx: f64 = t.iter().map(|x| (x - tm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::FitDegenerate("all sample times coincide".into()));
    }
    let sxy: f64 = t.iter().zip(&ln).map(|(x, l)| (x - tm) * (l - lm)).sum();
    let slope = sxy / sxx;
    let intercept = lm - slope * tm;
    let ss: f64 = t
        .iter()
        .zip(&ln)
        .map(|(x, l)| (l - intercept - slope * x).powi(2))
        .sum();
    Ok(DecayFit {
        rate: -slope,
        rate_stderr: (ss / (nf - 2.0) / sxx).sqrt(),
        intercept,
        residual_rms: (ss / nf).sqrt(),
        points: n,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleResult {
    pub n_realizations: usize,
    pub times: Vec<f64>,
    pub rho11_mean: Vec<f64>,
    pub rho11_se: Vec<f64>,
    /// |⟨ρ10⟩|.
    pub coherence_mean: Vec<f64>,
    /// Standard error of the component of ρ10 along its initial phase.
    pub coherence_se: Vec<f64>,
    pub fidelity_mean: Vec<f64>,
    pub fidelity_se: Vec<f64>,
    /// Fitted rate is 2κ̄.
    pub population_fit: Option<DecayFit>,
    /// Fitted rate is κ̄ + F̄.
    pub coherence_fit: Option<DecayFit>,
    pub clamped_slots: usize,
}

#[derive(Clone)]
struct Moments {
    sum: Vec<[f64; 5]>,
    sum_sq: Vec<[f64; 5]>,
    clamped: usize,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![[0.0; 5]; len],
            sum_sq: vec![[0.0; 5]; len],
            clamped: 0,
        }
    }

    fn add_run(&mut self, run: &RunResult, phase: C64) {
        for (k, p) in run.points.iter().enumerate() {
            let along = (C64::new(p.rho10_re, p.rho10_im) * phase.conj()).re;
            let v = [p.rho11, p.rho10_re, p.rho10_im, along, p.fidelity];
            for i in 0..5 {
                self.sum[k][i] += v[i];
                self.sum_sq[k][i] += v[i] * v[i];
            }
        }
        self.clamped += run.clamped_slots;
    }

    fn merge(&mut self, other: &Moments) {
        for k in 0..self.sum.len() {
            for i in 0..5 {
                self.sum[k][i] += other.sum[k][i];
                self.sum_sq[k][i] += other.sum_sq[k][i];
            }
        }
        self.clamped += other.clamped;
    }
}

fn mean_and_se(sum: f64, sum_sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

/// Averages `n_realizations` independent beams (realization `r` uses stream
/// `r` of `spec.seed`) and fits exponential decays to the mean population
/// and coherence. Fits are `None` when the series cannot be fitted.
pub fn monte_carlo_ensemble(
    field0: &DensityMatrix,
    setup: &BeamSetup,
    engine: Engine,
    n_realizations: usize,
) -> Result<EnsembleResult> {
    if n_realizations == 0 {
        return Err(Error::InvalidParameter {
            name: "mc.realizations",
            reason: "must be >= 1".into(),
        });
    }
    check_field(field0, &setup.params)?;
    let stepper = Stepper::new(setup, engine)?;
    let len = setup.spec.n_atoms + 1;
    let rho10 = field0.get(1, 0);
    let phase = if rho10.norm() > 0.0 { rho10 / rho10.norm() } else { ONE };

    let chunks: Vec<(usize, usize)> = (0..n_realizations)
        .step_by(ENSEMBLE_CHUNK)
        .map(|start| (start, (start + ENSEMBLE_CHUNK).min(n_realizations)))
        .collect();
    let partial: Vec<Result<Moments>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut m = Moments::new(len);
            for r in start..end {
                let run = run_realization(field0, setup, &stepper, r as u64)?;
                m.add_run(&run, phase);
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::new(len);
    for m in partial {
        total.merge(&m?);
    }

    let slot = setup.slot_duration()?;
    let n = n_realizations as f64;
    let mut out = EnsembleResult {
        n_realizations,
        times: (0..len).map(|k| k as f64 * slot).collect(),
        rho11_mean: Vec::with_capacity(len),
        rho11_se: Vec::with_capacity(len),
        coherence_mean: Vec::with_capacity(len),
        coherence_se: Vec::with_capacity(len),
        fidelity_mean: Vec::with_capacity(len),
        fidelity_se: Vec::with_capacity(len),
        population_fit: None,
        coherence_fit: None,
        clamped_slots: total.clamped,
    };
    for k in 0..len {
        let s = &total.sum[k];
        let q = &total.sum_sq[k];
        let (p, pse) = mean_and_se(s[0], q[0], n);
        let (_, cse) = mean_and_se(s[3], q[3], n);
        let (f, fse) = mean_and_se(s[4], q[4], n);
        out.rho11_mean.push(p);
        out.rho11_se.push(pse);
        out.coherence_mean.push(C64::new(s[1] / n, s[2] / n).norm());
        out.coherence_se.push(cse);
        out.fidelity_mean.push(f);
        out.fidelity_se.push(fse);
    }
    out.population_fit = fit_exponential_decay(&out.times, &out.rho11_mean).ok();
    out.coherence_fit = fit_exponential_decay(&out.times, &out.coherence_mean).ok();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::max_abs_diff;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn lossless() -> PhysicalParams {
        PhysicalParams::new(0.0, 0.0, 1.0, 3.0)
    }

    fn qubit() -> DensityMatrix {
        DensityMatrix::field_qubit(3, 0.3, C64::new(0.2, -0.35)).unwrap()
    }

    #[test]
    fn zero_dispersion_is_nominal() {
        let spec = BeamSpec::new(ProtocolKind::Kick, 1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let atom = sample_atom(&spec, &Geometry::default(), ProtocolKind::Kick, &mut rng);
            assert!(atom.present);
            assert_eq!(atom.dt_pi1, 0.0);
            assert_eq!(atom.dt_pi2, 0.0);
        }
    }

    #[test]
    fn empty_beam_never_has_atoms() {
        let spec = BeamSpec::new(ProtocolKind::Kick, 1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!((0..1000).all(|_| !sample_atom(&spec, &Geometry::default(), ProtocolKind::Kick, &mut rng).present));
    }

    #[test]
    fn fixed_velocity_timing_shift() {
        let spec = BeamSpec::new(ProtocolKind::Kick, 1, 1.0).with_dispersion(1.0, VelocityDist::Fixed);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let atom = sample_atom(&spec, &Geometry::default(), ProtocolKind::Kick, &mut rng);
        assert_eq!(atom.velocity, 511.0);
        assert_relative_eq!(atom.dt_pi1, 3.84467512495194e-8, max_relative = 1e-12);
        let c = Geometry::default().c;
        assert_relative_eq!(atom.dt_pi2, c / 510.0 / 510.0, max_relative = 1e-12);
    }

    #[test]
    fn sampler_rms_matches_reported_rms() {
        for dist in [VelocityDist::Uniform, VelocityDist::Gaussian] {
            let spec = BeamSpec::new(ProtocolKind::Kick, 1, 1.0).with_dispersion(2.0, dist);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let n = 200_000;
            let ms: f64 = (0..n)
                .map(|_| (sample_atom(&spec, &Geometry::default(), ProtocolKind::Kick, &mut rng).velocity - spec.v0).powi(2))
                .sum::<f64>()
                / n as f64;
            assert_relative_eq!(ms.sqrt(), spec.velocity_rms(), max_relative = 0.01);
        }
    }

    #[test]
    fn nominal_schedules() {
        let p = PhysicalParams::realistic();
        let s = build_schedule(&AtomInstance::nominal(), &p, ProtocolKind::Kick, 0.0).unwrap();
        assert_eq!(
            s.segments,
            vec![Segment::Resonant(PI / p.rabi), Segment::Kick, Segment::Resonant(PI / p.rabi)]
        );
        let s = build_schedule(&AtomInstance::nominal(), &p, ProtocolKind::Dispersive, 0.0).unwrap();
        match s.segments[1] {
            Segment::Dispersive(tau) => assert_relative_eq!(tau, 6.0 * PI / p.rabi, max_relative = 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        let s = build_schedule(&AtomInstance::absent(), &p, ProtocolKind::Kick, 0.0).unwrap();
        assert_eq!(s.segments, vec![Segment::Free(2.0 * PI / p.rabi)]);
    }

    #[test]
    fn perturbed_schedule_keeps_slot_length_and_clamps() {
        let p = PhysicalParams::realistic();
        let atom = AtomInstance {
            present: true,
            velocity: 0.0,
            dt_pi1: -1e-7,
            dt_pi2: -2e-7,
        };
        let s = build_schedule(&atom, &p, ProtocolKind::Kick, 1e-5).unwrap();
        assert!(!s.clamped);
        assert_relative_eq!(s.duration(), 2.0 * PI / p.rabi + 1e-5, max_relative = 1e-12);
        let atom = AtomInstance {
            dt_pi2: 1.0,
            ..atom
        };
        let s = build_schedule(&atom, &p, ProtocolKind::Kick, 0.0).unwrap();
        assert!(s.clamped);
        assert!(s.segments.iter().all(|seg| seg.duration() >= 0.0));
    }

    #[test]
    fn lossless_protocols_are_identity() {
        let p = lossless();
        let cfg = IntegratorConfig::with_dt(1e-3);
        for kind in [ProtocolKind::Kick, ProtocolKind::Dispersive] {
            let s = build_schedule(&AtomInstance::nominal(), &p, kind, 0.0).unwrap();
            let out = apply_atom_numeric(&qubit(), &s, &p, &cfg).unwrap();
            assert!(max_abs_diff(out.matrix(), qubit().matrix()) < 1e-6, "{kind:?}");
        }
    }

    #[test]
    fn vacuum_is_stationary() {
        let p = PhysicalParams::new(0.3, 0.0, 1.0, 3.0);
        let cfg = IntegratorConfig::with_dt(1e-3);
        let vac = DensityMatrix::fock(3, 0);
        for kind in [ProtocolKind::Kick, ProtocolKind::Dispersive] {
            let s = build_schedule(&AtomInstance::nominal(), &p, kind, 0.7).unwrap();
            let out = apply_atom_numeric(&vac, &s, &p, &cfg).unwrap();
            assert_eq!(out.matrix(), vac.matrix());
        }
    }

    #[test]
    fn channel_matches_direct_integration() {
        let p = PhysicalParams::new(0.05, 0.1, 1.0, 3.0);
        let cfg = IntegratorConfig::with_dt(1e-3);
        for kind in [ProtocolKind::Kick, ProtocolKind::Dispersive] {
            let s = build_schedule(&AtomInstance::nominal(), &p, kind, 0.2).unwrap();
            let ch = FieldChannel::build(&s, &p, &cfg).unwrap();
            let a = ch.apply(&qubit()).unwrap();
            let b = apply_atom_numeric(&qubit(), &s, &p, &cfg).unwrap();
            assert!(max_abs_diff(a.matrix(), b.matrix()) < 1e-12);
        }
    }

    #[test]
    fn analytic_update() {
        let rho = qubit();
        assert_eq!(apply_atom_analytic(&rho, 1.0).unwrap().matrix(), rho.matrix());
        let excited = DensityMatrix::fock(3, 1);
        let out = apply_atom_analytic(&excited, (-0.5f64).exp()).unwrap();
        assert_abs_diff_eq!(out.population(1), 0.367879441171442, epsilon = 1e-15);
        assert_abs_diff_eq!(out.trace().re, 1.0, epsilon = 1e-15);
        let half = apply_atom_analytic(&rho, 0.5).unwrap();
        assert_abs_diff_eq!(half.get(1, 0).norm(), 0.5 * rho.get(1, 0).norm(), epsilon = 1e-16);
        assert!(matches!(apply_atom_analytic(&rho, 0.0), Err(Error::FactorOutOfRange(_))));
        assert!(matches!(apply_atom_analytic(&rho, 1.1), Err(Error::FactorOutOfRange(_))));
    }

    #[test]
    fn empty_run_is_a_single_point() {
        let setup = BeamSetup::new(PhysicalParams::realistic(), BeamSpec::new(ProtocolKind::Kick, 0, 1.0), ProtocolKind::Kick);
        let pure = StateVector::equal_superposition(3, 0.4).projector();
        let r = run_beam(&pure, &setup, Engine::Numeric).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.final_state.matrix(), pure.matrix());
        assert_abs_diff_eq!(r.points[0].fidelity, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn lossless_beam_returns_field() {
        let mut setup = BeamSetup::new(lossless(), BeamSpec::new(ProtocolKind::Kick, 50, 1.0), ProtocolKind::Kick);
        setup.integrator = IntegratorConfig::with_dt(1e-3);
        let r = run_beam(&qubit(), &setup, Engine::Numeric).unwrap();
        assert!(max_abs_diff(r.final_state.matrix(), qubit().matrix()) < 50.0 * 1e-6);
    }

    #[test]
    fn empty_slots_decay_freely() {
        let p = PhysicalParams::new(2.0, 0.0, 10.0, 30.0);
        let mut spec = BeamSpec::new(ProtocolKind::Kick, 40, 0.0);
        spec.free_window = 0.01;
        let mut setup = BeamSetup::new(p, spec, ProtocolKind::Kick);
        setup.integrator = IntegratorConfig::with_dt(1e-3);
        let rho = qubit();
        for engine in [Engine::Numeric, Engine::Analytic] {
            let r = run_beam(&rho, &setup, engine).unwrap();
            for pt in &r.points {
                assert_relative_eq!(pt.rho11, 0.3 * (-2.0 * 2.0 * pt.t).exp(), max_relative = 1e-9);
                assert_relative_eq!(pt.coherence, rho.get(1, 0).norm() * (-2.0 * pt.t).exp(), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn runs_are_deterministic_and_valid() {
        let p = PhysicalParams::new(0.5, 0.0, 10.0, 30.0);
        let mut spec = BeamSpec::new(ProtocolKind::Dispersive, 30, 0.6).with_dispersion(5.0, VelocityDist::Gaussian);
        spec.v0 = 100.0;
        spec.seed = 9;
        let mut setup = BeamSetup::new(p, spec, ProtocolKind::Dispersive);
        setup.integrator = IntegratorConfig::with_dt(2e-3);
        let a = run_beam(&qubit(), &setup, Engine::Numeric).unwrap();
        let b = run_beam(&qubit(), &setup, Engine::Numeric).unwrap();
        assert_eq!(a.points, b.points);
        assert!(a.max_leakage <= 1e-8);
        assert!(a.final_state.validate().is_ok());
    }

    #[test]
    fn ensemble_is_deterministic_and_fits_bare_rates() {
        let p = PhysicalParams::new(1.5, 0.0, 10.0, 30.0);
        let mut spec = BeamSpec::new(ProtocolKind::Kick, 30, 0.0);
        spec.free_window = 0.01;
        let mut setup = BeamSetup::new(p, spec, ProtocolKind::Kick);
        setup.integrator = IntegratorConfig::with_dt(1e-3);
        let a = monte_carlo_ensemble(&qubit(), &setup, Engine::Numeric, 20).unwrap();
        let b = monte_carlo_ensemble(&qubit(), &setup, Engine::Numeric, 20).unwrap();
        assert_eq!(a.coherence_mean, b.coherence_mean);
        assert_relative_eq!(a.population_fit.unwrap().rate, 3.0, max_relative = 1e-6);
        assert_relative_eq!(a.coherence_fit.unwrap().rate, 1.5, max_relative = 1e-6);
    }

    #[test]
    fn fit_rejects_short_or_nonpositive_series() {
        assert!(matches!(fit_exponential_decay(&[0.0, 1.0], &[1.0, 0.5]), Err(Error::FitDegenerate(_))));
        assert!(matches!(
            fit_exponential_decay(&[0.0, 1.0, 2.0], &[1.0, 0.0, 0.5]),
            Err(Error::FitDegenerate(_))
        ));
        let f = fit_exponential_decay(&[0.0, 1.0, 2.0, 3.0], &[2.0, 2.0 * (-0.7f64).exp(), 2.0 * (-1.4f64).exp(), 2.0 * (-2.1f64).exp()]).unwrap();
        assert_relative_eq!(f.rate, 0.7, max_relative = 1e-12);
        assert!(f.residual_rms < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn slots_keep_field_physical(seed in 0u64..1000, lambda in 0.0f64..1.0, dv in 0.0f64..5.0) {
            let p = PhysicalParams::new(0.2, 0.0, 10.0, 30.0);
            let mut spec = BeamSpec::new(ProtocolKind::Kick, 6, lambda).with_dispersion(dv, VelocityDist::Uniform);
            spec.v0 = 100.0;
            spec.seed = seed;
            let mut setup = BeamSetup::new(p, spec, ProtocolKind::Kick);
            setup.integrator = IntegratorConfig::with_dt(2e-3);
            let field = DensityMatrix::field_qubit(3, 0.5, C64::new(0.5, 0.0)).unwrap();
            let r = run_beam(&field, &setup, Engine::Numeric).unwrap();
            prop_assert!(r.final_state.validate().is_ok());
            prop_assert!(r.max_leakage <= 1e-8);
        }
    }
}
