//! Analytic per-atom factors, dwell times, gains, velocity-dispersion
//! corrections, feasibility inequalities, effective channel rates and
//! fidelity for the two beam protocols.
//!
//! Conventions: `period` is the total resonant time T = 2π/Ω of one atom,
//! `tau` the dispersive hold, `t` a free window after the atom. Velocity
//! dispersion enters only through `(dv / v0)²`, where `dv` is the rms
//! deviation of the atomic velocity.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::beam::{BeamSpec, Geometry};
use crate::error::{Error, Result};
use crate::hilbert::PhysicalParams;

/// Reduced-form threshold for the phase-kick inequality at the reference setup.
pub const KICK_REDUCED_THRESHOLD: f64 = 1e-3;
/// Reduced-form threshold for the dispersive inequality at the reference setup.
pub const DISPERSIVE_REDUCED_THRESHOLD: f64 = 1e-1;

/// Correction function f(κ, Ω, τ) entering Γ and ς.
#[derive(Clone, Default)]
pub enum FModel {
    #[default]
    Zero,
    Constant(f64),
    Custom(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>),
}

impl FModel {
    pub fn eval(&self, kappa: f64, omega: f64, tau: f64) -> f64 {
        match self {
            FModel::Zero => 0.0,
            FModel::Constant(c) => *c,
            FModel::Custom(f) => f(kappa, omega, tau),
        }
    }
}

impl fmt::Debug for FModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FModel::Zero => write!(f, "FModel::Zero"),
            FModel::Constant(c) => write!(f, "FModel::Constant({c})"),
            FModel::Custom(_) => write!(f, "FModel::Custom(..)"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KickParams {
    pub kappa: f64,
    pub omega: f64,
    pub period: f64,
    pub lambda: f64,
    pub a: f64,
    pub c: f64,
    pub w0: f64,
    pub v0: f64,
    pub dv: f64,
}

#[derive(Clone, Debug)]
pub struct DispersiveParams {
    pub kappa: f64,
    pub omega: f64,
    pub period: f64,
    pub tau: f64,
    pub lambda: f64,
    pub a: f64,
    pub d: f64,
    pub w0: f64,
    pub v0: f64,
    pub dv: f64,
    pub f_model: FModel,
}

impl KickParams {
    /// Reference cavity and beam: κ = 3.846 s⁻¹, T = 1.96e−5 s, v0 = 510 m/s,
    /// λ = 1, Δv = 0.
    pub fn realistic() -> Self {
        let p = PhysicalParams::realistic();
        let g = Geometry::default();
        Self {
            kappa: p.kappa,
            omega: p.rabi,
            period: 2.0 * PI / p.rabi,
            lambda: 1.0,
            a: g.a,
            c: g.c,
            w0: g.w0,
            v0: crate::beam::KICK_VELOCITY,
            dv: 0.0,
        }
    }

    /// Builds the analytic parameters from a simulation setup. `dv` is the
    /// rms velocity deviation the sampler actually produces.
    pub fn from_setup(p: &PhysicalParams, beam: &BeamSpec, geom: &Geometry) -> Self {
        Self {
            kappa: p.kappa,
            omega: p.rabi,
            period: 2.0 * p.pi_pulse(),
            lambda: beam.density,
            a: geom.a,
            c: geom.c,
            w0: geom.w0,
            v0: beam.v0,
            dv: beam.velocity_rms(),
        }
    }

    fn validate(&self) -> Result<()> {
        positive("period", self.period)?;
        positive("omega", self.omega)?;
        unit_interval("lambda", self.lambda)?;
        Ok(())
    }
}

impl DispersiveParams {
    /// Reference setup with δ = 3G, so τ = 6π/Ω, v0 = 127.5 m/s and f ≡ 0.
    pub fn realistic() -> Self {
        let p = PhysicalParams::realistic();
        let g = Geometry::default();
        Self {
            kappa: p.kappa,
            omega: p.rabi,
            period: 2.0 * PI / p.rabi,
            tau: 6.0 * PI / p.rabi,
            lambda: 1.0,
            a: g.a,
            d: g.d,
            w0: g.w0,
            v0: crate::beam::DISPERSIVE_VELOCITY,
            dv: 0.0,
            f_model: FModel::Zero,
        }
    }

    pub fn from_setup(
        p: &PhysicalParams,
        beam: &BeamSpec,
        geom: &Geometry,
        f_model: FModel,
    ) -> Result<Self> {
        Ok(Self {
            kappa: p.kappa,
            omega: p.rabi,
            period: 2.0 * p.pi_pulse(),
            tau: p.dispersive_hold()?,
            lambda: beam.density,
            a: geom.a,
            d: geom.d,
            w0: geom.w0,
            v0: beam.v0,
            dv: beam.velocity_rms(),
            f_model,
        })
    }

    fn f(&self) -> f64 {
        self.f_model.eval(self.kappa, self.omega, self.tau)
    }

    fn validate(&self) -> Result<()> {
        positive("period", self.period)?;
        positive("omega", self.omega)?;
        positive("tau", self.tau)?;
        unit_interval("lambda", self.lambda)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DwellReport {
    /// Population dwell time, s.
    pub tr_p: f64,
    /// Coherence dwell time, s.
    pub tr_c: f64,
    /// κ·tr_c − 1.
    pub gain: f64,
    pub inequality_lhs: f64,
    pub satisfied: bool,
}

/// Denominators of the dispersion-corrected dwell times (units of time).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DwellDenominators {
    pub population: f64,
    pub coherence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InequalityReport {
    pub lhs: f64,
    pub satisfied: bool,
    /// (Ω/κ)(Δv/v0)².
    pub reduced_value: f64,
    pub reduced_threshold: f64,
    pub reduced_satisfied: bool,
    /// Bound on the reduced value implied by `lhs < 1` at this geometry and λ.
    pub critical_reduced: f64,
    /// Length `a` for which `critical_reduced` equals `reduced_threshold`.
    pub geometry_a_for_threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EffectiveRates {
    /// Coherence decay rate without the dispersion-induced dephasing; the
    /// population decays at twice this rate.
    pub kappa_bar: f64,
    /// Dispersion-induced dephasing rate.
    pub f_bar: f64,
}

/// `(1/κ) ln(1 + κ c)` with its κ → 0 limit `c`.
fn log1p_over_kappa(kappa: f64, c: f64) -> f64 {
    if kappa == 0.0 {
        c
    } else {
        (kappa * c).ln_1p() / kappa
    }
}

/// `(2/κ) ln(1 + 2κ²/Ω²)`.
fn kick_log_term(kappa: f64, omega: f64) -> f64 {
    2.0 * log1p_over_kappa(kappa, 2.0 * kappa / (omega * omega))
}

/// `(2/κ) ln(1 + (κ/Ω) f)`.
fn dispersive_log_term(kappa: f64, omega: f64, f: f64) -> f64 {
    2.0 * log1p_over_kappa(kappa, f / omega)
}

/// η(κ, Ω, T, t) = (1 + 2κ²/Ω²) e^{−κ(T+2t)/2}: coherence factor per kick atom.
pub fn eta(kappa: f64, omega: f64, period: f64, t: f64) -> f64 {
    (1.0 + 2.0 * kappa * kappa / (omega * omega)) * (-kappa * (period + 2.0 * t) / 2.0).exp()
}

/// Γ(κ, Ω, τ, T, t) = [1 + (κ/Ω) f(κ, Ω, τ)] e^{−κ(T+2t)/2}.
pub fn gamma_factor(kappa: f64, omega: f64, tau: f64, period: f64, t: f64, f: &FModel) -> f64 {
    (1.0 + kappa / omega * f.eval(kappa, omega, tau)) * (-kappa * (period + 2.0 * t) / 2.0).exp()
}

/// α(κ, Ω, T) = (1/2T){T + (2/κ) ln[1 + 2κ²/Ω²]}; equals 1/2 at κ = 0.
pub fn alpha(kappa: f64, omega: f64, period: f64) -> f64 {
    (period + kick_log_term(kappa, omega)) / (2.0 * period)
}

/// ς(κ, Ω, τ, T) = {τ + T/2 + (1/κ) ln[1 + (κ/Ω) f]}/(T + τ).
pub fn varsigma(kappa: f64, omega: f64, tau: f64, period: f64, f: &FModel) -> f64 {
    let fv = f.eval(kappa, omega, tau);
    (tau + period / 2.0 + log1p_over_kappa(kappa, fv / omega)) / (period + tau)
}

fn protection_gain(lambda: f64, fraction: f64) -> Result<f64> {
    let product = lambda * fraction;
    if product >= 1.0 || !product.is_finite() {
        return Err(Error::DivergentGain { product });
    }
    Ok(1.0 / (1.0 - product) - 1.0)
}

/// g = 1/(1 − λα) − 1.
pub fn gain_kick(p: &KickParams) -> Result<f64> {
    p.validate()?;
    protection_gain(p.lambda, alpha(p.kappa, p.omega, p.period))
}

/// 𝒢 = 1/(1 − λς) − 1.
pub fn gain_dispersive(p: &DispersiveParams) -> Result<f64> {
    p.validate()?;
    protection_gain(
        p.lambda,
        varsigma(p.kappa, p.omega, p.tau, p.period, &p.f_model),
    )
}

fn plain_dwell(kappa: f64, lambda: f64, fraction: f64, inequality: InequalityReport) -> Result<DwellReport> {
    if !(kappa > 0.0) {
        return Err(Error::ZeroKappa);
    }
    let product = lambda * fraction;
    if product >= 1.0 || !product.is_finite() {
        return Err(Error::DivergentGain { product });
    }
    let tr_c = 1.0 / (kappa * (1.0 - product));
    Ok(DwellReport {
        tr_p: tr_c / 2.0,
        tr_c,
        gain: kappa * tr_c - 1.0,
        inequality_lhs: inequality.lhs,
        satisfied: inequality.satisfied,
    })
}

/// Dwell times without velocity dispersion: Tr^c = (1/κ)/(1 − λα), Tr^p = Tr^c/2.
pub fn dwell_kick(p: &KickParams) -> Result<DwellReport> {
    p.validate()?;
    plain_dwell(
        p.kappa,
        p.lambda,
        alpha(p.kappa, p.omega, p.period),
        inequality_kick(p),
    )
}

/// Dwell times without velocity dispersion: Tr^c = (1/κ)/(1 − λς), Tr^p = Tr^c/2.
pub fn dwell_dispersive(p: &DispersiveParams) -> Result<DwellReport> {
    p.validate()?;
    plain_dwell(
        p.kappa,
        p.lambda,
        varsigma(p.kappa, p.omega, p.tau, p.period, &p.f_model),
        inequality_dispersive(p),
    )
}

/// Sum of the two lengths (a + √π w0) and related products used by the
/// dispersion coefficients.
struct Lengths {
    /// √π w0
    s: f64,
    /// a² + (a + s)²
    sum_sq: f64,
    /// a (a + s)
    cross: f64,
    /// [a + (a + s)]²
    total_sq: f64,
}

impl Lengths {
    fn new(a: f64, w0: f64) -> Self {
        let s = PI.sqrt() * w0;
        let far = a + s;
        Self {
            s,
            sum_sq: a * a + far * far,
            cross: a * far,
            total_sq: (a + far) * (a + far),
        }
    }
}

/// D(κ, Ω, a, w0, v0), the population dispersion coefficient of the kick protocol (s).
pub fn dispersion_d(kappa: f64, omega: f64, a: f64, w0: f64, v0: f64) -> f64 {
    let l = Lengths::new(a, w0);
    let v2 = v0 * v0;
    0.75 * kappa * l.total_sq / v2 + 0.25 * omega * omega / kappa * l.total_sq / v2
}

/// W(κ, Ω, a, w0, v0), the extra coherence dispersion coefficient of the kick protocol (s).
pub fn dispersion_w(kappa: f64, _omega: f64, a: f64, w0: f64, v0: f64) -> f64 {
    let l = Lengths::new(a, w0);
    let v2 = v0 * v0;
    -0.25 * kappa * l.sum_sq / v2 - 1.5 * kappa * l.cross / v2
}

/// The bracket `[(a² + (a+s)²)/(2v0²) − a(a+s)/v0² e^{−κτ}]` shared by Λ and ξ.
fn dispersive_bracket(l: &Lengths, kappa: f64, tau: f64, v0: f64) -> f64 {
    let v2 = v0 * v0;
    l.sum_sq / (2.0 * v2) - l.cross / v2 * (-kappa * tau).exp()
}

/// Λ(κ, Ω, τ, a, w0, v0), the population dispersion coefficient of the dispersive protocol (s).
pub fn dispersion_lambda(kappa: f64, omega: f64, tau: f64, a: f64, w0: f64, v0: f64, f: f64) -> f64 {
    let l = Lengths::new(a, w0);
    let v2 = v0 * v0;
    let sv2 = (l.s / v0).powi(2);
    let w2 = omega * omega;
    f / omega * (w2 / 4.0 * (l.sum_sq / v2) + w2 * w2 / (2.0 * kappa * kappa) * l.cross / v2)
        + w2 / (4.0 * kappa) * sv2
        + omega / 2.0 * f * dispersive_bracket(&l, kappa, tau, v0)
        - kappa / 4.0 * sv2 * (-2.0 * kappa * tau).exp()
}

/// ξ(κ, Ω, τ, a, w0, v0), the extra coherence dispersion coefficient of the dispersive protocol (s).
pub fn dispersion_xi(kappa: f64, omega: f64, tau: f64, a: f64, w0: f64, v0: f64, f: f64) -> f64 {
    let l = Lengths::new(a, w0);
    let sv2 = (l.s / v0).powi(2);
    -omega / 2.0 * f * dispersive_bracket(&l, kappa, tau, v0) + kappa / 4.0 * sv2 * (-2.0 * kappa * tau).exp()
}

fn velocity_ratio_sq(dv: f64, v0: f64) -> f64 {
    (dv / v0).powi(2)
}

pub fn kick_denominators(p: &KickParams) -> Result<DwellDenominators> {
    p.validate()?;
    if !(p.kappa > 0.0) {
        return Err(Error::ZeroKappa);
    }
    positive("v0", p.v0)?;
    let t = p.period;
    let log_term = kick_log_term(p.kappa, p.omega);
    let r2 = velocity_ratio_sq(p.dv, p.v0);
    let d = dispersion_d(p.kappa, p.omega, p.a, p.w0, p.v0);
    let w = dispersion_w(p.kappa, p.omega, p.a, p.w0, p.v0);
    let population = t - log_term + (1.0 - p.lambda) * (t + log_term) + d * r2;
    Ok(DwellDenominators {
        population,
        coherence: population + w * r2,
    })
}

pub fn dispersive_denominators(p: &DispersiveParams) -> Result<DwellDenominators> {
    p.validate()?;
    if !(p.kappa > 0.0) {
        return Err(Error::ZeroKappa);
    }
    positive("v0", p.v0)?;
    let t = p.period;
    let f = p.f();
    let log_term = dispersive_log_term(p.kappa, p.omega, f);
    let r2 = velocity_ratio_sq(p.dv, p.v0);
    let big_lambda = dispersion_lambda(p.kappa, p.omega, p.tau, p.a, p.w0, p.v0, f);
    let xi = dispersion_xi(p.kappa, p.omega, p.tau, p.a, p.w0, p.v0, f);
    let population = t - log_term + (1.0 - p.lambda) * (t + 2.0 * p.tau + log_term) + big_lambda * r2;
    Ok(DwellDenominators {
        population,
        coherence: population + xi * r2,
    })
}

fn dispersion_report(
    kappa: f64,
    cycle: f64,
    den: DwellDenominators,
    inequality: InequalityReport,
) -> Result<DwellReport> {
    for value in [den.population, den.coherence] {
        if !(value > 0.0) {
            return Err(Error::NegativeDenominator { value });
        }
    }
    let tr_p = (1.0 / (2.0 * kappa)) * (2.0 * cycle / den.population);
    let tr_c = (1.0 / kappa) * (2.0 * cycle / den.coherence);
    Ok(DwellReport {
        tr_p,
        tr_c,
        gain: kappa * tr_c - 1.0,
        inequality_lhs: inequality.lhs,
        satisfied: inequality.satisfied,
    })
}

/// Kick-protocol dwell times including the velocity-dispersion terms D and W.
pub fn dwell_kick_dispersion(p: &KickParams) -> Result<DwellReport> {
    let den = kick_denominators(p)?;
    dispersion_report(p.kappa, p.period, den, inequality_kick(p))
}

/// Dispersive-protocol dwell times including the velocity-dispersion terms Λ and ξ.
pub fn dwell_dispersive_dispersion(p: &DispersiveParams) -> Result<DwellReport> {
    let den = dispersive_denominators(p)?;
    dispersion_report(p.kappa, p.period + p.tau, den, inequality_dispersive(p))
}

fn inequality(
    prefactor: f64,
    lambda: f64,
    geometry_factor: f64,
    reduced_value: f64,
    reduced_threshold: f64,
    a_for_critical: impl Fn(f64) -> f64,
) -> InequalityReport {
    let lhs = if reduced_value == 0.0 {
        0.0
    } else {
        prefactor / lambda * geometry_factor * reduced_value
    };
    let critical_reduced = lambda / (prefactor * geometry_factor);
    let a = a_for_critical(reduced_threshold);
    InequalityReport {
        lhs,
        satisfied: lhs < 1.0,
        reduced_value,
        reduced_threshold,
        reduced_satisfied: reduced_value < reduced_threshold,
        critical_reduced,
        geometry_a_for_threshold: (a.is_finite() && a >= 0.0).then_some(a),
    }
}

/// lhs = (π/2λ)(1 + 2Ωa/(πv0))(Ω/κ)(Δv/v0)²; satisfied when lhs < 1.
pub fn inequality_kick(p: &KickParams) -> InequalityReport {
    let prefactor = PI / 2.0;
    let geometry_factor = 1.0 + 2.0 * p.omega / PI * p.a / p.v0;
    let reduced = p.omega / p.kappa * velocity_ratio_sq(p.dv, p.v0);
    inequality(prefactor, p.lambda, geometry_factor, reduced, KICK_REDUCED_THRESHOLD, |thr| {
        (p.lambda / (prefactor * thr) - 1.0) * PI * p.v0 / (2.0 * p.omega)
    })
}

/// lhs = (8π/7λ)(1 + (3κ/2)(a/v0))(Ω/κ)(Δv/v0)²; satisfied when lhs < 1.
pub fn inequality_dispersive(p: &DispersiveParams) -> InequalityReport {
    let prefactor = 8.0 * PI / 7.0;
    let geometry_factor = 1.0 + 1.5 * p.kappa * p.a / p.v0;
    let reduced = p.omega / p.kappa * velocity_ratio_sq(p.dv, p.v0);
    inequality(
        prefactor,
        p.lambda,
        geometry_factor,
        reduced,
        DISPERSIVE_REDUCED_THRESHOLD,
        |thr| (p.lambda / (prefactor * thr) - 1.0) * p.v0 / (1.5 * p.kappa),
    )
}

/// κ̄ = 1/(2T_R^p), F̄ = κ W (Δv/v0)²/(2T).
pub fn effective_rates_kick(p: &KickParams) -> Result<EffectiveRates> {
    let report = dwell_kick_dispersion(p)?;
    let w = dispersion_w(p.kappa, p.omega, p.a, p.w0, p.v0);
    Ok(EffectiveRates {
        kappa_bar: 1.0 / (2.0 * report.tr_p),
        f_bar: p.kappa * w * velocity_ratio_sq(p.dv, p.v0) / (2.0 * p.period),
    })
}

/// κ̄' = 1/(2T_R^p), F̄' = κ ξ (Δv/v0)²/(2(T+τ)).
pub fn effective_rates_dispersive(p: &DispersiveParams) -> Result<EffectiveRates> {
    let report = dwell_dispersive_dispersion(p)?;
    let xi = dispersion_xi(p.kappa, p.omega, p.tau, p.a, p.w0, p.v0, p.f());
    Ok(EffectiveRates {
        kappa_bar: 1.0 / (2.0 * report.tr_p),
        f_bar: p.kappa * xi * velocity_ratio_sq(p.dv, p.v0) / (2.0 * (p.period + p.tau)),
    })
}

/// F = ½(1 + e^{−βt} e^{−εt}), the overlap of (|0⟩ + e^{iφ}|1⟩)/√2 with its
/// damped image. Lies in [1/2, 1] whenever β + ε ≥ 0.
pub fn fidelity_formula(beta: f64, epsilon: f64, t: f64) -> f64 {
    let rate = beta + epsilon;
    if rate == 0.0 || t == 0.0 {
        return 1.0;
    }
    0.5 * (1.0 + (-beta * t).exp() * (-epsilon * t).exp())
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {value}"),
        });
    }
    Ok(())
}

fn unit_interval(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("must lie in [0, 1], got {value}"),
        });
    }
    Ok(())
}
