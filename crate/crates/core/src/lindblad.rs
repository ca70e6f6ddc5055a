//! Density-matrix time evolution under the cavity-loss master equation and
//! the amplitude-plus-phase damping master equation.
//!
//! Both forms are written in terms of a single field annihilation operator
//! `a` (possibly embedded in the joint atom-field space):
//!
//! ```text
//! cavity loss:          -i[H, ρ] + κ(1+n̄)(2aρa† − a†aρ − ρa†a) + κn̄(2a†ρa − aa†ρ − ρaa†)
//! amplitude + phase:    -i[H, ρ] + β(2aρa† − a†aρ − ρa†a) + ε(2NρN − N²ρ − ρN²),  N = a†a
//! ```
//!
//! Integration is fixed-step classical RK4; step count per call is
//! `ceil(duration / dt_max)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{CMatrix, DensityMatrix, Operator, C64, ONE, ZERO};

const STABILITY_BOUND: f64 = 0.1;
const UNITARY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingVariant {
    CavityLoss,
    AmplitudePlusPhase,
}

#[derive(Clone, Debug)]
pub struct LindbladModel {
    hamiltonian: CMatrix,
    a: CMatrix,
    a_dag: CMatrix,
    number: CMatrix,
    /// `H − i(γ↓ a†a + γ↑ aa† + γφ N²)`; the anticommutator terms folded in.
    effective: CMatrix,
    effective_dag: CMatrix,
    h_norm: f64,
    pub kappa: f64,
    pub nbar: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub variant: DampingVariant,
}

impl LindbladModel {
    pub fn cavity_loss(
        hamiltonian: &Operator,
        annihilation: &Operator,
        kappa: f64,
        nbar: f64,
    ) -> Result<Self> {
        non_negative("kappa", kappa)?;
        non_negative("nbar", nbar)?;
        Self::build(
            hamiltonian,
            annihilation,
            kappa,
            nbar,
            0.0,
            0.0,
            DampingVariant::CavityLoss,
        )
    }

    pub fn amplitude_plus_phase(
        hamiltonian: &Operator,
        annihilation: &Operator,
        beta: f64,
        epsilon: f64,
    ) -> Result<Self> {
        non_negative("beta", beta)?;
        non_negative("epsilon", epsilon)?;
        Self::build(
            hamiltonian,
            annihilation,
            0.0,
            0.0,
            beta,
            epsilon,
            DampingVariant::AmplitudePlusPhase,
        )
    }

    /// Bare cavity field of `cutoff` levels (H = 0, cavity loss only).
    pub fn bare_field(cutoff: usize, kappa: f64, nbar: f64) -> Result<Self> {
        let a = Operator::from_matrix(crate::hilbert::field_annihilation_matrix(cutoff))?;
        Self::cavity_loss(&Operator::zeros(cutoff), &a, kappa, nbar)
    }

    /// Same damping, different Hamiltonian.
    pub fn with_hamiltonian(&self, hamiltonian: &Operator) -> Result<Self> {
        let a = Operator::from_matrix(self.a.clone())?;
        Self::build(
            hamiltonian,
            &a,
            self.kappa,
            self.nbar,
            self.beta,
            self.epsilon,
            self.variant,
        )
    }

    fn build(
        hamiltonian: &Operator,
        annihilation: &Operator,
        kappa: f64,
        nbar: f64,
        beta: f64,
        epsilon: f64,
        variant: DampingVariant,
    ) -> Result<Self> {
        if hamiltonian.dim() != annihilation.dim() {
            return Err(Error::DimensionMismatch {
                expected: annihilation.dim(),
                found: hamiltonian.dim(),
            });
        }
        let a = annihilation.matrix().clone();
        let a_dag = a.adjoint();
        let number = &a_dag * &a;
        let raising = &a * &a_dag;
        let mut model = Self {
            hamiltonian: hamiltonian.matrix().clone(),
            a,
            a_dag,
            number,
            effective: CMatrix::zeros(0, 0),
            effective_dag: CMatrix::zeros(0, 0),
            h_norm: hamiltonian.row_sum_norm(),
            kappa,
            nbar,
            beta,
            epsilon,
            variant,
        };
        let (down, up, phase) = model.rates();
        let i = C64::new(0.0, 1.0);
        let anti = &model.number * C64::new(down, 0.0)
            + raising * C64::new(up, 0.0)
            + (&model.number * &model.number) * C64::new(phase, 0.0);
        model.effective = &model.hamiltonian - anti * i;
        model.effective_dag = model.effective.adjoint();
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    /// (emission rate, absorption rate, dephasing rate).
    fn rates(&self) -> (f64, f64, f64) {
        match self.variant {
            DampingVariant::CavityLoss => (self.kappa * (1.0 + self.nbar), self.kappa * self.nbar, 0.0),
            DampingVariant::AmplitudePlusPhase => (self.beta, 0.0, self.epsilon),
        }
    }

    /// `‖H‖ + 2(γ↓ + γ↑ + γφ)`, the rate scale used by the step-size guard.
    pub fn rate_scale(&self) -> f64 {
        let (down, up, phase) = self.rates();
        self.h_norm + 2.0 * (down + up + phase)
    }

    fn rhs_into(&self, rho: &CMatrix, out: &mut CMatrix, scratch: &mut CMatrix) {
        let i = C64::new(0.0, 1.0);
        let (down, up, phase) = self.rates();
        out.gemm(-i, &self.effective, rho, ZERO);
        out.gemm(i, rho, &self.effective_dag, ONE);
        if down != 0.0 {
            scratch.gemm(ONE, &self.a, rho, ZERO);
            out.gemm(C64::new(2.0 * down, 0.0), scratch, &self.a_dag, ONE);
        }
        if up != 0.0 {
            scratch.gemm(ONE, &self.a_dag, rho, ZERO);
            out.gemm(C64::new(2.0 * up, 0.0), scratch, &self.a, ONE);
        }
        if phase != 0.0 {
            scratch.gemm(ONE, &self.number, rho, ZERO);
            out.gemm(C64::new(2.0 * phase, 0.0), scratch, &self.number, ONE);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Largest RK4 step, in seconds.
    pub dt_max: f64,
    pub renormalize_trace: bool,
}

impl Default for IntegratorConfig {
    /// 0.1 µs steps: about 100 steps per π-pulse at the reference coupling.
    fn default() -> Self {
        Self {
            dt_max: 1e-7,
            renormalize_trace: false,
        }
    }
}

impl IntegratorConfig {
    pub fn with_dt(dt_max: f64) -> Self {
        Self {
            dt_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt_max",
                reason: format!("must be finite and > 0, got {}", self.dt_max),
            });
        }
        Ok(())
    }
}

/// dρ/dt for the given model.
pub fn lindblad_rhs(rho: &DensityMatrix, model: &LindbladModel) -> Result<CMatrix> {
    check_model_dim(model, rho.dim())?;
    let d = rho.dim();
    let mut out = CMatrix::zeros(d, d);
    let mut scratch = CMatrix::zeros(d, d);
    model.rhs_into(rho.matrix(), &mut out, &mut scratch);
    Ok(out)
}

pub fn evolve(
    rho0: &DensityMatrix,
    model: &LindbladModel,
    duration: f64,
    cfg: &IntegratorConfig,
) -> Result<DensityMatrix> {
    evolve_observed(rho0, model, duration, cfg, |_, _| {})
}

/// Like [`evolve`], calling `observer(t, ρ)` after every completed step.
pub fn evolve_observed<F>(
    rho0: &DensityMatrix,
    model: &LindbladModel,
    duration: f64,
    cfg: &IntegratorConfig,
    observer: F,
) -> Result<DensityMatrix>
where
    F: FnMut(f64, &CMatrix),
{
    check_model_dim(model, rho0.dim())?;
    let m = integrate(rho0.matrix(), model, duration, cfg, true, observer)?;
    Ok(DensityMatrix::from_matrix_unchecked(m))
}

/// Evolves an arbitrary operator (not necessarily Hermitian) with the same
/// linear generator. No symmetrization or renormalization is applied.
pub(crate) fn evolve_operator(
    m0: &CMatrix,
    model: &LindbladModel,
    duration: f64,
    cfg: &IntegratorConfig,
) -> Result<CMatrix> {
    let plain = IntegratorConfig {
        renormalize_trace: false,
        ..*cfg
    };
    integrate(m0, model, duration, &plain, false, |_, _| {})
}

fn integrate<F>(
    m0: &CMatrix,
    model: &LindbladModel,
    duration: f64,
    cfg: &IntegratorConfig,
    hermitian: bool,
    mut observer: F,
) -> Result<CMatrix>
where
    F: FnMut(f64, &CMatrix),
{
    cfg.validate()?;
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "duration",
            reason: format!("must be finite and >= 0, got {duration}"),
        });
    }
    let mut rho = m0.clone();
    if duration == 0.0 {
        return Ok(rho);
    }
    let steps = (duration / cfg.dt_max).ceil().max(1.0) as usize;
    let h = duration / steps as f64;
    let product = h * model.rate_scale();
    if product > STABILITY_BOUND {
        return Err(Error::UnstableStep { dt: h, product });
    }

    let d = rho.nrows();
    let mut k1 = CMatrix::zeros(d, d);
    let mut k2 = CMatrix::zeros(d, d);
    let mut k3 = CMatrix::zeros(d, d);
    let mut k4 = CMatrix::zeros(d, d);
    let mut stage = CMatrix::zeros(d, d);
    let mut scratch = CMatrix::zeros(d, d);
    let half = C64::new(h / 2.0, 0.0);
    let full = C64::new(h, 0.0);
    let sixth = C64::new(h / 6.0, 0.0);
    let third = C64::new(h / 3.0, 0.0);

    for step in 1..=steps {
        model.rhs_into(&rho, &mut k1, &mut scratch);
        stage.copy_from(&rho);
        add_scaled(&mut stage, half, &k1);
        model.rhs_into(&stage, &mut k2, &mut scratch);
        stage.copy_from(&rho);
        add_scaled(&mut stage, half, &k2);
        model.rhs_into(&stage, &mut k3, &mut scratch);
        stage.copy_from(&rho);
        add_scaled(&mut stage, full, &k3);
        model.rhs_into(&stage, &mut k4, &mut scratch);

        add_scaled(&mut rho, sixth, &k1);
        add_scaled(&mut rho, third, &k2);
        add_scaled(&mut rho, third, &k3);
        add_scaled(&mut rho, sixth, &k4);

        if hermitian {
            symmetrize(&mut rho);
            if cfg.renormalize_trace {
                let tr = rho.trace().re;
                if tr != 0.0 {
                    rho /= C64::new(tr, 0.0);
                }
            }
        }
        observer(step as f64 * h, &rho);
    }
    Ok(rho)
}

/// `dst += alpha * src`.
fn add_scaled(dst: &mut CMatrix, alpha: C64, src: &CMatrix) {
    dst.zip_apply(src, |d, s| *d += alpha * s);
}

/// `U ρ U†`.
pub fn evolve_unitary(rho0: &DensityMatrix, unitary: &Operator) -> Result<DensityMatrix> {
    if unitary.dim() != rho0.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho0.dim(),
            found: unitary.dim(),
        });
    }
    let deviation = unitary.unitarity_error();
    if deviation > UNITARY_TOL {
        return Err(Error::NotUnitary { deviation });
    }
    let u = unitary.matrix();
    Ok(DensityMatrix::from_matrix_unchecked(u * rho0.matrix() * u.adjoint()))
}

fn symmetrize(m: &mut CMatrix) {
    let d = m.nrows();
    for r in 0..d {
        m[(r, r)].im = 0.0;
        for c in (r + 1)..d {
            let avg = (m[(r, c)] + m[(c, r)].conj()) * 0.5;
            m[(r, c)] = avg;
            m[(c, r)] = avg.conj();
        }
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<()> {
    if !(value >= 0.0 && value.is_finite()) {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and >= 0, got {value}"),
        });
    }
    Ok(())
}

fn check_model_dim(model: &LindbladModel, dim: usize) -> Result<()> {
    if model.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: dim,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{
        dispersive_hamiltonian, jc_interaction_hamiltonian, joint_annihilation, kick_unitary,
        max_abs_diff, AtomLevel, HilbertSpace, PhysicalParams, StateVector,
    };
    use approx::assert_abs_diff_eq;

    fn qubit(r11: f64, r10: C64) -> DensityMatrix {
        DensityMatrix::field_qubit(3, r11, r10).unwrap()
    }

    #[test]
    fn bare_rhs_matches_hand_expansion() {
        let kappa = 0.7;
        let model = LindbladModel::bare_field(3, kappa, 0.0).unwrap();
        let d = lindblad_rhs(&DensityMatrix::fock(3, 1), &model).unwrap();
        assert_abs_diff_eq!(d[(1, 1)].re, -2.0 * kappa, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(0, 0)].re, 2.0 * kappa, epsilon = 1e-15);

        // Pure coherence |1⟩⟨0| (not a state, but the generator is linear).
        let mut coh = CMatrix::zeros(3, 3);
        coh[(1, 0)] = ONE;
        let mut out = CMatrix::zeros(3, 3);
        let mut scratch = CMatrix::zeros(3, 3);
        model.rhs_into(&coh, &mut out, &mut scratch);
        assert_abs_diff_eq!(out[(1, 0)].re, -kappa, epsilon = 1e-15);
    }

    #[test]
    fn phase_channel_only_touches_coherences() {
        let eps = 0.3;
        let a = Operator::from_matrix(crate::hilbert::field_annihilation_matrix(3)).unwrap();
        let model = LindbladModel::amplitude_plus_phase(&Operator::zeros(3), &a, 0.0, eps).unwrap();
        let rho = qubit(0.4, C64::new(0.2, 0.1));
        let d = lindblad_rhs(&rho, &model).unwrap();
        assert_abs_diff_eq!(d[(0, 0)].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(1, 1)].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((d[(1, 0)] + rho.get(1, 0) * eps).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rhs_is_traceless_and_hermitian() {
        let s = HilbertSpace::new(3).unwrap();
        let p = PhysicalParams::new(0.4, 0.3, 1.0, 3.0);
        let model = LindbladModel::cavity_loss(
            &jc_interaction_hamiltonian(&p, s),
            &joint_annihilation(s),
            p.kappa,
            p.nbar,
        )
        .unwrap();
        let mut amps = crate::hilbert::CVector::zeros(6);
        amps[s.index(AtomLevel::Ground, 1)] = C64::new(0.6, 0.0);
        amps[s.index(AtomLevel::Excited, 0)] = C64::new(0.0, 0.8);
        amps[s.index(AtomLevel::Ground, 2)] = C64::new(0.1, 0.0);
        let rho = StateVector::new(amps).unwrap().projector();
        let d = lindblad_rhs(&rho, &model).unwrap();
        assert!(d.trace().norm() <= 1e-12);
        assert!(max_abs_diff(&d, &d.adjoint()) <= 1e-12);
    }

    #[test]
    fn zero_duration_returns_input() {
        let model = LindbladModel::bare_field(3, 1.0, 0.0).unwrap();
        let rho = qubit(0.5, C64::new(0.5, 0.0));
        let out = evolve(&rho, &model, 0.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(out, rho);
        assert!(evolve(&rho, &model, -1.0, &IntegratorConfig::default()).is_err());
    }

    #[test]
    fn unstable_step_is_rejected() {
        let model = LindbladModel::bare_field(3, 10.0, 0.0).unwrap();
        let rho = qubit(0.5, C64::new(0.5, 0.0));
        let err = evolve(&rho, &model, 1.0, &IntegratorConfig::with_dt(0.1)).unwrap_err();
        assert!(matches!(err, Error::UnstableStep { .. }));
    }

    #[test]
    fn bare_cavity_closed_form() {
        let kappa = 3.846;
        let model = LindbladModel::bare_field(3, kappa, 0.0).unwrap();
        let rho = qubit(0.7, C64::new(0.3, -0.2));
        for &t in &[0.05, 0.2, 0.5] {
            let out = evolve(&rho, &model, t, &IntegratorConfig::with_dt(1e-3)).unwrap();
            let p = 0.7 * (-2.0 * kappa * t).exp();
            let c = rho.get(1, 0).norm() * (-kappa * t).exp();
            assert!((out.population(1) - p).abs() / p <= 1e-6);
            assert!((out.get(1, 0).norm() - c).abs() / c <= 1e-6);
        }
    }

    #[test]
    fn amplitude_phase_matches_closed_form_state() {
        let (beta, eps) = (0.8, 0.5);
        let a = Operator::from_matrix(crate::hilbert::field_annihilation_matrix(3)).unwrap();
        let model = LindbladModel::amplitude_plus_phase(&Operator::zeros(3), &a, beta, eps).unwrap();
        let r11 = 0.6;
        let r10 = C64::new(0.3, 0.35);
        let rho = qubit(r11, r10);
        let t = 1.3;
        let out = evolve(&rho, &model, t, &IntegratorConfig::with_dt(1e-3)).unwrap();
        let expect = DensityMatrix::field_qubit(
            3,
            r11 * (-2.0 * beta * t).exp(),
            r10 * (-beta * t).exp() * (-eps * t).exp(),
        )
        .unwrap();
        assert!(max_abs_diff(out.matrix(), expect.matrix()) <= 1e-6);
    }

    #[test]
    fn both_forms_coincide_without_thermal_or_phase_terms() {
        let s = HilbertSpace::new(3).unwrap();
        let p = PhysicalParams::new(0.2, 0.0, 1.0, 3.0);
        let h = jc_interaction_hamiltonian(&p, s);
        let a = joint_annihilation(s);
        let m1 = LindbladModel::cavity_loss(&h, &a, 0.2, 0.0).unwrap();
        let m2 = LindbladModel::amplitude_plus_phase(&h, &a, 0.2, 0.0).unwrap();
        let field = qubit(0.5, C64::new(0.4, 0.1));
        let rho = crate::hilbert::embed_field_state(&field, AtomLevel::Ground, s).unwrap();
        let cfg = IntegratorConfig::with_dt(1e-3);
        let r1 = evolve(&rho, &m1, 2.0, &cfg).unwrap();
        let r2 = evolve(&rho, &m2, 2.0, &cfg).unwrap();
        assert!(max_abs_diff(r1.matrix(), r2.matrix()) <= 1e-10);
    }

    #[test]
    fn unitary_dynamics_preserve_purity() {
        let s = HilbertSpace::new(3).unwrap();
        let p = PhysicalParams::new(0.0, 0.0, 1.0, 3.0);
        let model = LindbladModel::cavity_loss(
            &jc_interaction_hamiltonian(&p, s),
            &joint_annihilation(s),
            0.0,
            0.0,
        )
        .unwrap();
        let field = StateVector::equal_superposition(3, 0.4).projector();
        let rho = crate::hilbert::embed_field_state(&field, AtomLevel::Ground, s).unwrap();
        let out = evolve(&rho, &model, 3.7, &IntegratorConfig::with_dt(1e-3)).unwrap();
        assert_abs_diff_eq!(out.purity(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn resonant_pi_pulse_swaps_photon_into_atom() {
        // Oracle: in the {|g,1⟩, |e,0⟩} block H = G σx, so
        // |g,1⟩ → cos(Gt)|g,1⟩ − i sin(Gt)|e,0⟩.
        let s = HilbertSpace::new(3).unwrap();
        let g = 1.3;
        let p = PhysicalParams::new(0.0, 0.0, g, 3.0);
        let model = LindbladModel::cavity_loss(
            &jc_interaction_hamiltonian(&p, s),
            &joint_annihilation(s),
            0.0,
            0.0,
        )
        .unwrap();
        let g1 = s.index(AtomLevel::Ground, 1);
        let e0 = s.index(AtomLevel::Excited, 0);
        let rho = StateVector::basis(6, g1).projector();
        let t = std::f64::consts::PI / (2.0 * g);
        let out = evolve(&rho, &model, t, &IntegratorConfig::with_dt(1e-4)).unwrap();
        assert_abs_diff_eq!(out.population(e0), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(out.population(g1), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn dispersive_hold_imprints_pi_phase() {
        let s = HilbertSpace::new(3).unwrap();
        let p = PhysicalParams::new(0.0, 0.0, 1.0, 3.0);
        let model = LindbladModel::cavity_loss(
            &dispersive_hamiltonian(&p, s).unwrap(),
            &joint_annihilation(s),
            0.0,
            0.0,
        )
        .unwrap();
        let g0 = s.index(AtomLevel::Ground, 0);
        let g1 = s.index(AtomLevel::Ground, 1);
        let mut amps = crate::hilbert::CVector::zeros(6);
        amps[g0] = ONE;
        amps[g1] = ONE;
        let rho = StateVector::new(amps).unwrap().projector();
        let tau = p.dispersive_hold().unwrap();
        let out = evolve(&rho, &model, tau, &IntegratorConfig::with_dt(1e-3)).unwrap();
        // ρ_{g1,g0} picks up e^{iπ} = −1.
        assert_abs_diff_eq!(out.get(g1, g0).re, -0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(out.get(g1, g0).im, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn unitary_evolution_cases() {
        let s = HilbertSpace::new(3).unwrap();
        let kick = kick_unitary(s);
        let g1 = s.index(AtomLevel::Ground, 1);
        let e1 = s.index(AtomLevel::Excited, 1);
        let pop = StateVector::basis(6, g1).projector();
        assert_eq!(evolve_unitary(&pop, &kick).unwrap(), pop);
        assert_eq!(evolve_unitary(&pop, &Operator::identity(6)).unwrap(), pop);

        let mut amps = crate::hilbert::CVector::zeros(6);
        amps[g1] = ONE;
        amps[e1] = ONE;
        let sup = StateVector::new(amps).unwrap().projector();
        let out = evolve_unitary(&sup, &kick).unwrap();
        assert_abs_diff_eq!(out.get(g1, e1).re, -sup.get(g1, e1).re, epsilon = 1e-15);

        let mut not_u = CMatrix::identity(6, 6);
        not_u[(0, 0)] = C64::new(2.0, 0.0);
        let err = evolve_unitary(&sup, &Operator::from_matrix(not_u).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NotUnitary { .. }));
    }
}
