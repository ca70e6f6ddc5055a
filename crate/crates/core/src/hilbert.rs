//! State and operator algebra for a two-level atom coupled to a truncated
//! cavity mode.
//!
//! The joint basis is `{e, g} ⊗ {|0⟩, …, |cutoff−1⟩}` with the atom as the
//! most significant index: joint index `atom * cutoff + n`, where the excited
//! level `e` has atom index 0 and the ground level `g` has atom index 1.
//! Frequencies are in rad/s and ħ = 1.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ATOM_DIM: usize = 2;
/// Largest joint dimension this crate is meant to handle with dense matrices.
pub const MAX_JOINT_DIM: usize = 32;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const EIGEN_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomLevel {
    Excited,
    Ground,
}

impl AtomLevel {
    pub fn index(self) -> usize {
        match self {
            AtomLevel::Excited => 0,
            AtomLevel::Ground => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HilbertSpace {
    fock_cutoff: usize,
}

impl HilbertSpace {
    pub fn new(fock_cutoff: usize) -> Result<Self> {
        if fock_cutoff < 2 {
            return Err(Error::InvalidParameter {
                name: "fock_cutoff",
                reason: format!("must be at least 2, got {fock_cutoff}"),
            });
        }
        if ATOM_DIM * fock_cutoff > MAX_JOINT_DIM {
            return Err(Error::InvalidParameter {
                name: "fock_cutoff",
                reason: format!("joint dimension {} exceeds {MAX_JOINT_DIM}", ATOM_DIM * fock_cutoff),
            });
        }
        Ok(Self { fock_cutoff })
    }

    pub fn fock_cutoff(&self) -> usize {
        self.fock_cutoff
    }

    pub fn joint_dim(&self) -> usize {
        ATOM_DIM * self.fock_cutoff
    }

    pub fn index(&self, atom: AtomLevel, n: usize) -> usize {
        debug_assert!(n < self.fock_cutoff);
        atom.index() * self.fock_cutoff + n
    }
}

impl Default for HilbertSpace {
    fn default() -> Self {
        Self { fock_cutoff: 3 }
    }
}

/// A square complex matrix acting on either the field or the joint space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator(CMatrix);

impl Operator {
    pub fn from_matrix(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        Ok(Self(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs_diff(&self.0, &self.0.adjoint())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// max |U U† − 1| entrywise.
    pub fn unitarity_error(&self) -> f64 {
        let prod = &self.0 * self.0.adjoint();
        max_abs_diff(&prod, &CMatrix::identity(self.dim(), self.dim()))
    }

    pub fn apply(&self, psi: &StateVector) -> Result<CVector> {
        check_dim(self.dim(), psi.dim())?;
        Ok(&self.0 * &psi.0)
    }

    pub fn compose(&self, other: &Operator) -> Result<Operator> {
        check_dim(self.dim(), other.dim())?;
        Ok(Operator(&self.0 * &other.0))
    }

    /// Infinity norm (max absolute row sum); an upper bound on the spectral
    /// norm of a Hermitian matrix.
    pub fn row_sum_norm(&self) -> f64 {
        self.0
            .row_iter()
            .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// A normalized pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(CVector);

impl StateVector {
    /// Normalizes `amplitudes`; fails on the zero vector.
    pub fn new(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("state vector has zero or non-finite norm".into()));
        }
        Ok(Self(amplitudes / C64::new(norm, 0.0)))
    }

    pub fn from_slice(amplitudes: &[C64]) -> Result<Self> {
        Self::new(CVector::from_column_slice(amplitudes))
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = CVector::zeros(dim);
        v[k] = ONE;
        Self(v)
    }

    /// Field qubit `(|0⟩ + e^{iφ}|1⟩)/√2` padded to `cutoff` levels.
    pub fn equal_superposition(cutoff: usize, phase: f64) -> Self {
        let mut v = CVector::zeros(cutoff);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        v[0] = C64::new(h, 0.0);
        v[1] = C64::from_polar(h, phase);
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.0
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix(&self.0 * self.0.adjoint())
    }
}

/// A density matrix: Hermitian, unit trace, positive semidefinite (within
/// the module tolerances).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let rho = Self(m);
        rho.validate()?;
        Ok(rho)
    }

    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    /// `ρ11|1⟩⟨1| + (1−ρ11)|0⟩⟨0| + (ρ10|1⟩⟨0| + h.c.)` on a field of `cutoff` levels.
    pub fn field_qubit(cutoff: usize, rho11: f64, rho10: C64) -> Result<Self> {
        if cutoff < 2 {
            return Err(Error::InvalidParameter {
                name: "fock_cutoff",
                reason: format!("must be at least 2, got {cutoff}"),
            });
        }
        let mut m = CMatrix::zeros(cutoff, cutoff);
        m[(0, 0)] = C64::new(1.0 - rho11, 0.0);
        m[(1, 1)] = C64::new(rho11, 0.0);
        m[(1, 0)] = rho10;
        m[(0, 1)] = rho10.conj();
        Self::new(m)
    }

    pub fn fock(cutoff: usize, n: usize) -> Self {
        StateVector::basis(cutoff, n).projector()
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn population(&self, n: usize) -> f64 {
        self.0[(n, n)].re
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs_diff(&self.0, &self.0.adjoint())
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = hermitian_part(&self.0);
        let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Eigenvector of the largest eigenvalue; the state itself when pure.
    pub fn principal_state(&self) -> StateVector {
        let eig = hermitian_part(&self.0).symmetric_eigen();
        let k = eig.eigenvalues.imax();
        let mut v: CVector = eig.eigenvectors.column(k).into_owned();
        // Fix the global phase so the first non-negligible amplitude is real positive.
        if let Some(z) = v.iter().copied().find(|z| z.norm() > 1e-12) {
            let phase = C64::from_polar(1.0, -z.arg());
            v *= phase;
        }
        StateVector(v)
    }

    /// Population above the single-photon level (field matrices only).
    pub fn leakage(&self) -> f64 {
        (2..self.dim()).map(|n| self.population(n)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.0.is_square() {
            return Err(Error::InvalidState("matrix is not square".into()));
        }
        if self.0.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        let herm = self.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (error {herm:e})")));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min_ev = self.min_eigenvalue();
        if min_ev < -EIGEN_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_ev:e}")));
        }
        Ok(())
    }
}

/// Cavity and atom-field parameters. All rates in rad/s.
///
/// `kappa` is the rate appearing in the cavity-loss master equation, so the
/// photon population decays at `2 kappa` and the field coherence at `kappa`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub kappa: f64,
    pub nbar: f64,
    /// Atom-field coupling G (vacuum Rabi frequency Ω0 = 2G).
    pub coupling: f64,
    /// Atom-cavity detuning δ used during dispersive segments.
    pub detuning: f64,
    /// Effective Rabi frequency Ω setting the π-pulse duration π/Ω.
    pub rabi: f64,
    pub fock_cutoff: usize,
}

/// Photon damping time of the reference cavity, in seconds.
pub const REALISTIC_DAMPING_TIME: f64 = 0.130;
/// Total resonant interaction time per atom of the reference setup, in seconds.
pub const REALISTIC_INTERACTION_TIME: f64 = 1.96e-5;

impl PhysicalParams {
    /// Parameters with Ω = 2G and the default Fock cutoff of 3.
    pub fn new(kappa: f64, nbar: f64, coupling: f64, detuning: f64) -> Self {
        Self {
            kappa,
            nbar,
            coupling,
            detuning,
            rabi: 2.0 * coupling,
            fock_cutoff: 3,
        }
    }

    /// κ = 1/(2·0.130 s), Ω = 2π/(1.96e−5 s), G = Ω/2, δ = 3G, n̄ = 0.
    pub fn realistic() -> Self {
        let rabi = 2.0 * std::f64::consts::PI / REALISTIC_INTERACTION_TIME;
        let coupling = rabi / 2.0;
        Self::new(1.0 / (2.0 * REALISTIC_DAMPING_TIME), 0.0, coupling, 3.0 * coupling)
    }

    pub fn with_rabi(mut self, rabi: f64) -> Self {
        self.rabi = rabi;
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_fock_cutoff(mut self, cutoff: usize) -> Self {
        self.fock_cutoff = cutoff;
        self
    }

    /// ω = G²/δ.
    pub fn dispersive_shift(&self) -> Result<f64> {
        if self.detuning == 0.0 {
            return Err(Error::ZeroDetuning);
        }
        Ok(self.coupling * self.coupling / self.detuning)
    }

    /// π-pulse duration π/Ω.
    pub fn pi_pulse(&self) -> f64 {
        std::f64::consts::PI / self.rabi
    }

    /// Dispersive hold time π/ω that undoes the resonant 2π phase.
    pub fn dispersive_hold(&self) -> Result<f64> {
        Ok(std::f64::consts::PI / self.dispersive_shift()?.abs())
    }

    pub fn space(&self) -> Result<HilbertSpace> {
        HilbertSpace::new(self.fock_cutoff)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad("kappa", "must be finite and >= 0");
        }
        if !(self.nbar >= 0.0 && self.nbar.is_finite()) {
            return bad("nbar", "must be finite and >= 0");
        }
        if !(self.coupling > 0.0 && self.coupling.is_finite()) {
            return bad("coupling", "must be finite and > 0");
        }
        if !(self.rabi > 0.0 && self.rabi.is_finite()) {
            return bad("rabi", "must be finite and > 0");
        }
        if !self.detuning.is_finite() {
            return bad("detuning", "must be finite");
        }
        self.space().map(|_| ())
    }
}

/// Field annihilation operator `a` with `a[n−1, n] = √n`.
pub fn annihilation(space: HilbertSpace) -> Operator {
    Operator(field_annihilation_matrix(space.fock_cutoff()))
}

pub(crate) fn field_annihilation_matrix(cutoff: usize) -> CMatrix {
    let mut a = CMatrix::zeros(cutoff, cutoff);
    for n in 1..cutoff {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// `1_atom ⊗ a` on the joint space.
pub fn joint_annihilation(space: HilbertSpace) -> Operator {
    Operator(kron_atom_field(
        &CMatrix::identity(ATOM_DIM, ATOM_DIM),
        &field_annihilation_matrix(space.fock_cutoff()),
    ))
}

/// `H_I = G (a σ+ + a† σ−)`, interaction picture at resonance.
pub fn jc_interaction_hamiltonian(p: &PhysicalParams, space: HilbertSpace) -> Operator {
    let c = space.fock_cutoff();
    let dim = space.joint_dim();
    let mut h = CMatrix::zeros(dim, dim);
    for n in 0..c - 1 {
        let e = space.index(AtomLevel::Excited, n);
        let g = space.index(AtomLevel::Ground, n + 1);
        let el = C64::new(p.coupling * ((n + 1) as f64).sqrt(), 0.0);
        h[(e, g)] = el;
        h[(g, e)] = el;
    }
    Operator(h)
}

/// `H_ef = ω[(a†a + 1)|e⟩⟨e| − a†a|g⟩⟨g|]` with the free part removed.
pub fn dispersive_hamiltonian(p: &PhysicalParams, space: HilbertSpace) -> Result<Operator> {
    let omega = p.dispersive_shift()?;
    let c = space.fock_cutoff();
    let dim = space.joint_dim();
    let mut h = CMatrix::zeros(dim, dim);
    for n in 0..c {
        let nf = n as f64;
        h[(space.index(AtomLevel::Excited, n), space.index(AtomLevel::Excited, n))] =
            C64::new(omega * (nf + 1.0), 0.0);
        h[(space.index(AtomLevel::Ground, n), space.index(AtomLevel::Ground, n))] =
            C64::new(-omega * nf, 0.0);
    }
    Ok(Operator(h))
}

/// `U_kick = |e⟩⟨e| − |g⟩⟨g|` on the atom, identity on the field.
pub fn kick_unitary(space: HilbertSpace) -> Operator {
    let mut sz = CMatrix::zeros(ATOM_DIM, ATOM_DIM);
    sz[(AtomLevel::Excited.index(), AtomLevel::Excited.index())] = ONE;
    sz[(AtomLevel::Ground.index(), AtomLevel::Ground.index())] = -ONE;
    Operator(kron_atom_field(
        &sz,
        &CMatrix::identity(space.fock_cutoff(), space.fock_cutoff()),
    ))
}

/// `|atom⟩⟨atom| ⊗ ρ_field`.
pub fn embed_field_state(
    field: &DensityMatrix,
    atom: AtomLevel,
    space: HilbertSpace,
) -> Result<DensityMatrix> {
    check_dim(space.fock_cutoff(), field.dim())?;
    Ok(DensityMatrix(embed_matrix(&field.0, atom, space)))
}

/// Trace over the atom, leaving the field density matrix.
pub fn partial_trace_atom(joint: &DensityMatrix, space: HilbertSpace) -> Result<DensityMatrix> {
    check_dim(space.joint_dim(), joint.dim())?;
    Ok(DensityMatrix(trace_atom_matrix(&joint.0, space)))
}

/// `F = ⟨ψ|ρ|ψ⟩`, clipped to [0, 1].
pub fn state_fidelity(pure: &StateVector, rho: &DensityMatrix) -> Result<f64> {
    check_dim(pure.dim(), rho.dim())?;
    let psi = &pure.0;
    let f = (psi.adjoint() * &rho.0 * psi)[(0, 0)].re;
    Ok(f.clamp(0.0, 1.0))
}

pub(crate) fn embed_matrix(field: &CMatrix, atom: AtomLevel, _space: HilbertSpace) -> CMatrix {
    let mut proj = CMatrix::zeros(ATOM_DIM, ATOM_DIM);
    proj[(atom.index(), atom.index())] = ONE;
    kron_atom_field(&proj, field)
}

pub(crate) fn trace_atom_matrix(joint: &CMatrix, space: HilbertSpace) -> CMatrix {
    let c = space.fock_cutoff();
    let mut out = CMatrix::zeros(c, c);
    for atom in 0..ATOM_DIM {
        let off = atom * c;
        out += joint.view((off, off), (c, c));
    }
    out
}

pub(crate) fn kron_atom_field(atom: &CMatrix, field: &CMatrix) -> CMatrix {
    atom.kronecker(field)
}

pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub(crate) fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
