//! Vacuum Rabi oscillation: an excited atom in an empty cavity.

use cqed_memory::hilbert::{
    embed_field_state, jc_interaction_hamiltonian, joint_annihilation, AtomLevel, DensityMatrix, HilbertSpace,
    PhysicalParams,
};
use cqed_memory::lindblad::{evolve, IntegratorConfig, LindbladModel};

fn main() -> cqed_memory::Result<()> {
    let p = PhysicalParams::realistic().with_kappa(0.0);
    let space = HilbertSpace::new(3)?;
    let h = jc_interaction_hamiltonian(&p, space);
    let model = LindbladModel::cavity_loss(&h, &joint_annihilation(space), p.kappa, 0.0)?;
    let rho0 = embed_field_state(&DensityMatrix::fock(3, 0), AtomLevel::Excited, space)?;
    let cfg = IntegratorConfig::with_dt(p.pi_pulse() / 2000.0);

    println!("{:>12} {:>10} {:>10}", "t/(pi/Omega)", "P_e", "cos^2");
    for k in 0..=8 {
        let t = k as f64 * p.pi_pulse() / 4.0;
        let rho = evolve(&rho0, &model, t, &cfg)?;
        let pe: f64 = (0..3).map(|n| rho.population(space.index(AtomLevel::Excited, n))).sum();
        println!("{:>12.2} {pe:>10.6} {:>10.6}", k as f64 / 4.0, (p.rabi * t / 2.0).cos().powi(2));
    }
    Ok(())
}
