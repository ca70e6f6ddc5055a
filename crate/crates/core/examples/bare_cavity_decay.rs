//! Free decay of a stored field qubit: population at 2κ, coherence at κ.

use cqed_memory::hilbert::{PhysicalParams, StateVector};
use cqed_memory::lindblad::{evolve, IntegratorConfig, LindbladModel};

fn main() -> cqed_memory::Result<()> {
    let kappa = PhysicalParams::realistic().kappa;
    let model = LindbladModel::bare_field(3, kappa, 0.0)?;
    let rho0 = StateVector::equal_superposition(3, 0.0).projector();
    let cfg = IntegratorConfig::with_dt(1e-3);

    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "t [s]", "rho11", "exact", "|rho10|", "exact");
    for k in 0..=5 {
        let t = 0.1 * k as f64;
        let rho = evolve(&rho0, &model, t, &cfg)?;
        println!(
            "{t:>6.2} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
            rho.population(1),
            0.5 * (-2.0 * kappa * t).exp(),
            rho.get(1, 0).norm(),
            0.5 * (-kappa * t).exp()
        );
    }
    Ok(())
}
