//! Effective description of the protected field under the dispersive
//! protocol: amplitude damping at β plus phase damping at ε, checked against
//! the fidelity closed form.

use cqed_memory::closed_form::{effective_rates_dispersive, fidelity_formula, DispersiveParams};
use cqed_memory::hilbert::{state_fidelity, HilbertSpace, Operator, StateVector};
use cqed_memory::lindblad::{evolve, IntegratorConfig, LindbladModel};

fn main() -> cqed_memory::Result<()> {
    let mut dp = DispersiveParams::realistic();
    dp.dv = 0.1;
    let rates = effective_rates_dispersive(&dp)?;
    let space = HilbertSpace::new(3)?;
    let a = cqed_memory::hilbert::annihilation(space);
    let model = LindbladModel::amplitude_plus_phase(&Operator::zeros(3), &a, rates.kappa_bar, rates.f_bar)?;
    let psi = StateVector::equal_superposition(3, 0.0);
    let cfg = IntegratorConfig::with_dt(1e-4);

    println!("beta {:.4} /s, epsilon {:.3e} /s", rates.kappa_bar, rates.f_bar);
    println!("{:>6} {:>10} {:>10}", "t [s]", "channel", "formula");
    for t in [0.0, 0.05, 0.1, 0.2, 0.4] {
        let rho = evolve(&psi.projector(), &model, t, &cfg)?;
        println!(
            "{t:>6.2} {:>10.6} {:>10.6}",
            state_fidelity(&psi, &rho)?,
            fidelity_formula(rates.kappa_bar, rates.f_bar, t)
        );
    }
    Ok(())
}
